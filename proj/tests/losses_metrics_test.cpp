#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <random>

#include "isggen/dataio.hpp"
#include "isggen/error.hpp"
#include "isggen/image_io.hpp"
#include "isggen/losses.hpp"
#include "isggen/metrics.hpp"
#include "isggen/ops.hpp"
#include "support.hpp"

namespace {

using isg::Box;
using isg::Tensor;
using isg::Var;
namespace ops = isg::ops;

Var image(std::uint64_t seed, int size = 16) { return ops::constant(isg::testing::random_tensor({3, size, size}, seed)); }

Tensor shift_right(const Tensor& img, int dx) {
  Tensor out = img;
  for (int c = 0; c < img.dim(0); ++c)
    for (int y = 0; y < img.dim(1); ++y)
      for (int x = 0; x < img.dim(2); ++x) out.at(c, y, x) = img.at(c, y, std::max(0, x - dx));
  return out;
}

isg::ObjectLayout object(int id, Box b, std::uint64_t seed) {
  return {id, ops::constant(Tensor({4}, {b.x0, b.y0, b.x1, b.y1})),
          ops::constant(isg::testing::random_tensor({4, 4}, seed, 0.05, 0.95)),
          ops::constant(isg::testing::random_tensor({2}, seed + 1))};
}

// Direct-summation inception score over one contiguous split layout.
double is_oracle(const std::vector<std::vector<double>>& p, int splits) {
  double total = 0;
  const std::size_t n = p.size();
  for (int s = 0; s < splits; ++s) {
    const std::size_t lo = n * s / splits, hi = n * (s + 1) / splits;
    std::vector<double> py(p[0].size(), 0.0);
    for (std::size_t i = lo; i < hi; ++i)
      for (std::size_t j = 0; j < py.size(); ++j) py[j] += p[i][j] / static_cast<double>(hi - lo);
    double mean_kl = 0;
    for (std::size_t i = lo; i < hi; ++i) {
      double kl = 0;
      for (std::size_t j = 0; j < py.size(); ++j) kl += p[i][j] * std::log(p[i][j] / py[j]);
      mean_kl += kl / static_cast<double>(hi - lo);
    }
    total += std::exp(mean_kl);
  }
  return total / splits;
}

std::vector<std::vector<double>> random_probs(int n, int c, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::gamma_distribution<double> g(0.5, 1.0);
  std::vector<std::vector<double>> out(static_cast<std::size_t>(n), std::vector<double>(static_cast<std::size_t>(c)));
  for (auto& row : out) {
    double s = 0;
    for (auto& v : row) s += (v = g(rng) + 1e-12);
    for (auto& v : row) v /= s;
  }
  return out;
}

}  // namespace

TEST(PixelLoss, IdentitiesAndOracle) {
  Var a = image(1), b = image(2);
  EXPECT_EQ(isg::pixel_loss(a, a).item(), 0.0);
  EXPECT_EQ(isg::pixel_loss(ops::constant(Tensor({3, 4, 4}, -1.0)), ops::constant(Tensor({3, 4, 4}, 1.0))).item(), 2.0);
  double oracle = 0;
  for (std::size_t i = 0; i < a.size(); ++i) oracle += std::abs(a.value()[i] - b.value()[i]);
  oracle /= static_cast<double>(a.size());
  EXPECT_NEAR(isg::pixel_loss(a, b).item(), oracle, 1e-12);
  EXPECT_THROW(isg::pixel_loss(a, image(3, 8)), isg::Error);
}

TEST(PerceptualLoss, IdentitySymmetryAndDeterminism) {
  isg::PerceptualExtractor p(7), q(7), other(8);
  Var a = image(1), b = image(2);
  EXPECT_EQ(isg::perceptual_loss(a, a, p).item(), 0.0);
  EXPECT_EQ(isg::perceptual_loss(a, b, p).item(), isg::perceptual_loss(b, a, p).item());
  EXPECT_EQ(isg::perceptual_loss(a, b, p).item(), isg::perceptual_loss(a, b, q).item());
  EXPECT_NE(isg::perceptual_loss(a, b, p).item(), isg::perceptual_loss(a, b, other).item());
  EXPECT_GT(isg::perceptual_loss(a, b, p).item(), 0.0);
}

TEST(PerceptualLoss, SmallTranslationScoresBelowUnrelatedImage) {
  isg::PerceptualExtractor p;
  auto samples = isg::synth_shapes(100, 31, isg::DatasetSpec{});
  double shifted = 0, unrelated = 0;
  for (int i = 0; i < 50; ++i) {
    const Tensor a = isg::unit_to_signed(samples[static_cast<std::size_t>(2 * i)].image.pixels);
    const Tensor b = isg::unit_to_signed(samples[static_cast<std::size_t>(2 * i + 1)].image.pixels);
    shifted += isg::perceptual_loss(ops::constant(a), ops::constant(shift_right(a, 2)), p).item();
    unrelated += isg::perceptual_loss(ops::constant(a), ops::constant(b), p).item();
  }
  EXPECT_LT(shifted / 50, unrelated / 50);
}

TEST(TotalLoss, AllWeightsZeroStillItemized) {
  isg::PerceptualExtractor p;
  isg::LossTargets t{image(9).value(), {{0, Box::make(0.1, 0.1, 0.5, 0.5)}}, {{0, Tensor({4, 4}, 1.0)}}};
  std::vector<isg::StepOutput> steps = {{image(1), {object(0, Box::make(0.2, 0.2, 0.6, 0.7), 1)}}, {image(2), {}}};
  isg::LossWeights zero{0, 0, 0, 0, 0, 0};
  auto [total, r] = isg::total_generator_loss(steps, t, ops::constant(Tensor({1}, 0.7)), p, zero);
  EXPECT_EQ(total.item(), 0.0);
  EXPECT_EQ(r.total, 0.0);
  EXPECT_GT(r.box, 0.0);
  EXPECT_GT(r.mask, 0.0);
  EXPECT_GT(r.pixel, 0.0);
  EXPECT_GT(r.pixel_step, 0.0);
  EXPECT_GT(r.perceptual, 0.0);
  EXPECT_EQ(r.gan, 0.7);
}

TEST(TotalLoss, SingleStepHasNoInterStepTerms) {
  isg::PerceptualExtractor p;
  isg::LossTargets t{image(9).value(), {}, {}};
  auto [total, r] = isg::total_generator_loss({{image(1), {}}}, t, Var(), p, isg::LossWeights{});
  EXPECT_EQ(r.pixel_step, 0.0);
  EXPECT_EQ(r.perceptual, 0.0);
  EXPECT_EQ(r.gan, 0.0);
  EXPECT_NEAR(total.item(), r.pixel, 1e-15);
  EXPECT_THROW(isg::total_generator_loss({{image(1), {}}}, isg::LossTargets{}, Var(), p, isg::LossWeights{}),
               isg::Error);
}

TEST(TotalLoss, ThreeStepRecombinationMatchesHandComputedTerms) {
  isg::PerceptualExtractor p;
  const Box g0 = Box::make(0.1, 0.1, 0.4, 0.5), g1 = Box::make(0.5, 0.2, 0.9, 0.6), g2 = Box::make(0.2, 0.6, 0.7, 0.95);
  isg::LossTargets t;
  t.final_image = image(50).value();
  t.boxes = {{0, g0}, {1, g1}, {2, g2}};
  for (int id = 0; id < 3; ++id) t.masks[id] = isg::testing::random_tensor({4, 4}, 60 + id, 0, 1).reshaped({4, 4});
  for (auto& [id, m] : t.masks)
    for (double& v : m.values()) v = v > 0.5 ? 1.0 : 0.0;
  std::vector<isg::StepOutput> steps = {
      {image(1), {object(0, Box::make(0.15, 0.1, 0.45, 0.55), 10)}},
      {image(2), {object(1, Box::make(0.5, 0.25, 0.8, 0.6), 20)}},
      {image(3), {object(2, Box::make(0.25, 0.55, 0.7, 0.9), 30)}},
  };
  const isg::LossWeights w{0.3, 2.0, 0.7, 1.5, 0.25, 0.9};
  auto [total, r] = isg::total_generator_loss(steps, t, ops::constant(Tensor({1}, 1.25)), p, w);

  // Independent hand computation of each term.
  std::vector<isg::ObjectLayout> objs;
  for (const auto& s : steps) objs.insert(objs.end(), s.layout.begin(), s.layout.end());
  double box = 0;
  for (const auto& o : objs) {
    const Box& g = t.boxes.at(o.node_id);
    const double gb[4] = {g.x0, g.y0, g.x1, g.y1};
    for (int k = 0; k < 4; ++k) box += std::abs(o.box.value()[static_cast<std::size_t>(k)] - gb[k]);
  }
  box /= 4.0 * objs.size();
  double mask = 0;
  for (const auto& o : objs) {
    const Tensor& tm = t.masks.at(o.node_id);
    for (std::size_t i = 0; i < tm.size(); ++i) {
      const double q = o.mask.value()[i];
      mask -= tm[i] * std::log(q) + (1 - tm[i]) * std::log(1 - q);
    }
  }
  mask /= 16.0 * objs.size();
  const Var gt = ops::constant(t.final_image);
  const double pix = isg::pixel_loss(steps[2].image, gt).item();
  const double pix_step = isg::pixel_loss(steps[1].image, steps[0].image).item() +
                          isg::pixel_loss(steps[2].image, steps[1].image).item();
  const double perc = isg::perceptual_loss(steps[0].image, gt, p).item() + isg::perceptual_loss(steps[1].image, gt, p).item();

  EXPECT_NEAR(r.box, box, 1e-12);
  EXPECT_NEAR(r.mask, mask, 1e-9);
  EXPECT_NEAR(r.pixel, pix, 1e-12);
  EXPECT_NEAR(r.pixel_step, pix_step, 1e-12);
  EXPECT_NEAR(r.perceptual, perc, 1e-12);
  const double hand = 0.3 * 1.25 + 2.0 * box + 0.7 * mask + 1.5 * pix + 0.25 * pix_step + 0.9 * perc;
  EXPECT_NEAR(r.total, hand, 1e-6);
  EXPECT_NEAR(r.recombine(w), r.total, 1e-6);
  EXPECT_EQ(total.item(), r.total);
  for (double v : {r.gan, r.box, r.mask, r.pixel, r.pixel_step, r.perceptual, r.total}) EXPECT_GE(v, 0.0);
}

TEST(LossWeights, NegativeWeightRejected) {
  isg::LossWeights w;
  EXPECT_NO_THROW(w.validate());
  w.pixel_step = -0.1;
  EXPECT_THROW(w.validate(), isg::Error);
}

// ---- metrics ----------------------------------------------------------------

TEST(InceptionScore, UniformClassifierGivesOne) {
  isg::UniformClassifier clf(9);
  std::vector<Tensor> images;
  for (int i = 0; i < 20; ++i) images.push_back(image(static_cast<std::uint64_t>(i)).value());
  const auto s = isg::inception_score(images, clf, 10);
  EXPECT_EQ(s.mean, 1.0);
  EXPECT_EQ(s.stddev, 0.0);
}

TEST(InceptionScore, DistinctOneHotsGiveClassCount) {
  for (int c : {2, 5, 9}) {
    std::vector<std::vector<double>> probs;
    for (int rep = 0; rep < 3; ++rep)
      for (int k = 0; k < c; ++k) {
        std::vector<double> row(static_cast<std::size_t>(c), 0.0);
        row[static_cast<std::size_t>(k)] = 1.0;
        probs.push_back(row);
      }
    EXPECT_NEAR(isg::inception_score(probs, 3).mean, c, 1e-12);
    EXPECT_NEAR(isg::inception_score(probs, 1).mean, c, 1e-12);
  }
}

TEST(InceptionScore, MatchesDirectSummationOracle) {
  for (int trial = 0; trial < 20; ++trial) {
    const int n = 30 + trial, c = 2 + trial % 8, splits = 1 + trial % 7;
    auto probs = random_probs(n, c, static_cast<std::uint64_t>(trial));
    const double got = isg::inception_score(probs, splits).mean;
    EXPECT_NEAR(got, is_oracle(probs, splits), 1e-9);
    EXPECT_GE(got, 1.0 - 1e-12);
    EXPECT_LE(got, c + 1e-12);
  }
}

TEST(InceptionScore, OrderWithinSplitIrrelevantAndTooFewImagesRejected) {
  auto probs = random_probs(40, 6, 3);
  const double base = isg::inception_score(probs, 4).mean;
  std::reverse(probs.begin(), probs.begin() + 10);
  std::reverse(probs.begin() + 20, probs.begin() + 30);
  EXPECT_NEAR(isg::inception_score(probs, 4).mean, base, 1e-12);
  EXPECT_THROW(isg::inception_score(random_probs(5, 3, 1), 10), isg::Error);
}

TEST(Consistency, IdenticalStepsGiveZero) {
  isg::PerceptualExtractor p;
  const Tensor img = image(4).value();
  auto per = isg::consistency({{img, img, img}, {img, img, img}}, p);
  EXPECT_EQ(per, (std::vector<double>{0.0, 0.0}));
}

TEST(Consistency, TwoRolloutsEqualHandAverage) {
  isg::PerceptualExtractor p;
  const Tensor a0 = image(1).value(), a1 = image(2).value(), a2 = image(3).value();
  const Tensor b0 = image(4).value(), b1 = image(5).value(), b2 = image(6).value();
  auto pl = [&](const Tensor& x, const Tensor& y) { return isg::perceptual_loss(ops::constant(x), ops::constant(y), p).item(); };
  auto per = isg::consistency({{a0, a1, a2}, {b0, b1, b2}}, p);
  ASSERT_EQ(per.size(), 2u);
  EXPECT_NEAR(per[0], (pl(a0, a1) + pl(b0, b1)) / 2, 1e-12);
  EXPECT_NEAR(per[1], (pl(a1, a2) + pl(b1, b2)) / 2, 1e-12);
  auto rev = isg::consistency({{a1, a0}, {b1, b0}}, p);
  EXPECT_NEAR(rev[0], per[0], 1e-12);
  EXPECT_THROW(isg::consistency({{a0}}, p), isg::Error);
}
