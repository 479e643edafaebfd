// Analytic gradients against central finite differences at float64.
#include <gtest/gtest.h>

#include "isggen/crn.hpp"
#include "isggen/gcn.hpp"
#include "isggen/layout.hpp"
#include "isggen/losses.hpp"
#include "isggen/ops.hpp"
#include "support.hpp"

namespace {

using isg::Tensor;
using isg::Var;
using isg::testing::check_gradient;
namespace ops = isg::ops;

constexpr double kTol = 1e-3;

// Weighted sum with fixed random weights, so every output entry matters.
Var probe(const Var& x, std::uint64_t seed) {
  return ops::sum(ops::mul(x, ops::constant(isg::testing::random_tensor(x.shape(), seed))));
}

void expect_close(const isg::testing::GradCheck& r, const std::string& what) {
  EXPECT_GT(r.probes, 0) << what;
  EXPECT_GT(r.analytic_norm, 0.0) << what << ": gradient is identically zero";
  EXPECT_LE(r.rel_error, kTol) << what;
}

isg::LayoutNet small_layout(isg::Rng& rng) { return isg::LayoutNet(isg::LayoutConfig{6, 10, 8, 3, 1.0 / 64}, rng); }

isg::NodeEmbeddings leaf_embeddings(int n, int d, std::uint64_t seed) {
  isg::NodeEmbeddings e;
  for (int i = 0; i < n; ++i) e.node_ids.push_back(i);
  e.vectors = Var(isg::testing::random_tensor({n, d}, seed), true);
  return e;
}

}  // namespace

TEST(GradCheck, GcnEdgeMlp) {
  isg::Rng rng(1);
  isg::Gcn gcn(isg::GcnConfig{5, 2, 7}, 4, 6, rng);
  const isg::SceneGraph g{{{0, 1}, {1, 2}, {2, 3}}, {{0, 0, 1}, {1, 4, 2}, {2, 2, 0}}};
  auto loss = [&] { return probe(gcn.embed(g).vectors, 99); };
  for (const char* name : {"gcn.layer0.hidden.weight", "gcn.layer0.hidden.bias", "gcn.layer0.out.weight",
                           "gcn.layer1.hidden.weight", "gcn.layer1.out.bias", "gcn.category_embedding",
                           "gcn.predicate_embedding"})
    expect_close(check_gradient(loss, gcn.params().get(name)), name);
}

TEST(GradCheck, LayoutBoxLossThroughBoxHead) {
  isg::Rng rng(2);
  auto net = small_layout(rng);
  auto emb = leaf_embeddings(3, 6, 5);
  const std::map<int, isg::Box> target = {{0, isg::Box::make(0.1, 0.2, 0.5, 0.7)},
                                          {1, isg::Box::make(0.4, 0.1, 0.9, 0.4)},
                                          {2, isg::Box::make(0.2, 0.5, 0.6, 0.95)}};
  auto loss = [&] { return isg::box_loss(net.predict_layout(emb), target); };
  expect_close(check_gradient(loss, net.params().get("layout.box.out.weight")), "box.out.weight");
  expect_close(check_gradient(loss, net.params().get("layout.box.hidden.weight")), "box.hidden.weight");
  expect_close(check_gradient(loss, emb.vectors), "embeddings");
}

TEST(GradCheck, LayoutMaskLossThroughMaskHead) {
  isg::Rng rng(3);
  auto net = small_layout(rng);
  auto emb = leaf_embeddings(2, 6, 6);
  std::map<int, Tensor> target;
  for (int id = 0; id < 2; ++id) target[id] = isg::testing::random_tensor({8, 8}, 40 + id, 0, 1).reshaped({8, 8});
  auto loss = [&] { return isg::mask_loss(net.predict_layout(emb), target); };
  for (const char* name : {"layout.mask.seed.weight", "layout.mask.up0.weight", "layout.mask.out.weight"})
    expect_close(check_gradient(loss, net.params().get(name)), name);
  expect_close(check_gradient(loss, emb.vectors), "embeddings");
}

TEST(GradCheck, ComposeInputs) {
  const int n = 3, d = 4, m = 6, S = 12;
  Var emb(isg::testing::random_tensor({n, d}, 1), true);
  Var boxes(Tensor({n, 4}, {0.11, 0.07, 0.63, 0.52, 0.42, 0.31, 0.93, 0.88, 0.05, 0.55, 0.37, 0.97}), true);
  Var masks(isg::testing::random_tensor({n, m, m}, 2, 0, 1), true);
  auto loss = [&] { return probe(isg::compose_batched(emb, boxes, masks, S), 77); };
  expect_close(check_gradient(loss, emb), "embeddings");
  expect_close(check_gradient(loss, boxes), "boxes");
  expect_close(check_gradient(loss, masks, 64), "masks");
}

TEST(GradCheck, ComposeThroughLayoutNet) {
  isg::Rng rng(4);
  auto net = small_layout(rng);
  auto emb = leaf_embeddings(2, 6, 8);
  auto loss = [&] { return probe(isg::compose(net.predict_layout(emb), 10, 6), 5); };
  expect_close(check_gradient(loss, net.params().get("layout.box.out.weight")), "box.out.weight");
  expect_close(check_gradient(loss, net.params().get("layout.mask.out.weight")), "mask.out.weight");
}

TEST(GradCheck, DecodeBoxes) {
  Var raw(isg::testing::random_tensor({4, 4}, 3, -1.5, 1.5), true);
  auto loss = [&] { return probe(isg::decode_boxes(raw, 1.0 / 64), 12); };
  expect_close(check_gradient(loss, raw), "raw");
}

TEST(GradCheck, PixelAndPerceptualLosses) {
  isg::PerceptualExtractor p;
  Var a(isg::testing::random_tensor({3, 8, 8}, 1), true);
  const Var b = ops::constant(isg::testing::random_tensor({3, 8, 8}, 2));
  expect_close(check_gradient([&] { return isg::pixel_loss(a, b); }, a, 64), "pixel");
  expect_close(check_gradient([&] { return isg::perceptual_loss(a, b, p); }, a, 64), "perceptual");
}

TEST(GradCheck, CrnEndToEndAt8x8) {
  isg::CrnConfig cfg;
  cfg.start_resolution = 2;
  cfg.output_resolution = 8;
  cfg.channels = {5, 4};
  cfg.final_channels = 4;
  cfg.noise_channels = 4;
  cfg.layout_channels = 3;
  isg::Rng rng(5);
  isg::Crn crn(cfg, rng);
  Var layout(isg::testing::random_tensor({3, 8, 8}, 6), true);
  Var prev(isg::testing::random_tensor({3, 8, 8}, 7), true);
  const auto ctx = isg::make_context(prev, 8, 4, 8);
  auto loss = [&] { return probe(crn.generate(layout, ctx), 9); };
  expect_close(check_gradient(loss, layout, 48), "layout");
  expect_close(check_gradient(loss, prev, 48), "previous image");
  for (const char* name : {"crn.module0.conv1.weight", "crn.module0.norm1.gamma", "crn.module1.conv2.weight",
                           "crn.module1.norm2.beta", "crn.final1.weight", "crn.final2.bias"})
    expect_close(check_gradient(loss, crn.params().get(name)), name);
}
