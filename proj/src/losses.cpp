#include "isggen/losses.hpp"

#include <cmath>

#include "isggen/error.hpp"
#include "isggen/ops.hpp"

namespace isg {

namespace {

Var zero() { return ops::constant(Tensor({1}, 0.0)); }

void same_shape(const Var& a, const Var& b, const char* what) {
  if (a.shape() != b.shape())
    fail(ErrorKind::kValidation, std::string(what) + ": shapes " + shape_str(a.shape()) + " and " +
                                     shape_str(b.shape()) + " differ");
}

}  // namespace

PerceptualExtractor::PerceptualExtractor(std::uint64_t seed) : seed_(seed) {
  Rng rng(seed);
  const int chans[4] = {3, 8, 16, 16};
  for (int l = 0; l < 3; ++l) {
    Conv2d c;
    const int k = 3, cin = chans[l], cout = chans[l + 1];
    // He-normal so random features keep their scale through the ReLUs.
    const double stddev = std::sqrt(2.0 / (cin * k * k));
    const std::string name = "perceptual.conv" + std::to_string(l);
    c.w = params_.add(name + ".weight", normal_tensor({cout, cin, k, k}, stddev, rng));
    c.b = params_.add(name + ".bias", Tensor({cout}));
    c.stride = l == 0 ? 1 : 2;
    c.pad = 1;
    layers_.push_back(c);
  }
  params_.set_trainable(false);
}

std::vector<Var> PerceptualExtractor::features(const Var& image) const {
  std::vector<Var> out;
  Var x = image;
  for (const auto& c : layers_) {
    x = ops::relu(c(x));
    out.push_back(ops::channel_unit_normalize(x));
  }
  return out;
}

void LossWeights::validate() const {
  for (double v : {gan, box, mask, pixel, pixel_step, perceptual})
    if (!(v >= 0.0)) fail(ErrorKind::kConfig, "loss weights must be >= 0");
}

double LossReport::recombine(const LossWeights& w) const {
  return w.gan * gan + w.box * box + w.mask * mask + w.pixel * pixel + w.pixel_step * pixel_step +
         w.perceptual * perceptual;
}

Var pixel_loss(const Var& a, const Var& b) {
  same_shape(a, b, "pixel_loss");
  return ops::mean(ops::abs(ops::sub(a, b)));
}

Var perceptual_loss(const Var& a, const Var& b, const PerceptualExtractor& p) {
  same_shape(a, b, "perceptual_loss");
  auto fa = p.features(a), fb = p.features(b);
  std::vector<Var> terms;
  for (std::size_t l = 0; l < fa.size(); ++l) {
    const double hw = static_cast<double>(fa[l].dim(1)) * fa[l].dim(2);
    terms.push_back(ops::scale(ops::sum(ops::square(ops::sub(fa[l], fb[l]))), 1.0 / hw));
  }
  return ops::add_n(terms);
}

std::pair<Var, LossReport> total_generator_loss(const std::vector<StepOutput>& steps, const LossTargets& targets,
                                                const Var& gan_term, const PerceptualExtractor& p,
                                                const LossWeights& w) {
  if (steps.empty()) fail(ErrorKind::kValidation, "total_generator_loss: no steps");
  if (targets.final_image.empty()) fail(ErrorKind::kValidation, "total_generator_loss: missing final target image");
  const Var gt = ops::constant(targets.final_image);

  std::vector<ObjectLayout> objs;
  for (const auto& s : steps) objs.insert(objs.end(), s.layout.begin(), s.layout.end());
  Var box = box_loss(objs, targets.boxes);
  Var mask = mask_loss(objs, targets.masks);
  Var pix = pixel_loss(steps.back().image, gt);
  std::vector<Var> step_terms{zero()}, perc_terms{zero()};
  for (std::size_t k = 1; k < steps.size(); ++k) step_terms.push_back(pixel_loss(steps[k].image, steps[k - 1].image));
  for (std::size_t k = 0; k + 1 < steps.size(); ++k) perc_terms.push_back(perceptual_loss(steps[k].image, gt, p));
  Var pix_step = ops::add_n(step_terms);
  Var perc = ops::add_n(perc_terms);
  Var gan = gan_term.defined() ? gan_term : zero();

  Var total = ops::add_n({ops::scale(gan, w.gan), ops::scale(box, w.box), ops::scale(mask, w.mask),
                          ops::scale(pix, w.pixel), ops::scale(pix_step, w.pixel_step),
                          ops::scale(perc, w.perceptual)});
  LossReport r;
  r.gan = gan.item();
  r.box = box.item();
  r.mask = mask.item();
  r.pixel = pix.item();
  r.pixel_step = pix_step.item();
  r.perceptual = perc.item();
  r.total = total.item();
  return {total, r};
}

}  // namespace isg
