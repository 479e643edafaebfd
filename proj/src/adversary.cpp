#include "isggen/adversary.hpp"

#include "isggen/error.hpp"
#include "isggen/ops.hpp"

namespace isg {

void AdversaryConfig::validate() const {
  if (image_size < 8 || image_size % 8 != 0) fail(ErrorKind::kConfig, "adversary: image_size must be a multiple of 8");
  if (crop_size < 8 || crop_size % 4 != 0) fail(ErrorKind::kConfig, "adversary: crop_size must be a multiple of 4");
  if (num_categories < 1) fail(ErrorKind::kConfig, "adversary: num_categories must be >= 1");
  if (image_channels < 1 || object_channels < 1) fail(ErrorKind::kConfig, "adversary: channels must be >= 1");
}

ImageDiscriminator::ImageDiscriminator(const AdversaryConfig& cfg, Rng& rng) : cfg_(cfg) {
  cfg.validate();
  const int c = cfg.image_channels;
  c1_ = Conv2d::create(params_, "d_image.conv1", 3, c, 4, 2, 1, rng);
  c2_ = Conv2d::create(params_, "d_image.conv2", c, 2 * c, 4, 2, 1, rng);
  c3_ = Conv2d::create(params_, "d_image.conv3", 2 * c, 2 * c, 4, 2, 1, rng);
  head_ = Conv2d::create(params_, "d_image.head", 2 * c, 1, 1, 1, 0, rng);
}

DiscOutput ImageDiscriminator::operator()(const Var& image) const {
  if (image.shape() != Shape{3, cfg_.image_size, cfg_.image_size})
    fail(ErrorKind::kValidation, "d_image: image has shape " + shape_str(image.shape()));
  Var x = ops::leaky_relu(c1_(image));
  x = ops::leaky_relu(c2_(x));
  x = ops::leaky_relu(c3_(x));
  return DiscOutput{head_(x), Var()};
}

ObjectDiscriminator::ObjectDiscriminator(const AdversaryConfig& cfg, Rng& rng) : cfg_(cfg) {
  cfg.validate();
  const int c = cfg.object_channels;
  c1_ = Conv2d::create(params_, "d_object.conv1", 3, c, 4, 2, 1, rng);
  c2_ = Conv2d::create(params_, "d_object.conv2", c, 2 * c, 4, 2, 1, rng);
  c3_ = Conv2d::create(params_, "d_object.conv3", 2 * c, 2 * c, 3, 1, 1, rng);
  realism_ = Linear::create(params_, "d_object.realism", 2 * c, 1, rng);
  classes_ = Linear::create(params_, "d_object.classes", 2 * c, cfg.num_categories, rng);
}

DiscOutput ObjectDiscriminator::operator()(const Var& image, const std::vector<Box>& boxes) const {
  if (boxes.empty()) return {};
  std::vector<Var> pooled;
  for (const Box& b : boxes) {
    validate_box(b);
    const double coords[4] = {b.x0, b.y0, b.x1, b.y1};
    Var x = ops::crop_resize(image, coords, cfg_.crop_size);
    x = ops::leaky_relu(c1_(x));
    x = ops::leaky_relu(c2_(x));
    x = ops::leaky_relu(c3_(x));
    pooled.push_back(ops::reshape(ops::global_avg_pool(x), {1, 2 * cfg_.object_channels}));
  }
  Var feats = ops::concat(pooled);
  const int n = static_cast<int>(boxes.size());
  return DiscOutput{ops::reshape(realism_(feats), {n}), classes_(feats)};
}

Var gan_loss(const Var& real_logits, const Var& fake_logits, GanSide side) {
  if (side == GanSide::kGenerator) return ops::bce_with_logits(fake_logits, 1.0);
  return ops::add(ops::bce_with_logits(real_logits, 1.0), ops::bce_with_logits(fake_logits, 0.0));
}

}  // namespace isg
