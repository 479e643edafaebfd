#include "isggen/crn.hpp"

#include "isggen/error.hpp"
#include "isggen/ops.hpp"

namespace isg {

int CrnConfig::num_modules() const {
  int n = 0;
  for (int r = start_resolution; r < output_resolution; r *= 2) ++n;
  return n;
}

void CrnConfig::validate() const {
  if (start_resolution < 1 || output_resolution < start_resolution)
    fail(ErrorKind::kConfig, "crn: resolutions must satisfy 1 <= start <= output");
  int r = start_resolution;
  while (r < output_resolution) r *= 2;
  if (r != output_resolution) fail(ErrorKind::kConfig, "crn: output/start must be a power of two");
  if (noise_channels < 3) fail(ErrorKind::kConfig, "crn: noise_channels must be >= 3");
  if (static_cast<int>(channels.size()) != num_modules())
    fail(ErrorKind::kConfig, "crn: expected " + std::to_string(num_modules()) + " channel entries, got " +
                                 std::to_string(channels.size()));
  for (int c : channels)
    if (c < 1) fail(ErrorKind::kConfig, "crn: channel counts must be >= 1");
  if (final_channels < 1 || layout_channels < 1) fail(ErrorKind::kConfig, "crn: channel counts must be >= 1");
}

GenContext make_context(const std::optional<Var>& previous, std::uint64_t seed, int noise_channels, int size) {
  Rng rng(seed);
  GenContext ctx;
  ctx.noise = normal_tensor({noise_channels, size, size}, 1.0, rng);
  if (previous) {
    if (previous->shape() != Shape{3, size, size})
      fail(ErrorKind::kValidation, "previous image has shape " + shape_str(previous->shape()));
    ctx.previous_image = *previous;
  }
  return ctx;
}

Crn::Crn(const CrnConfig& cfg, Rng& rng) : cfg_(cfg) {
  cfg.validate();
  const int in = cfg.layout_channels + cfg.noise_channels;
  int prev = 0;
  for (int i = 0; i < cfg.num_modules(); ++i) {
    const std::string name = "crn.module" + std::to_string(i);
    const int c = cfg.channels[i];
    Module m;
    m.conv1 = Conv2d::create(params_, name + ".conv1", in + prev, c, 3, 1, 1, rng);
    m.norm1 = InstanceNorm::create(params_, name + ".norm1", c);
    m.conv2 = Conv2d::create(params_, name + ".conv2", c, c, 3, 1, 1, rng);
    m.norm2 = InstanceNorm::create(params_, name + ".norm2", c);
    modules_.push_back(m);
    prev = c;
  }
  // The output stage also sees the full-resolution noise channels so an
  // injected previous image is available without pooling.
  const int final_in = modules_.empty() ? in : prev + cfg.noise_channels;
  final1_ = Conv2d::create(params_, "crn.final1", final_in, cfg.final_channels, 3, 1, 1, rng);
  final2_ = Conv2d::create(params_, "crn.final2", cfg.final_channels, 3, 1, 1, 0, rng);
}

Var Crn::injected_noise(const GenContext& ctx) const {
  const int s = cfg_.output_resolution;
  if (ctx.noise.shape() != Shape{cfg_.noise_channels, s, s})
    fail(ErrorKind::kValidation, "crn: noise has shape " + shape_str(ctx.noise.shape()));
  if (!ctx.previous_image) return ops::constant(ctx.noise);
  const Var& prev = *ctx.previous_image;
  if (prev.shape() != Shape{3, s, s}) fail(ErrorKind::kValidation, "crn: previous image has shape " + shape_str(prev.shape()));
  Var rest = ops::slice(ops::constant(ctx.noise), 3, cfg_.noise_channels);
  return ops::concat({prev, rest});
}

Var Crn::run(const Var& layout, const GenContext& ctx, std::vector<Shape>* trace) const {
  const int s = cfg_.output_resolution;
  if (layout.shape() != Shape{cfg_.layout_channels, s, s})
    fail(ErrorKind::kValidation, "crn: layout has shape " + shape_str(layout.shape()) + ", expected " +
                                     shape_str({cfg_.layout_channels, s, s}));
  Var noise = injected_noise(ctx);
  Var input = ops::concat({layout, noise});
  Var feat;
  int res = cfg_.start_resolution;
  for (const auto& m : modules_) {
    Var x = ops::avg_pool(input, s / res);
    if (feat.defined()) x = ops::concat({x, feat});
    x = ops::leaky_relu(m.norm1(m.conv1(x)));
    x = ops::leaky_relu(m.norm2(m.conv2(x)));
    feat = ops::upsample_nearest(x, 2);
    res *= 2;
    if (trace) trace->push_back(feat.shape());
  }
  Var x = feat.defined() ? ops::concat({feat, noise}) : input;
  x = ops::leaky_relu(final1_(x));
  return ops::tanh(final2_(x));
}

Var Crn::generate(const Var& layout, const GenContext& ctx) const { return run(layout, ctx, nullptr); }

std::vector<Shape> Crn::trace_shapes(const Var& layout, const GenContext& ctx) const {
  std::vector<Shape> out;
  run(layout, ctx, &out);
  return out;
}

}  // namespace isg
