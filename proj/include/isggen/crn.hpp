#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "isggen/nn.hpp"

namespace isg {

struct CrnConfig {
  int start_resolution = 4;
  int output_resolution = 64;
  // One entry per refinement module, coarse to fine.
  std::vector<int> channels = {32, 32, 16, 8};
  int final_channels = 16;
  int noise_channels = 8;
  int layout_channels = 32;

  int num_modules() const;
  void validate() const;
};

// Per-step conditioning. Noise is spatial, [C_n,S,S]; when a previous image
// is attached its RGB replaces noise channels 0..2 before the cascade.
struct GenContext {
  std::optional<Var> previous_image;  // [3,S,S] in [-1,1]
  Tensor noise;
};

GenContext make_context(const std::optional<Var>& previous, std::uint64_t seed, int noise_channels, int size);

class Crn {
 public:
  Crn(const CrnConfig& cfg, Rng& rng);

  // layout [D,S,S] -> image [3,S,S] in [-1,1].
  Var generate(const Var& layout, const GenContext& ctx) const;
  // Noise tensor with the previous image written into channels 0..2.
  Var injected_noise(const GenContext& ctx) const;

  // Shapes of every module output (after upsampling), for inspection.
  std::vector<Shape> trace_shapes(const Var& layout, const GenContext& ctx) const;

  const CrnConfig& config() const { return cfg_; }
  ParamSet& params() { return params_; }
  const ParamSet& params() const { return params_; }

 private:
  struct Module {
    Conv2d conv1;
    InstanceNorm norm1;
    Conv2d conv2;
    InstanceNorm norm2;
  };

  Var run(const Var& layout, const GenContext& ctx, std::vector<Shape>* trace) const;

  CrnConfig cfg_;
  ParamSet params_;
  std::vector<Module> modules_;
  Conv2d final1_;
  Conv2d final2_;
};

}  // namespace isg
