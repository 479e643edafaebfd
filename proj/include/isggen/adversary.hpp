#pragma once

#include <vector>

#include "isggen/nn.hpp"
#include "isggen/sgraph.hpp"

namespace isg {

struct AdversaryConfig {
  int image_size = 64;
  int crop_size = 32;
  int num_categories = 9;
  int image_channels = 16;
  int object_channels = 16;

  void validate() const;
};

struct DiscOutput {
  Var realism;       // image level: [1,h,w] patch logits; object level: [n]
  Var class_logits;  // object level only: [n,C]
  bool empty() const { return !realism.defined(); }
};

class ImageDiscriminator {
 public:
  ImageDiscriminator(const AdversaryConfig& cfg, Rng& rng);
  DiscOutput operator()(const Var& image) const;
  // Side length of the patch grid.
  int grid_size() const { return cfg_.image_size / 8; }
  ParamSet& params() { return params_; }
  const ParamSet& params() const { return params_; }

 private:
  AdversaryConfig cfg_;
  ParamSet params_;
  Conv2d c1_, c2_, c3_, head_;
};

class ObjectDiscriminator {
 public:
  ObjectDiscriminator(const AdversaryConfig& cfg, Rng& rng);
  // Crops every box out of `image`, scores realism and classifies it.
  DiscOutput operator()(const Var& image, const std::vector<Box>& boxes) const;
  ParamSet& params() { return params_; }
  const ParamSet& params() const { return params_; }

 private:
  AdversaryConfig cfg_;
  ParamSet params_;
  Conv2d c1_, c2_, c3_;
  Linear realism_, classes_;
};

enum class GanSide { kGenerator, kDiscriminator };

// Discriminator side: BCE(real, 1) + BCE(fake, 0), the negated GAN objective.
// Generator side: non-saturating BCE(fake, 1); `real` is ignored.
Var gan_loss(const Var& real_logits, const Var& fake_logits, GanSide side);

}  // namespace isg
