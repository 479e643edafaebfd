#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "isggen/layout.hpp"
#include "isggen/nn.hpp"

namespace isg {

// Fixed random-weight feature pyramid. Weights never receive gradients.
class PerceptualExtractor {
 public:
  explicit PerceptualExtractor(std::uint64_t seed = 7);

  // Unit-normalized feature maps, finest first.
  std::vector<Var> features(const Var& image) const;
  std::uint64_t seed() const { return seed_; }

 private:
  std::uint64_t seed_;
  ParamSet params_;
  std::vector<Conv2d> layers_;
};

struct LossWeights {
  double gan = 0.01;
  double box = 10.0;
  double mask = 0.1;
  double pixel = 1.0;
  double pixel_step = 0.5;
  double perceptual = 1.0;

  void validate() const;
};

// Unweighted terms of the generator objective.
struct LossReport {
  double gan = 0, box = 0, mask = 0, pixel = 0, pixel_step = 0, perceptual = 0;
  double total = 0;

  // Weighted recombination of the itemized terms.
  double recombine(const LossWeights& w) const;
};

Var pixel_loss(const Var& a, const Var& b);
// Sum over pyramid levels of the spatial mean of squared distances between
// unit-normalized features.
Var perceptual_loss(const Var& a, const Var& b, const PerceptualExtractor& p);

struct StepOutput {
  Var image;                         // [3,S,S]
  std::vector<ObjectLayout> layout;  // objects introduced at this step
};

struct LossTargets {
  Tensor final_image;  // required
  std::map<int, Box> boxes;
  std::map<int, Tensor> masks;
};

// `gan_term` is the unweighted generator-side adversarial loss over all steps
// (may be undefined, contributing 0).
std::pair<Var, LossReport> total_generator_loss(const std::vector<StepOutput>& steps, const LossTargets& targets,
                                                const Var& gan_term, const PerceptualExtractor& p,
                                                const LossWeights& w);

}  // namespace isg
