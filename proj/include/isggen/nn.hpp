#pragma once

#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "isggen/tensor.hpp"

namespace isg {

using Rng = std::mt19937_64;

// SplitMix64 finalizer; maps (base, stream) to an independent seed.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream);

Tensor uniform_tensor(Shape shape, double lo, double hi, Rng& rng);
Tensor normal_tensor(Shape shape, double stddev, Rng& rng);

// Ordered collection of named trainable leaves, keyed "module.parameter".
class ParamSet {
 public:
  Var add(const std::string& name, Tensor init);
  Var get(const std::string& name) const;
  bool contains(const std::string& name) const;

  const std::vector<std::pair<std::string, Var>>& items() const { return items_; }
  std::size_t count() const;

  void zero_grad();
  void set_trainable(bool on);
  // Appends all entries of `other` (names must not collide).
  void extend(const ParamSet& other);

 private:
  std::vector<std::pair<std::string, Var>> items_;
  std::map<std::string, std::size_t> index_;
};

struct Linear {
  Var w;  // [out, in]
  Var b;  // [out]

  static Linear create(ParamSet& ps, const std::string& name, int in, int out, Rng& rng);
  Var operator()(const Var& x) const;
};

struct Conv2d {
  Var w;  // [out, in, k, k]
  Var b;  // [out]
  int stride = 1;
  int pad = 1;

  static Conv2d create(ParamSet& ps, const std::string& name, int in, int out, int k, int stride, int pad,
                       Rng& rng);
  Var operator()(const Var& x) const;
};

struct ConvTranspose2d {
  Var w;  // [in, out, k, k]
  Var b;
  int stride = 2;
  int pad = 1;

  static ConvTranspose2d create(ParamSet& ps, const std::string& name, int in, int out, int k, int stride, int pad,
                                Rng& rng);
  Var operator()(const Var& x) const;
};

struct InstanceNorm {
  Var gamma;
  Var beta;

  static InstanceNorm create(ParamSet& ps, const std::string& name, int channels);
  Var operator()(const Var& x) const;
};

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
  double eps = 1e-8;
};

class Adam {
 public:
  Adam(const ParamSet& params, AdamConfig cfg);

  // Applies one update from the accumulated gradients, then zeroes them.
  void step();

  long long steps() const { return t_; }
  const AdamConfig& config() const { return cfg_; }
  void set_learning_rate(double lr) { cfg_.lr = lr; }

  // Moments in parameter order: (first, second).
  const std::vector<std::pair<Tensor, Tensor>>& moments() const { return moments_; }
  void restore(long long t, std::vector<std::pair<Tensor, Tensor>> moments);

 private:
  const ParamSet* params_;
  AdamConfig cfg_;
  long long t_ = 0;
  std::vector<std::pair<Tensor, Tensor>> moments_;
};

// Sum of squared gradient entries over a parameter set.
double grad_norm_sq(const ParamSet& ps);

}  // namespace isg
