#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "isggen/config.hpp"
#include "isggen/nn.hpp"
#include "isggen/tensor.hpp"

namespace isg::testing {

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static std::mt19937_64 rng(std::random_device{}());
    path_ = std::filesystem::temp_directory_path() / ("isggen_" + tag + "_" + std::to_string(rng() % 1000000007));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& rel) const { return path_ / rel; }

 private:
  std::filesystem::path path_;
};

// A 16x16 model that trains in milliseconds.
inline ModelConfig tiny_model() {
  ModelConfig m;
  m.image_size = 16;
  m.embed_dim = 8;
  m.gcn_layers = 2;
  m.gcn_hidden = 16;
  m.layout_hidden = 16;
  m.mask_size = 8;
  m.mask_channels = 4;
  m.start_resolution = 4;
  m.crn_channels = {8, 8};
  m.crn_final_channels = 8;
  m.noise_channels = 4;
  m.crop_size = 8;
  m.d_image_channels = 4;
  m.d_object_channels = 4;
  return m;
}

inline RunConfig tiny_run() {
  RunConfig c;
  c.model = tiny_model();
  c.data.image_size = 16;
  c.data.mask_size = 8;
  c.data.count = 12;
  c.train.batch_size = 2;
  c.train.iterations = 4;
  c.train.checkpoint_every = 2;
  c.eval.max_sequences = 4;
  return c;
}

inline Tensor random_tensor(Shape shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  Rng rng(seed);
  return uniform_tensor(std::move(shape), lo, hi, rng);
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

struct GradCheck {
  double rel_error = 0;
  double analytic_norm = 0;
  int probes = 0;
};

// Compares the analytic gradient of `loss` w.r.t. `leaf` against central
// differences on up to `max_probes` evenly spread entries. Relative error is
// ||a - n|| / max(||a||, ||n||) over the probed entries.
inline GradCheck check_gradient(const std::function<Var()>& loss, Var leaf, int max_probes = 24,
                                double h = 1e-6) {
  leaf.set_requires_grad(true);
  leaf.zero_grad();
  loss().backward();
  const Tensor analytic = leaf.grad();
  Tensor& value = leaf.mutable_value();
  const std::size_t n = value.size();
  const std::size_t stride = std::max<std::size_t>(1, n / static_cast<std::size_t>(max_probes));
  double diff2 = 0, a2 = 0, n2 = 0;
  GradCheck out;
  for (std::size_t i = 0; i < n && out.probes < max_probes; i += stride, ++out.probes) {
    const double orig = value[i];
    value[i] = orig + h;
    double up;
    {
      NoGradGuard ng;
      up = loss().item();
    }
    value[i] = orig - h;
    double down;
    {
      NoGradGuard ng;
      down = loss().item();
    }
    value[i] = orig;
    const double numeric = (up - down) / (2 * h);
    diff2 += (analytic[i] - numeric) * (analytic[i] - numeric);
    a2 += analytic[i] * analytic[i];
    n2 += numeric * numeric;
  }
  out.analytic_norm = std::sqrt(a2);
  const double denom = std::max({std::sqrt(a2), std::sqrt(n2), 1e-12});
  out.rel_error = std::sqrt(diff2) / denom;
  return out;
}

}  // namespace isg::testing
