#include "isggen/nn.hpp"

#include <cmath>

#include "isggen/error.hpp"
#include "isggen/ops.hpp"

namespace isg {

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream) {
  std::uint64_t z = base + 0x9E3779B97F4A7C15ull * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

Tensor uniform_tensor(Shape shape, double lo, double hi, Rng& rng) {
  Tensor t(std::move(shape));
  std::uniform_real_distribution<double> d(lo, hi);
  for (auto& v : t.values()) v = d(rng);
  return t;
}

Tensor normal_tensor(Shape shape, double stddev, Rng& rng) {
  Tensor t(std::move(shape));
  std::normal_distribution<double> d(0.0, stddev);
  for (auto& v : t.values()) v = d(rng);
  return t;
}

Var ParamSet::add(const std::string& name, Tensor init) {
  if (index_.count(name)) fail(ErrorKind::kInternal, "duplicate parameter " + name);
  Var v(std::move(init), true);
  index_[name] = items_.size();
  items_.emplace_back(name, v);
  return v;
}

Var ParamSet::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) fail(ErrorKind::kNotFound, "unknown parameter " + name);
  return items_[it->second].second;
}

bool ParamSet::contains(const std::string& name) const { return index_.count(name) > 0; }

std::size_t ParamSet::count() const {
  std::size_t n = 0;
  for (const auto& [_, v] : items_) n += v.size();
  return n;
}

void ParamSet::zero_grad() {
  for (auto& [_, v] : items_) v.zero_grad();
}

void ParamSet::set_trainable(bool on) {
  for (auto& [_, v] : items_) v.set_requires_grad(on);
}

void ParamSet::extend(const ParamSet& other) {
  for (const auto& [name, v] : other.items_) {
    if (index_.count(name)) fail(ErrorKind::kInternal, "duplicate parameter " + name);
    index_[name] = items_.size();
    items_.emplace_back(name, v);
  }
}

Linear Linear::create(ParamSet& ps, const std::string& name, int in, int out, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  Linear l;
  l.w = ps.add(name + ".weight", uniform_tensor({out, in}, -bound, bound, rng));
  l.b = ps.add(name + ".bias", uniform_tensor({out}, -bound, bound, rng));
  return l;
}

Var Linear::operator()(const Var& x) const { return ops::linear(x, w, b); }

Conv2d Conv2d::create(ParamSet& ps, const std::string& name, int in, int out, int k, int stride, int pad,
                      Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in * k * k));
  Conv2d c;
  c.w = ps.add(name + ".weight", uniform_tensor({out, in, k, k}, -bound, bound, rng));
  c.b = ps.add(name + ".bias", uniform_tensor({out}, -bound, bound, rng));
  c.stride = stride;
  c.pad = pad;
  return c;
}

Var Conv2d::operator()(const Var& x) const { return ops::conv2d(x, w, b, stride, pad); }

ConvTranspose2d ConvTranspose2d::create(ParamSet& ps, const std::string& name, int in, int out, int k, int stride,
                                        int pad, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in * k * k));
  ConvTranspose2d c;
  c.w = ps.add(name + ".weight", uniform_tensor({in, out, k, k}, -bound, bound, rng));
  c.b = ps.add(name + ".bias", uniform_tensor({out}, -bound, bound, rng));
  c.stride = stride;
  c.pad = pad;
  return c;
}

Var ConvTranspose2d::operator()(const Var& x) const { return ops::conv_transpose2d(x, w, b, stride, pad); }

InstanceNorm InstanceNorm::create(ParamSet& ps, const std::string& name, int channels) {
  InstanceNorm n;
  n.gamma = ps.add(name + ".gamma", Tensor({channels}, 1.0));
  n.beta = ps.add(name + ".beta", Tensor({channels}, 0.0));
  return n;
}

Var InstanceNorm::operator()(const Var& x) const { return ops::instance_norm(x, gamma, beta); }

Adam::Adam(const ParamSet& params, AdamConfig cfg) : params_(&params), cfg_(cfg) {
  for (const auto& [_, v] : params.items()) moments_.emplace_back(Tensor(v.shape()), Tensor(v.shape()));
}

void Adam::step() {
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  const auto& items = params_->items();
  for (std::size_t i = 0; i < items.size(); ++i) {
    Var p = items[i].second;
    const Node& node = *p.node();
    if (node.grad.size() != node.value.size()) continue;
    Tensor& m = moments_[i].first;
    Tensor& v = moments_[i].second;
    Tensor& w = p.mutable_value();
    for (std::size_t j = 0; j < w.size(); ++j) {
      const double g = node.grad[j];
      m[j] = cfg_.beta1 * m[j] + (1.0 - cfg_.beta1) * g;
      v[j] = cfg_.beta2 * v[j] + (1.0 - cfg_.beta2) * g * g;
      w[j] -= cfg_.lr * (m[j] / bc1) / (std::sqrt(v[j] / bc2) + cfg_.eps);
    }
    p.zero_grad();
  }
}

void Adam::restore(long long t, std::vector<std::pair<Tensor, Tensor>> moments) {
  if (moments.size() != moments_.size()) fail(ErrorKind::kData, "optimizer state has wrong parameter count");
  for (std::size_t i = 0; i < moments.size(); ++i)
    if (moments[i].first.shape() != moments_[i].first.shape())
      fail(ErrorKind::kData, "optimizer state shape mismatch for " + params_->items()[i].first);
  t_ = t;
  moments_ = std::move(moments);
}

double grad_norm_sq(const ParamSet& ps) {
  double s = 0.0;
  for (const auto& [_, v] : ps.items()) {
    const Node& n = *v.node();
    if (n.grad.size() != n.value.size()) continue;
    for (double g : n.grad.values()) s += g * g;
  }
  return s;
}

}  // namespace isg
