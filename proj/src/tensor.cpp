#include "isggen/tensor.hpp"

#include <cmath>
#include <sstream>
#include <unordered_set>

#include "isggen/error.hpp"

namespace isg {

namespace {
thread_local bool g_grad_enabled = true;
}

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) os << ',';
    os << s[i];
  }
  os << ']';
  return os.str();
}

std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (int d : s) {
    if (d < 0) fail(ErrorKind::kValidation, "negative dimension in shape " + shape_str(s));
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
  if (data_.size() != shape_numel(shape_))
    fail(ErrorKind::kValidation, "tensor data size " + std::to_string(data_.size()) + " does not match shape " +
                                     shape_str(shape_));
}

Tensor Tensor::reshaped(Shape shape) const {
  if (shape_numel(shape) != data_.size())
    fail(ErrorKind::kValidation, "cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
  return Tensor(std::move(shape), data_);
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

void Tensor::add_(const Tensor& other) {
  if (other.data_.size() != data_.size())
    fail(ErrorKind::kInternal, "add_ size mismatch " + shape_str(shape_) + " vs " + shape_str(other.shape_));
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
}

bool Tensor::all_finite() const {
  for (double v : data_)
    if (!std::isfinite(v)) return false;
  return true;
}

Tensor& Node::grad_buffer() {
  if (grad.size() != value.size()) grad = Tensor(value.shape());
  return grad;
}

Var::Var(Tensor value, bool requires_grad) : node_(std::make_shared<Node>()) {
  node_->value = std::move(value);
  node_->requires_grad = requires_grad;
}

Tensor Var::grad() const {
  if (node_->grad.size() == node_->value.size()) return node_->grad;
  return Tensor(node_->value.shape());
}

void Var::zero_grad() { node_->grad = Tensor(); }

double Var::item() const {
  if (node_->value.size() != 1) fail(ErrorKind::kInternal, "item() on non-scalar " + shape_str(shape()));
  return node_->value[0];
}

Var Var::make(Tensor value, std::vector<Var> parents, std::function<void(Node&)> fn) {
  Var out;
  out.node_ = std::make_shared<Node>();
  out.node_->value = std::move(value);
  if (!g_grad_enabled) return out;
  bool any = false;
  for (const auto& p : parents) any = any || p.requires_grad();
  if (!any) return out;
  out.node_->requires_grad = true;
  out.node_->parents.reserve(parents.size());
  for (auto& p : parents) out.node_->parents.push_back(p.node_);
  out.node_->backward = std::move(fn);
  return out;
}

void Var::backward() const {
  if (!node_->requires_grad) return;
  // Iterative post-order DFS gives a topological order.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack{{node_.get(), 0}};
  seen.insert(node_.get());
  while (!stack.empty()) {
    auto& [n, i] = stack.back();
    if (i < n->parents.size()) {
      Node* p = n->parents[i++].get();
      if (p->requires_grad && !seen.count(p)) {
        seen.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }
  Tensor& g = node_->grad_buffer();
  for (auto& v : g.values()) v += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward && n->grad.size() == n->value.size()) n->backward(*n);
  }
  // Interior gradients are not needed after propagation.
  for (Node* n : order)
    if (n->backward) n->grad = Tensor();
}

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }
bool grad_enabled() { return g_grad_enabled; }

const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kValidation: return "validation";
    case ErrorKind::kParse: return "parse";
    case ErrorKind::kNotFound: return "not_found";
    case ErrorKind::kConflict: return "conflict";
    case ErrorKind::kConfig: return "config";
    case ErrorKind::kData: return "data";
    case ErrorKind::kNumeric: return "numeric";
    case ErrorKind::kIo: return "io";
    case ErrorKind::kInternal: return "internal";
  }
  return "internal";
}

}  // namespace isg
