#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace isg {

using Shape = std::vector<int>;

std::string shape_str(const Shape& s);
std::size_t shape_numel(const Shape& s);

// Dense row-major float64 array. Image-like tensors use CHW layout.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  const Shape& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  int dim(int i) const { return shape_.at(static_cast<std::size_t>(i)); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }
  std::vector<double>& storage() { return data_; }
  const std::vector<double>& storage() const { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  // CHW accessors.
  double& at(int c, int y, int x) { return data_[(static_cast<std::size_t>(c) * shape_[1] + y) * shape_[2] + x]; }
  double at(int c, int y, int x) const {
    return data_[(static_cast<std::size_t>(c) * shape_[1] + y) * shape_[2] + x];
  }

  Tensor reshaped(Shape shape) const;
  void fill(double v);
  void add_(const Tensor& other);
  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
  bool all_finite() const;

  friend bool operator==(const Tensor& a, const Tensor& b) { return a.shape_ == b.shape_ && a.data_ == b.data_; }

 private:
  Shape shape_;
  std::vector<double> data_;
};

struct Node;
using NodePtr = std::shared_ptr<Node>;

struct Node {
  Tensor value;
  Tensor grad;  // allocated lazily
  bool requires_grad = false;
  std::vector<NodePtr> parents;
  std::function<void(Node&)> backward;

  Tensor& grad_buffer();
};

// Handle to a node of the reverse-mode autodiff graph. Copying a Var shares
// the node.
class Var {
 public:
  Var() = default;
  explicit Var(Tensor value, bool requires_grad = false);

  bool defined() const { return static_cast<bool>(node_); }
  const Tensor& value() const { return node_->value; }
  Tensor& mutable_value() { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  int dim(int i) const { return node_->value.dim(i); }
  std::size_t size() const { return node_->value.size(); }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }

  // Gradient accumulated by backward(); zero tensor when none was produced.
  Tensor grad() const;
  void zero_grad();

  // Scalar value (requires size()==1).
  double item() const;

  // Seeds d(this)/d(this)=1 and propagates through the recorded graph.
  void backward() const;

  const NodePtr& node() const { return node_; }

  // Builds a node whose value is `value` and whose gradient flows into
  // `parents` through `fn`. Recording is skipped when no parent needs grad.
  static Var make(Tensor value, std::vector<Var> parents, std::function<void(Node&)> fn);

 private:
  NodePtr node_;
};

// Disables graph recording on the current thread while alive.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

bool grad_enabled();

}  // namespace isg
