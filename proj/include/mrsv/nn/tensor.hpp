// Minimal reverse-mode autodiff tensor used by every trainable module.
//
// A Tensor is a shared handle onto a Node holding a dense row-major
// float64 buffer.  Ops build a graph only when grad mode is on and at least
// one input requires a gradient; Tensor::backward() walks it once and then
// releases the closures.
#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace mrsv::nn {

using Shape = std::vector<int>;

std::size_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  void ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
  }
};

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, double v);
  static Tensor from(Shape shape, std::vector<double> values);
  // Leaf that accumulates gradients.
  static Tensor parameter(Shape shape, std::vector<double> values);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  int rank() const { return static_cast<int>(node_->shape.size()); }
  int dim(int axis) const;
  std::size_t size() const { return node_->value.size(); }

  std::span<const double> data() const { return node_->value; }
  std::span<double> mutable_data() { return node_->value; }
  // Empty span until a backward pass touched this tensor.
  std::span<const double> grad() const { return node_->grad; }
  std::span<double> mutable_grad() { return node_->grad; }
  bool has_grad() const { return !node_->grad.empty(); }

  bool requires_grad() const { return node_->requires_grad; }
  double item() const;
  double operator[](std::size_t i) const { return node_->value[i]; }

  // Seeds d(self)/d(self) = 1; self must hold a single element.
  void backward() const;
  void zero_grad();
  Tensor detach() const;
  Tensor clone() const;

  const std::shared_ptr<Node>& node() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

bool grad_enabled();

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

// For op implementations: wraps a freshly computed value and, when any
// parent needs a gradient, attaches the backward closure.
Tensor make_result(Shape shape, std::vector<double> value,
                   std::initializer_list<Tensor> parents,
                   std::function<void(Node&)> backward_fn);
Tensor make_result(Shape shape, std::vector<double> value,
                   const std::vector<Tensor>& parents,
                   std::function<void(Node&)> backward_fn);

}  // namespace mrsv::nn
