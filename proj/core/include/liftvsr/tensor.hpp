#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace liftvsr::ad {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

// One vertex of the dynamic tape. Interior nodes keep their parents alive until
// the result tensor is released, so the tape lives exactly as long as the loss.
struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  std::vector<double>& ensure_grad();
};

// Gradient buffer of parent k, or nullptr when that parent is not on a
// differentiable path.
std::vector<double>* parent_grad(Node& self, std::size_t k);
const std::vector<double>& parent_value(const Node& self, std::size_t k);

}  // namespace detail

// Dense float64 tensor handle. Copies share storage and graph position; use
// clone() for an independent copy of the values.
class Tensor {
 public:
  Tensor();
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> values);

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape), 0.0); }
  static Tensor full(Shape shape, double v) { return Tensor(std::move(shape), v); }
  static Tensor scalar(double v) { return Tensor(Shape{1}, v); }

  bool defined() const noexcept { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const { return node_->value.size(); }

  std::span<double> data() { return node_->value; }
  std::span<const double> data() const { return node_->value; }
  const std::vector<double>& values() const { return node_->value; }
  double item() const;

  bool has_grad() const { return !node_->grad.empty(); }
  std::span<double> grad() { return node_->grad; }
  std::span<const double> grad() const { return node_->grad; }
  void zero_grad();

  bool requires_grad() const { return node_->requires_grad; }
  Tensor& set_requires_grad(bool on);

  // Same values, cut from the graph.
  Tensor detach() const;
  Tensor clone() const;

  detail::Node* node() const { return node_.get(); }
  const std::shared_ptr<detail::Node>& node_ptr() const { return node_; }

  static Tensor from_node(std::shared_ptr<detail::Node> node);

 private:
  std::shared_ptr<detail::Node> node_;
};

// Trainable leaf registered under a unique name within a model.
struct Parameter {
  std::string name;
  Tensor tensor;
  bool trainable = true;
};

enum class TraversalOrder {
  kParentsForward,
  kParentsReversed,
};

// Reverse-mode sweep from a scalar (single element) loss.
void backward(const Tensor& loss, TraversalOrder order = TraversalOrder::kParentsForward);

// Thread-local switch: while disabled, ops compute values only.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

// Builds an op result. The backward closure is attached only when gradients
// are enabled and at least one parent requires them.
Tensor make_result(Shape shape, std::vector<double> value,
                   std::initializer_list<Tensor> parents,
                   std::function<void(detail::Node&)> backward_fn);
Tensor make_result(Shape shape, std::vector<double> value,
                   const std::vector<Tensor>& parents,
                   std::function<void(detail::Node&)> backward_fn);

}  // namespace liftvsr::ad
