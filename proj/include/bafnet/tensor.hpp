// Copyright 2026 The BAFNet Authors.
// SPDX-License-Identifier: Apache-2.0
//
// Dense N-d tensor with tape-based reverse-mode differentiation.
// Feature maps use (batch, channel, height, width) order, row-major storage.

#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace bafnet {

using Shape = std::vector<int64_t>;

inline int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int64_t d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "(";
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ")";
  return os.str();
}

[[noreturn]] inline void fail_check(const std::string& msg) {
  throw std::invalid_argument(msg);
}

#define BAFNET_CHECK(cond, msg)                   \
  do {                                            \
    if (!(cond)) {                                \
      std::ostringstream os_;                     \
      os_ << msg;                                 \
      ::bafnet::fail_check(os_.str());            \
    }                                             \
  } while (0)

// Set to true (or export BAFNET_CHECK_FINITE=1) to scan every op output for
// NaN/Inf. Costs a full pass per op, so it is off by default.
bool& finite_checks_enabled();

namespace detail {

template <typename T>
struct Node {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // allocated on first accumulation
  bool requires_grad = false;
  bool leaf = true;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  int64_t numel() const { return shape_numel(shape); }
  void ensure_grad() {
    if (grad.empty()) grad.assign(data.size(), T(0));
  }
};

// Ops record nothing while a NoGradGuard is alive (inference mode).
bool& grad_mode();

}  // namespace detail

struct NoGradGuard {
  bool prev;
  NoGradGuard() : prev(detail::grad_mode()) { detail::grad_mode() = false; }
  ~NoGradGuard() { detail::grad_mode() = prev; }
  NoGradGuard(const NoGradGuard&) = delete;
};

template <typename T>
class Tensor {
 public:
  using Node = detail::Node<T>;

  Tensor() = default;
  explicit Tensor(std::shared_ptr<Node> n) : node_(std::move(n)) {}

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    return filled(std::move(shape), T(0), requires_grad);
  }
  static Tensor filled(Shape shape, T value, bool requires_grad = false) {
    auto n = std::make_shared<Node>();
    n->data.assign(shape_numel(shape), value);
    n->shape = std::move(shape);
    n->requires_grad = requires_grad;
    return Tensor(std::move(n));
  }
  static Tensor from(Shape shape, std::vector<T> values, bool requires_grad = false) {
    BAFNET_CHECK(shape_numel(shape) == (int64_t)values.size(),
                 "tensor data length " << values.size() << " does not match shape " << shape_str(shape));
    auto n = std::make_shared<Node>();
    n->shape = std::move(shape);
    n->data = std::move(values);
    n->requires_grad = requires_grad;
    return Tensor(std::move(n));
  }
  static Tensor scalar(T v, bool requires_grad = false) {
    return from({1}, {v}, requires_grad);
  }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  int rank() const { return (int)node_->shape.size(); }
  int64_t dim(int i) const { return node_->shape[i]; }
  int64_t numel() const { return node_->numel(); }

  bool requires_grad() const { return node_ && node_->requires_grad; }
  void set_requires_grad(bool rg) { node_->requires_grad = rg; }
  bool is_leaf() const { return node_->leaf; }

  T* data() { return node_->data.data(); }
  const T* data() const { return node_->data.data(); }
  std::vector<T>& vec() { return node_->data; }
  const std::vector<T>& vec() const { return node_->data; }

  bool has_grad() const { return node_ && !node_->grad.empty(); }
  std::vector<T>& grad() {
    node_->ensure_grad();
    return node_->grad;
  }
  const std::vector<T>& grad() const { return node_->grad; }
  void zero_grad() {
    if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), T(0));
  }
  void drop_grad() { node_->grad.clear(); node_->grad.shrink_to_fit(); }

  T item() const {
    BAFNET_CHECK(numel() == 1, "item() on tensor of shape " << shape_str(shape()));
    return node_->data[0];
  }

  // Copy of the values with no tape history.
  Tensor detach_copy() const {
    auto n = std::make_shared<Node>();
    n->shape = node_->shape;
    n->data = node_->data;
    return Tensor(std::move(n));
  }

  std::shared_ptr<Node> node() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

// ---------------------------------------------------------------------------
// Operations. Every op is differentiable unless noted. Defined in tensor.cpp
// and instantiated for float and double.
// ---------------------------------------------------------------------------

struct ConvSpec {
  int stride = 1;
  int padding = 0;
  int dilation = 1;
  int groups = 1;
};

// x (B,Cin,H,W), w (Cout,Cin/groups,k,k), optional bias (Cout). Zero padding.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias,
                 const ConvSpec& spec);

// Half-pixel source coordinates, border clamped. out dims given explicitly.
template <typename T>
Tensor<T> bilinear_resize(const Tensor<T>& x, int64_t out_h, int64_t out_w);

template <typename T>
Tensor<T> bilinear_resize(const Tensor<T>& x, double factor);

// Running statistics live outside the tape; train mode updates them in place.
// Pass null pointers to skip tracking (pure functional use).
template <typename T>
Tensor<T> batch_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                     Tensor<T>* running_mean, Tensor<T>* running_var, bool training,
                     T momentum = T(0.1), T eps = T(1e-5));

// Normalizes the last axis of a token-shaped tensor (..., C).
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                     T eps = T(1e-5));

template <typename T> Tensor<T> relu(const Tensor<T>& x);
template <typename T> Tensor<T> gelu(const Tensor<T>& x);
template <typename T> Tensor<T> sigmoid(const Tensor<T>& x);

template <typename T> Tensor<T> softmax(const Tensor<T>& x, int axis);

// Shapes must match after numpy-style broadcasting of equal-rank operands
// (each dim equal or 1).
template <typename T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> scale(const Tensor<T>& a, T c);

// a (...,M,K) x b (...,K,N); batch dims must match exactly, or b may be 2-D
// and is then shared across the batch.
template <typename T> Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);

// (B,C,H,W) -> (B,C,1,1), mean over the spatial extent.
template <typename T> Tensor<T> global_avg_pool(const Tensor<T>& x);

template <typename T> Tensor<T> concat(const std::vector<Tensor<T>>& xs, int axis);

template <typename T> Tensor<T> sum(const Tensor<T>& x);
template <typename T> Tensor<T> mean(const Tensor<T>& x);

template <typename T> Tensor<T> reshape(const Tensor<T>& x, Shape shape);
template <typename T> Tensor<T> permute(const Tensor<T>& x, const std::vector<int>& axes);
template <typename T> Tensor<T> narrow(const Tensor<T>& x, int axis, int64_t start, int64_t len);

// table (K,H), indices into rows; result (M,H). Backward scatter-adds into
// the table, which is how the relative position table trains.
template <typename T>
Tensor<T> rows_lookup(const Tensor<T>& table, const std::vector<int64_t>& indices);

// Escape hatch for fused ops defined outside this translation unit: wraps a
// precomputed result and its hand-written backward into a tape node.
template <typename T>
Tensor<T> custom_op(Shape shape, std::vector<T> data, std::vector<Tensor<T>> parents,
                    std::function<void(detail::Node<T>&)> backward_fn);

// Populates leaf gradients from a scalar loss. Repeated calls accumulate.
// free_graph releases intermediate activations while unwinding, after which
// the graph cannot be replayed.
template <typename T> void backward(const Tensor<T>& loss, bool free_graph = false);

template <typename T> bool all_finite(const Tensor<T>& x);
template <typename T> void check_finite(const Tensor<T>& x, const char* what);

// One-time process setup (BLAS thread pinning). Safe to call repeatedly.
void runtime_init();

}  // namespace bafnet
