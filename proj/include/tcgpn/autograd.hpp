#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "tcgpn/tensor.hpp"

namespace tcgpn {

template <std::floating_point T>
class Tape;

/// Handle to a node on a Tape. Cheap to copy; only valid while its tape lives.
template <std::floating_point T>
class Var {
 public:
  Var() = default;

  bool valid() const { return tape_ != nullptr; }
  Tape<T>& tape() const { return *tape_; }
  std::size_t id() const { return id_; }
  const Tensor<T>& value() const;
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const;

 private:
  friend class Tape<T>;
  Var(Tape<T>* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape<T>* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Reverse-mode recording of one computation.
///
/// Nodes are appended in evaluation order, so reverse creation order is a
/// valid topological order for the backward sweep. Values are immutable once
/// recorded. Gradients only flow into nodes that transitively depend on a
/// variable leaf; constant sub-graphs never allocate gradient buffers.
template <std::floating_point T>
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::size_t)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var<T> constant(Tensor<T> value);
  Var<T> variable(Tensor<T> value);

  /// Seeds d(loss)/d(loss) = 1 and sweeps. The loss must be a single element.
  void backward(const Var<T>& loss);

  const Tensor<T>& value(std::size_t id) const { return nodes_[id]->value; }
  bool requires_grad(std::size_t id) const { return nodes_[id]->requires_grad; }
  /// Gradient of the last backward() w.r.t. a node, or nullptr if none reached it.
  const Tensor<T>* grad(const Var<T>& v) const;

  std::size_t size() const { return nodes_.size(); }

  /// Names the current position in the model for error messages.
  class Scope {
   public:
    Scope(Tape& tape, std::string name) : tape_(tape) { tape_.scopes_.push_back(std::move(name)); }
    ~Scope() { tape_.scopes_.pop_back(); }
    Scope(const Scope&) = delete;
    Scope& operator=(const Scope&) = delete;

   private:
    Tape& tape_;
  };
  std::string path(std::string_view op) const;

  // Used by op implementations.
  Var<T> record(std::string_view op, Tensor<T> value, const std::vector<Var<T>>& inputs,
                BackwardFn backward);
  Tensor<T>& grad_buffer(std::size_t id);
  const Tensor<T>& upstream(std::size_t id) const { return *nodes_[id]->grad; }
  Var<T> handle(std::size_t id) { return Var<T>(this, id); }

 private:
  struct Node {
    Tensor<T> value;
    std::optional<Tensor<T>> grad;
    bool requires_grad = false;
    bool leaf = false;
    BackwardFn backward;
  };

  std::vector<std::unique_ptr<Node>> nodes_;
  std::vector<std::string> scopes_;
};

template <std::floating_point T>
const Tensor<T>& Var<T>::value() const {
  return tape_->value(id_);
}

template <std::floating_point T>
bool Var<T>::requires_grad() const {
  return tape_->requires_grad(id_);
}

// Broadcasting follows numpy rules: trailing dimensions are aligned, size-1
// dimensions stretch.
Shape broadcast_shape(const Shape& a, const Shape& b);

namespace ops {

template <std::floating_point T> Var<T> add(const Var<T>& a, const Var<T>& b);
template <std::floating_point T> Var<T> sub(const Var<T>& a, const Var<T>& b);
template <std::floating_point T> Var<T> mul(const Var<T>& a, const Var<T>& b);
template <std::floating_point T> Var<T> div(const Var<T>& a, const Var<T>& b);

template <std::floating_point T> Var<T> scale(const Var<T>& x, T c);
template <std::floating_point T> Var<T> add_scalar(const Var<T>& x, T c);
template <std::floating_point T> Var<T> neg(const Var<T>& x);
template <std::floating_point T> Var<T> exp(const Var<T>& x);
template <std::floating_point T> Var<T> sqrt(const Var<T>& x);
template <std::floating_point T> Var<T> square(const Var<T>& x);
template <std::floating_point T> Var<T> relu(const Var<T>& x);
template <std::floating_point T> Var<T> leaky_relu(const Var<T>& x, T slope);

/// Batched matrix product over the last two axes; leading axes broadcast.
/// A rank-2 right operand is shared across every leading index of `a`.
template <std::floating_point T> Var<T> matmul(const Var<T>& a, const Var<T>& b);

template <std::floating_point T> Var<T> permute(const Var<T>& x, const std::vector<std::size_t>& axes);
/// Swaps the last two axes.
template <std::floating_point T> Var<T> transpose(const Var<T>& x);
template <std::floating_point T> Var<T> reshape(const Var<T>& x, Shape shape);

template <std::floating_point T> Var<T> softmax(const Var<T>& x, std::size_t axis);
/// softmax(x + bias) over the last axis; the constant `bias` tiles x's trailing axes.
template <std::floating_point T> Var<T> softmax_bias(const Var<T>& x, const Tensor<T>& bias);
/// Normalizes over the last axis, then applies the per-channel affine map.
template <std::floating_point T>
Var<T> layer_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, T eps = T(1e-5));

template <std::floating_point T> Var<T> sum(const Var<T>& x);
template <std::floating_point T> Var<T> mean(const Var<T>& x);
template <std::floating_point T> Var<T> sum(const Var<T>& x, std::size_t axis, bool keepdim);
template <std::floating_point T> Var<T> mean(const Var<T>& x, std::size_t axis, bool keepdim);

/// Replaces entries where `mask` is nonzero by `value`; `mask` broadcasts against x.
/// No gradient flows through replaced entries.
template <std::floating_point T>
Var<T> masked_fill(const Var<T>& x, const Tensor<T>& mask, T value);

template <std::floating_point T> Var<T> concat(const std::vector<Var<T>>& xs, std::size_t axis);

}  // namespace ops

template <std::floating_point T> Var<T> operator+(const Var<T>& a, const Var<T>& b) { return ops::add(a, b); }
template <std::floating_point T> Var<T> operator-(const Var<T>& a, const Var<T>& b) { return ops::sub(a, b); }
template <std::floating_point T> Var<T> operator*(const Var<T>& a, const Var<T>& b) { return ops::mul(a, b); }
template <std::floating_point T> Var<T> operator/(const Var<T>& a, const Var<T>& b) { return ops::div(a, b); }
template <std::floating_point T> Var<T> operator-(const Var<T>& a) { return ops::neg(a); }

}  // namespace tcgpn
