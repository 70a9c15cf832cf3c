#include "tcgpn/autograd.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace tcgpn {

std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

Shape broadcast_shape(const Shape& a, const Shape& b) {
  const std::size_t r = std::max(a.size(), b.size());
  Shape out(r);
  for (std::size_t i = 0; i < r; ++i) {
    const std::size_t da = i < r - a.size() ? 1 : a[i - (r - a.size())];
    const std::size_t db = i < r - b.size() ? 1 : b[i - (r - b.size())];
    if (da != db && da != 1 && db != 1) {
      throw ShapeError("cannot broadcast " + shape_str(a) + " with " + shape_str(b));
    }
    out[i] = std::max(da, db);
  }
  return out;
}

namespace {

// Element strides of `in` viewed in the broadcast output shape (0 on stretched axes).
std::vector<std::size_t> broadcast_strides(const Shape& in, const Shape& out) {
  std::vector<std::size_t> strides(out.size(), 0);
  std::size_t s = 1;
  for (std::size_t k = 0; k < in.size(); ++k) {
    const std::size_t i = in.size() - 1 - k;
    const std::size_t o = out.size() - 1 - k;
    strides[o] = in[i] == 1 ? 0 : s;
    s *= in[i];
  }
  return strides;
}

// Calls f(out_index, a_index, b_index) for every output element.
template <typename F>
void for_each_broadcast(const Shape& out, const std::vector<std::size_t>& sa,
                        const std::vector<std::size_t>& sb, F&& f) {
  const std::size_t r = out.size();
  if (r == 0) {
    f(std::size_t{0}, std::size_t{0}, std::size_t{0});
    return;
  }
  const std::size_t inner = out[r - 1];
  const std::size_t ia = sa[r - 1];
  const std::size_t ib = sb[r - 1];
  const std::size_t outer = numel(out) / inner;
  std::vector<std::size_t> idx(r, 0);
  std::size_t oa = 0, ob = 0;
  for (std::size_t o = 0; o < outer; ++o) {
    const std::size_t base = o * inner;
    for (std::size_t i = 0; i < inner; ++i) f(base + i, oa + i * ia, ob + i * ib);
    for (std::size_t k = r - 1; k-- > 0;) {
      ++idx[k];
      oa += sa[k];
      ob += sb[k];
      if (idx[k] < out[k]) break;
      oa -= sa[k] * out[k];
      ob -= sb[k] * out[k];
      idx[k] = 0;
    }
  }
}

template <std::floating_point T>
bool any_requires_grad(const std::vector<Var<T>>& inputs) {
  return std::any_of(inputs.begin(), inputs.end(), [](const Var<T>& v) { return v.requires_grad(); });
}

template <std::floating_point T>
Tape<T>& same_tape(const Var<T>& a, const Var<T>& b) {
  if (!a.valid() || !b.valid() || &a.tape() != &b.tape()) {
    throw std::invalid_argument("operands belong to different tapes");
  }
  return a.tape();
}

template <std::floating_point T>
using MatMap = Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
template <std::floating_point T>
using ConstMatMap = Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

// Binary elementwise op with broadcasting. `fwd(a, b)` computes the value;
// `da(a, b, out, g)` and `db(...)` the partials times the upstream gradient.
// How an operand's elements map onto the broadcast output.
enum class Layout { Same, Tiled, General };

// Tiled: the operand equals a contiguous suffix of the output shape (after
// dropping leading 1s), so element o reads operand[o % size].
Layout layout_of(const Shape& operand, const Shape& out) {
  if (operand == out) return Layout::Same;
  std::size_t lead = 0;
  while (lead < operand.size() && operand[lead] == 1) ++lead;
  const std::size_t rest = operand.size() - lead;
  if (rest > out.size()) return Layout::General;
  for (std::size_t k = 0; k < rest; ++k) {
    if (operand[lead + k] != out[out.size() - rest + k]) return Layout::General;
  }
  return Layout::Tiled;
}

template <std::floating_point T, typename Fwd, typename Da, typename Db>
Var<T> binary(std::string_view name, const Var<T>& a, const Var<T>& b, Fwd fwd, Da da, Db db) {
  Tape<T>& tape = same_tape(a, b);
  Shape out_shape;
  try {
    out_shape = broadcast_shape(a.shape(), b.shape());
  } catch (const ShapeError& e) {
    throw ShapeError(tape.path(name) + ": " + e.what());
  }
  const Layout la = layout_of(a.shape(), out_shape), lb = layout_of(b.shape(), out_shape);
  const bool fast = la != Layout::General && lb != Layout::General;
  const std::size_t na = a.value().size(), nb = b.value().size();
  const auto sa = broadcast_strides(a.shape(), out_shape);
  const auto sb = broadcast_strides(b.shape(), out_shape);
  Tensor<T> out = Tensor<T>::uninitialized(out_shape);
  const T* pa = a.value().data();
  const T* pb = b.value().data();
  T* po = out.data();
  const std::size_t n_out = out.size();
  if (la == Layout::Same && lb == Layout::Same) {
    for (std::size_t i = 0; i < n_out; ++i) po[i] = fwd(pa[i], pb[i]);
  } else if (fast) {
    // Both operands tile the output; their indices wrap independently.
    for (std::size_t o = 0, i = 0, j = 0; o < n_out; ++o) {
      po[o] = fwd(pa[i], pb[j]);
      if (++i == na) i = 0;
      if (++j == nb) j = 0;
    }
  } else {
    for_each_broadcast(out_shape, sa, sb, [&](std::size_t o, std::size_t i, std::size_t j) { po[o] = fwd(pa[i], pb[j]); });
  }
  const std::size_t ia = a.id(), ib = b.id();
  return tape.record(name, std::move(out), {a, b}, [=](Tape<T>& t, std::size_t self) {
    const T* g = t.upstream(self).data();
    const T* y = t.value(self).data();
    const T* xa = t.value(ia).data();
    const T* xb = t.value(ib).data();
    const bool ga_on = t.requires_grad(ia), gb_on = t.requires_grad(ib);
    T* ga = ga_on ? t.grad_buffer(ia).data() : nullptr;
    T* gb = gb_on ? t.grad_buffer(ib).data() : nullptr;
    if (fast) {
      if (ga_on) {
        for (std::size_t o = 0, i = 0, j = 0; o < n_out; ++o) {
          ga[i] += da(xa[i], xb[j], y[o], g[o]);
          if (++i == na) i = 0;
          if (++j == nb) j = 0;
        }
      }
      if (gb_on) {
        for (std::size_t o = 0, i = 0, j = 0; o < n_out; ++o) {
          gb[j] += db(xa[i], xb[j], y[o], g[o]);
          if (++i == na) i = 0;
          if (++j == nb) j = 0;
        }
      }
      return;
    }
    if (ga_on) {
      for_each_broadcast(out_shape, sa, sb, [&](std::size_t o, std::size_t i, std::size_t j) {
        ga[i] += da(xa[i], xb[j], y[o], g[o]);
      });
    }
    if (gb_on) {
      for_each_broadcast(out_shape, sa, sb, [&](std::size_t o, std::size_t i, std::size_t j) {
        gb[j] += db(xa[i], xb[j], y[o], g[o]);
      });
    }
  });
}

// Unary elementwise op; `d(x, y, g)` is the partial times upstream.
template <std::floating_point T, typename Fwd, typename D>
Var<T> unary(std::string_view name, const Var<T>& x, Fwd fwd, D d) {
  Tape<T>& tape = x.tape();
  Tensor<T> out = Tensor<T>::uninitialized(x.shape());
  const T* px = x.value().data();
  T* po = out.data();
  for (std::size_t i = 0; i < out.size(); ++i) po[i] = fwd(px[i]);
  const std::size_t ix = x.id();
  return tape.record(name, std::move(out), {x}, [=](Tape<T>& t, std::size_t self) {
    if (!t.requires_grad(ix)) return;
    const T* g = t.upstream(self).data();
    const T* y = t.value(self).data();
    const T* xv = t.value(ix).data();
    T* gx = t.grad_buffer(ix).data();
    const std::size_t n = t.value(self).size();
    for (std::size_t i = 0; i < n; ++i) gx[i] += d(xv[i], y[i], g[i]);
  });
}

// Splits a shape around `axis` into (outer, n, inner) extents.
struct AxisSplit {
  std::size_t outer, n, inner;
};

AxisSplit split_axis(const Shape& s, std::size_t axis) {
  AxisSplit r{1, s[axis], 1};
  for (std::size_t i = 0; i < axis; ++i) r.outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) r.inner *= s[i];
  return r;
}

}  // namespace

// ---------------------------------------------------------------------------
// Tape
// ---------------------------------------------------------------------------

template <std::floating_point T>
Var<T> Tape<T>::constant(Tensor<T> value) {
  auto node = std::make_unique<Node>();
  node->value = std::move(value);
  node->leaf = true;
  nodes_.push_back(std::move(node));
  return Var<T>(this, nodes_.size() - 1);
}

template <std::floating_point T>
Var<T> Tape<T>::variable(Tensor<T> value) {
  Var<T> v = constant(std::move(value));
  nodes_.back()->requires_grad = true;
  return v;
}

template <std::floating_point T>
Var<T> Tape<T>::record(std::string_view op, Tensor<T> value, const std::vector<Var<T>>& inputs,
                       BackwardFn backward) {
  (void)op;
  auto node = std::make_unique<Node>();
  node->value = std::move(value);
  node->requires_grad = any_requires_grad(inputs);
  if (node->requires_grad) node->backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return Var<T>(this, nodes_.size() - 1);
}

template <std::floating_point T>
Tensor<T>& Tape<T>::grad_buffer(std::size_t id) {
  Node& n = *nodes_[id];
  if (!n.grad) n.grad.emplace(n.value.shape());
  return *n.grad;
}

template <std::floating_point T>
const Tensor<T>* Tape<T>::grad(const Var<T>& v) const {
  const Node& n = *nodes_[v.id()];
  return n.grad ? &*n.grad : nullptr;
}

template <std::floating_point T>
std::string Tape<T>::path(std::string_view op) const {
  std::string p;
  for (const auto& s : scopes_) p += s + "/";
  return p + std::string(op);
}

template <std::floating_point T>
void Tape<T>::backward(const Var<T>& loss) {
  if (&loss.tape() != this) throw std::invalid_argument("loss is not on this tape");
  if (loss.value().size() != 1) {
    throw ShapeError("backward: loss must be scalar, got shape " + shape_str(loss.shape()));
  }
  for (auto& n : nodes_) n->grad.reset();
  if (!nodes_[loss.id()]->requires_grad) return;
  grad_buffer(loss.id()).fill(T(1));
  for (std::size_t id = loss.id() + 1; id-- > 0;) {
    Node& n = *nodes_[id];
    if (!n.grad || n.leaf || !n.backward) continue;
    n.backward(*this, id);
    n.grad.reset();  // interior gradients are not needed once propagated
  }
}

template class Tape<float>;
template class Tape<double>;

// ---------------------------------------------------------------------------
// Ops
// ---------------------------------------------------------------------------

namespace ops {

template <std::floating_point T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  return binary<T>("add", a, b, [](T x, T y) { return x + y; },
                   [](T, T, T, T g) { return g; }, [](T, T, T, T g) { return g; });
}

template <std::floating_point T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  return binary<T>("sub", a, b, [](T x, T y) { return x - y; },
                   [](T, T, T, T g) { return g; }, [](T, T, T, T g) { return -g; });
}

template <std::floating_point T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  return binary<T>("mul", a, b, [](T x, T y) { return x * y; },
                   [](T, T y, T, T g) { return g * y; }, [](T x, T, T, T g) { return g * x; });
}

template <std::floating_point T>
Var<T> div(const Var<T>& a, const Var<T>& b) {
  return binary<T>("div", a, b, [](T x, T y) { return x / y; },
                   [](T, T y, T, T g) { return g / y; },
                   [](T, T y, T out, T g) { return -g * out / y; });
}

template <std::floating_point T>
Var<T> scale(const Var<T>& x, T c) {
  return unary<T>("scale", x, [c](T v) { return v * c; }, [c](T, T, T g) { return g * c; });
}

template <std::floating_point T>
Var<T> add_scalar(const Var<T>& x, T c) {
  return unary<T>("add_scalar", x, [c](T v) { return v + c; }, [](T, T, T g) { return g; });
}

template <std::floating_point T>
Var<T> neg(const Var<T>& x) {
  return unary<T>("neg", x, [](T v) { return -v; }, [](T, T, T g) { return -g; });
}

template <std::floating_point T>
Var<T> exp(const Var<T>& x) {
  return unary<T>("exp", x, [](T v) { return std::exp(v); }, [](T, T y, T g) { return g * y; });
}

template <std::floating_point T>
Var<T> sqrt(const Var<T>& x) {
  return unary<T>("sqrt", x, [](T v) { return std::sqrt(v); },
                  [](T, T y, T g) { return g / (T(2) * y); });
}

template <std::floating_point T>
Var<T> square(const Var<T>& x) {
  return unary<T>("square", x, [](T v) { return v * v; }, [](T v, T, T g) { return T(2) * v * g; });
}

template <std::floating_point T>
Var<T> relu(const Var<T>& x) {
  return unary<T>("relu", x, [](T v) { return v > T(0) ? v : T(0); },
                  [](T v, T, T g) { return v > T(0) ? g : T(0); });
}

template <std::floating_point T>
Var<T> leaky_relu(const Var<T>& x, T slope) {
  return unary<T>("leaky_relu", x, [slope](T v) { return v > T(0) ? v : slope * v; },
                  [slope](T v, T, T g) { return v > T(0) ? g : slope * g; });
}

template <std::floating_point T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
  Tape<T>& tape = same_tape(a, b);
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa.size() < 2 || sb.size() < 2 || sa.back() != sb[sb.size() - 2]) {
    throw ShapeError(tape.path("matmul") + ": incompatible shapes " + shape_str(sa) + " x " +
                     shape_str(sb));
  }
  const std::size_t m = sa[sa.size() - 2], k = sa.back(), n = sb.back();
  const std::size_t ia = a.id(), ib = b.id();

  if (sb.size() == 2) {
    // Shared right operand: fold every leading axis of `a` into the row count.
    const std::size_t rows = numel(sa) / k;
    Shape out_shape(sa.begin(), sa.end() - 1);
    out_shape.push_back(n);
    Tensor<T> out = Tensor<T>::uninitialized(out_shape);
    MatMap<T>(out.data(), rows, n).noalias() =
        ConstMatMap<T>(a.value().data(), rows, k) * ConstMatMap<T>(b.value().data(), k, n);
    return tape.record("matmul", std::move(out), {a, b}, [=](Tape<T>& t, std::size_t self) {
      ConstMatMap<T> g(t.upstream(self).data(), rows, n);
      if (t.requires_grad(ia)) {
        MatMap<T>(t.grad_buffer(ia).data(), rows, k).noalias() +=
            g * ConstMatMap<T>(t.value(ib).data(), k, n).transpose();
      }
      if (t.requires_grad(ib)) {
        MatMap<T>(t.grad_buffer(ib).data(), k, n).noalias() +=
            ConstMatMap<T>(t.value(ia).data(), rows, k).transpose() * g;
      }
    });
  }

  const Shape batch_a(sa.begin(), sa.end() - 2);
  const Shape batch_b(sb.begin(), sb.end() - 2);
  Shape batch;
  try {
    batch = broadcast_shape(batch_a, batch_b);
  } catch (const ShapeError& e) {
    throw ShapeError(tape.path("matmul") + ": " + e.what());
  }
  const auto stra = broadcast_strides(batch_a, batch);
  const auto strb = broadcast_strides(batch_b, batch);
  Shape out_shape = batch;
  out_shape.push_back(m);
  out_shape.push_back(n);
  Tensor<T> out = Tensor<T>::uninitialized(out_shape);
  const std::size_t ma = m * k, mb = k * n, mc = m * n;
  const T* pa = a.value().data();
  const T* pb = b.value().data();
  T* pc = out.data();
  for_each_broadcast(batch, stra, strb, [&](std::size_t o, std::size_t i, std::size_t j) {
    MatMap<T>(pc + o * mc, m, n).noalias() =
        ConstMatMap<T>(pa + i * ma, m, k) * ConstMatMap<T>(pb + j * mb, k, n);
  });
  return tape.record("matmul", std::move(out), {a, b}, [=](Tape<T>& t, std::size_t self) {
    const T* g = t.upstream(self).data();
    const T* xa = t.value(ia).data();
    const T* xb = t.value(ib).data();
    T* ga = t.requires_grad(ia) ? t.grad_buffer(ia).data() : nullptr;
    T* gb = t.requires_grad(ib) ? t.grad_buffer(ib).data() : nullptr;
    for_each_broadcast(batch, stra, strb, [&](std::size_t o, std::size_t i, std::size_t j) {
      ConstMatMap<T> go(g + o * mc, m, n);
      if (ga) MatMap<T>(ga + i * ma, m, k).noalias() += go * ConstMatMap<T>(xb + j * mb, k, n).transpose();
      if (gb) MatMap<T>(gb + j * mb, k, n).noalias() += ConstMatMap<T>(xa + i * ma, m, k).transpose() * go;
    });
  });
}

namespace {

// out[perm-index] = in[index]; `axes[d]` names the input axis placed at output axis d.
template <std::floating_point T>
void permute_copy(const T* in, const Shape& in_shape, const std::vector<std::size_t>& axes, T* out,
                  bool accumulate_into_input, const T* upstream, T* in_grad) {
  const std::size_t r = in_shape.size();
  std::vector<std::size_t> in_strides(r, 1);
  for (std::size_t i = r; i-- > 1;) in_strides[i - 1] = in_strides[i] * in_shape[i];
  Shape out_shape(r);
  std::vector<std::size_t> src_strides(r);
  for (std::size_t d = 0; d < r; ++d) {
    out_shape[d] = in_shape[axes[d]];
    src_strides[d] = in_strides[axes[d]];
  }
  const std::vector<std::size_t> zero(r, 0);
  for_each_broadcast(out_shape, src_strides, zero, [&](std::size_t o, std::size_t i, std::size_t) {
    if (accumulate_into_input) {
      in_grad[i] += upstream[o];
    } else {
      out[o] = in[i];
    }
  });
}

}  // namespace

template <std::floating_point T>
Var<T> permute(const Var<T>& x, const std::vector<std::size_t>& axes) {
  Tape<T>& tape = x.tape();
  const Shape& s = x.shape();
  std::vector<std::size_t> sorted = axes;
  std::sort(sorted.begin(), sorted.end());
  bool valid = sorted.size() == s.size();
  for (std::size_t i = 0; valid && i < sorted.size(); ++i) valid = sorted[i] == i;
  if (!valid) throw ShapeError(tape.path("permute") + ": invalid axes for shape " + shape_str(s));
  Shape out_shape(s.size());
  for (std::size_t d = 0; d < s.size(); ++d) out_shape[d] = s[axes[d]];
  Tensor<T> out = Tensor<T>::uninitialized(out_shape);
  permute_copy<T>(x.value().data(), s, axes, out.data(), false, nullptr, nullptr);
  const std::size_t ix = x.id();
  return tape.record("permute", std::move(out), {x}, [=](Tape<T>& t, std::size_t self) {
    if (!t.requires_grad(ix)) return;
    permute_copy<T>(nullptr, s, axes, nullptr, true, t.upstream(self).data(), t.grad_buffer(ix).data());
  });
}

template <std::floating_point T>
Var<T> transpose(const Var<T>& x) {
  const std::size_t r = x.shape().size();
  if (r < 2) throw ShapeError(x.tape().path("transpose") + ": rank < 2");
  std::vector<std::size_t> axes(r);
  std::iota(axes.begin(), axes.end(), std::size_t{0});
  std::swap(axes[r - 1], axes[r - 2]);
  return permute(x, axes);
}

template <std::floating_point T>
Var<T> reshape(const Var<T>& x, Shape shape) {
  Tape<T>& tape = x.tape();
  if (numel(shape) != x.value().size()) {
    throw ShapeError(tape.path("reshape") + ": cannot reshape " + shape_str(x.shape()) + " to " +
                     shape_str(shape));
  }
  const std::size_t ix = x.id();
  return tape.record("reshape", x.value().reshaped(std::move(shape)), {x},
                     [=](Tape<T>& t, std::size_t self) {
                       if (!t.requires_grad(ix)) return;
                       const T* g = t.upstream(self).data();
                       T* gx = t.grad_buffer(ix).data();
                       const std::size_t n = t.value(self).size();
                       for (std::size_t i = 0; i < n; ++i) gx[i] += g[i];
                     });
}

template <std::floating_point T>
Var<T> softmax(const Var<T>& x, std::size_t axis) {
  Tape<T>& tape = x.tape();
  if (axis >= x.shape().size()) throw ShapeError(tape.path("softmax") + ": axis out of range");
  const AxisSplit sp = split_axis(x.shape(), axis);
  Tensor<T> out = Tensor<T>::uninitialized(x.shape());
  const T* px = x.value().data();
  T* po = out.data();
  for (std::size_t o = 0; o < sp.outer; ++o) {
    for (std::size_t in = 0; in < sp.inner; ++in) {
      const std::size_t base = o * sp.n * sp.inner + in;
      T mx = -std::numeric_limits<T>::infinity();
      for (std::size_t j = 0; j < sp.n; ++j) mx = std::max(mx, px[base + j * sp.inner]);
      T total = 0;
      for (std::size_t j = 0; j < sp.n; ++j) {
        const T e = std::exp(px[base + j * sp.inner] - mx);
        po[base + j * sp.inner] = e;
        total += e;
      }
      for (std::size_t j = 0; j < sp.n; ++j) po[base + j * sp.inner] /= total;
    }
  }
  const std::size_t ix = x.id();
  return tape.record("softmax", std::move(out), {x}, [=](Tape<T>& t, std::size_t self) {
    if (!t.requires_grad(ix)) return;
    const T* g = t.upstream(self).data();
    const T* y = t.value(self).data();
    T* gx = t.grad_buffer(ix).data();
    for (std::size_t o = 0; o < sp.outer; ++o) {
      for (std::size_t in = 0; in < sp.inner; ++in) {
        const std::size_t base = o * sp.n * sp.inner + in;
        T dot = 0;
        for (std::size_t j = 0; j < sp.n; ++j) dot += g[base + j * sp.inner] * y[base + j * sp.inner];
        for (std::size_t j = 0; j < sp.n; ++j) {
          const std::size_t p = base + j * sp.inner;
          gx[p] += y[p] * (g[p] - dot);
        }
      }
    }
  });
}

template <std::floating_point T>
Var<T> softmax_bias(const Var<T>& x, const Tensor<T>& bias) {
  Tape<T>& tape = x.tape();
  const Shape& s = x.shape();
  if (s.empty() || layout_of(bias.shape(), s) == Layout::General || bias.size() % s.back() != 0) {
    throw ShapeError(tape.path("softmax_bias") + ": bias " + shape_str(bias.shape()) + " does not tile " + shape_str(s));
  }
  const std::size_t n = s.back(), rows = x.value().size() / n, period = bias.size();
  Tensor<T> out = Tensor<T>::uninitialized(s);
  const T* px = x.value().data();
  const T* pb = bias.data();
  T* po = out.data();
  for (std::size_t r = 0, off = 0; r < rows; ++r) {
    const T* xr = px + r * n;
    const T* br = pb + off;
    T* yr = po + r * n;
    T mx = -std::numeric_limits<T>::infinity();
    for (std::size_t j = 0; j < n; ++j) mx = std::max(mx, xr[j] + br[j]);
    T total = 0;
    for (std::size_t j = 0; j < n; ++j) {
      yr[j] = std::exp(xr[j] + br[j] - mx);
      total += yr[j];
    }
    const T inv = T(1) / total;
    for (std::size_t j = 0; j < n; ++j) yr[j] *= inv;
    off += n;
    if (off == period) off = 0;
  }
  const std::size_t ix = x.id();
  return tape.record("softmax_bias", std::move(out), {x}, [=](Tape<T>& t, std::size_t self) {
    if (!t.requires_grad(ix)) return;
    const T* g = t.upstream(self).data();
    const T* y = t.value(self).data();
    T* gx = t.grad_buffer(ix).data();
    for (std::size_t r = 0; r < rows; ++r) {
      const std::size_t base = r * n;
      T dot = 0;
      for (std::size_t j = 0; j < n; ++j) dot += g[base + j] * y[base + j];
      for (std::size_t j = 0; j < n; ++j) gx[base + j] += y[base + j] * (g[base + j] - dot);
    }
  });
}

template <std::floating_point T>
Var<T> layer_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, T eps) {
  Tape<T>& tape = x.tape();
  const Shape& s = x.shape();
  if (s.empty() || gamma.shape() != Shape{s.back()} || beta.shape() != Shape{s.back()}) {
    throw ShapeError(tape.path("layer_norm") + ": input " + shape_str(s) + ", gamma " + shape_str(gamma.shape()) +
                     ", beta " + shape_str(beta.shape()));
  }
  const std::size_t d = s.back(), rows = x.value().size() / d;
  Tensor<T> out = Tensor<T>::uninitialized(s);
  Tensor<T> xhat = Tensor<T>::uninitialized(s);
  Tensor<T> rstd = Tensor<T>::uninitialized({rows});
  const T* px = x.value().data();
  const T* pg = gamma.value().data();
  const T* pb = beta.value().data();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xr = px + r * d;
    T mu = 0;
    for (std::size_t j = 0; j < d; ++j) mu += xr[j];
    mu /= static_cast<T>(d);
    T var = 0;
    for (std::size_t j = 0; j < d; ++j) var += (xr[j] - mu) * (xr[j] - mu);
    var /= static_cast<T>(d);
    const T rs = T(1) / std::sqrt(var + eps);
    rstd[r] = rs;
    for (std::size_t j = 0; j < d; ++j) {
      const T h = (xr[j] - mu) * rs;
      xhat[r * d + j] = h;
      out[r * d + j] = h * pg[j] + pb[j];
    }
  }
  const std::size_t ix = x.id(), ig = gamma.id(), ib = beta.id();
  return tape.record("layer_norm", std::move(out), {x, gamma, beta},
                     [=, xhat = std::move(xhat), rstd = std::move(rstd)](Tape<T>& t, std::size_t self) {
    const T* g = t.upstream(self).data();
    const T* gam = t.value(ig).data();
    const T* xh = xhat.data();
    if (t.requires_grad(ig) || t.requires_grad(ib)) {
      T* gg = t.requires_grad(ig) ? t.grad_buffer(ig).data() : nullptr;
      T* gb = t.requires_grad(ib) ? t.grad_buffer(ib).data() : nullptr;
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t j = 0; j < d; ++j) {
          if (gg) gg[j] += g[r * d + j] * xh[r * d + j];
          if (gb) gb[j] += g[r * d + j];
        }
      }
    }
    if (!t.requires_grad(ix)) return;
    T* gx = t.grad_buffer(ix).data();
    for (std::size_t r = 0; r < rows; ++r) {
      T m1 = 0, m2 = 0;
      for (std::size_t j = 0; j < d; ++j) {
        const T dh = g[r * d + j] * gam[j];
        m1 += dh;
        m2 += dh * xh[r * d + j];
      }
      m1 /= static_cast<T>(d);
      m2 /= static_cast<T>(d);
      for (std::size_t j = 0; j < d; ++j) {
        const T dh = g[r * d + j] * gam[j];
        gx[r * d + j] += rstd[r] * (dh - m1 - xh[r * d + j] * m2);
      }
    }
  });
}

template <std::floating_point T>
Var<T> sum(const Var<T>& x) {
  Tape<T>& tape = x.tape();
  T total = 0;
  for (T v : x.value().storage()) total += v;
  const std::size_t ix = x.id();
  return tape.record("sum", Tensor<T>::scalar(total), {x}, [=](Tape<T>& t, std::size_t self) {
    if (!t.requires_grad(ix)) return;
    const T g = t.upstream(self)[0];
    for (T& v : t.grad_buffer(ix).storage()) v += g;
  });
}

template <std::floating_point T>
Var<T> mean(const Var<T>& x) {
  return scale(sum(x), T(1) / static_cast<T>(x.value().size()));
}

template <std::floating_point T>
Var<T> sum(const Var<T>& x, std::size_t axis, bool keepdim) {
  Tape<T>& tape = x.tape();
  if (axis >= x.shape().size()) throw ShapeError(tape.path("sum") + ": axis out of range");
  const AxisSplit sp = split_axis(x.shape(), axis);
  Shape out_shape = x.shape();
  if (keepdim) {
    out_shape[axis] = 1;
  } else {
    out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(axis));
  }
  Tensor<T> out(out_shape);
  const T* px = x.value().data();
  T* po = out.data();
  for (std::size_t o = 0; o < sp.outer; ++o) {
    for (std::size_t j = 0; j < sp.n; ++j) {
      const T* row = px + (o * sp.n + j) * sp.inner;
      T* dst = po + o * sp.inner;
      for (std::size_t in = 0; in < sp.inner; ++in) dst[in] += row[in];
    }
  }
  const std::size_t ix = x.id();
  return tape.record("sum_axis", std::move(out), {x}, [=](Tape<T>& t, std::size_t self) {
    if (!t.requires_grad(ix)) return;
    const T* g = t.upstream(self).data();
    T* gx = t.grad_buffer(ix).data();
    for (std::size_t o = 0; o < sp.outer; ++o) {
      for (std::size_t j = 0; j < sp.n; ++j) {
        T* row = gx + (o * sp.n + j) * sp.inner;
        const T* src = g + o * sp.inner;
        for (std::size_t in = 0; in < sp.inner; ++in) row[in] += src[in];
      }
    }
  });
}

template <std::floating_point T>
Var<T> mean(const Var<T>& x, std::size_t axis, bool keepdim) {
  if (axis >= x.shape().size()) throw ShapeError(x.tape().path("mean") + ": axis out of range");
  return scale(sum(x, axis, keepdim), T(1) / static_cast<T>(x.shape()[axis]));
}

template <std::floating_point T>
Var<T> masked_fill(const Var<T>& x, const Tensor<T>& mask, T value) {
  Tape<T>& tape = x.tape();
  Shape out_shape;
  try {
    out_shape = broadcast_shape(x.shape(), mask.shape());
  } catch (const ShapeError& e) {
    throw ShapeError(tape.path("masked_fill") + ": " + e.what());
  }
  if (out_shape != x.shape()) {
    throw ShapeError(tape.path("masked_fill") + ": mask " + shape_str(mask.shape()) +
                     " does not broadcast into " + shape_str(x.shape()));
  }
  const auto sx = broadcast_strides(x.shape(), out_shape);
  const auto sm = broadcast_strides(mask.shape(), out_shape);
  Tensor<T> out = Tensor<T>::uninitialized(out_shape);
  const T* px = x.value().data();
  const T* pm = mask.data();
  T* po = out.data();
  for_each_broadcast(out_shape, sx, sm, [&](std::size_t o, std::size_t i, std::size_t j) {
    po[o] = pm[j] != T(0) ? value : px[i];
  });
  const std::size_t ix = x.id();
  Tensor<T> m = mask;
  return tape.record("masked_fill", std::move(out), {x}, [=](Tape<T>& t, std::size_t self) {
    if (!t.requires_grad(ix)) return;
    const T* g = t.upstream(self).data();
    T* gx = t.grad_buffer(ix).data();
    const T* pm2 = m.data();
    for_each_broadcast(out_shape, sx, sm, [&](std::size_t o, std::size_t i, std::size_t j) {
      if (pm2[j] == T(0)) gx[i] += g[o];
    });
  });
}

template <std::floating_point T>
Var<T> concat(const std::vector<Var<T>>& xs, std::size_t axis) {
  if (xs.empty()) throw std::invalid_argument("concat of zero tensors");
  Tape<T>& tape = xs.front().tape();
  const Shape& first = xs.front().shape();
  if (axis >= first.size()) throw ShapeError(tape.path("concat") + ": axis out of range");
  Shape out_shape = first;
  out_shape[axis] = 0;
  for (const auto& v : xs) {
    const Shape& s = v.shape();
    bool ok = s.size() == first.size();
    for (std::size_t d = 0; ok && d < s.size(); ++d) ok = d == axis || s[d] == first[d];
    if (!ok) {
      throw ShapeError(tape.path("concat") + ": shape " + shape_str(s) + " incompatible with " +
                       shape_str(first));
    }
    out_shape[axis] += s[axis];
  }
  const AxisSplit osp = split_axis(out_shape, axis);
  Tensor<T> out = Tensor<T>::uninitialized(out_shape);
  std::vector<std::size_t> ids, widths;
  std::size_t offset = 0;
  for (const auto& v : xs) {
    const AxisSplit sp = split_axis(v.shape(), axis);
    const std::size_t w = sp.n * sp.inner;
    for (std::size_t o = 0; o < sp.outer; ++o) {
      std::copy_n(v.value().data() + o * w, w, out.data() + o * osp.n * osp.inner + offset);
    }
    ids.push_back(v.id());
    widths.push_back(w);
    offset += w;
  }
  return tape.record("concat", std::move(out), xs, [=](Tape<T>& t, std::size_t self) {
    const T* g = t.upstream(self).data();
    std::size_t off = 0;
    for (std::size_t k = 0; k < ids.size(); ++k) {
      const std::size_t w = widths[k];
      if (t.requires_grad(ids[k])) {
        T* gx = t.grad_buffer(ids[k]).data();
        for (std::size_t o = 0; o < osp.outer; ++o) {
          const T* src = g + o * osp.n * osp.inner + off;
          for (std::size_t i = 0; i < w; ++i) gx[o * w + i] += src[i];
        }
      }
      off += w;
    }
  });
}

#define TCGPN_INSTANTIATE_OPS(T)                                                      \
  template Var<T> add(const Var<T>&, const Var<T>&);                                  \
  template Var<T> sub(const Var<T>&, const Var<T>&);                                  \
  template Var<T> mul(const Var<T>&, const Var<T>&);                                  \
  template Var<T> div(const Var<T>&, const Var<T>&);                                  \
  template Var<T> scale(const Var<T>&, T);                                            \
  template Var<T> add_scalar(const Var<T>&, T);                                       \
  template Var<T> neg(const Var<T>&);                                                 \
  template Var<T> exp(const Var<T>&);                                                 \
  template Var<T> sqrt(const Var<T>&);                                                \
  template Var<T> square(const Var<T>&);                                              \
  template Var<T> relu(const Var<T>&);                                                \
  template Var<T> leaky_relu(const Var<T>&, T);                                       \
  template Var<T> matmul(const Var<T>&, const Var<T>&);                               \
  template Var<T> permute(const Var<T>&, const std::vector<std::size_t>&);            \
  template Var<T> transpose(const Var<T>&);                                           \
  template Var<T> reshape(const Var<T>&, Shape);                                      \
  template Var<T> softmax(const Var<T>&, std::size_t);                                \
  template Var<T> softmax_bias(const Var<T>&, const Tensor<T>&);                      \
  template Var<T> layer_norm(const Var<T>&, const Var<T>&, const Var<T>&, T);         \
  template Var<T> sum(const Var<T>&);                                                 \
  template Var<T> mean(const Var<T>&);                                                \
  template Var<T> sum(const Var<T>&, std::size_t, bool);                              \
  template Var<T> mean(const Var<T>&, std::size_t, bool);                             \
  template Var<T> masked_fill(const Var<T>&, const Tensor<T>&, T);                    \
  template Var<T> concat(const std::vector<Var<T>>&, std::size_t);

TCGPN_INSTANTIATE_OPS(float)
TCGPN_INSTANTIATE_OPS(double)

#undef TCGPN_INSTANTIATE_OPS

}  // namespace ops
}  // namespace tcgpn
