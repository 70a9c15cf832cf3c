#include "tcgpn/losses.hpp"

#include <cmath>

namespace tcgpn {

template <std::floating_point T>
Var<T> loss_temporal(const Tensor<T>& x, const Var<T>& x_r, const BoolMatrix& mask) {
  if (x.shape() != x_r.shape()) {
    throw ShapeError("loss_temporal: target " + shape_str(x.shape()) + " vs reconstruction " + shape_str(x_r.shape()));
  }
  const std::size_t n = x.dim(0), t = x.dim(1), f = x.dim(2);
  if (static_cast<std::size_t>(mask.rows()) != n || static_cast<std::size_t>(mask.cols()) != t) {
    throw ShapeError("loss_temporal: mask is " + std::to_string(mask.rows()) + "x" + std::to_string(mask.cols()) +
                     ", expected " + std::to_string(n) + "x" + std::to_string(t));
  }
  Tensor<T> weight({n, t, 1}, T(0));
  std::size_t count = 0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < t; ++k) {
      if (mask(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k))) {
        weight[i * t + k] = T(1);
        ++count;
      }
    }
  }
  if (count == 0) throw std::invalid_argument("loss_temporal: mask selects no positions");
  Tape<T>& tape = x_r.tape();
  Var<T> err = ops::square(x_r - tape.constant(x)) * tape.constant(std::move(weight));
  return ops::scale(ops::sum(err), static_cast<T>(1.0 / static_cast<double>(count * f)));
}

template <std::floating_point T>
Var<T> loss_graph(const Matrix& a, const Var<T>& a_hat, const BoolMatrix& kept) {
  const std::size_t n = static_cast<std::size_t>(a.rows());
  if (a_hat.shape() != Shape{n, n} || kept.rows() != a.rows() || kept.cols() != a.cols()) {
    throw ShapeError("loss_graph: adjacency " + std::to_string(n) + "x" + std::to_string(a.cols()) +
                     ", reconstruction " + shape_str(a_hat.shape()));
  }
  Tensor<T> target({n, n}), weight({n, n}, T(0));
  std::size_t count = 0, edges = 0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      const auto ii = static_cast<Eigen::Index>(i), jj = static_cast<Eigen::Index>(j);
      target[i * n + j] = static_cast<T>(a(ii, jj));
      if (kept(ii, jj)) {
        weight[i * n + j] = T(1);
        ++count;
        if (a(ii, jj) != 0.0) ++edges;
      }
    }
  }
  if (edges == 0) throw std::invalid_argument("loss_graph: no unmasked edges to supervise");
  Tape<T>& tape = a_hat.tape();
  Var<T> err = ops::square(a_hat - tape.constant(std::move(target))) * tape.constant(std::move(weight));
  return ops::scale(ops::sum(err), static_cast<T>(1.0 / static_cast<double>(count)));
}

template <std::floating_point T>
Var<T> loss_pearson(const Var<T>& y_hat, const Tensor<T>& y) {
  if (y_hat.shape() != y.shape() || y.rank() != 1) {
    throw ShapeError("loss_pearson: prediction " + shape_str(y_hat.shape()) + " vs target " + shape_str(y.shape()));
  }
  const std::size_t n = y.size();
  double my = 0, mp = 0;
  for (std::size_t i = 0; i < n; ++i) {
    my += static_cast<double>(y[i]);
    mp += static_cast<double>(y_hat.value()[i]);
  }
  my /= static_cast<double>(n);
  mp /= static_cast<double>(n);
  Tensor<T> yc({n});
  double ss_y = 0, ss_p = 0;
  for (std::size_t i = 0; i < n; ++i) {
    yc[i] = static_cast<T>(static_cast<double>(y[i]) - my);
    ss_y += static_cast<double>(yc[i]) * static_cast<double>(yc[i]);
    const double dp = static_cast<double>(y_hat.value()[i]) - mp;
    ss_p += dp * dp;
  }
  if (ss_y <= 0) throw ZeroVarianceError("loss_pearson: target has zero variance");
  if (ss_p <= 0) throw ZeroVarianceError("loss_pearson: prediction has zero variance");
  Tape<T>& tape = y_hat.tape();
  Var<T> pc = y_hat - ops::mean(y_hat);
  Var<T> num = ops::sum(pc * tape.constant(std::move(yc)));
  Var<T> den = ops::scale(ops::sqrt(ops::sum(ops::square(pc))), static_cast<T>(std::sqrt(ss_y)));
  return ops::neg(num / den);
}

template <std::floating_point T>
Var<T> loss_mse(const Var<T>& y_hat, const Tensor<T>& y) {
  if (y_hat.shape() != y.shape()) {
    throw ShapeError("loss_mse: prediction " + shape_str(y_hat.shape()) + " vs target " + shape_str(y.shape()));
  }
  return ops::mean(ops::square(y_hat - y_hat.tape().constant(y)));
}

template <std::floating_point T>
FinetuneLoss<T> loss_finetune(const Var<T>& y_hat, const Tensor<T>& y, double lambda_m) {
  if (lambda_m < 0) throw std::invalid_argument("loss_finetune: lambda_m must be non-negative");
  FinetuneLoss<T> out;
  out.mse = loss_mse(y_hat, y);
  out.total = ops::scale(out.mse, static_cast<T>(lambda_m));
  try {
    out.pearson = loss_pearson(y_hat, y);
    out.total = out.total + *out.pearson;
  } catch (const ZeroVarianceError&) {
  }
  return out;
}

template <std::floating_point T>
Var<T> loss_pretrain(const Var<T>& l_t, const Var<T>& l_g, double beta, bool use_temporal) {
  if (beta < 0) throw std::invalid_argument("loss_pretrain: beta must be non-negative");
  Var<T> g = ops::scale(l_g, static_cast<T>(beta));
  return use_temporal ? l_t + g : g;
}

#define TCGPN_INSTANTIATE_LOSSES(T)                                                    \
  template Var<T> loss_temporal(const Tensor<T>&, const Var<T>&, const BoolMatrix&);   \
  template Var<T> loss_graph(const Matrix&, const Var<T>&, const BoolMatrix&);         \
  template Var<T> loss_pearson(const Var<T>&, const Tensor<T>&);                       \
  template Var<T> loss_mse(const Var<T>&, const Tensor<T>&);                           \
  template FinetuneLoss<T> loss_finetune(const Var<T>&, const Tensor<T>&, double);     \
  template Var<T> loss_pretrain(const Var<T>&, const Var<T>&, double, bool);

TCGPN_INSTANTIATE_LOSSES(float)
TCGPN_INSTANTIATE_LOSSES(double)

}  // namespace tcgpn
