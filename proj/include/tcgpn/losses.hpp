#pragma once

#include <optional>
#include <stdexcept>

#include "tcgpn/autograd.hpp"
#include "tcgpn/graphs.hpp"

namespace tcgpn {

/// Raised when a Pearson term is undefined because one side has no variance.
class ZeroVarianceError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

struct LossReport {
  double l_t = 0, l_g = 0, l_pre = 0;
  double l_mse = 0, l_pearson = 0, l_fine = 0;
  std::size_t masked_count = 0;
  std::size_t supervised_edge_count = 0;
  std::size_t skipped_pearson = 0;
};

/// Mean squared error over every feature at masked (node, step) positions.
template <std::floating_point T>
Var<T> loss_temporal(const Tensor<T>& x, const Var<T>& x_r, const BoolMatrix& mask);

/// Mean squared error over entries where `kept` is true.
template <std::floating_point T>
Var<T> loss_graph(const Matrix& a, const Var<T>& a_hat, const BoolMatrix& kept);

/// Negative Pearson correlation. Throws ZeroVarianceError on a constant argument.
template <std::floating_point T>
Var<T> loss_pearson(const Var<T>& y_hat, const Tensor<T>& y);

template <std::floating_point T>
Var<T> loss_mse(const Var<T>& y_hat, const Tensor<T>& y);

template <std::floating_point T>
struct FinetuneLoss {
  Var<T> total;
  Var<T> mse;
  std::optional<Var<T>> pearson;  // empty when the cross-section had no variance
};

/// lambda_m * MSE + Pearson loss; a zero-variance cross-section drops the Pearson term.
template <std::floating_point T>
FinetuneLoss<T> loss_finetune(const Var<T>& y_hat, const Tensor<T>& y, double lambda_m);

inline double loss_pretrain(double l_t, double l_g, double beta, bool use_temporal = true) {
  if (beta < 0) throw std::invalid_argument("loss_pretrain: beta must be non-negative");
  return (use_temporal ? l_t : 0.0) + beta * l_g;
}

template <std::floating_point T>
Var<T> loss_pretrain(const Var<T>& l_t, const Var<T>& l_g, double beta, bool use_temporal = true);

}  // namespace tcgpn
