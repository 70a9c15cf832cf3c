#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "tcgpn/losses.hpp"

using namespace tcgpn;

namespace {

Tensor<double> vec(std::vector<double> v) {
  const std::size_t n = v.size();
  return Tensor<double>::from_vector({n}, std::move(v));
}

double pearson_oracle(const std::vector<double>& a, const std::vector<double>& b) {
  const double n = static_cast<double>(a.size());
  double ma = 0, mb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a[i] / n;
    mb += b[i] / n;
  }
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  return sab / std::sqrt(saa * sbb);
}

double pearson_loss(const std::vector<double>& p, const std::vector<double>& y) {
  Tape<double> tape;
  return loss_pearson(tape.constant(vec(p)), vec(y)).value()[0];
}

}  // namespace

TEST(TemporalLoss, MeanSquareOverMaskedEntries) {
  Tape<double> tape;
  const Tensor<double> x = Tensor<double>::from_vector({1, 3, 1}, {0, 0, 0});
  BoolMatrix mask(1, 3);
  mask << true, false, true;
  const auto l = loss_temporal(x, tape.constant(Tensor<double>::from_vector({1, 3, 1}, {1, 100, 3})), mask);
  EXPECT_DOUBLE_EQ(l.value()[0], 5.0);
  EXPECT_DOUBLE_EQ(loss_temporal(x, tape.constant(x), mask).value()[0], 0.0);
}

TEST(TemporalLoss, LocalToMaskedPositions) {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> n;
  Tensor<double> x({4, 6, 2}), xr({4, 6, 2});
  for (std::size_t i = 0; i < x.size(); ++i) {
    x[i] = n(rng);
    xr[i] = n(rng);
  }
  BoolMatrix mask = BoolMatrix::Constant(4, 6, false);
  mask.block(0, 2, 4, 3).setConstant(true);
  Tape<double> tape;
  const auto xr_var = tape.variable(xr);
  const auto l = loss_temporal(x, xr_var, mask);
  tape.backward(l);
  const Tensor<double>& g = *tape.grad(xr_var);
  Tensor<double> x2 = x;
  for (std::size_t i = 0; i < 4; ++i) {
    for (std::size_t k = 0; k < 6; ++k) {
      for (std::size_t f = 0; f < 2; ++f) {
        const std::size_t idx = (i * 6 + k) * 2 + f;
        if (!mask(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k))) {
          EXPECT_EQ(g[idx], 0.0);
          x2[idx] += 10;
        }
      }
    }
  }
  Tape<double> t2;
  EXPECT_EQ(loss_temporal(x2, t2.constant(xr), mask).value()[0], l.value()[0]);
}

TEST(TemporalLoss, EmptyMaskRejected) {
  Tape<double> tape;
  const Tensor<double> x({2, 3, 1});
  EXPECT_THROW(loss_temporal(x, tape.constant(x), BoolMatrix::Constant(2, 3, false)), std::invalid_argument);
}

TEST(GraphLoss, MeanSquareOverKeptEntries) {
  Matrix a(2, 2);
  a << 0, 1, 5, 0;
  BoolMatrix kept(2, 2);
  kept << false, true, true, false;
  Tape<double> tape;
  const auto l = loss_graph(a, tape.constant(Tensor<double>::from_vector({2, 2}, {9, 3, 5, -7})), kept);
  EXPECT_DOUBLE_EQ(l.value()[0], 2.0);
}

TEST(GraphLoss, IgnoresMaskedEntriesInValueAndGradient) {
  Matrix a = Matrix::Random(5, 5).cwiseAbs();
  a.diagonal().setZero();
  BoolMatrix kept = (Matrix::Random(5, 5).array() > 0).matrix();
  kept(0, 1) = true;
  Tensor<double> ah({5, 5});
  for (Eigen::Index i = 0; i < 5; ++i) {
    for (Eigen::Index j = 0; j < 5; ++j) ah[static_cast<std::size_t>(i * 5 + j)] = kept(i, j) ? a(i, j) : 42.0;
  }
  Tape<double> tape;
  const auto v = tape.variable(ah);
  const auto l = loss_graph(a, v, kept);
  EXPECT_EQ(l.value()[0], 0.0);
  Tensor<double> ah2 = ah;
  for (std::size_t i = 0; i < 25; ++i) ah2[i] += 1.0;
  Tape<double> t2;
  const auto v2 = t2.variable(ah2);
  const auto l2 = loss_graph(a, v2, kept);
  t2.backward(l2);
  for (Eigen::Index i = 0; i < 5; ++i) {
    for (Eigen::Index j = 0; j < 5; ++j) {
      if (!kept(i, j)) EXPECT_EQ((*t2.grad(v2))[static_cast<std::size_t>(i * 5 + j)], 0.0);
    }
  }
}

TEST(GraphLoss, NoSupervisedEdgeRejected) {
  Matrix a = Matrix::Zero(3, 3);
  a(0, 1) = 1;
  BoolMatrix kept = BoolMatrix::Constant(3, 3, true);
  kept(0, 1) = false;
  Tape<double> tape;
  EXPECT_THROW(loss_graph(a, tape.constant(Tensor<double>({3, 3})), kept), std::invalid_argument);
}

TEST(PearsonLoss, Examples) {
  EXPECT_NEAR(pearson_loss({1, 2, 3, 4}, {1, 2, 3, 4}), -1.0, 1e-12);
  EXPECT_NEAR(pearson_loss({-1, -2, -3, -4}, {1, 2, 3, 4}), 1.0, 1e-12);
  EXPECT_NEAR(pearson_loss({1, 2, 3, 4}, {1, 3, 2, 4}), -pearson_oracle({1, 2, 3, 4}, {1, 3, 2, 4}), 1e-12);
  EXPECT_NEAR(pearson_loss({1, 2, 3, 4}, {1, 3, 2, 4}), -0.8, 1e-12);
}

TEST(PearsonLoss, ZeroVarianceSignalled) {
  EXPECT_THROW(pearson_loss({1, 1, 1}, {1, 2, 3}), ZeroVarianceError);
  EXPECT_THROW(pearson_loss({1, 2, 3}, {2, 2, 2}), ZeroVarianceError);
}

TEST(PearsonLoss, BoundedAndAffineInvariant) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n;
  std::uniform_real_distribution<double> pos(0.1, 10.0);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> p(12), y(12), q(12);
    for (auto& v : p) v = n(rng);
    for (auto& v : y) v = n(rng);
    const double a = pos(rng), b = n(rng) * 5;
    for (std::size_t i = 0; i < 12; ++i) q[i] = a * p[i] + b;
    const double l = pearson_loss(p, y);
    EXPECT_GE(l, -1.0 - 1e-12);
    EXPECT_LE(l, 1.0 + 1e-12);
    EXPECT_NEAR(pearson_loss(q, y), l, 1e-6);
    EXPECT_NEAR(l, -pearson_oracle(p, y), 1e-12);
  }
}

TEST(MseLoss, Examples) {
  Tape<double> tape;
  EXPECT_DOUBLE_EQ(loss_mse(tape.constant(vec({1, 2})), vec({1, 2})).value()[0], 0.0);
  EXPECT_DOUBLE_EQ(loss_mse(tape.constant(vec({2, 1})), vec({1, 2})).value()[0], 1.0);
  const double base = loss_mse(tape.constant(vec({0.3, -1.2, 4})), vec({1, 0, 2})).value()[0];
  EXPECT_NEAR(loss_mse(tape.constant(vec({0.9, -3.6, 12})), vec({3, 0, 6})).value()[0], 9 * base, 1e-12);
}

TEST(FinetuneLoss, Combination) {
  Tape<double> tape;
  const auto y = vec({0.5, -1, 2, 0});
  EXPECT_NEAR(loss_finetune(tape.constant(y), y, 0.3).total.value()[0], -1.0, 1e-12);
  const auto p = vec({1, 2, 3, 4}), t = vec({1, 3, 2, 4});
  EXPECT_NEAR(loss_finetune(tape.constant(p), t, 0.0).total.value()[0], -0.8, 1e-12);
  const auto f = loss_finetune(tape.constant(p), t, 0.3);
  EXPECT_NEAR(f.total.value()[0], 0.3 * 0.5 - 0.8, 1e-12);
  const auto flat = loss_finetune(tape.constant(p), vec({1, 1, 1, 1}), 0.3);
  EXPECT_FALSE(flat.pearson.has_value());
  EXPECT_NEAR(flat.total.value()[0], 0.3 * (0 + 1 + 4 + 9) / 4.0, 1e-12);
  EXPECT_THROW(loss_finetune(tape.constant(p), t, -1.0), std::invalid_argument);
}

TEST(PretrainLoss, Combination) {
  EXPECT_DOUBLE_EQ(loss_pretrain(0.2, 0.3, 1.0), 0.5);
  EXPECT_DOUBLE_EQ(loss_pretrain(0.2, 0.3, 0.0), 0.2);
  EXPECT_DOUBLE_EQ(loss_pretrain(0.2, 0.3, 1.0, false), 0.3);
  EXPECT_THROW(loss_pretrain(0.2, 0.3, -1.0), std::invalid_argument);
  Tape<double> tape;
  const auto v = loss_pretrain(tape.constant(Tensor<double>::scalar(0.2)), tape.constant(Tensor<double>::scalar(0.3)), 2.0);
  EXPECT_NEAR(v.value()[0], 0.8, 1e-15);
}
