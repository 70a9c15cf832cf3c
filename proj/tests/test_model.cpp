#include <gtest/gtest.h>

#include <Eigen/Dense>

#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include "tcgpn/checks.hpp"
#include "tcgpn/model.hpp"
#include "tcgpn/train.hpp"

using namespace tcgpn;

namespace {

using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

ModelConfig small_config() {
  ModelConfig c = gradcheck_model_config("small");
  c.sigma_h = 2.0;
  return c;
}

template <typename T>
void randomize_all(ParamStore<T>& store, std::uint64_t seed, double scale = 0.5) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, scale);
  for (const auto& path : store.paths()) {
    Tensor<T>& t = store.get_mut(path);
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<T>(t[i] + n(rng));
  }
}

Mat param_matrix(const ParamStore<double>& s, const std::string& path) {
  const Tensor<double>& t = s.get(path);
  const std::size_t cols = t.rank() == 1 ? t.dim(0) : t.dim(1);
  const std::size_t rows = t.rank() == 1 ? 1 : t.dim(0);
  return Eigen::Map<const Mat>(t.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

Mat layer_norm_rows(const Mat& x, const Mat& g, const Mat& b) {
  Mat out(x.rows(), x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const double mu = x.row(r).mean();
    const double var = (x.row(r).array() - mu).square().mean();
    out.row(r) = ((x.row(r).array() - mu) / std::sqrt(var + 1e-5)).matrix().cwiseProduct(g) + b;
  }
  return out;
}

// Reference transformer block for one node: weights exp(s_ij) * m_ij renormalized per row.
Mat reference_block(const ParamStore<double>& s, const std::string& pre, const Mat& z, const Mat& m, std::size_t heads) {
  const Eigen::Index steps = z.rows(), d = z.cols(), dk = d / static_cast<Eigen::Index>(heads);
  const Mat q = z * param_matrix(s, pre + "wq"), k = z * param_matrix(s, pre + "wk"), v = z * param_matrix(s, pre + "wv");
  Mat cat(steps, d);
  for (Eigen::Index h = 0; h < static_cast<Eigen::Index>(heads); ++h) {
    const Mat sc = q.middleCols(h * dk, dk) * k.middleCols(h * dk, dk).transpose() / std::sqrt(static_cast<double>(dk));
    Mat w(steps, steps);
    for (Eigen::Index i = 0; i < steps; ++i) {
      double total = 0;
      for (Eigen::Index j = 0; j < steps; ++j) total += (w(i, j) = std::exp(sc(i, j)) * m(i, j));
      w.row(i) /= total;
    }
    cat.middleCols(h * dk, dk) = w * v.middleCols(h * dk, dk);
  }
  const Mat ones = Mat::Ones(steps, 1);
  const Mat y = layer_norm_rows(z + cat * param_matrix(s, pre + "wo") + ones * param_matrix(s, pre + "bo"),
                                param_matrix(s, pre + "ln1_g"), param_matrix(s, pre + "ln1_b"));
  const Mat hidden = (y * param_matrix(s, pre + "ff1_w") + ones * param_matrix(s, pre + "ff1_b")).cwiseMax(0.0);
  const Mat ff = hidden * param_matrix(s, pre + "ff2_w") + ones * param_matrix(s, pre + "ff2_b");
  return layer_norm_rows(y + ff, param_matrix(s, pre + "ln2_g"), param_matrix(s, pre + "ln2_b"));
}

Tensor<double> random_tensor(Shape shape, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n;
  Tensor<double> t(shape);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = n(rng);
  return t;
}

struct Outputs {
  Tensor<double> o_l, x_r, a_hat, y_hat;
};

template <typename T>
Outputs run_model(const ParamStore<T>& params, const ModelConfig& cfg, const MaskedSample& sample) {
  Tape<T> tape;
  ParamBinding<T> p(tape, params);
  const ModelInput<T> in = make_model_input<T>(sample);
  const EncoderOutput<T> enc = encoder_forward(p, in, cfg);
  Outputs o;
  o.o_l = enc.o_l.value().template cast<double>();
  o.x_r = temporal_decoder(p, enc.o_l, cfg).value().template cast<double>();
  o.a_hat = adjacency_decoder(p, enc.o_l).value().template cast<double>();
  o.y_hat = finetune_head(p, enc.o_l).value().template cast<double>();
  return o;
}

RandomProblem permuted(const RandomProblem& pr, const std::vector<std::size_t>& perm) {
  RandomProblem out;
  out.graph = pr.graph.subgraph(perm);
  const std::size_t row = pr.window.x.dim(1) * pr.window.x.dim(2);
  out.window.x = Tensor<double>(pr.window.x.shape());
  for (std::size_t r = 0; r < perm.size(); ++r) {
    std::copy_n(pr.window.x.data() + perm[r] * row, row, out.window.x.data() + r * row);
    out.window.target.push_back(pr.window.target[perm[r]]);
  }
  return out;
}

}  // namespace

TEST(PositionalEncoding, SinCosAtOrigin) {
  const auto pe = positional_encoding<double>(5, 8);
  EXPECT_EQ(pe.at({0, 0}), 0.0);
  EXPECT_EQ(pe.at({0, 1}), 1.0);
  EXPECT_DOUBLE_EQ(pe.at({3, 0}), std::sin(3.0));
  EXPECT_DOUBLE_EQ(pe.at({3, 1}), std::cos(3.0));
  EXPECT_DOUBLE_EQ(pe.at({2, 2}), std::sin(2.0 / std::pow(10000.0, 2.0 / 8)));
}

TEST(GaussianMask, ValuesAndShape) {
  const auto m = gaussian_mask(6, 1.0);
  for (std::size_t i = 0; i < 6; ++i) {
    EXPECT_EQ(m.at({i, i}), 1.0);
    for (std::size_t j = i + 1; j < 6; ++j) EXPECT_EQ(m.at({i, j}), 0.0);
  }
  EXPECT_NEAR(m.at({2, 1}), 0.60653, 1e-5);
  EXPECT_THROW(gaussian_mask(3, 0.0), std::invalid_argument);
}

TEST(GaussianMask, NonIncreasingWithDistance) {
  for (double sigma : {0.3, 1.0, 7.5, 100.0}) {
    const auto m = gaussian_mask(30, sigma);
    for (std::size_t i = 0; i < 30; ++i) {
      for (std::size_t j = 1; j <= i; ++j) EXPECT_LE(m.at({i, j - 1}), m.at({i, j}));
    }
  }
}

TEST(GaussianMask, LogBiasMatchesMask) {
  const auto m = gaussian_mask(7, 1.5);
  const auto b = gaussian_log_bias<double>(7, 1.5);
  for (std::size_t i = 0; i < m.size(); ++i) EXPECT_NEAR(std::exp(b[i]), m[i], 1e-15);
  const auto inf = gaussian_log_bias<double>(4, std::numeric_limits<double>::infinity());
  EXPECT_EQ(inf.at({3, 0}), 0.0);
  EXPECT_TRUE(std::isinf(inf.at({0, 3})));
}

TEST(FuseAndPosition, ZeroInputGivesPositionalTable) {
  const ModelConfig cfg = small_config();
  ParamStore<double> params = init_params<double>(cfg, 1);
  params.get_mut("fuse/w") = Tensor<double>(params.get("fuse/w").shape(), 0.0);
  Tape<double> tape;
  ParamBinding<double> p(tape, params);
  const auto out = fuse_and_position(p, tape.constant(Tensor<double>({3, cfg.window, cfg.n_features}, 0.0)), cfg).value();
  const auto pe = positional_encoding<double>(cfg.window, cfg.d_model);
  for (std::size_t n = 0; n < 3; ++n) {
    for (std::size_t i = 0; i < pe.size(); ++i) ASSERT_EQ(out[n * pe.size() + i], pe[i]);
  }
}

TEST(FuseAndPosition, TwinsAndFeatureMismatch) {
  const ModelConfig cfg = small_config();
  ParamStore<double> params = init_params<double>(cfg, 2);
  Tensor<double> x = random_tensor({2, cfg.window, cfg.n_features}, 3);
  std::copy_n(x.data(), cfg.window * cfg.n_features, x.data() + cfg.window * cfg.n_features);
  Tape<double> tape;
  ParamBinding<double> p(tape, params);
  const auto out = fuse_and_position(p, tape.constant(x), cfg).value();
  const std::size_t row = cfg.window * cfg.d_model;
  EXPECT_TRUE(std::equal(out.data(), out.data() + row, out.data() + row));
  EXPECT_THROW(fuse_and_position(p, tape.constant(Tensor<double>({2, cfg.window, cfg.n_features + 1})), cfg),
               ShapeError);
}

TEST(Gat, SingleNodeIsSelfAttention) {
  const ModelConfig cfg = small_config();
  ParamStore<double> params = init_params<double>(cfg, 4);
  const Tensor<double> x = random_tensor({1, cfg.window, cfg.d_model}, 5);
  Tape<double> tape;
  ParamBinding<double> p(tape, params);
  Tensor<double> att;
  const auto z = gat_forward(p, tape.constant(x), Tensor<double>({1, 1}, 0.0), cfg, &att).value();
  for (std::size_t i = 0; i < att.size(); ++i) EXPECT_EQ(att[i], 1.0);

  // Oracle: LeakyReLU(mean over heads of W_k x).
  const Mat w = param_matrix(params, "gat/w");
  const Mat xm = Eigen::Map<const Mat>(x.data(), static_cast<Eigen::Index>(cfg.window), static_cast<Eigen::Index>(cfg.d_model));
  const Mat h = xm * w;
  const auto g = static_cast<Eigen::Index>(cfg.gat_dim);
  for (Eigen::Index t = 0; t < h.rows(); ++t) {
    for (Eigen::Index c = 0; c < g; ++c) {
      double acc = 0;
      for (Eigen::Index k = 0; k < static_cast<Eigen::Index>(cfg.gat_heads); ++k) acc += h(t, k * g + c);
      acc /= static_cast<double>(cfg.gat_heads);
      const double expected = acc > 0 ? acc : cfg.leaky_slope * acc;
      EXPECT_NEAR(z[static_cast<std::size_t>(t * g + c)], expected, 1e-12);
    }
  }
}

TEST(Gat, AttentionRowsSumToOneAndSkipNonNeighbors) {
  const ModelConfig cfg = small_config();
  const RandomProblem pr = random_problem(7, cfg.window, cfg.n_features, 6);
  const MaskedSample sample = make_full_sample(pr.window, pr.graph);
  const ModelInput<float> in = make_model_input<float>(sample);
  ParamStore<float> params = init_params<float>(cfg, 7);
  Tape<float> tape;
  ParamBinding<float> p(tape, params);
  Tensor<float> att;
  const auto xhat = fuse_and_position(p, tape.constant(in.x), cfg);
  gat_forward(p, xhat, in.non_neighbor, cfg, &att);
  ASSERT_EQ(att.shape(), (Shape{cfg.window, cfg.gat_heads, 7, 7}));
  for (std::size_t blk = 0; blk < cfg.window * cfg.gat_heads; ++blk) {
    for (std::size_t i = 0; i < 7; ++i) {
      double s = 0;
      for (std::size_t j = 0; j < 7; ++j) {
        const float a = att[(blk * 7 + i) * 7 + j];
        s += a;
        if (in.non_neighbor[i * 7 + j] != 0) EXPECT_EQ(a, 0.0f);
      }
      EXPECT_NEAR(s, 1.0, 1e-6);
    }
  }
}

TEST(TgmBlock, MatchesReferenceWithGaussianWeights) {
  const ModelConfig cfg = small_config();
  ParamStore<double> params = init_params<double>(cfg, 8);
  randomize_all(params, 9, 0.2);
  const std::size_t n = 3;
  const Tensor<double> z = random_tensor({n, cfg.window, cfg.d_model}, 10);
  for (double sigma : {1.0, 2.5, std::numeric_limits<double>::infinity()}) {
    Tape<double> tape;
    ParamBinding<double> p(tape, params);
    const auto out = tgm_block(p, "enc/block0/", tape.constant(z), gaussian_log_bias<double>(cfg.window, sigma),
                               cfg.tgm_heads)
                         .value();
    Mat m(cfg.window, cfg.window);
    if (std::isinf(sigma)) {
      m = Mat::Ones(cfg.window, cfg.window).triangularView<Eigen::Lower>();
    } else {
      const auto gm = gaussian_mask(cfg.window, sigma);
      m = Eigen::Map<const Mat>(gm.data(), static_cast<Eigen::Index>(cfg.window), static_cast<Eigen::Index>(cfg.window));
    }
    const std::size_t row = cfg.window * cfg.d_model;
    for (std::size_t node = 0; node < n; ++node) {
      const Mat zn = Eigen::Map<const Mat>(z.data() + node * row, static_cast<Eigen::Index>(cfg.window),
                                           static_cast<Eigen::Index>(cfg.d_model));
      const Mat ref = reference_block(params, "enc/block0/", zn, m, cfg.tgm_heads);
      for (std::size_t i = 0; i < row; ++i) ASSERT_NEAR(out[node * row + i], ref.data()[i], 1e-6) << "sigma " << sigma;
    }
  }
}

TEST(TgmBlock, SingleStepReducesToValuePath) {
  ModelConfig cfg = small_config();
  cfg.window = 1;
  ParamStore<double> params = init_params<double>(cfg, 11);
  randomize_all(params, 12, 0.2);
  const Tensor<double> z = random_tensor({2, 1, cfg.d_model}, 13);
  Tape<double> tape;
  ParamBinding<double> p(tape, params);
  const auto out = tgm_block(p, "enc/block0/", tape.constant(z), gaussian_log_bias<double>(1, 1.0), cfg.tgm_heads).value();
  const Mat zn = Eigen::Map<const Mat>(z.data(), 1, static_cast<Eigen::Index>(cfg.d_model));
  const Mat ref = reference_block(params, "enc/block0/", zn, Mat::Ones(1, 1), cfg.tgm_heads);
  for (std::size_t i = 0; i < cfg.d_model; ++i) EXPECT_NEAR(out[i], ref.data()[i], 1e-9);
}

TEST(Encoder, CausalUnderFuturePerturbation) {
  const ModelConfig cfg = small_config();
  ParamStore<double> params = init_params<double>(cfg, 14);
  const RandomProblem pr = random_problem(5, cfg.window, cfg.n_features, 15);
  const MaskedSample base = make_full_sample(pr.window, pr.graph);
  const Outputs a = run_model(params, cfg, base);
  std::mt19937_64 rng(16);
  std::normal_distribution<double> noise(0, 3);
  for (std::size_t t = 0; t + 1 < cfg.window; ++t) {
    MaskedSample pert = base;
    for (std::size_t n = 0; n < 5; ++n) {
      for (std::size_t k = t + 1; k < cfg.window; ++k) {
        for (std::size_t f = 0; f < cfg.n_features; ++f) pert.panel.values[(n * cfg.window + k) * cfg.n_features + f] += noise(rng);
      }
    }
    const Outputs b = run_model(params, cfg, pert);
    for (std::size_t n = 0; n < 5; ++n) {
      for (std::size_t k = 0; k <= t; ++k) {
        for (std::size_t c = 0; c < cfg.d_model; ++c) {
          const std::size_t i = (n * cfg.window + k) * cfg.d_model + c;
          ASSERT_EQ(a.o_l[i], b.o_l[i]) << "t=" << t;
        }
        for (std::size_t f = 0; f < cfg.n_features; ++f) {
          const std::size_t i = (n * cfg.window + k) * cfg.n_features + f;
          ASSERT_EQ(a.x_r[i], b.x_r[i]) << "t=" << t;
        }
      }
    }
  }
}

TEST(Encoder, PermutationEquivariantInSinglePrecision) {
  const ModelConfig cfg = small_config();
  ParamStore<float> params = init_params<float>(cfg, 17);
  const RandomProblem pr = random_problem(9, cfg.window, cfg.n_features, 18);
  std::vector<std::size_t> perm(9);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), std::mt19937_64(19));
  const Outputs a = run_model(params, cfg, make_full_sample(pr.window, pr.graph));
  const RandomProblem pp = permuted(pr, perm);
  const Outputs b = run_model(params, cfg, make_full_sample(pp.window, pp.graph));
  auto close = [](double x, double y) { return std::abs(x - y) <= 1e-5 * std::max(1.0, std::abs(x)); };
  const std::size_t row = cfg.window * cfg.d_model;
  for (std::size_t r = 0; r < 9; ++r) {
    for (std::size_t i = 0; i < row; ++i) ASSERT_TRUE(close(b.o_l[r * row + i], a.o_l[perm[r] * row + i]));
    ASSERT_TRUE(close(b.y_hat[r], a.y_hat[perm[r]]));
    for (std::size_t c = 0; c < 9; ++c) ASSERT_TRUE(close(b.a_hat[r * 9 + c], a.a_hat[perm[r] * 9 + perm[c]]));
  }
}

TEST(Encoder, DuplicatedNodeGivesIdenticalRows) {
  const ModelConfig cfg = small_config();
  ParamStore<double> params = init_params<double>(cfg, 20);
  RandomProblem pr = random_problem(6, cfg.window, cfg.n_features, 21);
  // Node 5 becomes a copy of node 2: same history, same row and column of A.
  const std::size_t row = cfg.window * cfg.n_features;
  std::copy_n(pr.window.x.data() + 2 * row, row, pr.window.x.data() + 5 * row);
  pr.graph.weights.row(5) = pr.graph.weights.row(2);
  pr.graph.weights.col(5) = pr.graph.weights.col(2);
  pr.graph.weights(5, 2) = pr.graph.weights(2, 5) = 1.0;
  pr.graph.weights(5, 5) = pr.graph.weights(2, 2) = 0.0;
  const Outputs o = run_model(params, cfg, make_full_sample(pr.window, pr.graph));
  const std::size_t orow = cfg.window * cfg.d_model;
  for (std::size_t i = 0; i < orow; ++i) EXPECT_NEAR(o.o_l[2 * orow + i], o.o_l[5 * orow + i], 1e-12);
  EXPECT_NEAR(o.y_hat[2], o.y_hat[5], 1e-12);
}

TEST(Encoder, RejectsWrongWindow) {
  const ModelConfig cfg = small_config();
  ParamStore<double> params = init_params<double>(cfg, 22);
  const RandomProblem pr = random_problem(3, cfg.window + 1, cfg.n_features, 23);
  EXPECT_THROW(run_model(params, cfg, make_full_sample(pr.window, pr.graph)), ShapeError);
}

TEST(AdjacencyDecoder, RankAtMostFactorWidth) {
  ModelConfig cfg = small_config();
  cfg.adj_dim = 3;
  ParamStore<double> params = init_params<double>(cfg, 24);
  const RandomProblem pr = random_problem(10, cfg.window, cfg.n_features, 25);
  const Outputs o = run_model(params, cfg, make_full_sample(pr.window, pr.graph));
  const Mat a = Eigen::Map<const Mat>(o.a_hat.data(), 10, 10);
  Eigen::FullPivLU<Mat> lu(a);
  lu.setThreshold(1e-10);
  EXPECT_LE(lu.rank(), 3);
}

TEST(AdjacencyDecoder, SharedFactorsGiveSymmetricOutput) {
  const ModelConfig cfg = small_config();
  ParamStore<double> params = init_params<double>(cfg, 26);
  params.get_mut("adj/wr") = params.get("adj/wl");
  params.get_mut("adj/br") = params.get("adj/bl");
  const RandomProblem pr = random_problem(6, cfg.window, cfg.n_features, 27);
  const Outputs o = run_model(params, cfg, make_full_sample(pr.window, pr.graph));
  const Mat a = Eigen::Map<const Mat>(o.a_hat.data(), 6, 6);
  EXPECT_TRUE(a.isApprox(a.transpose(), 1e-12));
}

TEST(FinetuneHead, ZeroInnerMapIsPureResidual) {
  const ModelConfig cfg = small_config();
  ParamStore<double> params = init_params<double>(cfg, 28);
  params.get_mut("head/fc2_w") = Tensor<double>(params.get("head/fc2_w").shape(), 0.0);
  params.get_mut("head/pred_b") = Tensor<double>({1}, 0.25);
  const Tensor<double> o_l = random_tensor({4, cfg.window, cfg.d_model}, 29);
  Tape<double> tape;
  ParamBinding<double> p(tape, params);
  const auto y = finetune_head(p, tape.constant(o_l)).value();
  ASSERT_EQ(y.shape(), (Shape{4}));
  const Tensor<double>& w = params.get("head/pred_w");
  const std::size_t row = cfg.window * cfg.d_model;
  for (std::size_t n = 0; n < 4; ++n) {
    double expected = 0.25;
    for (std::size_t i = 0; i < row; ++i) expected += o_l[n * row + i] * w[i];
    EXPECT_NEAR(y[n], expected, 1e-10);
  }
}

TEST(Parameters, EverySymbolHasOnePathAndReceivesGradient) {
  const ModelConfig cfg = small_config();
  ParamStore<double> params = init_params<double>(cfg, 30);
  const auto shapes = parameter_shapes(cfg);
  EXPECT_EQ(params.paths().size(), shapes.size());
  const RandomProblem pr = random_problem(6, cfg.window, cfg.n_features, 31);
  const MaskedSample pre = make_pretrain_sample(pr.window, pr.graph, AugmentConfig{}, 32);
  const MaskedSample full = make_full_sample(pr.window, pr.graph);
  const LossFn<double> f = [&](ParamBinding<double>& p) {
    return pretrain_terms(p, pre, cfg, 1.0).total + finetune_terms(p, full, cfg, 0.3).total;
  };
  const auto fb = forward_backward(f, params);
  for (const auto& [path, shape] : shapes) {
    ASSERT_TRUE(fb.grads.count(path)) << path;
    EXPECT_EQ(fb.grads.at(path).shape(), shape) << path;
  }
}

TEST(Checkpoint, ValidatesConfigAndManifest) {
  const ModelConfig cfg = small_config();
  const ParamStore<float> params = init_params<float>(cfg, 33);
  const Checkpoint ok = decode_checkpoint(encode_checkpoint(params, format_key_values(cfg.to_kv())));
  EXPECT_NO_THROW(validate_checkpoint(ok, cfg));
  ModelConfig other = cfg;
  other.tgm_blocks = 1;
  EXPECT_THROW(validate_checkpoint(ok, other), CheckpointError);
  ParamStore<float> partial;
  for (const auto& path : params.paths()) {
    if (path != "head/pred_b") partial.add(path, params.get(path));
  }
  const Checkpoint missing = decode_checkpoint(encode_checkpoint(partial, format_key_values(cfg.to_kv())));
  EXPECT_THROW(validate_checkpoint(missing, cfg), CheckpointError);
}

TEST(GradientCheck, TinyModelBothObjectives) {
  const ModelGradCheck r = check_model_gradients(gradcheck_model_config("tiny"), 4, 7);
  EXPECT_TRUE(r.passed()) << "pretrain worst " << r.pretrain.worst() << " finetune worst " << r.finetune.worst();
  EXPECT_GT(r.pretrain.paths.size(), 0u);
}
