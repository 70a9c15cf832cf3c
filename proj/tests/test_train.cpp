#include <gtest/gtest.h>

#include <cstring>
#include <numeric>
#include <random>

#include "tcgpn/checks.hpp"
#include "tcgpn/train.hpp"

using namespace tcgpn;

namespace {

struct TinyRun {
  ModelConfig mc;
  TrainConfig tc;
  SyntheticData data;
  std::vector<WindowSample> train, val;
};

TinyRun tiny_setup() {
  TinyRun s;
  s.mc = gradcheck_model_config("tiny");
  s.tc.epochs = 2;
  s.tc.finetune_epochs = 2;
  s.tc.batch_size = 4;
  s.tc.seed = 3;
  SyntheticSpec spec;
  spec.n_clusters = 2;
  spec.nodes_per_cluster = 3;
  spec.length = 60;
  spec.seed = 1;
  s.data = gen_synthetic(spec);
  const PanelSplit sp = split_by_fraction(s.data.panel, 0.6, 0.2);
  s.train = window_samples(sp.train, s.mc.window);
  s.val = window_samples(sp.val, s.mc.window);
  return s;
}

bool same_bytes(const Tensor<float>& a, const Tensor<float>& b) {
  return a.shape() == b.shape() && std::memcmp(a.data(), b.data(), a.size() * sizeof(float)) == 0;
}

}  // namespace

TEST(Pretrain, RejectsEmptyData) {
  TinyRun s = tiny_setup();
  EXPECT_THROW(pretrain({}, s.val, s.data.truth, s.tc, s.mc), TrainingError);
  s.tc.epochs = 0;
  EXPECT_THROW(pretrain(s.train, s.val, s.data.truth, s.tc, s.mc), TrainingError);
}

TEST(Pretrain, RejectsInvalidConfig) {
  TinyRun s = tiny_setup();
  s.tc.r_t = 1.0;
  EXPECT_THROW(pretrain(s.train, s.val, s.data.truth, s.tc, s.mc), std::invalid_argument);
  s = tiny_setup();
  s.tc.batch_size = 0;
  EXPECT_THROW(pretrain(s.train, s.val, s.data.truth, s.tc, s.mc), std::invalid_argument);
}

TEST(Pretrain, DeterministicCheckpoints) {
  const TinyRun s = tiny_setup();
  const auto a = pretrain(s.train, s.val, s.data.truth, s.tc, s.mc);
  const auto b = pretrain(s.train, s.val, s.data.truth, s.tc, s.mc);
  EXPECT_EQ(encode_checkpoint(a.params, "x"), encode_checkpoint(b.params, "x"));
  TrainConfig other = s.tc;
  other.seed = 4;
  const auto c = pretrain(s.train, s.val, s.data.truth, other, s.mc);
  EXPECT_NE(encode_checkpoint(a.params, "x"), encode_checkpoint(c.params, "x"));
  EXPECT_EQ(a.epochs_run, 2u);
  EXPECT_FALSE(a.log.empty());
}

TEST(Pretrain, LogHasTrainAndValRows) {
  const TinyRun s = tiny_setup();
  std::size_t callbacks = 0;
  const auto r = pretrain(s.train, s.val, s.data.truth, s.tc, s.mc, [&](const LogRow&) { ++callbacks; });
  EXPECT_GT(callbacks, 0u);
  bool train_row = false, val_row = false;
  for (const auto& row : r.log) {
    train_row |= row.phase == "train";
    val_row |= row.phase == "val";
    EXPECT_TRUE(std::isfinite(row.loss.l_pre));
  }
  EXPECT_TRUE(train_row && val_row);
  const std::string csv = format_training_log(r.log);
  EXPECT_EQ(csv.substr(0, csv.find('\n')).find("phase"), 0u);
}

TEST(Finetune, FrozenEncoderIsByteIdentical) {
  const TinyRun s = tiny_setup();
  const ParamStore<float> init = init_params<float>(s.mc, 9);
  const auto r = finetune(init, s.train, s.val, s.data.truth, s.tc, s.mc);
  bool head_changed = false;
  for (const auto& path : init.paths()) {
    if (is_head_path(path)) {
      head_changed |= !same_bytes(init.get(path), r.params.get(path));
    } else {
      EXPECT_TRUE(same_bytes(init.get(path), r.params.get(path))) << path;
    }
  }
  EXPECT_TRUE(head_changed);
}

TEST(Finetune, HeadOnlyGradients) {
  const TinyRun s = tiny_setup();
  const ParamStore<double> params = init_params<double>(s.mc, 10);
  const MaskedSample full = make_full_sample(s.train[0], s.data.truth);
  const LossFn<double> f = [&](ParamBinding<double>& p) { return finetune_terms(p, full, s.mc, 0.3).total; };
  const auto fb = forward_backward(f, params, [](const std::string& path) { return is_head_path(path); });
  EXPECT_FALSE(fb.grads.empty());
  for (const auto& [path, g] : fb.grads) EXPECT_TRUE(is_head_path(path)) << path;
  const auto rep = grad_check(f, params, 1e-5, 1e-4, [](const std::string& path) { return is_head_path(path); });
  EXPECT_TRUE(rep.passed()) << rep.worst();
}

TEST(Finetune, RejectsMismatchedParameters) {
  const TinyRun s = tiny_setup();
  ModelConfig other = s.mc;
  other.d_model = 16;
  other.ffn_dim = 16;
  const ParamStore<float> wrong = init_params<float>(other, 1);
  EXPECT_THROW(finetune(wrong, s.train, s.val, s.data.truth, s.tc, s.mc), CheckpointError);
  EXPECT_THROW(finetune(init_params<float>(s.mc, 1), {}, s.val, s.data.truth, s.tc, s.mc), TrainingError);
}

TEST(Finetune, JointModeUpdatesEncoder) {
  TinyRun s = tiny_setup();
  s.tc.freeze_encoder = false;
  const ParamStore<float> init = init_params<float>(s.mc, 11);
  const auto r = finetune(init, s.train, s.val, s.data.truth, s.tc, s.mc);
  EXPECT_FALSE(same_bytes(init.get("fuse/w"), r.params.get("fuse/w")));
}

TEST(Predict, RowsDeterminismAndPermutation) {
  const TinyRun s = tiny_setup();
  const ParamStore<float> params = init_params<float>(s.mc, 12);
  const auto a = predict(params, s.mc, s.val, s.data.truth);
  const auto b = predict(params, s.mc, s.val, s.data.truth);
  ASSERT_EQ(a.size(), s.val.size() * s.data.truth.n_nodes());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i].score, b[i].score);
  EXPECT_EQ(a.front().date, s.val.front().target_date);

  std::vector<std::size_t> perm(6);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), std::mt19937_64(13));
  const CorrelationGraph pg = s.data.truth.subgraph(perm);
  std::vector<WindowSample> pw = s.val;
  for (auto& w : pw) {
    const WindowSample orig = w;
    const std::size_t row = w.x.dim(1) * w.x.dim(2);
    for (std::size_t r = 0; r < 6; ++r) {
      std::copy_n(orig.x.data() + perm[r] * row, row, w.x.data() + r * row);
      w.target[r] = orig.target[perm[r]];
    }
  }
  const auto c = predict(params, s.mc, pw, pg);
  for (std::size_t k = 0; k < s.val.size(); ++k) {
    for (std::size_t r = 0; r < 6; ++r) {
      const Prediction& p = c[k * 6 + r];
      const Prediction& q = a[k * 6 + perm[r]];
      EXPECT_EQ(p.symbol, q.symbol);
      EXPECT_NEAR(p.score, q.score, 1e-5 * std::max(1.0, std::abs(q.score)));
    }
  }
}

TEST(Predict, RejectsNodeAndWindowMismatch) {
  const TinyRun s = tiny_setup();
  const ParamStore<float> params = init_params<float>(s.mc, 14);
  const CorrelationGraph small = s.data.truth.subgraph({0, 1, 2});
  EXPECT_THROW(predict(params, s.mc, s.val, small), std::invalid_argument);
  ModelConfig longer = s.mc;
  longer.window = s.mc.window + 1;
  EXPECT_THROW(predict(init_params<float>(longer, 1), longer, s.val, s.data.truth), std::invalid_argument);
}

TEST(Baselines, MeanImputationAndPersistence) {
  const TinyRun s = tiny_setup();
  MaskedSample m = make_pretrain_sample(s.train[0], s.data.truth, AugmentConfig{}, 5);
  // Oracle: each node's unmasked mean per feature, squared error at masked steps.
  const std::size_t n = m.original.dim(0), t = m.original.dim(1), f = m.original.dim(2);
  double err = 0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t c = 0; c < f; ++c) {
      double mean = 0;
      std::size_t seen = 0;
      for (std::size_t k = 0; k < t; ++k) {
        if (!m.panel.mask_positions(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k))) {
          mean += m.original[(i * t + k) * f + c];
          ++seen;
        }
      }
      mean /= static_cast<double>(seen);
      for (std::size_t k = 0; k < t; ++k) {
        if (m.panel.mask_positions(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k))) {
          const double d = m.original[(i * t + k) * f + c] - mean;
          err += d * d;
          ++count;
        }
      }
    }
  }
  EXPECT_NEAR(mean_imputation_mse(m), err / static_cast<double>(count), 1e-12);

  std::vector<WindowSample> ws(2, s.val[0]);
  ws[0].last_target = ws[0].target;
  ws[1].last_target = ws[1].target;
  for (double& v : ws[1].last_target) v = -v;
  EXPECT_NEAR(persistence_ic(ws), 0.0, 1e-12);
  ws.pop_back();
  EXPECT_NEAR(persistence_ic(ws), 1.0, 1e-12);
}

TEST(Pretrain, StepMemoryTracksSubsampleSize) {
  TinyRun s = tiny_setup();
  SyntheticSpec spec;
  spec.n_clusters = 8;
  spec.nodes_per_cluster = 8;
  spec.length = 30;
  s.data = gen_synthetic(spec);
  s.train = window_samples(s.data.panel, s.mc.window, 8);
  s.tc.epochs = 1;
  s.tc.batch_size = 1;
  s.tc.n_sub = 0;
  const auto full = pretrain(s.train, {}, s.data.truth, s.tc, s.mc);
  s.tc.n_sub = 16;
  const auto sub = pretrain(s.train, {}, s.data.truth, s.tc, s.mc);
  EXPECT_GT(full.peak_step_bytes, 0u);
  EXPECT_LT(sub.peak_step_bytes * 3, full.peak_step_bytes);
}
