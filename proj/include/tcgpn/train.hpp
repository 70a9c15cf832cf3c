#pragma once

#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "tcgpn/augment.hpp"
#include "tcgpn/backtest.hpp"
#include "tcgpn/data.hpp"
#include "tcgpn/losses.hpp"
#include "tcgpn/model.hpp"

namespace tcgpn {

struct TrainConfig {
  std::size_t epochs = 100;
  std::size_t finetune_epochs = 50;
  std::size_t batch_size = 8;
  std::size_t n_sub = 0;  // 0 uses every node
  double r_t = 0.3;
  double r_g = 0.3;
  double beta = 1.0;
  double lambda_m = 0.3;
  double learning_rate = 1e-3;
  double finetune_learning_rate = 1e-3;
  std::uint64_t seed = 0;
  std::size_t early_stop_patience = 10;
  bool freeze_encoder = true;
  bool use_temporal_loss = true;
  bool alternate_losses = false;
  SpanMode span_mode = SpanMode::PerNode;
  MaskMode mask_mode = MaskMode::Edge;

  void validate() const;
  AugmentConfig augment() const { return {n_sub, r_t, r_g, span_mode, mask_mode}; }
};

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// One line of the training log.
struct LogRow {
  std::string phase;  // "train" or "val"
  std::size_t epoch = 0;
  std::size_t step = 0;
  LossReport loss;
  double ic = 0;  // validation IC during fine-tuning
};

std::string format_training_log(const std::vector<LogRow>& rows);

/// Pretraining terms for one augmented sample.
template <std::floating_point T>
struct PretrainTerms {
  Var<T> l_t, l_g, total;
  Var<T> x_r, a_hat;
};

template <std::floating_point T>
PretrainTerms<T> pretrain_terms(ParamBinding<T>& p, const MaskedSample& sample, const ModelConfig& cfg, double beta,
                                bool use_temporal = true);

/// Fine-tune loss of one complete window (encoder and head).
template <std::floating_point T>
FinetuneLoss<T> finetune_terms(ParamBinding<T>& p, const MaskedSample& sample, const ModelConfig& cfg,
                               double lambda_m);

/// Masked-position MSE when masked steps are filled with each node's mean over
/// its unmasked steps (per feature).
double mean_imputation_mse(const MaskedSample& sample);

/// Masked-position MSE of the temporal decoder's reconstruction.
double reconstruction_mse(const ParamStore<float>& params, const ModelConfig& cfg, const MaskedSample& sample);

/// Fixed, seed-derived validation augmentations so that epochs are comparable.
std::vector<MaskedSample> validation_samples(const std::vector<WindowSample>& windows, const CorrelationGraph& graph,
                                             const TrainConfig& tc);

struct PretrainResult {
  ParamStore<float> params;  // best validation loss
  std::vector<LogRow> log;
  double best_val_loss = 0;
  std::size_t best_epoch = 0;
  std::size_t epochs_run = 0;
  /// Largest increase of live tensor bytes over the level at the start of a training step.
  std::size_t peak_step_bytes = 0;
};

using EpochCallback = std::function<void(const LogRow&)>;

PretrainResult pretrain(const std::vector<WindowSample>& train, const std::vector<WindowSample>& val,
                        const CorrelationGraph& graph, const TrainConfig& tc, const ModelConfig& mc,
                        const EpochCallback& on_epoch = {});

struct FinetuneResult {
  ParamStore<float> params;  // encoder from the input store, best-validation head
  std::vector<LogRow> log;
  double best_val_ic = 0;
  std::size_t best_epoch = 0;
  std::size_t epochs_run = 0;
};

/// Head training on complete inputs. With tc.freeze_encoder only head/ paths
/// are updated; otherwise all parameters train jointly.
FinetuneResult finetune(const ParamStore<float>& init, const std::vector<WindowSample>& train,
                        const std::vector<WindowSample>& val, const CorrelationGraph& graph, const TrainConfig& tc,
                        const ModelConfig& mc, const EpochCallback& on_epoch = {});

/// Scores every window; one row per (window, node).
std::vector<Prediction> predict(const ParamStore<float>& params, const ModelConfig& mc,
                                const std::vector<WindowSample>& windows, const CorrelationGraph& graph);

/// Mean cross-sectional Pearson IC of model scores over windows (zero-variance dates skipped).
double mean_ic(const ParamStore<float>& params, const ModelConfig& mc, const std::vector<WindowSample>& windows,
               const CorrelationGraph& graph);

/// Mean IC of the persistence forecast y(t+1) = y(t).
double persistence_ic(const std::vector<WindowSample>& windows);

}  // namespace tcgpn
