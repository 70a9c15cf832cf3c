#include "tcgpn/train.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <numeric>
#include <sstream>

#include "tcgpn/optim.hpp"
#include "tcgpn/rng.hpp"

namespace tcgpn {

void TrainConfig::validate() const {
  auto need = [](bool ok, const std::string& msg) {
    if (!ok) throw std::invalid_argument("train config: " + msg);
  };
  need(r_t >= 0 && r_t < 1, "r_t must be in [0, 1)");
  need(r_g >= 0 && r_g < 1, "r_g must be in [0, 1)");
  need(batch_size >= 1, "batch_size must be at least 1");
  need(beta >= 0, "beta must be non-negative");
  need(lambda_m >= 0, "lambda_m must be non-negative");
  need(learning_rate > 0 && finetune_learning_rate > 0, "learning rates must be positive");
  need(n_sub == 0 || n_sub >= 2, "n_sub must be 0 (all nodes) or at least 2");
  need(use_temporal_loss || beta > 0, "use_temporal_loss=false with beta=0 leaves nothing to train");
}

std::string format_training_log(const std::vector<LogRow>& rows) {
  std::ostringstream os;
  os << std::setprecision(9);
  os << "phase,epoch,step,l_t,l_g,l_pre,l_mse,l_pearson,l_fine,ic\n";
  for (const auto& r : rows) {
    os << r.phase << ',' << r.epoch << ',' << r.step << ',' << r.loss.l_t << ',' << r.loss.l_g << ',' << r.loss.l_pre
       << ',' << r.loss.l_mse << ',' << r.loss.l_pearson << ',' << r.loss.l_fine << ',' << r.ic << '\n';
  }
  return os.str();
}

namespace {

bool has_masked_step(const BoolMatrix& m) { return m.any(); }

bool has_supervised_edge(const MaskedGraph& g) {
  return (g.mask_kept.array() && (g.base.weights.array() != 0.0)).any();
}

template <std::floating_point T>
bool never_trainable(const std::string&) {
  return false;
}

void accumulate(Grads<float>& acc, const Grads<float>& g) {
  for (const auto& [path, t] : g) {
    auto it = acc.find(path);
    if (it == acc.end()) {
      acc.emplace(path, t);
    } else {
      for (std::size_t i = 0; i < t.size(); ++i) it->second[i] += t[i];
    }
  }
}

void scale_grads(Grads<float>& g, float c) {
  for (auto& [path, t] : g) {
    for (float& v : t.storage()) v *= c;
  }
}

std::vector<std::size_t> shuffled(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  return order;
}

void check_finite(double v, const std::string& what, std::size_t epoch, std::size_t step, std::uint64_t seed) {
  if (!std::isfinite(v)) {
    throw TrainingError("non-finite " + what + " at epoch " + std::to_string(epoch) + " step " + std::to_string(step) +
                        " (batch seed " + std::to_string(seed) + ")");
  }
}

}  // namespace

template <std::floating_point T>
PretrainTerms<T> pretrain_terms(ParamBinding<T>& p, const MaskedSample& sample, const ModelConfig& cfg, double beta,
                                bool use_temporal) {
  const ModelInput<T> input = make_model_input<T>(sample);
  const EncoderOutput<T> enc = encoder_forward(p, input, cfg);
  PretrainTerms<T> out;
  Tape<T>& tape = p.tape();
  out.x_r = temporal_decoder(p, enc.o_l, cfg);
  out.a_hat = adjacency_decoder(p, enc.o_l);
  out.l_t = has_masked_step(sample.panel.mask_positions)
                ? loss_temporal(sample.original.cast<T>(), out.x_r, sample.panel.mask_positions)
                : tape.constant(Tensor<T>::scalar(0));
  out.l_g = has_supervised_edge(sample.graph) ? loss_graph(sample.graph.base.weights, out.a_hat, sample.graph.mask_kept)
                                              : tape.constant(Tensor<T>::scalar(0));
  out.total = loss_pretrain(out.l_t, out.l_g, beta, use_temporal);
  return out;
}

template <std::floating_point T>
FinetuneLoss<T> finetune_terms(ParamBinding<T>& p, const MaskedSample& sample, const ModelConfig& cfg,
                               double lambda_m) {
  const ModelInput<T> input = make_model_input<T>(sample);
  const EncoderOutput<T> enc = encoder_forward(p, input, cfg);
  Var<T> y_hat = finetune_head(p, enc.o_l);
  Tensor<T> y = Tensor<double>::from_vector({sample.target.size()}, sample.target).template cast<T>();
  return loss_finetune(y_hat, y, lambda_m);
}

template PretrainTerms<float> pretrain_terms(ParamBinding<float>&, const MaskedSample&, const ModelConfig&, double, bool);
template PretrainTerms<double> pretrain_terms(ParamBinding<double>&, const MaskedSample&, const ModelConfig&, double, bool);
template FinetuneLoss<float> finetune_terms(ParamBinding<float>&, const MaskedSample&, const ModelConfig&, double);
template FinetuneLoss<double> finetune_terms(ParamBinding<double>&, const MaskedSample&, const ModelConfig&, double);

double mean_imputation_mse(const MaskedSample& sample) {
  const Tensor<double>& x = sample.original;
  const std::size_t n = x.dim(0), t = x.dim(1), f = x.dim(2);
  const BoolMatrix& m = sample.panel.mask_positions;
  double err = 0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t c = 0; c < f; ++c) {
      double sum = 0;
      std::size_t kept = 0;
      for (std::size_t k = 0; k < t; ++k) {
        if (!m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k))) {
          sum += x[(i * t + k) * f + c];
          ++kept;
        }
      }
      const double fill = kept ? sum / static_cast<double>(kept) : 0.0;
      for (std::size_t k = 0; k < t; ++k) {
        if (m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k))) {
          const double d = x[(i * t + k) * f + c] - fill;
          err += d * d;
          ++count;
        }
      }
    }
  }
  if (count == 0) throw std::invalid_argument("mean_imputation_mse: nothing is masked");
  return err / static_cast<double>(count);
}

double reconstruction_mse(const ParamStore<float>& params, const ModelConfig& cfg, const MaskedSample& sample) {
  Tape<float> tape;
  ParamBinding<float> p(tape, params, never_trainable<float>);
  const EncoderOutput<float> enc = encoder_forward(p, make_model_input<float>(sample), cfg);
  Var<float> x_r = temporal_decoder(p, enc.o_l, cfg);
  return loss_temporal(sample.original.cast<float>(), x_r, sample.panel.mask_positions).value().item();
}

std::vector<MaskedSample> validation_samples(const std::vector<WindowSample>& windows, const CorrelationGraph& graph,
                                             const TrainConfig& tc) {
  std::vector<MaskedSample> out;
  out.reserve(windows.size());
  for (std::size_t i = 0; i < windows.size(); ++i) {
    out.push_back(make_pretrain_sample(windows[i], graph, tc.augment(), mix_seed({tc.seed, 0x7661, i})));
  }
  return out;
}

PretrainResult pretrain(const std::vector<WindowSample>& train, const std::vector<WindowSample>& val,
                        const CorrelationGraph& graph, const TrainConfig& tc, const ModelConfig& mc,
                        const EpochCallback& on_epoch) {
  tc.validate();
  mc.validate();
  if (train.empty()) throw TrainingError("pretraining needs at least one training window");
  if (tc.epochs == 0) throw TrainingError("pretraining needs at least one epoch");

  PretrainResult res;
  ParamStore<float> params = init_params<float>(mc, mix_seed({tc.seed, 0x1417}));
  OptimState<float> opt;
  opt.learning_rate = tc.learning_rate;
  const std::vector<MaskedSample> val_samples = validation_samples(val, graph, tc);

  double best = std::numeric_limits<double>::infinity();
  std::size_t bad_epochs = 0, step = 0;
  for (std::size_t epoch = 0; epoch < tc.epochs; ++epoch) {
    const auto order = shuffled(train.size(), mix_seed({tc.seed, 0x5eed, epoch}));
    LossReport epoch_sum;
    std::size_t epoch_samples = 0;
    for (std::size_t b0 = 0; b0 < order.size(); b0 += tc.batch_size) {
      const std::size_t b1 = std::min(order.size(), b0 + tc.batch_size);
      const std::uint64_t batch_seed = mix_seed({tc.seed, epoch, b0});
      bool use_t = tc.use_temporal_loss;
      double beta = tc.beta;
      if (tc.alternate_losses && tc.use_temporal_loss && tc.beta > 0) {
        if (step % 2 == 0) beta = 0;
        else use_t = false;
      }
      Grads<float> acc;
      for (std::size_t bi = b0; bi < b1; ++bi) {
        const std::size_t idx = order[bi];
        const std::size_t level = MemoryStats::current();
        MemoryStats::reset_peak();
        const MaskedSample sample = make_pretrain_sample(train[idx], graph, tc.augment(), mix_seed({batch_seed, idx}));
        Tape<float> tape;
        ParamBinding<float> p(tape, params);
        const PretrainTerms<float> terms = pretrain_terms(p, sample, mc, beta, use_t);
        check_finite(terms.total.value().item(), "pretraining loss", epoch, step, batch_seed);
        tape.backward(terms.total);
        accumulate(acc, p.gradients());
        res.peak_step_bytes = std::max(res.peak_step_bytes, MemoryStats::peak() - level);

        epoch_sum.l_t += terms.l_t.value().item();
        epoch_sum.l_g += terms.l_g.value().item();
        epoch_sum.l_pre += terms.total.value().item();
        epoch_sum.masked_count += static_cast<std::size_t>(sample.panel.mask_positions.count());
        ++epoch_samples;
      }
      scale_grads(acc, 1.0f / static_cast<float>(b1 - b0));
      const AdamReport rep = adam_step(params, acc, opt);
      if (!rep.rejected.empty()) {
        throw TrainingError("non-finite gradient for " + rep.rejected.front() + " at epoch " + std::to_string(epoch) +
                            " step " + std::to_string(step) + " (batch seed " + std::to_string(batch_seed) + ")");
      }
      ++step;
    }
    LogRow row{"train", epoch, step, epoch_sum, 0};
    row.loss.l_t /= static_cast<double>(epoch_samples);
    row.loss.l_g /= static_cast<double>(epoch_samples);
    row.loss.l_pre /= static_cast<double>(epoch_samples);
    res.log.push_back(row);
    res.epochs_run = epoch + 1;

    if (val_samples.empty()) {
      res.params = params;
      res.best_epoch = epoch;
      res.best_val_loss = row.loss.l_pre;
      if (on_epoch) on_epoch(row);
      continue;
    }
    LogRow vrow{"val", epoch, step, {}, 0};
    for (const auto& s : val_samples) {
      Tape<float> tape;
      ParamBinding<float> p(tape, params, never_trainable<float>);
      const auto terms = pretrain_terms(p, s, mc, tc.beta, tc.use_temporal_loss);
      vrow.loss.l_t += terms.l_t.value().item();
      vrow.loss.l_g += terms.l_g.value().item();
      vrow.loss.l_pre += terms.total.value().item();
    }
    const double nv = static_cast<double>(val_samples.size());
    vrow.loss.l_t /= nv;
    vrow.loss.l_g /= nv;
    vrow.loss.l_pre /= nv;
    check_finite(vrow.loss.l_pre, "validation loss", epoch, step, tc.seed);
    res.log.push_back(vrow);
    if (on_epoch) on_epoch(vrow);
    if (vrow.loss.l_pre < best) {
      best = vrow.loss.l_pre;
      res.params = params;
      res.best_epoch = epoch;
      res.best_val_loss = best;
      bad_epochs = 0;
    } else if (++bad_epochs >= tc.early_stop_patience && tc.early_stop_patience > 0) {
      break;
    }
  }
  return res;
}

namespace {

std::vector<double> head_scores(const ParamStore<float>& params, const Tensor<float>& o_l) {
  Tape<float> tape;
  ParamBinding<float> p(tape, params, never_trainable<float>);
  const Tensor<float>& y = finetune_head(p, tape.constant(o_l)).value();
  return std::vector<double>(y.data(), y.data() + y.size());
}

Tensor<float> encode(const ParamStore<float>& params, const ModelConfig& mc, const MaskedSample& s) {
  Tape<float> tape;
  ParamBinding<float> p(tape, params, never_trainable<float>);
  return encoder_forward(p, make_model_input<float>(s), mc).o_l.value();
}

std::vector<double> window_scores(const ParamStore<float>& params, const ModelConfig& mc, const MaskedSample& s) {
  return head_scores(params, encode(params, mc, s));
}

}  // namespace

FinetuneResult finetune(const ParamStore<float>& init, const std::vector<WindowSample>& train,
                        const std::vector<WindowSample>& val, const CorrelationGraph& graph, const TrainConfig& tc,
                        const ModelConfig& mc, const EpochCallback& on_epoch) {
  tc.validate();
  mc.validate();
  if (train.empty()) throw TrainingError("fine-tuning needs at least one training window");
  if (tc.finetune_epochs == 0) throw TrainingError("fine-tuning needs at least one epoch");
  for (const auto& [path, shape] : parameter_shapes(mc)) {
    if (!init.contains(path) || init.get(path).shape() != shape) {
      throw CheckpointError("parameters do not match the model config at " + path);
    }
  }

  ParamStore<float> params = init;
  const ParamStore<float> fresh = init_params<float>(mc, mix_seed({tc.seed, 0x4ead}));
  for (const auto& path : fresh.paths()) {
    if (is_head_path(path)) params.get_mut(path) = fresh.get(path);
  }
  const PathFilter trainable = tc.freeze_encoder ? PathFilter(is_head_path) : PathFilter(all_paths);

  std::vector<MaskedSample> train_s, val_s;
  for (const auto& w : train) train_s.push_back(make_full_sample(w, graph));
  for (const auto& w : val) val_s.push_back(make_full_sample(w, graph));
  std::vector<Tensor<float>> train_cache, val_cache;
  if (tc.freeze_encoder) {
    for (const auto& s : train_s) train_cache.push_back(encode(params, mc, s));
    for (const auto& s : val_s) val_cache.push_back(encode(params, mc, s));
  }

  OptimState<float> opt;
  opt.learning_rate = tc.finetune_learning_rate;
  FinetuneResult res;
  res.params = params;
  res.best_val_ic = -std::numeric_limits<double>::infinity();
  std::size_t bad_epochs = 0, step = 0;
  for (std::size_t epoch = 0; epoch < tc.finetune_epochs; ++epoch) {
    const auto order = shuffled(train_s.size(), mix_seed({tc.seed, 0xf17e, epoch}));
    LogRow row{"train", epoch, 0, {}, 0};
    for (std::size_t b0 = 0; b0 < order.size(); b0 += tc.batch_size) {
      const std::size_t b1 = std::min(order.size(), b0 + tc.batch_size);
      Grads<float> acc;
      for (std::size_t bi = b0; bi < b1; ++bi) {
        const std::size_t idx = order[bi];
        Tape<float> tape;
        ParamBinding<float> p(tape, params, trainable);
        std::optional<FinetuneLoss<float>> loss;
        if (tc.freeze_encoder) {
          Var<float> y_hat = finetune_head(p, tape.constant(train_cache[idx]));
          loss = loss_finetune(y_hat, Tensor<double>::from_vector({train_s[idx].target.size()}, train_s[idx].target).cast<float>(), tc.lambda_m);
        } else {
          loss = finetune_terms(p, train_s[idx], mc, tc.lambda_m);
        }
        check_finite(loss->total.value().item(), "fine-tuning loss", epoch, step, mix_seed({tc.seed, epoch, b0}));
        tape.backward(loss->total);
        accumulate(acc, p.gradients());
        row.loss.l_mse += loss->mse.value().item();
        row.loss.l_fine += loss->total.value().item();
        if (loss->pearson) row.loss.l_pearson += loss->pearson->value().item();
        else ++row.loss.skipped_pearson;
      }
      scale_grads(acc, 1.0f / static_cast<float>(b1 - b0));
      const AdamReport rep = adam_step(params, acc, opt);
      if (!rep.rejected.empty()) {
        throw TrainingError("non-finite gradient for " + rep.rejected.front() + " at epoch " + std::to_string(epoch) +
                            " step " + std::to_string(step));
      }
      ++step;
    }
    const double nt = static_cast<double>(train_s.size());
    row.step = step;
    row.loss.l_mse /= nt;
    row.loss.l_fine /= nt;
    row.loss.l_pearson /= std::max(1.0, nt - static_cast<double>(row.loss.skipped_pearson));
    res.log.push_back(row);
    res.epochs_run = epoch + 1;

    if (val_s.empty()) {
      res.params = params;
      res.best_epoch = epoch;
      res.best_val_ic = 0;
      if (on_epoch) on_epoch(row);
      continue;
    }
    double ic_sum = 0;
    std::size_t ic_n = 0;
    for (std::size_t i = 0; i < val_s.size(); ++i) {
      const auto scores = tc.freeze_encoder ? head_scores(params, val_cache[i]) : window_scores(params, mc, val_s[i]);
      if (auto ic = daily_ic(scores, val_s[i].target)) {
        ic_sum += *ic;
        ++ic_n;
      }
    }
    LogRow vrow{"val", epoch, step, {}, ic_n ? ic_sum / static_cast<double>(ic_n) : 0.0};
    res.log.push_back(vrow);
    if (on_epoch) on_epoch(vrow);
    if (vrow.ic > res.best_val_ic) {
      res.best_val_ic = vrow.ic;
      res.params = params;
      res.best_epoch = epoch;
      bad_epochs = 0;
    } else if (++bad_epochs >= tc.early_stop_patience && tc.early_stop_patience > 0) {
      break;
    }
  }
  return res;
}

std::vector<Prediction> predict(const ParamStore<float>& params, const ModelConfig& mc,
                                const std::vector<WindowSample>& windows, const CorrelationGraph& graph) {
  std::vector<Prediction> out;
  for (const auto& w : windows) {
    if (w.x.dim(1) != mc.window) {
      throw std::invalid_argument("predict: window length " + std::to_string(w.x.dim(1)) + " != model window " +
                                  std::to_string(mc.window));
    }
    const auto scores = window_scores(params, mc, make_full_sample(w, graph));
    for (std::size_t i = 0; i < scores.size(); ++i) out.push_back({w.target_date, graph.node_ids[i], scores[i]});
  }
  return out;
}

double mean_ic(const ParamStore<float>& params, const ModelConfig& mc, const std::vector<WindowSample>& windows,
               const CorrelationGraph& graph) {
  double sum = 0;
  std::size_t n = 0;
  for (const auto& w : windows) {
    if (auto ic = daily_ic(window_scores(params, mc, make_full_sample(w, graph)), w.target)) {
      sum += *ic;
      ++n;
    }
  }
  return n ? sum / static_cast<double>(n) : 0.0;
}

double persistence_ic(const std::vector<WindowSample>& windows) {
  double sum = 0;
  std::size_t n = 0;
  for (const auto& w : windows) {
    if (auto ic = daily_ic(w.last_target, w.target)) {
      sum += *ic;
      ++n;
    }
  }
  return n ? sum / static_cast<double>(n) : 0.0;
}

}  // namespace tcgpn
