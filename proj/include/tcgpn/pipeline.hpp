#pragma once

#include <string>
#include <vector>

#include "tcgpn/backtest.hpp"
#include "tcgpn/data.hpp"
#include "tcgpn/kv.hpp"
#include "tcgpn/model.hpp"
#include "tcgpn/train.hpp"

namespace tcgpn {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Every setting of a run.
struct RunConfig {
  ModelConfig model;
  TrainConfig train;

  // Data. An empty `panel` generates the synthetic lead-lag panel.
  std::string panel;
  std::string graph;                   // graph file; empty builds one per graph_kind
  std::string graph_kind = "truth";    // truth (synthetic only) or distance
  std::size_t k_neighbors = 10;
  std::string split = "fraction";      // fraction or year
  double train_frac = 0.7;
  double val_frac = 0.15;
  int train_years = 10;
  int val_years = 1;
  int test_years = 1;
  std::size_t stride = 1;
  bool standardize = true;
  MissingPolicy missing = MissingPolicy::Intersect;
  SyntheticSpec synthetic;

  // Backtest.
  std::size_t top_k = 0;  // 0 holds max(1, N / 10)
  bool compounded = false;
  bool rank_ic = false;
  double trading_days = 252;

  void validate() const;
  /// Resolved key table, in a fixed order.
  KeyValues to_kv() const;
  /// Applies `kv` on top of the current values; unknown keys throw ConfigError.
  void apply(const KeyValues& kv);
  static RunConfig from_kv(const KeyValues& kv);
  static std::vector<std::string> keys();
};

/// Windows of each split plus the graph they share.
struct Dataset {
  TimePanel panel;  // standardized when configured
  CorrelationGraph graph;
  std::vector<WindowSample> train, val, test;
  std::vector<ReturnRow> returns;  // raw targets of the whole panel
  std::vector<std::string> report;  // dates dropped or filled while loading
};

Dataset prepare_dataset(const RunConfig& cfg);

/// Window samples of the named split ("train", "val" or "test").
const std::vector<WindowSample>& split_windows(const Dataset& data, const std::string& name);

}  // namespace tcgpn
