#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "tcgpn/graphs.hpp"
#include "tcgpn/panel.hpp"

namespace tcgpn {

enum class MissingPolicy { Intersect, ForwardFill };

/// What load_panel accepts. Empty lists mean "whatever the file contains".
struct PanelSchema {
  std::vector<std::string> features;
  std::vector<std::string> nodes;
  MissingPolicy missing = MissingPolicy::Intersect;
};

struct PanelLoad {
  TimePanel panel;
  std::vector<std::string> report;  // one line per dropped or filled date
};

/// Reads `date,symbol,<feature_1..feature_F>,target`, one row per (date, symbol),
/// rows ordered by date. Errors carry 1-based line numbers.
PanelLoad load_panel(const std::string& path, const PanelSchema& schema = {});
PanelLoad parse_panel(const std::string& text, const PanelSchema& schema = {});
std::string format_panel(const TimePanel& panel);
void save_panel(const TimePanel& panel, const std::string& path);

/// One model input: x covers dates [end - T + 1, end]; target is Y at end + 1.
struct WindowSample {
  Tensor<double> x;  // [N, T, F]
  std::vector<double> target;
  std::vector<double> last_target;  // Y at the window's end date
  std::size_t end_index = 0;
  Date end_date;
  Date target_date;
};

/// Windows ending at d = T-1, T-1+stride, ... while d + 1 < D. Empty (with a
/// warning on stderr) when T > D - 1.
std::vector<WindowSample> window_samples(const TimePanel& panel, std::size_t T, std::size_t stride = 1);

struct PanelSplit {
  TimePanel train, val, test;
};

/// Contiguous calendar-year blocks starting at the panel's first year.
PanelSplit split_by_year(const TimePanel& panel, int train_years = 10, int val_years = 1, int test_years = 1);
/// Contiguous blocks by date count; test takes the remainder.
PanelSplit split_by_fraction(const TimePanel& panel, double train_frac, double val_frac);

/// Per-feature z-score fitted on one panel (the training split) and applied to any.
class Standardizer {
 public:
  static Standardizer fit(const TimePanel& panel);
  TimePanel apply(const TimePanel& panel) const;
  const std::vector<double>& mean() const { return mean_; }
  const std::vector<double>& stddev() const { return std_; }

 private:
  std::vector<double> mean_, std_;
};

struct SyntheticSpec {
  std::size_t n_clusters = 4;
  std::size_t nodes_per_cluster = 5;
  std::size_t lag = 1;
  double noise_std = 0.0;
  std::size_t length = 600;
  double ar_coef = 0.9;
  std::uint64_t seed = 0;

  void validate(std::size_t window) const;
};

struct SyntheticData {
  TimePanel panel;
  CorrelationGraph truth;
  std::vector<std::size_t> leaders;  // node index of each cluster's leader
};

/// Lead-lag panel: per cluster one AR(1) leader, followers are the leader
/// delayed by `lag` plus Gaussian noise. Features: value, 5-step rolling
/// mean, 1-step change. Target: 1-step change. Business-day dates from 2010-01-04.
SyntheticData gen_synthetic(const SyntheticSpec& spec);

}  // namespace tcgpn
