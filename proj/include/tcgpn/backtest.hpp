#pragma once

#include <optional>
#include <string>
#include <vector>

#include "tcgpn/panel.hpp"

namespace tcgpn {

struct Prediction {
  Date date;  // date of the realized target
  std::string symbol;
  double score = 0;
};

struct ReturnRow {
  Date date;
  std::string symbol;
  double ret = 0;
};

/// `date,symbol,score`
std::string format_predictions(const std::vector<Prediction>& preds);
std::vector<Prediction> parse_predictions(const std::string& text);
/// `date,symbol,return`
std::string format_returns(const std::vector<ReturnRow>& rows);
std::vector<ReturnRow> parse_returns(const std::string& text);
/// Every (date, node) target of a panel as a return row.
std::vector<ReturnRow> panel_returns(const TimePanel& panel);

/// Cross-sectional Pearson (or Spearman when `rank`) correlation; empty when
/// either side is constant or fewer than 2 nodes are present.
std::optional<double> daily_ic(const std::vector<double>& pred, const std::vector<double>& realized, bool rank = false);

struct IcSeries {
  std::vector<Date> dates;
  std::vector<double> ic;
  std::size_t skipped = 0;
  double mean() const;
};

IcSeries ic_series(const std::vector<Prediction>& preds, const std::vector<ReturnRow>& returns, bool rank = false);

struct PnlSeries {
  std::vector<Date> dates;
  std::vector<double> daily_pnl;
  std::vector<double> cumulative;
};

struct StrategyConfig {
  std::size_t k = 0;  // 0 selects max(1, N / 10)
  bool compounded = false;
};

/// Daily top-k long book, equal weight. Ties in score go to the
/// lexicographically smaller symbol. Held names without a return that day are
/// dropped and reported in `log`.
PnlSeries run_strategy(const std::vector<Prediction>& preds, const std::vector<ReturnRow>& returns,
                       const StrategyConfig& cfg, std::vector<std::string>* log = nullptr);

struct MetricsReport {
  double ic = 0;
  double pnl = 0, ar = 0, vol = 0;
  std::optional<double> sharpe;
  double mdd = 0;
  std::optional<double> calmar;
  double winr = 0;
  std::optional<double> pl_ratio;
  std::size_t n_days = 0;
};

/// AR = mean * days, VOL = sample std * sqrt(days), MDD = max_{i<=j} c_i - c_j.
/// Ratios with a zero denominator are left empty.
MetricsReport compute_metrics(const PnlSeries& pnl, double trading_days_per_year = 252.0);

std::string format_metrics_csv(const MetricsReport& m);
std::string format_ic_csv(const IcSeries& ic);
std::string render_pnl_svg(const PnlSeries& pnl, const std::string& title = "cumulative PnL");

}  // namespace tcgpn
