#pragma once

#include <chrono>
#include <compare>
#include <string>
#include <string_view>
#include <vector>

#include "tcgpn/tensor.hpp"

namespace tcgpn {

/// Calendar date, ISO-8601 on the wire.
class Date {
 public:
  Date() = default;
  explicit Date(std::chrono::year_month_day ymd) : ymd_(ymd) {}
  Date(int y, unsigned m, unsigned d) : ymd_(std::chrono::year{y}, std::chrono::month{m}, std::chrono::day{d}) {}

  /// Parses YYYY-MM-DD; throws std::invalid_argument otherwise.
  static Date parse(std::string_view text);
  std::string iso() const;

  int year() const { return static_cast<int>(ymd_.year()); }
  std::chrono::sys_days days() const { return std::chrono::sys_days(ymd_); }
  Date plus_days(int n) const { return Date(std::chrono::year_month_day(days() + std::chrono::days(n))); }
  bool is_weekend() const;

  auto operator<=>(const Date& o) const { return days() <=> o.days(); }
  bool operator==(const Date& o) const { return days() == o.days(); }

 private:
  std::chrono::year_month_day ymd_{std::chrono::year{1970}, std::chrono::month{1}, std::chrono::day{1}};
};

/// Observations X (N x D x F) and targets Y (N x D) over a fixed node set.
///
/// targets[n, d] is the return realized over the step ending at dates[d]; a
/// window ending at date d is therefore supervised by targets[:, d + 1].
struct TimePanel {
  std::vector<std::string> node_ids;
  std::vector<Date> dates;
  std::vector<std::string> feature_names;
  Tensor<double> features;  // [N, D, F]
  Tensor<double> targets;   // [N, D]

  std::size_t n_nodes() const { return node_ids.size(); }
  std::size_t n_dates() const { return dates.size(); }
  std::size_t n_features() const { return feature_names.size(); }

  double feature(std::size_t n, std::size_t d, std::size_t f) const {
    return features[(n * n_dates() + d) * n_features() + f];
  }
  double target(std::size_t n, std::size_t d) const { return targets[n * n_dates() + d]; }

  /// Dates [begin, end) as a new panel.
  TimePanel slice_dates(std::size_t begin, std::size_t end) const;
  /// Rows for the given node indices, in that order.
  TimePanel select_nodes(const std::vector<std::size_t>& nodes) const;
  /// Throws if invariants (unique ids, increasing dates, finite values, shapes) fail.
  void validate() const;
};

}  // namespace tcgpn
