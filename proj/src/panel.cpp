#include "tcgpn/panel.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <set>
#include <stdexcept>

namespace tcgpn {

Date Date::parse(std::string_view text) {
  int y = 0;
  unsigned m = 0, d = 0;
  auto bad = [&] { return std::invalid_argument("invalid ISO-8601 date: '" + std::string(text) + "'"); };
  if (text.size() != 10 || text[4] != '-' || text[7] != '-') throw bad();
  auto num = [&](std::size_t pos, std::size_t len, auto& out) {
    auto [p, ec] = std::from_chars(text.data() + pos, text.data() + pos + len, out);
    if (ec != std::errc{} || p != text.data() + pos + len) throw bad();
  };
  num(0, 4, y);
  num(5, 2, m);
  num(8, 2, d);
  Date out(y, m, d);
  if (!out.ymd_.ok()) throw bad();
  return out;
}

std::string Date::iso() const {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%04d-%02u-%02u", static_cast<int>(ymd_.year()),
                static_cast<unsigned>(ymd_.month()), static_cast<unsigned>(ymd_.day()));
  return buf;
}

bool Date::is_weekend() const {
  const std::chrono::weekday wd{days()};
  return wd == std::chrono::Saturday || wd == std::chrono::Sunday;
}

TimePanel TimePanel::slice_dates(std::size_t begin, std::size_t end) const {
  if (begin >= end || end > n_dates()) throw std::out_of_range("slice_dates: bad range");
  TimePanel out;
  out.node_ids = node_ids;
  out.feature_names = feature_names;
  out.dates.assign(dates.begin() + static_cast<std::ptrdiff_t>(begin), dates.begin() + static_cast<std::ptrdiff_t>(end));
  const std::size_t n = n_nodes(), f = n_features(), len = end - begin;
  out.features = Tensor<double>({n, len, f});
  out.targets = Tensor<double>({n, len});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t d = 0; d < len; ++d) {
      for (std::size_t k = 0; k < f; ++k) out.features[(i * len + d) * f + k] = feature(i, begin + d, k);
      out.targets[i * len + d] = target(i, begin + d);
    }
  }
  return out;
}

TimePanel TimePanel::select_nodes(const std::vector<std::size_t>& nodes) const {
  TimePanel out;
  out.dates = dates;
  out.feature_names = feature_names;
  const std::size_t n = nodes.size(), dn = n_dates(), f = n_features();
  out.features = Tensor<double>({n, dn, f});
  out.targets = Tensor<double>({n, dn});
  for (std::size_t r = 0; r < n; ++r) {
    const std::size_t src = nodes.at(r);
    if (src >= n_nodes()) throw std::out_of_range("select_nodes: node index out of range");
    out.node_ids.push_back(node_ids[src]);
    std::copy_n(features.data() + src * dn * f, dn * f, out.features.data() + r * dn * f);
    std::copy_n(targets.data() + src * dn, dn, out.targets.data() + r * dn);
  }
  return out;
}

void TimePanel::validate() const {
  std::set<std::string> seen(node_ids.begin(), node_ids.end());
  if (seen.size() != node_ids.size()) throw std::invalid_argument("panel has duplicate node ids");
  for (std::size_t d = 1; d < dates.size(); ++d) {
    if (!(dates[d - 1] < dates[d])) throw std::invalid_argument("panel dates are not strictly increasing");
  }
  if (features.shape() != Shape{n_nodes(), n_dates(), n_features()}) {
    throw ShapeError("panel features shape " + shape_str(features.shape()) + " inconsistent with ids/dates/features");
  }
  if (targets.shape() != Shape{n_nodes(), n_dates()}) {
    throw ShapeError("panel targets shape " + shape_str(targets.shape()) + " inconsistent with ids/dates");
  }
  for (double v : features.storage()) {
    if (!std::isfinite(v)) throw std::invalid_argument("panel features contain non-finite values");
  }
  for (double v : targets.storage()) {
    if (!std::isfinite(v)) throw std::invalid_argument("panel targets contain non-finite values");
  }
}

}  // namespace tcgpn
