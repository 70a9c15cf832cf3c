#include "tcgpn/data.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>

#include "tcgpn/csv.hpp"
#include "tcgpn/rng.hpp"

namespace tcgpn {

namespace {

bool is_missing(const std::string& cell) {
  return cell.empty() || cell == "nan" || cell == "NaN" || cell == "NA" || cell == "null";
}

std::string line_error(std::size_t line_no, const std::string& msg) {
  return "panel line " + std::to_string(line_no) + ": " + msg;
}

}  // namespace

PanelLoad parse_panel(const std::string& text, const PanelSchema& schema) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw std::invalid_argument("panel file is empty");
  const auto header = split_csv_line(line);
  if (header.size() < 4 || header[0] != "date" || header[1] != "symbol" || header.back() != "target") {
    throw std::invalid_argument(line_error(1, "header must be date,symbol,<features...>,target"));
  }
  const std::vector<std::string> file_features(header.begin() + 2, header.end() - 1);
  if (!schema.features.empty()) {
    const std::set<std::string> wanted(schema.features.begin(), schema.features.end());
    for (const auto& c : file_features) {
      if (!wanted.count(c)) throw std::invalid_argument(line_error(1, "unknown column '" + c + "'"));
    }
    for (const auto& c : schema.features) {
      if (std::find(file_features.begin(), file_features.end(), c) == file_features.end()) {
        throw std::invalid_argument(line_error(1, "missing column '" + c + "'"));
      }
    }
  }
  const std::size_t nf = file_features.size();

  // symbol -> date -> (values..., target), missing cells as nullopt
  using Row = std::vector<std::optional<double>>;
  std::map<std::string, std::map<Date, std::pair<Row, std::size_t>>> rows;
  std::vector<std::string> symbol_order;
  std::set<Date> all_dates;
  std::optional<Date> prev;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    const auto cells = split_csv_line(line);
    if (cells.size() != header.size()) {
      throw std::invalid_argument(line_error(line_no, "expected " + std::to_string(header.size()) + " fields, got " +
                                                          std::to_string(cells.size())));
    }
    Date date;
    try {
      date = Date::parse(cells[0]);
    } catch (const std::invalid_argument& e) {
      throw std::invalid_argument(line_error(line_no, e.what()));
    }
    if (prev && date < *prev) {
      throw std::invalid_argument(line_error(line_no, "date " + date.iso() + " is earlier than preceding " + prev->iso()));
    }
    prev = date;
    const std::string& sym = cells[1];
    Row row(nf + 1);
    for (std::size_t k = 0; k <= nf; ++k) {
      const std::string& cell = cells[2 + k];
      if (is_missing(cell)) {
        if (schema.missing == MissingPolicy::Intersect) {
          throw std::invalid_argument(line_error(line_no, "missing value in column '" + header[2 + k] + "'"));
        }
        continue;
      }
      row[k] = parse_double(cell, line_no);
    }
    auto& per_symbol = rows[sym];
    if (per_symbol.empty()) symbol_order.push_back(sym);
    if (!per_symbol.emplace(date, std::make_pair(std::move(row), line_no)).second) {
      throw std::invalid_argument(line_error(line_no, "duplicate row for " + sym + " on " + date.iso()));
    }
    all_dates.insert(date);
  }

  std::vector<std::string> nodes = schema.nodes.empty() ? symbol_order : schema.nodes;
  std::sort(nodes.begin(), nodes.end());
  for (const auto& n : nodes) {
    if (!rows.count(n)) throw std::invalid_argument("panel has no rows for requested node '" + n + "'");
  }
  if (std::set<std::string>(nodes.begin(), nodes.end()).size() != nodes.size()) {
    throw std::invalid_argument("duplicate node in schema");
  }

  PanelLoad out;
  std::vector<Date> kept_dates;
  std::vector<std::vector<Row>> values(nodes.size());  // [node][date]
  std::vector<Row> last(nodes.size(), Row(nf + 1));
  for (const Date& d : all_dates) {
    bool usable = true;
    std::vector<Row> at(nodes.size());
    std::vector<std::string> filled;
    for (std::size_t i = 0; i < nodes.size() && usable; ++i) {
      const auto& sym_rows = rows.at(nodes[i]);
      auto it = sym_rows.find(d);
      Row row = it != sym_rows.end() ? it->second.first : Row(nf + 1);
      if (it == sym_rows.end() && schema.missing == MissingPolicy::Intersect) {
        usable = false;
        out.report.push_back("dropped " + d.iso() + ": no row for " + nodes[i]);
        break;
      }
      for (std::size_t k = 0; k <= nf; ++k) {
        if (row[k]) continue;
        if (!last[i][k]) {
          usable = false;
          out.report.push_back("dropped " + d.iso() + ": nothing to forward-fill for " + nodes[i]);
          break;
        }
        row[k] = last[i][k];
        if (filled.empty() || filled.back() != nodes[i]) filled.push_back(nodes[i]);
      }
      at[i] = std::move(row);
    }
    // Forward-fill memory advances with every observed row, even on dropped dates.
    for (std::size_t i = 0; i < nodes.size(); ++i) {
      const auto& sym_rows = rows.at(nodes[i]);
      auto it = sym_rows.find(d);
      if (it == sym_rows.end()) continue;
      for (std::size_t k = 0; k <= nf; ++k) {
        if (it->second.first[k]) last[i][k] = it->second.first[k];
      }
    }
    if (!usable) continue;
    for (const auto& s : filled) out.report.push_back("forward-filled " + d.iso() + " for " + s);
    kept_dates.push_back(d);
    for (std::size_t i = 0; i < nodes.size(); ++i) values[i].push_back(std::move(at[i]));
  }
  if (kept_dates.empty()) throw std::invalid_argument("panel has no date on which every node is present");

  TimePanel& p = out.panel;
  p.node_ids = nodes;
  p.dates = kept_dates;
  p.feature_names = file_features;
  const std::size_t n = nodes.size(), dn = kept_dates.size();
  p.features = Tensor<double>({n, dn, nf});
  p.targets = Tensor<double>({n, dn});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t d = 0; d < dn; ++d) {
      for (std::size_t k = 0; k < nf; ++k) p.features[(i * dn + d) * nf + k] = *values[i][d][k];
      p.targets[i * dn + d] = *values[i][d][nf];
    }
  }
  p.validate();
  return out;
}

PanelLoad load_panel(const std::string& path, const PanelSchema& schema) {
  return parse_panel(read_text_file(path), schema);
}

std::string format_panel(const TimePanel& panel) {
  std::ostringstream out;
  out.precision(17);
  out << "date,symbol";
  for (const auto& f : panel.feature_names) out << "," << f;
  out << ",target\n";
  for (std::size_t d = 0; d < panel.n_dates(); ++d) {
    const std::string date = panel.dates[d].iso();
    for (std::size_t i = 0; i < panel.n_nodes(); ++i) {
      out << date << "," << panel.node_ids[i];
      for (std::size_t k = 0; k < panel.n_features(); ++k) out << "," << panel.feature(i, d, k);
      out << "," << panel.target(i, d) << "\n";
    }
  }
  return out.str();
}

void save_panel(const TimePanel& panel, const std::string& path) { write_text_file(path, format_panel(panel)); }

std::vector<WindowSample> window_samples(const TimePanel& panel, std::size_t T, std::size_t stride) {
  if (T == 0 || stride == 0) throw std::invalid_argument("window length and stride must be positive");
  const std::size_t dn = panel.n_dates();
  std::vector<WindowSample> out;
  if (dn < 1 || T > dn - 1) {
    std::cerr << "warning: window length " << T << " needs at least " << T + 1 << " dates, panel has " << dn << "\n";
    return out;
  }
  const std::size_t n = panel.n_nodes(), nf = panel.n_features();
  for (std::size_t end = T - 1; end + 1 < dn; end += stride) {
    WindowSample w;
    w.x = Tensor<double>({n, T, nf});
    for (std::size_t i = 0; i < n; ++i) {
      const double* src = panel.features.data() + (i * dn + (end + 1 - T)) * nf;
      std::copy_n(src, T * nf, w.x.data() + i * T * nf);
      w.target.push_back(panel.target(i, end + 1));
      w.last_target.push_back(panel.target(i, end));
    }
    w.end_index = end;
    w.end_date = panel.dates[end];
    w.target_date = panel.dates[end + 1];
    out.push_back(std::move(w));
  }
  return out;
}

PanelSplit split_by_year(const TimePanel& panel, int train_years, int val_years, int test_years) {
  if (train_years <= 0 || val_years <= 0 || test_years <= 0) throw std::invalid_argument("split years must be positive");
  std::vector<int> years;
  for (const Date& d : panel.dates) {
    if (years.empty() || years.back() != d.year()) years.push_back(d.year());
  }
  const auto need = static_cast<std::size_t>(train_years + val_years + test_years);
  if (years.size() < need) {
    throw std::invalid_argument("panel spans " + std::to_string(years.size()) + " calendar years, split needs " +
                                std::to_string(need));
  }
  auto first_index_of_year = [&](int y) {
    return static_cast<std::size_t>(std::find_if(panel.dates.begin(), panel.dates.end(), [&](const Date& d) { return d.year() >= y; }) -
                                    panel.dates.begin());
  };
  const std::size_t b1 = first_index_of_year(years[static_cast<std::size_t>(train_years)]);
  const std::size_t b2 = first_index_of_year(years[static_cast<std::size_t>(train_years + val_years)]);
  const std::size_t b3 = need < years.size() ? first_index_of_year(years[need]) : panel.n_dates();
  return {panel.slice_dates(0, b1), panel.slice_dates(b1, b2), panel.slice_dates(b2, b3)};
}

PanelSplit split_by_fraction(const TimePanel& panel, double train_frac, double val_frac) {
  if (!(train_frac > 0 && val_frac > 0 && train_frac + val_frac < 1)) {
    throw std::invalid_argument("split fractions must be positive and sum below 1");
  }
  const std::size_t dn = panel.n_dates();
  const auto b1 = static_cast<std::size_t>(std::floor(train_frac * static_cast<double>(dn)));
  const auto b2 = static_cast<std::size_t>(std::floor((train_frac + val_frac) * static_cast<double>(dn)));
  if (b1 == 0 || b2 <= b1 || b2 >= dn) throw std::invalid_argument("panel too short for the requested split");
  return {panel.slice_dates(0, b1), panel.slice_dates(b1, b2), panel.slice_dates(b2, dn)};
}

Standardizer Standardizer::fit(const TimePanel& panel) {
  Standardizer s;
  const std::size_t nf = panel.n_features();
  const std::size_t count = panel.n_nodes() * panel.n_dates();
  s.mean_.assign(nf, 0.0);
  s.std_.assign(nf, 0.0);
  for (std::size_t r = 0; r < count; ++r) {
    for (std::size_t k = 0; k < nf; ++k) s.mean_[k] += panel.features[r * nf + k];
  }
  for (double& m : s.mean_) m /= static_cast<double>(count);
  for (std::size_t r = 0; r < count; ++r) {
    for (std::size_t k = 0; k < nf; ++k) {
      const double d = panel.features[r * nf + k] - s.mean_[k];
      s.std_[k] += d * d;
    }
  }
  for (double& v : s.std_) {
    v = std::sqrt(v / static_cast<double>(count));
    if (!(v > 0)) v = 1.0;
  }
  return s;
}

TimePanel Standardizer::apply(const TimePanel& panel) const {
  if (panel.n_features() != mean_.size()) throw std::invalid_argument("standardizer feature count mismatch");
  TimePanel out = panel;
  const std::size_t nf = mean_.size();
  for (std::size_t r = 0; r < out.features.size() / nf; ++r) {
    for (std::size_t k = 0; k < nf; ++k) {
      double& v = out.features[r * nf + k];
      v = (v - mean_[k]) / std_[k];
    }
  }
  return out;
}

void SyntheticSpec::validate(std::size_t window) const {
  if (n_clusters == 0 || nodes_per_cluster == 0) throw std::invalid_argument("synthetic: empty clusters");
  if (lag == 0 || lag >= window) throw std::invalid_argument("synthetic: lag must be in [1, window)");
  if (!(noise_std >= 0)) throw std::invalid_argument("synthetic: noise_std must be non-negative");
  if (!(std::abs(ar_coef) < 1)) throw std::invalid_argument("synthetic: |ar_coef| must be below 1");
  if (length < 2) throw std::invalid_argument("synthetic: length must be at least 2");
}

SyntheticData gen_synthetic(const SyntheticSpec& spec) {
  if (spec.n_clusters == 0 || spec.nodes_per_cluster == 0 || spec.lag == 0 || !(spec.noise_std >= 0) ||
      !(std::abs(spec.ar_coef) < 1) || spec.length < 2) {
    throw std::invalid_argument("invalid synthetic spec");
  }
  constexpr std::size_t kRolling = 5;
  constexpr std::size_t kBurnIn = 50;
  const std::size_t dn = spec.length;
  const std::size_t pre = kBurnIn + kRolling + spec.lag;  // history before the first emitted date
  const std::size_t total = pre + dn;
  const std::size_t n = spec.n_clusters * spec.nodes_per_cluster;

  Rng rng(spec.seed);
  std::normal_distribution<double> innovation(0.0, 1.0);
  std::normal_distribution<double> noise(0.0, spec.noise_std > 0 ? spec.noise_std : 1.0);

  std::vector<std::vector<double>> series(n, std::vector<double>(total, 0.0));
  SyntheticData out;
  for (std::size_t c = 0; c < spec.n_clusters; ++c) {
    const std::size_t leader = c * spec.nodes_per_cluster;
    out.leaders.push_back(leader);
    auto& x = series[leader];
    x[0] = innovation(rng);
    for (std::size_t t = 1; t < total; ++t) x[t] = spec.ar_coef * x[t - 1] + innovation(rng);
    for (std::size_t f = 1; f < spec.nodes_per_cluster; ++f) {
      auto& y = series[leader + f];
      for (std::size_t t = 0; t < total; ++t) {
        const double base = t >= spec.lag ? x[t - spec.lag] : 0.0;
        y[t] = base + (spec.noise_std > 0 ? noise(rng) : 0.0);
      }
    }
  }

  TimePanel& p = out.panel;
  p.feature_names = {"value", "ma5", "diff"};
  for (std::size_t c = 0; c < spec.n_clusters; ++c) {
    for (std::size_t f = 0; f < spec.nodes_per_cluster; ++f) {
      char buf[32];
      std::snprintf(buf, sizeof(buf), f == 0 ? "c%02zu_lead" : "c%02zu_f%02zu", c, f);
      p.node_ids.emplace_back(buf);
    }
  }
  Date d(2010, 1, 4);
  while (p.dates.size() < dn) {
    if (!d.is_weekend()) p.dates.push_back(d);
    d = d.plus_days(1);
  }
  p.features = Tensor<double>({n, dn, 3});
  p.targets = Tensor<double>({n, dn});
  for (std::size_t i = 0; i < n; ++i) {
    const auto& s = series[i];
    for (std::size_t k = 0; k < dn; ++k) {
      const std::size_t t = pre + k;
      double ma = 0;
      for (std::size_t r = 0; r < kRolling; ++r) ma += s[t - r];
      double* row = p.features.data() + (i * dn + k) * 3;
      row[0] = s[t];
      row[1] = ma / kRolling;
      row[2] = s[t] - s[t - 1];
      p.targets[i * dn + k] = s[t] - s[t - 1];
    }
  }

  CorrelationGraph& g = out.truth;
  g.node_ids = p.node_ids;
  g.directed = false;
  g.weights = Matrix::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (i != j && i / spec.nodes_per_cluster == j / spec.nodes_per_cluster) {
        g.weights(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = 1.0;
      }
    }
  }
  return out;
}

}  // namespace tcgpn
