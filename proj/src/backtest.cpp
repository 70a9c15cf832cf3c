#include "tcgpn/backtest.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <map>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "tcgpn/csv.hpp"

namespace tcgpn {

namespace {

std::string fmt(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

std::string fmt_opt(const std::optional<double>& v) { return v ? fmt(*v) : ""; }

template <typename Row, typename Fn>
std::vector<Row> parse_rows(const std::string& text, const std::string& header, Fn make) {
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 1;
  if (!std::getline(in, line) || split_csv_line(line) != split_csv_line(header)) {
    throw std::invalid_argument("line 1: expected header '" + header + "'");
  }
  std::vector<Row> out;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    const auto cells = split_csv_line(line);
    if (cells.size() != 3) throw std::invalid_argument("line " + std::to_string(line_no) + ": expected 3 columns");
    Date d;
    try {
      d = Date::parse(cells[0]);
    } catch (const std::invalid_argument& e) {
      throw std::invalid_argument("line " + std::to_string(line_no) + ": " + e.what());
    }
    out.push_back(make(d, cells[1], parse_double(cells[2], line_no)));
  }
  return out;
}

std::vector<double> ranks(const std::vector<double>& v) {
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> r(v.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + j);
    for (std::size_t k = i; k <= j; ++k) r[idx[k]] = avg;
    i = j + 1;
  }
  return r;
}

}  // namespace

std::string format_predictions(const std::vector<Prediction>& preds) {
  std::string out = "date,symbol,score\n";
  for (const auto& p : preds) out += p.date.iso() + "," + p.symbol + "," + fmt(p.score) + "\n";
  return out;
}

std::vector<Prediction> parse_predictions(const std::string& text) {
  return parse_rows<Prediction>(text, "date,symbol,score", [](Date d, const std::string& s, double v) {
    return Prediction{d, s, v};
  });
}

std::string format_returns(const std::vector<ReturnRow>& rows) {
  std::string out = "date,symbol,return\n";
  for (const auto& r : rows) out += r.date.iso() + "," + r.symbol + "," + fmt(r.ret) + "\n";
  return out;
}

std::vector<ReturnRow> parse_returns(const std::string& text) {
  return parse_rows<ReturnRow>(text, "date,symbol,return", [](Date d, const std::string& s, double v) {
    return ReturnRow{d, s, v};
  });
}

std::vector<ReturnRow> panel_returns(const TimePanel& panel) {
  std::vector<ReturnRow> out;
  for (std::size_t d = 0; d < panel.n_dates(); ++d) {
    for (std::size_t i = 0; i < panel.n_nodes(); ++i) out.push_back({panel.dates[d], panel.node_ids[i], panel.target(i, d)});
  }
  return out;
}

std::optional<double> daily_ic(const std::vector<double>& pred, const std::vector<double>& realized, bool rank) {
  if (pred.size() != realized.size()) throw std::invalid_argument("daily_ic: length mismatch");
  const std::size_t n = pred.size();
  if (n < 2) return std::nullopt;
  const std::vector<double> a = rank ? ranks(pred) : pred;
  const std::vector<double> b = rank ? ranks(realized) : realized;
  const double ma = std::accumulate(a.begin(), a.end(), 0.0) / static_cast<double>(n);
  const double mb = std::accumulate(b.begin(), b.end(), 0.0) / static_cast<double>(n);
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < n; ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  if (saa <= 0 || sbb <= 0) return std::nullopt;
  return sab / std::sqrt(saa * sbb);
}

double IcSeries::mean() const {
  if (ic.empty()) return 0;
  return std::accumulate(ic.begin(), ic.end(), 0.0) / static_cast<double>(ic.size());
}

IcSeries ic_series(const std::vector<Prediction>& preds, const std::vector<ReturnRow>& returns, bool rank) {
  std::map<std::pair<Date, std::string>, double> ret;
  for (const auto& r : returns) ret[{r.date, r.symbol}] = r.ret;
  std::map<Date, std::pair<std::vector<double>, std::vector<double>>> by_date;
  for (const auto& p : preds) {
    auto it = ret.find({p.date, p.symbol});
    if (it == ret.end()) continue;
    auto& [a, b] = by_date[p.date];
    a.push_back(p.score);
    b.push_back(it->second);
  }
  IcSeries out;
  for (const auto& [date, ab] : by_date) {
    if (auto ic = daily_ic(ab.first, ab.second, rank)) {
      out.dates.push_back(date);
      out.ic.push_back(*ic);
    } else {
      ++out.skipped;
    }
  }
  return out;
}

PnlSeries run_strategy(const std::vector<Prediction>& preds, const std::vector<ReturnRow>& returns,
                       const StrategyConfig& cfg, std::vector<std::string>* log) {
  std::map<std::pair<Date, std::string>, double> ret;
  for (const auto& r : returns) ret[{r.date, r.symbol}] = r.ret;
  std::map<Date, std::vector<std::pair<double, std::string>>> book;
  for (const auto& p : preds) book[p.date].emplace_back(p.score, p.symbol);

  PnlSeries out;
  double level = 0;
  for (auto& [date, names] : book) {
    const std::size_t n = names.size();
    const std::size_t k = cfg.k == 0 ? std::max<std::size_t>(1, n / 10) : cfg.k;
    if (k > n) {
      throw std::invalid_argument("run_strategy: k=" + std::to_string(k) + " exceeds " + std::to_string(n) +
                                  " names on " + date.iso());
    }
    std::sort(names.begin(), names.end(), [](const auto& a, const auto& b) {
      return a.first != b.first ? a.first > b.first : a.second < b.second;
    });
    double sum = 0;
    std::size_t held = 0;
    for (std::size_t i = 0; i < k; ++i) {
      auto it = ret.find({date, names[i].second});
      if (it == ret.end()) {
        if (log) log->push_back(date.iso() + ": no return for " + names[i].second + ", dropped");
        continue;
      }
      sum += it->second;
      ++held;
    }
    if (held == 0) {
      if (log) log->push_back(date.iso() + ": no held name has a return, date skipped");
      continue;
    }
    const double r = sum / static_cast<double>(held);
    out.dates.push_back(date);
    out.daily_pnl.push_back(r);
    level = cfg.compounded ? (1.0 + level) * (1.0 + r) - 1.0 : level + r;
    out.cumulative.push_back(level);
  }
  return out;
}

MetricsReport compute_metrics(const PnlSeries& pnl, double trading_days_per_year) {
  const auto& r = pnl.daily_pnl;
  const std::size_t n = r.size();
  if (n < 2) throw std::invalid_argument("compute_metrics: need at least 2 days, got " + std::to_string(n));
  if (pnl.cumulative.size() != n) throw std::invalid_argument("compute_metrics: cumulative length mismatch");
  MetricsReport m;
  m.n_days = n;
  m.pnl = pnl.cumulative.back();
  const double mean = std::accumulate(r.begin(), r.end(), 0.0) / static_cast<double>(n);
  double ss = 0;
  const auto [lo, hi] = std::minmax_element(r.begin(), r.end());
  if (*lo != *hi) {
    for (double v : r) ss += (v - mean) * (v - mean);
  }
  const double sd = std::sqrt(ss / static_cast<double>(n - 1));
  m.ar = mean * trading_days_per_year;
  m.vol = sd * std::sqrt(trading_days_per_year);
  if (m.vol > 0) m.sharpe = m.ar / m.vol;

  double peak = pnl.cumulative.front();
  for (double c : pnl.cumulative) {
    peak = std::max(peak, c);
    m.mdd = std::max(m.mdd, peak - c);
  }
  if (m.mdd > 0) m.calmar = m.ar / m.mdd;

  double gain = 0, loss = 0;
  std::size_t wins = 0, losses = 0;
  for (double v : r) {
    if (v > 0) {
      gain += v;
      ++wins;
    } else if (v < 0) {
      loss += v;
      ++losses;
    }
  }
  m.winr = static_cast<double>(wins) / static_cast<double>(n);
  if (wins > 0 && losses > 0) {
    m.pl_ratio = (gain / static_cast<double>(wins)) / std::abs(loss / static_cast<double>(losses));
  }
  return m;
}

std::string format_metrics_csv(const MetricsReport& m) {
  return "ic,pnl,ar,vol,sharpe,mdd,calmar,winr,pl_ratio,n_days\n" + fmt(m.ic) + "," + fmt(m.pnl) + "," + fmt(m.ar) +
         "," + fmt(m.vol) + "," + fmt_opt(m.sharpe) + "," + fmt(m.mdd) + "," + fmt_opt(m.calmar) + "," + fmt(m.winr) +
         "," + fmt_opt(m.pl_ratio) + "," + std::to_string(m.n_days) + "\n";
}

std::string format_ic_csv(const IcSeries& ic) {
  std::string out = "date,ic\n";
  for (std::size_t i = 0; i < ic.ic.size(); ++i) out += ic.dates[i].iso() + "," + fmt(ic.ic[i]) + "\n";
  return out;
}

std::string render_pnl_svg(const PnlSeries& pnl, const std::string& title) {
  const double w = 800, h = 400, pad = 40;
  std::ostringstream os;
  os << std::setprecision(6);
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h << "\" viewBox=\"0 0 " << w
     << ' ' << h << "\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<text x=\"" << pad << "\" y=\"24\" font-family=\"sans-serif\" font-size=\"14\">" << title << "</text>\n";
  const auto& c = pnl.cumulative;
  if (!c.empty()) {
    double lo = std::min(0.0, *std::min_element(c.begin(), c.end()));
    double hi = std::max(0.0, *std::max_element(c.begin(), c.end()));
    if (hi == lo) hi = lo + 1;
    auto x = [&](std::size_t i) {
      return pad + (w - 2 * pad) * (c.size() == 1 ? 0.5 : static_cast<double>(i) / static_cast<double>(c.size() - 1));
    };
    auto y = [&](double v) { return h - pad - (h - 2 * pad) * (v - lo) / (hi - lo); };
    os << "<line x1=\"" << pad << "\" y1=\"" << y(0) << "\" x2=\"" << w - pad << "\" y2=\"" << y(0)
       << "\" stroke=\"#999\" stroke-dasharray=\"4 4\"/>\n";
    os << "<polyline fill=\"none\" stroke=\"#1f77b4\" stroke-width=\"1.5\" points=\"";
    for (std::size_t i = 0; i < c.size(); ++i) os << x(i) << ',' << y(c[i]) << ' ';
    os << "\"/>\n";
    os << "<text x=\"" << pad << "\" y=\"" << h - 12 << "\" font-family=\"sans-serif\" font-size=\"11\">"
       << pnl.dates.front().iso() << "</text>\n";
    os << "<text x=\"" << w - pad - 70 << "\" y=\"" << h - 12 << "\" font-family=\"sans-serif\" font-size=\"11\">"
       << pnl.dates.back().iso() << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

}  // namespace tcgpn
