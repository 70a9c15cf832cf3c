#include <gtest/gtest.h>

#include <cmath>

#include "tcgpn/backtest.hpp"
#include "tcgpn/data.hpp"

using namespace tcgpn;

namespace {

std::string error_of(const std::string& csv) {
  try {
    parse_panel(csv);
  } catch (const std::invalid_argument& e) {
    return e.what();
  }
  return "";
}

TimePanel daily_panel(std::size_t n_dates, Date start = Date(2001, 1, 1), int step_days = 1) {
  TimePanel p;
  p.node_ids = {"A", "B"};
  p.feature_names = {"f"};
  for (std::size_t k = 0; k < n_dates; ++k) p.dates.push_back(start.plus_days(static_cast<int>(k) * step_days));
  p.features = Tensor<double>({2, n_dates, 1});
  p.targets = Tensor<double>({2, n_dates});
  for (std::size_t i = 0; i < p.features.size(); ++i) p.features[i] = static_cast<double>(i);
  for (std::size_t i = 0; i < p.targets.size(); ++i) p.targets[i] = static_cast<double>(i) * 0.5;
  return p;
}

}  // namespace

TEST(LoadPanel, ShapesFromSmallCsv) {
  const auto load = parse_panel(
      "date,symbol,f1,target\n"
      "2020-01-01,A,1,0.1\n2020-01-01,B,2,0.2\n"
      "2020-01-02,A,3,0.3\n2020-01-02,B,4,0.4\n"
      "2020-01-03,A,5,0.5\n2020-01-03,B,6,0.6\n");
  const TimePanel& p = load.panel;
  EXPECT_EQ(p.n_nodes(), 2u);
  EXPECT_EQ(p.n_dates(), 3u);
  EXPECT_EQ(p.n_features(), 1u);
  EXPECT_EQ(p.features.shape(), (Shape{2, 3, 1}));
  EXPECT_DOUBLE_EQ(p.feature(1, 2, 0), 6);
  EXPECT_DOUBLE_EQ(p.target(0, 1), 0.3);
  EXPECT_TRUE(load.report.empty());
}

TEST(LoadPanel, DateGapDropsTheDateForEveryone) {
  const auto load = parse_panel(
      "date,symbol,f1,target\n"
      "2020-01-01,A,1,0\n2020-01-01,B,1,0\n"
      "2020-01-02,A,1,0\n"
      "2020-01-03,A,1,0\n2020-01-03,B,1,0\n");
  EXPECT_EQ(load.panel.n_dates(), 2u);
  EXPECT_EQ(load.panel.dates[1], Date(2020, 1, 3));
  ASSERT_EQ(load.report.size(), 1u);
  EXPECT_NE(load.report[0].find("2020-01-02"), std::string::npos);
}

TEST(LoadPanel, ForwardFillKeepsTheDate) {
  PanelSchema schema;
  schema.missing = MissingPolicy::ForwardFill;
  const auto load = parse_panel(
      "date,symbol,f1,target\n"
      "2020-01-01,A,1,0\n2020-01-01,B,7,0\n"
      "2020-01-02,A,2,0\n"
      "2020-01-03,A,3,0\n2020-01-03,B,9,0\n",
      schema);
  EXPECT_EQ(load.panel.n_dates(), 3u);
  EXPECT_DOUBLE_EQ(load.panel.feature(1, 1, 0), 7);
  EXPECT_EQ(load.report.size(), 1u);
}

TEST(LoadPanel, FortyFiveFeatureColumns) {
  std::string header = "date,symbol";
  std::string row1 = "2020-01-01,A", row2 = "2020-01-01,B";
  for (int f = 0; f < 45; ++f) {
    header += ",x" + std::to_string(f);
    row1 += "," + std::to_string(f);
    row2 += "," + std::to_string(-f);
  }
  const auto load = parse_panel(header + ",target\n" + row1 + ",0\n" + row2 + ",1\n");
  EXPECT_EQ(load.panel.n_features(), 45u);
}

TEST(LoadPanel, ErrorsCarryLineNumbers) {
  EXPECT_NE(error_of("date,symbol,f1,target\n2020-01-01,A,abc,0\n").find("line 2"), std::string::npos);
  EXPECT_NE(error_of("date,symbol,f1,target\n2020-01-02,A,1,0\n2020-01-01,A,1,0\n").find("line 3"), std::string::npos);
  PanelSchema schema;
  schema.features = {"f1"};
  try {
    parse_panel("date,symbol,f1,zz,target\n2020-01-01,A,1,2,0\n", schema);
    FAIL();
  } catch (const std::invalid_argument& e) {
    EXPECT_NE(std::string(e.what()).find("unknown column"), std::string::npos);
  }
}

TEST(LoadPanel, RoundTripThroughCsv) {
  const TimePanel p = daily_panel(4);
  const TimePanel q = parse_panel(format_panel(p)).panel;
  EXPECT_EQ(q.node_ids, p.node_ids);
  EXPECT_EQ(q.dates, p.dates);
  for (std::size_t i = 0; i < p.features.size(); ++i) EXPECT_DOUBLE_EQ(q.features[i], p.features[i]);
  for (std::size_t i = 0; i < p.targets.size(); ++i) EXPECT_DOUBLE_EQ(q.targets[i], p.targets[i]);
}

TEST(Windows, Counts) {
  EXPECT_EQ(window_samples(daily_panel(32), 30).size(), 2u);
  EXPECT_EQ(window_samples(daily_panel(31), 30).size(), 1u);
  EXPECT_EQ(window_samples(daily_panel(30), 30).size(), 0u);
  EXPECT_EQ(window_samples(daily_panel(40), 30, 3).size(), 4u);  // floor((40-30-1)/3)+1
}

TEST(Windows, LastTargetIsFinalDateAndNoLookahead) {
  const TimePanel p = daily_panel(45);
  const auto ws = window_samples(p, 10, 2);
  EXPECT_EQ(window_samples(p, 10, 1).back().target_date, p.dates.back());
  for (const auto& w : ws) {
    EXPECT_LT(w.end_date, w.target_date);
    EXPECT_EQ(w.x.shape(), (Shape{2, 10, 1}));
    const std::size_t first = w.end_index + 1 - 10;
    EXPECT_DOUBLE_EQ(w.x[0], p.feature(0, first, 0));
    EXPECT_DOUBLE_EQ(w.target[1], p.target(1, w.end_index + 1));
    EXPECT_DOUBLE_EQ(w.last_target[1], p.target(1, w.end_index));
  }
}

TEST(Split, TwelveYearsTenOneOne) {
  const TimePanel p = daily_panel(12 * 365 + 3, Date(2000, 1, 1));
  const PanelSplit s = split_by_year(p, 10, 1, 1);
  EXPECT_EQ(s.train.dates.front().year(), 2000);
  EXPECT_EQ(s.train.dates.back().year(), 2009);
  EXPECT_EQ(s.val.dates.front().year(), 2010);
  EXPECT_EQ(s.val.dates.back().year(), 2010);
  EXPECT_EQ(s.test.dates.front().year(), 2011);
  EXPECT_LT(s.train.dates.back(), s.val.dates.front());
  EXPECT_LT(s.val.dates.back(), s.test.dates.front());
}

TEST(Split, ThreeYearsOneOneOne) {
  const PanelSplit s = split_by_year(daily_panel(3 * 365 + 1, Date(2015, 1, 1)), 1, 1, 1);
  EXPECT_EQ(s.train.dates.back().year(), 2015);
  EXPECT_EQ(s.val.dates.front().year(), 2016);
  EXPECT_EQ(s.test.dates.back().year(), 2017);
  EXPECT_THROW(split_by_year(daily_panel(400, Date(2015, 1, 1)), 1, 1, 1), std::invalid_argument);
}

TEST(Split, WindowsNeverStraddleBoundaries) {
  const TimePanel p = daily_panel(200);
  const PanelSplit s = split_by_fraction(p, 0.6, 0.2);
  for (const auto* part : {&s.train, &s.val, &s.test}) {
    for (const auto& w : window_samples(*part, 10)) {
      EXPECT_GE(w.end_date.plus_days(-9), part->dates.front());
      EXPECT_LE(w.target_date, part->dates.back());
    }
  }
}

TEST(Synthetic, NoiseFreeFollowersCopyTheLeader) {
  SyntheticSpec spec;
  spec.lag = 2;
  spec.seed = 3;
  const SyntheticData d = gen_synthetic(spec);
  const TimePanel& p = d.panel;
  for (std::size_t c = 0; c < spec.n_clusters; ++c) {
    const std::size_t lead = d.leaders[c];
    for (std::size_t f = 1; f < spec.nodes_per_cluster; ++f) {
      for (std::size_t k = spec.lag; k < p.n_dates(); ++k) {
        ASSERT_EQ(p.feature(lead + f, k, 0), p.feature(lead, k - spec.lag, 0));
      }
    }
  }
}

TEST(Synthetic, TruthGraphIsBlockDiagonal) {
  const SyntheticData d = gen_synthetic(SyntheticSpec{});
  for (std::size_t i = 0; i < 20; ++i) {
    for (std::size_t j = 0; j < 20; ++j) {
      const double expected = (i / 5 == j / 5 && i != j) ? 1.0 : 0.0;
      EXPECT_EQ(d.truth.weights(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)), expected);
    }
  }
}

TEST(Synthetic, LeaderOracleHasPerfectFollowerCorrelation) {
  SyntheticSpec spec;
  spec.seed = 9;
  const SyntheticData d = gen_synthetic(spec);
  const TimePanel& p = d.panel;
  for (std::size_t k = 1; k + 1 < p.n_dates(); ++k) {
    std::vector<double> pred, real;
    for (std::size_t c = 0; c < spec.n_clusters; ++c) {
      for (std::size_t f = 1; f < spec.nodes_per_cluster; ++f) {
        pred.push_back(p.target(d.leaders[c], k));
        real.push_back(p.target(d.leaders[c] + f, k + 1));
      }
    }
    const auto ic = daily_ic(pred, real);
    ASSERT_TRUE(ic.has_value());
    EXPECT_NEAR(*ic, 1.0, 1e-12);
  }
}

TEST(Synthetic, Reproducible) {
  SyntheticSpec spec;
  spec.noise_std = 0.3;
  spec.seed = 4;
  const auto a = gen_synthetic(spec), b = gen_synthetic(spec);
  for (std::size_t i = 0; i < a.panel.features.size(); ++i) ASSERT_EQ(a.panel.features[i], b.panel.features[i]);
  spec.seed = 5;
  const auto c = gen_synthetic(spec);
  EXPECT_NE(a.panel.features[0], c.panel.features[0]);
}

TEST(Standardizer, UsesTrainingStatisticsOnly) {
  const TimePanel p = daily_panel(20);
  const PanelSplit s = split_by_fraction(p, 0.5, 0.25);
  const Standardizer st = Standardizer::fit(s.train);
  const TimePanel z = st.apply(s.train);
  double mean = 0;
  for (std::size_t i = 0; i < z.features.size(); ++i) mean += z.features[i];
  EXPECT_NEAR(mean, 0.0, 1e-9);
  const TimePanel v = st.apply(s.val);
  EXPECT_DOUBLE_EQ(v.features[0], (s.val.features[0] - st.mean()[0]) / st.stddev()[0]);
}
