#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <map>
#include <string>

#include "tcgpn/checks.hpp"
#include "tcgpn/pipeline.hpp"
#include "tcgpn/rng.hpp"

namespace py = pybind11;
using namespace tcgpn;

namespace {

using ConfigDict = std::map<std::string, std::string>;

RunConfig config_from(const ConfigDict& overrides) {
  RunConfig cfg;
  cfg.apply(KeyValues(overrides.begin(), overrides.end()));
  cfg.validate();
  return cfg;
}

std::string config_text(const RunConfig& cfg) { return format_key_values(cfg.to_kv()); }

template <typename T>
py::array_t<T> to_numpy(const Tensor<T>& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  py::array_t<T> out(shape);
  std::copy_n(t.data(), t.size(), out.mutable_data());
  return out;
}

py::array_t<double> matrix_to_numpy(const Matrix& m) {
  py::array_t<double> out({m.rows(), m.cols()});
  auto r = out.mutable_unchecked<2>();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) r(i, j) = m(i, j);
  }
  return out;
}

/// Parameters together with the configuration they were trained under.
struct Model {
  ParamStore<float> params;
  RunConfig config;

  py::bytes to_bytes() const { return py::bytes(encode_checkpoint(params, config_text(config))); }

  static Model from_bytes(const py::bytes& data) {
    Checkpoint ckpt = decode_checkpoint(std::string(data));
    RunConfig cfg = RunConfig::from_kv(parse_key_values(ckpt.config_text));
    validate_checkpoint(ckpt, cfg.model);
    return {std::move(ckpt.params), cfg};
  }
};

py::list log_rows(const std::vector<LogRow>& rows) {
  py::list out;
  for (const auto& r : rows) {
    py::dict d;
    d["phase"] = r.phase;
    d["epoch"] = r.epoch;
    d["l_t"] = r.loss.l_t;
    d["l_g"] = r.loss.l_g;
    d["l_pre"] = r.loss.l_pre;
    d["l_mse"] = r.loss.l_mse;
    d["l_pearson"] = r.loss.l_pearson;
    d["l_fine"] = r.loss.l_fine;
    d["ic"] = r.ic;
    out.append(d);
  }
  return out;
}

py::dict metrics_dict(const MetricsReport& m) {
  py::dict d;
  d["ic"] = m.ic;
  d["pnl"] = m.pnl;
  d["ar"] = m.ar;
  d["vol"] = m.vol;
  d["sharpe"] = m.sharpe;
  d["mdd"] = m.mdd;
  d["calmar"] = m.calmar;
  d["winr"] = m.winr;
  d["pl_ratio"] = m.pl_ratio;
  d["n_days"] = m.n_days;
  return d;
}

using Row = std::tuple<std::string, std::string, double>;

std::vector<Prediction> to_predictions(const std::vector<Row>& rows) {
  std::vector<Prediction> out;
  for (const auto& [date, sym, v] : rows) out.push_back({Date::parse(date), sym, v});
  return out;
}

std::vector<ReturnRow> to_returns(const std::vector<Row>& rows) {
  std::vector<ReturnRow> out;
  for (const auto& [date, sym, v] : rows) out.push_back({Date::parse(date), sym, v});
  return out;
}

}  // namespace

PYBIND11_MODULE(_tcgpn, m) {
  m.doc() = "Graph-based masked pretraining for multivariate return forecasting";
  py::register_exception<CheckpointError>(m, "CheckpointError");
  py::register_exception<TrainingError>(m, "TrainingError");

  m.def("default_config", [] {
    const auto kv = RunConfig{}.to_kv();
    return ConfigDict(kv.begin(), kv.end());
  }, "Every configuration key with its default value.");
  m.def("resolve_config", [](const ConfigDict& overrides) {
    const auto kv = config_from(overrides).to_kv();
    return ConfigDict(kv.begin(), kv.end());
  }, py::arg("overrides") = ConfigDict{}, "Defaults with `overrides` applied; raises ValueError on bad keys or values.");

  py::class_<Dataset>(m, "Dataset")
      .def_property_readonly("node_ids", [](const Dataset& d) { return d.panel.node_ids; })
      .def_property_readonly("dates", [](const Dataset& d) {
        std::vector<std::string> out;
        for (const Date& x : d.panel.dates) out.push_back(x.iso());
        return out;
      })
      .def_property_readonly("features", [](const Dataset& d) { return to_numpy(d.panel.features); })
      .def_property_readonly("targets", [](const Dataset& d) { return to_numpy(d.panel.targets); })
      .def_property_readonly("graph", [](const Dataset& d) { return matrix_to_numpy(d.graph.weights); })
      .def("n_windows", [](const Dataset& d, const std::string& split) { return split_windows(d, split).size(); },
           py::arg("split"))
      .def_property_readonly("returns", [](const Dataset& d) {
        std::vector<Row> out;
        for (const auto& r : d.returns) out.emplace_back(r.date.iso(), r.symbol, r.ret);
        return out;
      });

  m.def("load_dataset", [](const ConfigDict& overrides) { return prepare_dataset(config_from(overrides)); },
        py::arg("config") = ConfigDict{}, "Panel, graph and split windows described by the configuration.");

  py::class_<Model>(m, "Model")
      .def_property_readonly("config", [](const Model& mo) {
        const auto kv = mo.config.to_kv();
        return ConfigDict(kv.begin(), kv.end());
      })
      .def_property_readonly("paths", [](const Model& mo) { return mo.params.paths(); })
      .def("param", [](const Model& mo, const std::string& path) { return to_numpy(mo.params.get(path)); })
      .def("to_bytes", &Model::to_bytes)
      .def_static("from_bytes", &Model::from_bytes);

  m.def("init_model", [](const ConfigDict& overrides) {
    const RunConfig cfg = config_from(overrides);
    return Model{init_params<float>(cfg.model, mix_seed({cfg.train.seed, 0x1417})), cfg};
  }, py::arg("config") = ConfigDict{});

  m.def("pretrain", [](const Dataset& data, const ConfigDict& overrides) {
    const RunConfig cfg = config_from(overrides);
    PretrainResult r;
    {
      py::gil_scoped_release release;
      r = pretrain(data.train, data.val, data.graph, cfg.train, cfg.model);
    }
    py::dict info;
    info["best_val_loss"] = r.best_val_loss;
    info["best_epoch"] = r.best_epoch;
    info["epochs_run"] = r.epochs_run;
    info["peak_step_bytes"] = r.peak_step_bytes;
    info["log"] = log_rows(r.log);
    return py::make_tuple(Model{std::move(r.params), cfg}, info);
  }, py::arg("dataset"), py::arg("config") = ConfigDict{}, "Masked pretraining; returns (model, info).");

  m.def("finetune", [](const Model& init, const Dataset& data, const ConfigDict& overrides) {
    const RunConfig cfg = config_from(overrides);
    FinetuneResult r;
    {
      py::gil_scoped_release release;
      r = finetune(init.params, data.train, data.val, data.graph, cfg.train, cfg.model);
    }
    py::dict info;
    info["best_val_ic"] = r.best_val_ic;
    info["best_epoch"] = r.best_epoch;
    info["epochs_run"] = r.epochs_run;
    info["log"] = log_rows(r.log);
    return py::make_tuple(Model{std::move(r.params), cfg}, info);
  }, py::arg("model"), py::arg("dataset"), py::arg("config") = ConfigDict{},
        "Head training (or joint training when freeze_encoder is false); returns (model, info).");

  m.def("predict", [](const Model& mo, const Dataset& data, const std::string& split) {
    std::vector<Row> out;
    for (const auto& p : predict(mo.params, mo.config.model, split_windows(data, split), data.graph)) {
      out.emplace_back(p.date.iso(), p.symbol, p.score);
    }
    return out;
  }, py::arg("model"), py::arg("dataset"), py::arg("split") = "test", "Rows of (target date, symbol, score).");

  m.def("mean_ic", [](const Model& mo, const Dataset& data, const std::string& split) {
    return mean_ic(mo.params, mo.config.model, split_windows(data, split), data.graph);
  }, py::arg("model"), py::arg("dataset"), py::arg("split") = "val");
  m.def("persistence_ic", [](const Dataset& data, const std::string& split) {
    return persistence_ic(split_windows(data, split));
  }, py::arg("dataset"), py::arg("split") = "val");

  m.def("daily_ic", &daily_ic, py::arg("pred"), py::arg("realized"), py::arg("rank") = false,
        "Cross-sectional correlation; None when either side is constant.");
  m.def("compute_metrics", [](const std::vector<double>& daily, double trading_days) {
    PnlSeries p;
    double c = 0;
    for (std::size_t i = 0; i < daily.size(); ++i) {
      p.dates.push_back(Date(2000, 1, 3).plus_days(static_cast<int>(i)));
      p.daily_pnl.push_back(daily[i]);
      p.cumulative.push_back(c += daily[i]);
    }
    return metrics_dict(compute_metrics(p, trading_days));
  }, py::arg("daily_pnl"), py::arg("trading_days") = 252.0);
  m.def("backtest", [](const std::vector<Row>& preds, const std::vector<Row>& rets, std::size_t top_k,
                       bool compounded, bool rank_ic, double trading_days) {
    const auto p = to_predictions(preds);
    const auto r = to_returns(rets);
    const PnlSeries pnl = run_strategy(p, r, {top_k, compounded});
    MetricsReport mr = compute_metrics(pnl, trading_days);
    mr.ic = ic_series(p, r, rank_ic).mean();
    py::dict out = metrics_dict(mr);
    out["daily_pnl"] = pnl.daily_pnl;
    return out;
  }, py::arg("predictions"), py::arg("returns"), py::arg("top_k") = 0, py::arg("compounded") = false,
        py::arg("rank_ic") = false, py::arg("trading_days") = 252.0,
        "Top-k long strategy over (date, symbol, value) rows.");

  m.def("gaussian_mask", [](std::size_t steps, double sigma) { return to_numpy(gaussian_mask(steps, sigma)); },
        py::arg("steps"), py::arg("sigma"));
  m.def("gradcheck", [](const std::string& size, std::size_t n_nodes, std::uint64_t seed) {
    const ModelGradCheck r = check_model_gradients(gradcheck_model_config(size), n_nodes, seed);
    py::dict d;
    d["passed"] = r.passed();
    d["worst"] = std::max(r.pretrain.worst(), r.finetune.worst());
    d["paths"] = r.pretrain.paths.size() + r.finetune.paths.size();
    return d;
  }, py::arg("size") = "tiny", py::arg("n_nodes") = 4, py::arg("seed") = 7);
}
