#include "tcgpn/pipeline.hpp"

#include <algorithm>
#include <optional>

namespace tcgpn {

namespace {

std::string span_name(SpanMode m) { return m == SpanMode::Shared ? "shared" : "per_node"; }
std::string mask_name(MaskMode m) { return m == MaskMode::Node ? "node" : "edge"; }
std::string missing_name(MissingPolicy m) { return m == MissingPolicy::ForwardFill ? "ffill" : "intersect"; }
std::string boolean(bool b) { return b ? "true" : "false"; }

template <typename E>
E parse_choice(const std::string& key, const std::string& value,
               std::initializer_list<std::pair<const char*, E>> choices) {
  std::string allowed;
  for (const auto& [name, e] : choices) {
    if (value == name) return e;
    allowed += allowed.empty() ? name : std::string("|") + name;
  }
  throw ConfigError(key + ": expected " + allowed + ", got '" + value + "'");
}

int parse_int(const std::string& key, const std::string& value) {
  const std::size_t n = parse_count(key, value);
  if (n > 1000) throw ConfigError(key + ": value " + value + " is out of range");
  return static_cast<int>(n);
}

}  // namespace

KeyValues RunConfig::to_kv() const {
  KeyValues kv = model.to_kv();
  const TrainConfig& t = train;
  KeyValues rest = {
      {"epochs", std::to_string(t.epochs)},
      {"finetune_epochs", std::to_string(t.finetune_epochs)},
      {"batch_size", std::to_string(t.batch_size)},
      {"n_sub", std::to_string(t.n_sub)},
      {"r_t", format_real(t.r_t)},
      {"r_g", format_real(t.r_g)},
      {"beta", format_real(t.beta)},
      {"lambda_m", format_real(t.lambda_m)},
      {"learning_rate", format_real(t.learning_rate)},
      {"finetune_learning_rate", format_real(t.finetune_learning_rate)},
      {"seed", std::to_string(t.seed)},
      {"early_stop_patience", std::to_string(t.early_stop_patience)},
      {"freeze_encoder", boolean(t.freeze_encoder)},
      {"use_temporal_loss", boolean(t.use_temporal_loss)},
      {"alternate_losses", boolean(t.alternate_losses)},
      {"span_mode", span_name(t.span_mode)},
      {"mask_mode", mask_name(t.mask_mode)},
      {"panel", panel},
      {"graph", graph},
      {"graph_kind", graph_kind},
      {"k_neighbors", std::to_string(k_neighbors)},
      {"split", split},
      {"train_frac", format_real(train_frac)},
      {"val_frac", format_real(val_frac)},
      {"train_years", std::to_string(train_years)},
      {"val_years", std::to_string(val_years)},
      {"test_years", std::to_string(test_years)},
      {"stride", std::to_string(stride)},
      {"standardize", boolean(standardize)},
      {"missing", missing_name(missing)},
      {"syn_clusters", std::to_string(synthetic.n_clusters)},
      {"syn_nodes_per_cluster", std::to_string(synthetic.nodes_per_cluster)},
      {"syn_lag", std::to_string(synthetic.lag)},
      {"syn_noise", format_real(synthetic.noise_std)},
      {"syn_length", std::to_string(synthetic.length)},
      {"syn_ar", format_real(synthetic.ar_coef)},
      {"syn_seed", std::to_string(synthetic.seed)},
      {"top_k", std::to_string(top_k)},
      {"compounded", boolean(compounded)},
      {"rank_ic", boolean(rank_ic)},
      {"trading_days", format_real(trading_days)},
  };
  kv.insert(kv.end(), rest.begin(), rest.end());
  return kv;
}

std::vector<std::string> RunConfig::keys() {
  std::vector<std::string> out;
  for (const auto& [k, v] : RunConfig().to_kv()) out.push_back(k);
  return out;
}

void RunConfig::apply(const KeyValues& overrides) {
  KeyValues table = to_kv();
  for (const auto& [key, value] : overrides) {
    auto it = std::find_if(table.begin(), table.end(), [&](const auto& e) { return e.first == key; });
    if (it == table.end()) throw ConfigError("unknown config key '" + key + "'");
    it->second = value;
  }
  const auto m = to_map(table);
  RunConfig c;
  try {
    c.model = ModelConfig::from_kv(table);
    TrainConfig& t = c.train;
    t.epochs = parse_count("epochs", m.at("epochs"));
    t.finetune_epochs = parse_count("finetune_epochs", m.at("finetune_epochs"));
    t.batch_size = parse_count("batch_size", m.at("batch_size"));
    t.n_sub = parse_count("n_sub", m.at("n_sub"));
    t.r_t = parse_real("r_t", m.at("r_t"));
    t.r_g = parse_real("r_g", m.at("r_g"));
    t.beta = parse_real("beta", m.at("beta"));
    t.lambda_m = parse_real("lambda_m", m.at("lambda_m"));
    t.learning_rate = parse_real("learning_rate", m.at("learning_rate"));
    t.finetune_learning_rate = parse_real("finetune_learning_rate", m.at("finetune_learning_rate"));
    t.seed = parse_count("seed", m.at("seed"));
    t.early_stop_patience = parse_count("early_stop_patience", m.at("early_stop_patience"));
    t.freeze_encoder = parse_bool("freeze_encoder", m.at("freeze_encoder"));
    t.use_temporal_loss = parse_bool("use_temporal_loss", m.at("use_temporal_loss"));
    t.alternate_losses = parse_bool("alternate_losses", m.at("alternate_losses"));
    t.span_mode = parse_choice<SpanMode>("span_mode", m.at("span_mode"),
                                         {{"per_node", SpanMode::PerNode}, {"shared", SpanMode::Shared}});
    t.mask_mode = parse_choice<MaskMode>("mask_mode", m.at("mask_mode"), {{"edge", MaskMode::Edge}, {"node", MaskMode::Node}});
    c.panel = m.at("panel");
    c.graph = m.at("graph");
    c.graph_kind = m.at("graph_kind");
    c.k_neighbors = parse_count("k_neighbors", m.at("k_neighbors"));
    c.split = m.at("split");
    c.train_frac = parse_real("train_frac", m.at("train_frac"));
    c.val_frac = parse_real("val_frac", m.at("val_frac"));
    c.train_years = parse_int("train_years", m.at("train_years"));
    c.val_years = parse_int("val_years", m.at("val_years"));
    c.test_years = parse_int("test_years", m.at("test_years"));
    c.stride = parse_count("stride", m.at("stride"));
    c.standardize = parse_bool("standardize", m.at("standardize"));
    c.missing = parse_choice<MissingPolicy>("missing", m.at("missing"),
                                            {{"intersect", MissingPolicy::Intersect}, {"ffill", MissingPolicy::ForwardFill}});
    c.synthetic.n_clusters = parse_count("syn_clusters", m.at("syn_clusters"));
    c.synthetic.nodes_per_cluster = parse_count("syn_nodes_per_cluster", m.at("syn_nodes_per_cluster"));
    c.synthetic.lag = parse_count("syn_lag", m.at("syn_lag"));
    c.synthetic.noise_std = parse_real("syn_noise", m.at("syn_noise"));
    c.synthetic.length = parse_count("syn_length", m.at("syn_length"));
    c.synthetic.ar_coef = parse_real("syn_ar", m.at("syn_ar"));
    c.synthetic.seed = parse_count("syn_seed", m.at("syn_seed"));
    c.top_k = parse_count("top_k", m.at("top_k"));
    c.compounded = parse_bool("compounded", m.at("compounded"));
    c.rank_ic = parse_bool("rank_ic", m.at("rank_ic"));
    c.trading_days = parse_real("trading_days", m.at("trading_days"));
  } catch (const ConfigError&) {
    throw;
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  *this = c;
}

RunConfig RunConfig::from_kv(const KeyValues& kv) {
  RunConfig c;
  c.apply(kv);
  return c;
}

void RunConfig::validate() const {
  try {
    model.validate();
    train.validate();
    if (panel.empty()) synthetic.validate(model.window);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  auto need = [](bool ok, const std::string& msg) {
    if (!ok) throw ConfigError(msg);
  };
  need(graph_kind == "truth" || graph_kind == "distance", "graph_kind must be truth or distance");
  need(split == "fraction" || split == "year", "split must be fraction or year");
  need(train_frac > 0 && val_frac > 0 && train_frac + val_frac < 1, "train_frac and val_frac must be positive and sum below 1");
  need(train_years > 0 && val_years > 0 && test_years > 0, "split years must be positive");
  need(stride >= 1, "stride must be at least 1");
  need(k_neighbors >= 1, "k_neighbors must be at least 1");
  need(trading_days > 0, "trading_days must be positive");
  need(graph_kind != "truth" || !graph.empty() || panel.empty(),
       "graph_kind=truth needs the synthetic panel or an explicit graph file");
}

Dataset prepare_dataset(const RunConfig& cfg) {
  cfg.validate();
  Dataset data;
  TimePanel raw;
  std::optional<CorrelationGraph> truth;
  if (cfg.panel.empty()) {
    SyntheticData syn = gen_synthetic(cfg.synthetic);
    raw = std::move(syn.panel);
    truth = std::move(syn.truth);
  } else {
    PanelLoad load = load_panel(cfg.panel, PanelSchema{{}, {}, cfg.missing});
    raw = std::move(load.panel);
    data.report = std::move(load.report);
  }
  if (raw.n_features() != cfg.model.n_features) {
    throw ConfigError("panel has " + std::to_string(raw.n_features()) + " features but n_features is " +
                      std::to_string(cfg.model.n_features));
  }
  PanelSplit sp = cfg.split == "year" ? split_by_year(raw, cfg.train_years, cfg.val_years, cfg.test_years)
                                      : split_by_fraction(raw, cfg.train_frac, cfg.val_frac);
  if (cfg.standardize) {
    const Standardizer st = Standardizer::fit(sp.train);
    sp.train = st.apply(sp.train);
    sp.val = st.apply(sp.val);
    sp.test = st.apply(sp.test);
    data.panel = st.apply(raw);
  } else {
    data.panel = raw;
  }

  if (!cfg.graph.empty()) {
    data.graph = load_graph(cfg.graph, raw.node_ids);
  } else if (cfg.graph_kind == "distance") {
    data.graph = build_distance_graph(sp.train, cfg.k_neighbors);
  } else {
    data.graph = *truth;
  }

  data.train = window_samples(sp.train, cfg.model.window, cfg.stride);
  data.val = window_samples(sp.val, cfg.model.window, cfg.stride);
  data.test = window_samples(sp.test, cfg.model.window, cfg.stride);
  data.returns = panel_returns(raw);
  return data;
}

const std::vector<WindowSample>& split_windows(const Dataset& data, const std::string& name) {
  if (name == "train") return data.train;
  if (name == "val") return data.val;
  if (name == "test") return data.test;
  throw ConfigError("unknown split '" + name + "' (expected train, val or test)");
}

}  // namespace tcgpn
