#include <CLI11.hpp>

#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <future>
#include <iomanip>
#include <iostream>
#include <map>
#include <sstream>

#include "tcgpn/checks.hpp"
#include "tcgpn/csv.hpp"
#include "tcgpn/hash.hpp"
#include "tcgpn/pipeline.hpp"
#include "tcgpn/rng.hpp"

namespace fs = std::filesystem;
using namespace tcgpn;

namespace {

constexpr int kExitFailure = 1;
constexpr int kExitUsage = 2;
constexpr int kExitConfig = 3;

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// One line, key=value, message last.
int fail(int code, const std::string& kind, const std::string& message) {
  std::string flat = message;
  for (char& c : flat) {
    if (c == '\n' || c == '\r') c = ' ';
  }
  std::cerr << "error code=" << code << " kind=" << kind << " message=" << std::quoted(flat) << "\n";
  return code;
}

struct Options {
  std::string config_file;
  std::string runs_dir = "runs";
  std::string run_dir;
  std::map<std::string, std::string> values;  // --<config key> overrides
};

void add_common(CLI::App* sub, Options& opt) {
  sub->add_option("--config", opt.config_file, "Flat key = value config file")->check(CLI::ExistingFile);
  sub->add_option("--runs-dir", opt.runs_dir, "Parent of the timestamped run directory");
  sub->add_option("--run-dir", opt.run_dir, "Use this run directory instead of a timestamped one");
  for (const auto& key : RunConfig::keys()) {
    sub->add_option("--" + key, opt.values[key], "config key")
        ->group("Config keys")
        ->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  }
}

RunConfig resolve(const Options& opt, std::string* config_text) {
  RunConfig cfg;
  if (!opt.config_file.empty()) {
    const std::string text = read_text_file(opt.config_file);
    try {
      cfg.apply(parse_key_values(text));
    } catch (const std::invalid_argument& e) {
      throw ConfigError(opt.config_file + ": " + e.what());
    }
  }
  KeyValues overrides;
  for (const auto& [k, v] : opt.values) {
    if (!v.empty()) overrides.emplace_back(k, v);
  }
  cfg.apply(overrides);
  cfg.validate();
  if (config_text) *config_text = format_key_values(cfg.to_kv());
  return cfg;
}

std::string timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, "%Y%m%d-%H%M%S");
  return os.str();
}

class RunDir {
 public:
  RunDir(const Options& opt, const RunConfig& cfg, const std::string& config_text, const std::string& command)
      : config_text_(config_text) {
    if (!opt.run_dir.empty()) {
      dir_ = opt.run_dir;
    } else {
      const std::string base = timestamp() + "-seed" + std::to_string(cfg.train.seed);
      dir_ = fs::path(opt.runs_dir) / base;
      for (int i = 2; fs::exists(dir_); ++i) dir_ = fs::path(opt.runs_dir) / (base + "-" + std::to_string(i));
    }
    fs::create_directories(dir_ / "inputs");
    write("config.txt", config_text_);
    write("seed.txt", std::to_string(cfg.train.seed) + "\n");
    write("command.txt", command + "\n");
  }

  const fs::path& path() const { return dir_; }
  fs::path file(const std::string& name) const { return dir_ / name; }
  void write(const std::string& name, const std::string& content) const { write_text_file(file(name).string(), content); }

  /// Copies an input into the run directory so the run can be repeated from it alone.
  void add_input(const std::string& source) {
    if (source.empty()) return;
    const std::string bytes = read_text_file(source);
    const std::string name = fs::path(source).filename().string();
    write_text_file((dir_ / "inputs" / name).string(), bytes);
    inputs_.emplace_back(name, bytes);
  }

  void seal() const {
    auto files = inputs_;
    files.emplace_back("config.txt", config_text_);
    std::string text = content_hash(files) + "\n";
    for (const auto& [name, bytes] : files) text += git_blob_id(bytes) + " " + name + "\n";
    write("inputs.sha1", text);
  }

 private:
  fs::path dir_;
  std::string config_text_;
  std::vector<std::pair<std::string, std::string>> inputs_;
};

void add_data_inputs(RunDir& run, const RunConfig& cfg) {
  run.add_input(cfg.panel);
  run.add_input(cfg.graph);
}

void print_epoch(const LogRow& r) {
  std::cerr << r.phase << " epoch " << r.epoch;
  if (r.loss.l_pre != 0 || r.loss.l_t != 0) {
    std::cerr << " l_t=" << r.loss.l_t << " l_g=" << r.loss.l_g << " l_pre=" << r.loss.l_pre;
  } else if (r.phase == "train") {
    std::cerr << " l_fine=" << r.loss.l_fine << " l_mse=" << r.loss.l_mse;
  } else {
    std::cerr << " ic=" << r.ic;
  }
  std::cerr << "\n";
}

std::string summary_line(const KeyValues& kv) {
  std::string s;
  for (const auto& [k, v] : kv) s += (s.empty() ? "" : " ") + k + "=" + v;
  return s;
}

// ---------------------------------------------------------------------------

int cmd_synth(const RunConfig& cfg, RunDir& run) {
  const SyntheticData syn = gen_synthetic(cfg.synthetic);
  save_panel(syn.panel, run.file("panel.csv").string());
  save_graph(syn.truth, run.file("graph.txt").string());
  run.write("returns.csv", format_returns(panel_returns(syn.panel)));
  std::cout << summary_line({{"run_dir", run.path().string()},
                             {"nodes", std::to_string(syn.panel.n_nodes())},
                             {"dates", std::to_string(syn.panel.n_dates())},
                             {"edges", std::to_string(syn.truth.edge_count())}})
            << "\n";
  return 0;
}

int cmd_build_graph(RunConfig cfg, RunDir& run, const std::string& industry) {
  CorrelationGraph g;
  if (!industry.empty()) {
    run.add_input(industry);
    g = build_industry_graph(load_industry_csv(industry));
  } else {
    add_data_inputs(run, cfg);
    cfg.graph.clear();
    cfg.graph_kind = "distance";
    g = prepare_dataset(cfg).graph;
  }
  save_graph(g, run.file("graph.txt").string());
  std::cout << summary_line({{"run_dir", run.path().string()},
                             {"nodes", std::to_string(g.n_nodes())},
                             {"edges", std::to_string(g.edge_count())},
                             {"directed", g.directed ? "1" : "0"}})
            << "\n";
  return 0;
}

int cmd_pretrain(const RunConfig& cfg, RunDir& run, const std::string& config_text) {
  add_data_inputs(run, cfg);
  const Dataset data = prepare_dataset(cfg);
  const PretrainResult res = pretrain(data.train, data.val, data.graph, cfg.train, cfg.model, print_epoch);
  save_checkpoint(run.file("pretrained.ckpt").string(), res.params, config_text);
  run.write("train_log.csv", format_training_log(res.log));
  const KeyValues summary = {{"run_dir", run.path().string()},
                             {"best_val_loss", format_real(res.best_val_loss)},
                             {"best_epoch", std::to_string(res.best_epoch)},
                             {"epochs_run", std::to_string(res.epochs_run)},
                             {"peak_step_bytes", std::to_string(res.peak_step_bytes)}};
  run.write("summary.txt", format_key_values(summary));
  std::cout << summary_line(summary) << "\n";
  return 0;
}

ParamStore<float> load_model(const std::string& path, const RunConfig& cfg, RunDir& run) {
  run.add_input(path);
  Checkpoint ckpt = load_checkpoint(path);
  try {
    validate_checkpoint(ckpt, cfg.model);
  } catch (const CheckpointError& e) {
    throw ConfigError(e.what());
  }
  return std::move(ckpt.params);
}

int cmd_finetune(const RunConfig& cfg, RunDir& run, const std::string& config_text, const std::string& checkpoint) {
  add_data_inputs(run, cfg);
  const Dataset data = prepare_dataset(cfg);
  const ParamStore<float> init = checkpoint.empty() ? init_params<float>(cfg.model, mix_seed({cfg.train.seed, 0x1417}))
                                                    : load_model(checkpoint, cfg, run);
  const FinetuneResult res = finetune(init, data.train, data.val, data.graph, cfg.train, cfg.model, print_epoch);
  save_checkpoint(run.file("finetuned.ckpt").string(), res.params, config_text);
  run.write("finetune_log.csv", format_training_log(res.log));
  const KeyValues summary = {{"run_dir", run.path().string()},
                             {"best_val_ic", format_real(res.best_val_ic)},
                             {"persistence_val_ic", format_real(persistence_ic(data.val))},
                             {"best_epoch", std::to_string(res.best_epoch)},
                             {"epochs_run", std::to_string(res.epochs_run)}};
  run.write("summary.txt", format_key_values(summary));
  std::cout << summary_line(summary) << "\n";
  return 0;
}

int cmd_predict(const RunConfig& cfg, RunDir& run, const std::string& checkpoint, const std::string& split) {
  add_data_inputs(run, cfg);
  const Dataset data = prepare_dataset(cfg);
  const ParamStore<float> params = load_model(checkpoint, cfg, run);
  const auto& windows = split_windows(data, split);
  const auto preds = predict(params, cfg.model, windows, data.graph);
  run.write("predictions.csv", format_predictions(preds));
  run.write("returns.csv", format_returns(data.returns));
  std::cout << summary_line({{"run_dir", run.path().string()},
                             {"dates", std::to_string(windows.size())},
                             {"rows", std::to_string(preds.size())}})
            << "\n";
  return 0;
}

int cmd_backtest(const RunConfig& cfg, RunDir& run, const std::string& pred_path, const std::string& ret_path) {
  run.add_input(pred_path);
  run.add_input(ret_path);
  const auto preds = parse_predictions(read_text_file(pred_path));
  const auto rets = parse_returns(read_text_file(ret_path));
  const IcSeries ic = ic_series(preds, rets, cfg.rank_ic);
  std::vector<std::string> log;
  const PnlSeries pnl = run_strategy(preds, rets, StrategyConfig{cfg.top_k, cfg.compounded}, &log);
  MetricsReport m = compute_metrics(pnl, cfg.trading_days);
  m.ic = ic.mean();
  run.write("metrics.csv", format_metrics_csv(m));
  run.write("ic.csv", format_ic_csv(ic));
  std::string curve = "date,daily_pnl,cumulative\n";
  for (std::size_t i = 0; i < pnl.dates.size(); ++i) {
    curve += pnl.dates[i].iso() + "," + format_real(pnl.daily_pnl[i]) + "," + format_real(pnl.cumulative[i]) + "\n";
  }
  run.write("pnl.csv", curve);
  run.write("pnl.svg", render_pnl_svg(pnl, "Cumulative PnL"));
  std::string log_text;
  for (const auto& l : log) log_text += l + "\n";
  run.write("strategy.log", log_text);
  std::cout << "run_dir=" << run.path().string() << "\n" << format_metrics_csv(m);
  if (ic.skipped) std::cout << "skipped_ic_dates=" << ic.skipped << "\n";
  return 0;
}

int cmd_gradcheck(const std::string& size, std::uint64_t seed, double tol) {
  const ModelConfig mc = gradcheck_model_config(size);
  const ModelGradCheck res = check_model_gradients(mc, 4, seed, 1e-5, tol);
  std::cout << std::setprecision(3) << std::scientific;
  for (const auto* part : {&res.pretrain, &res.finetune}) {
    const char* name = part == &res.pretrain ? "pretrain" : "finetune";
    for (const auto& p : part->paths) {
      std::cout << name << " " << p.path << " " << p.max_rel_error << (p.flagged ? " FLAGGED" : "")
                << (p.unprobeable ? " UNPROBEABLE" : "") << "\n";
    }
  }
  std::cout << "worst " << std::max(res.pretrain.worst(), res.finetune.worst()) << " "
            << (res.passed() ? "PASS" : "FAIL") << "\n";
  return res.passed() ? 0 : kExitFailure;
}

// ---------------------------------------------------------------------------
// sweep

const std::map<std::string, std::string> kKnobAliases = {
    {"rt", "r_t"}, {"rg", "r_g"}, {"nl", "tgm_blocks"}, {"nh", "tgm_heads"}};

std::vector<KeyValues> expand_grid(const std::vector<std::string>& specs) {
  std::vector<KeyValues> points{{}};
  for (const auto& spec : specs) {
    const auto eq = spec.find('=');
    if (eq == std::string::npos || eq == 0 || eq + 1 == spec.size()) {
      throw UsageError("--grid expects key=v1,v2,...; got '" + spec + "'");
    }
    std::string key = spec.substr(0, eq);
    if (auto it = kKnobAliases.find(key); it != kKnobAliases.end()) key = it->second;
    std::vector<std::string> values;
    std::stringstream ss(spec.substr(eq + 1));
    for (std::string v; std::getline(ss, v, ',');) {
      if (!v.empty()) values.push_back(v);
    }
    std::vector<KeyValues> next;
    for (const auto& p : points) {
      for (const auto& v : values) {
        KeyValues q = p;
        q.emplace_back(key, v);
        next.push_back(std::move(q));
      }
    }
    points = std::move(next);
  }
  return points;
}

struct SweepResult {
  KeyValues point;
  std::string run_dir;
  double val_loss = 0, val_ic = 0;
  std::string error;
};

SweepResult sweep_point(RunConfig cfg, const KeyValues& point, const fs::path& dir) {
  SweepResult r;
  r.point = point;
  r.run_dir = dir.string();
  try {
    cfg.apply(point);
    cfg.validate();
    const std::string text = format_key_values(cfg.to_kv());
    fs::create_directories(dir);
    write_text_file((dir / "config.txt").string(), text);
    write_text_file((dir / "seed.txt").string(), std::to_string(cfg.train.seed) + "\n");
    const Dataset data = prepare_dataset(cfg);
    const PretrainResult pre = pretrain(data.train, data.val, data.graph, cfg.train, cfg.model);
    save_checkpoint((dir / "pretrained.ckpt").string(), pre.params, text);
    const FinetuneResult fine = finetune(pre.params, data.train, data.val, data.graph, cfg.train, cfg.model);
    save_checkpoint((dir / "finetuned.ckpt").string(), fine.params, text);
    auto log = pre.log;
    log.insert(log.end(), fine.log.begin(), fine.log.end());
    write_text_file((dir / "train_log.csv").string(), format_training_log(log));
    r.val_loss = pre.best_val_loss;
    r.val_ic = fine.best_val_ic;
    write_text_file((dir / "summary.txt").string(),
                    format_key_values({{"best_val_loss", format_real(r.val_loss)}, {"best_val_ic", format_real(r.val_ic)}}));
  } catch (const std::exception& e) {
    r.error = e.what();
  }
  return r;
}

int cmd_sweep(const RunConfig& cfg, RunDir& run, const std::vector<std::string>& grid, std::size_t jobs) {
  add_data_inputs(run, cfg);
  const auto points = expand_grid(grid);
  for (const auto& p : points) {
    RunConfig probe = cfg;
    probe.apply(p);
    probe.validate();
  }
  std::vector<SweepResult> results(points.size());
  std::size_t next = 0;
  jobs = std::max<std::size_t>(1, jobs);
  while (next < points.size()) {
    std::vector<std::future<SweepResult>> batch;
    for (std::size_t j = 0; j < jobs && next < points.size(); ++j, ++next) {
      const fs::path dir = run.path() / ("point" + std::to_string(next));
      batch.push_back(std::async(std::launch::async, sweep_point, cfg, points[next], dir));
    }
    const std::size_t first = next - batch.size();
    for (std::size_t j = 0; j < batch.size(); ++j) results[first + j] = batch[j].get();
  }

  std::string table = "point";
  for (const auto& [k, v] : points.front()) table += "," + k;
  table += ",best_val_loss,best_val_ic,run_dir,error\n";
  bool ok = true;
  for (std::size_t i = 0; i < results.size(); ++i) {
    const auto& r = results[i];
    table += std::to_string(i);
    for (const auto& [k, v] : r.point) table += "," + v;
    table += "," + format_real(r.val_loss) + "," + format_real(r.val_ic) + "," + r.run_dir + "," + r.error + "\n";
    ok = ok && r.error.empty();
  }
  run.write("sweep.csv", table);
  std::cout << table;
  return ok ? 0 : kExitFailure;
}

std::string join_args(int argc, char** argv) {
  std::string s;
  for (int i = 0; i < argc; ++i) s += (i ? " " : "") + std::string(argv[i]);
  return s;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Temporal-correlation graph pretraining: data, training, prediction and backtests"};
  app.require_subcommand(1);

  Options opt;
  std::string industry, checkpoint, split = "test", pred_path, ret_path, size = "tiny";
  std::vector<std::string> grid;
  std::size_t jobs = 1;
  std::uint64_t check_seed = 7;
  double check_tol = 1e-4;

  auto* synth = app.add_subcommand("synth-data", "Generate the synthetic lead-lag panel, its graph and returns");
  add_common(synth, opt);
  auto* graph = app.add_subcommand("build-graph", "Build an industry graph (--industry) or a kNN distance graph");
  add_common(graph, opt);
  graph->add_option("--industry", industry, "CSV: symbol,industry,registered_capital,turnover")->check(CLI::ExistingFile);
  auto* pre = app.add_subcommand("pretrain", "Pretrain the encoder and both decoders");
  add_common(pre, opt);
  auto* fine = app.add_subcommand("finetune", "Train the prediction head (encoder frozen unless freeze_encoder=false)");
  add_common(fine, opt);
  fine->add_option("--checkpoint", checkpoint, "Pretrained checkpoint; omitted starts from random parameters")
      ->check(CLI::ExistingFile);
  auto* pred = app.add_subcommand("predict", "Score every window of a split");
  add_common(pred, opt);
  pred->add_option("--checkpoint", checkpoint, "Fine-tuned checkpoint")->required()->check(CLI::ExistingFile);
  pred->add_option("--eval-split", split, "train, val or test")->check(CLI::IsMember({"train", "val", "test"}));
  auto* bt = app.add_subcommand("backtest", "Metrics, IC series and PnL curve from predictions and returns");
  add_common(bt, opt);
  bt->add_option("--predictions", pred_path, "CSV: date,symbol,score")->required()->check(CLI::ExistingFile);
  bt->add_option("--returns", ret_path, "CSV: date,symbol,return")->required()->check(CLI::ExistingFile);
  auto* gc = app.add_subcommand("gradcheck", "Finite-difference check of both training objectives");
  gc->add_option("--size", size, "tiny or small")->check(CLI::IsMember({"tiny", "small"}));
  gc->add_option("--seed", check_seed, "Seed of the random problem");
  gc->add_option("--tol", check_tol, "Relative error tolerance");
  auto* sw = app.add_subcommand("sweep", "Pretrain and fine-tune over a grid of config values");
  add_common(sw, opt);
  sw->add_option("--grid", grid, "key=v1,v2,... (aliases: rt, rg, nl, nh); repeat for a product grid")->required();
  sw->add_option("--jobs", jobs, "Grid points run concurrently")->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << app.help();
    return fail(kExitUsage, "usage", e.what());
  }

  try {
    if (gc->parsed()) return cmd_gradcheck(size, check_seed, check_tol);
    std::string config_text;
    const RunConfig cfg = resolve(opt, &config_text);
    RunDir run(opt, cfg, config_text, join_args(argc, argv));
    int code = 0;
    if (synth->parsed()) code = cmd_synth(cfg, run);
    else if (graph->parsed()) code = cmd_build_graph(cfg, run, industry);
    else if (pre->parsed()) code = cmd_pretrain(cfg, run, config_text);
    else if (fine->parsed()) code = cmd_finetune(cfg, run, config_text, checkpoint);
    else if (pred->parsed()) code = cmd_predict(cfg, run, checkpoint, split);
    else if (bt->parsed()) code = cmd_backtest(cfg, run, pred_path, ret_path);
    else if (sw->parsed()) code = cmd_sweep(cfg, run, grid, jobs);
    run.seal();
    return code;
  } catch (const UsageError& e) {
    return fail(kExitUsage, "usage", e.what());
  } catch (const ConfigError& e) {
    return fail(kExitConfig, "config", e.what());
  } catch (const CheckpointError& e) {
    return fail(kExitFailure, "checkpoint", e.what());
  } catch (const TrainingError& e) {
    return fail(kExitFailure, "training", e.what());
  } catch (const std::exception& e) {
    return fail(kExitFailure, "runtime", e.what());
  }
}
