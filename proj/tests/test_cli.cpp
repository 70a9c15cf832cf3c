#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace fs = std::filesystem;

namespace {

struct CliResult {
  int code = -1;
  std::string output;
};

CliResult run_cli(const std::string& args) {
  const std::string cmd = std::string(TCGPN_CLI) + " " + args + " 2>&1";
  CliResult r;
  FILE* pipe = popen(cmd.c_str(), "r");
  if (!pipe) return r;
  char buf[4096];
  while (std::fgets(buf, sizeof buf, pipe)) r.output += buf;
  const int status = pclose(pipe);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("tcgpn_cli_test_" + std::to_string(::getpid())) / name;
  fs::remove_all(dir);
  fs::create_directories(dir.parent_path());
  return dir;
}

const std::string kTiny =
    " --d_model 8 --gat_heads 2 --gat_dim 4 --tgm_blocks 1 --tgm_heads 2 --adj_dim 4 --ffn_dim 8 --head_hidden 8"
    " --window 8 --epochs 1 --finetune_epochs 1 --batch_size 4 --syn_clusters 2 --syn_nodes_per_cluster 3"
    " --syn_length 80";

}  // namespace

TEST(Cli, GradcheckTinyPasses) {
  const CliResult r = run_cli("gradcheck --size tiny");
  EXPECT_EQ(r.code, 0) << r.output;
  EXPECT_NE(r.output.find("PASS"), std::string::npos);
}

TEST(Cli, UnknownSubcommandIsUsageError) {
  const CliResult r = run_cli("frobnicate");
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.output.find("error code=2 kind=usage"), std::string::npos);
}

TEST(Cli, BadConfigIsConfigError) {
  const fs::path dir = scratch("badcfg");
  fs::create_directories(dir);
  std::ofstream(dir / "bad.cfg") << "d_model = 64\nno_such_key = 1\n";
  CliResult r = run_cli("pretrain --config " + (dir / "bad.cfg").string() + " --run-dir " + (dir / "run").string());
  EXPECT_EQ(r.code, 3) << r.output;
  EXPECT_NE(r.output.find("kind=config"), std::string::npos);
  EXPECT_NE(r.output.find("no_such_key"), std::string::npos);

  r = run_cli("pretrain --d_model 30 --tgm_heads 4 --run-dir " + (dir / "run2").string());
  EXPECT_EQ(r.code, 3) << r.output;
  EXPECT_NE(r.output.find("divisible"), std::string::npos);
}

TEST(Cli, PretrainIsReproducible) {
  const fs::path a = scratch("pre_a"), b = scratch("pre_b");
  const CliResult ra = run_cli("pretrain" + kTiny + " --seed 5 --run-dir " + a.string());
  const CliResult rb = run_cli("pretrain" + kTiny + " --seed 5 --run-dir " + b.string());
  ASSERT_EQ(ra.code, 0) << ra.output;
  ASSERT_EQ(rb.code, 0) << rb.output;
  const std::string ca = slurp(a / "pretrained.ckpt");
  EXPECT_FALSE(ca.empty());
  EXPECT_EQ(ca, slurp(b / "pretrained.ckpt"));
  EXPECT_EQ(slurp(a / "config.txt"), slurp(b / "config.txt"));
  EXPECT_TRUE(fs::exists(a / "seed.txt"));
  EXPECT_TRUE(fs::exists(a / "train_log.csv"));
  EXPECT_TRUE(fs::exists(a / "inputs.sha1"));
}

TEST(Cli, EndToEndPipeline) {
  const fs::path root = scratch("e2e");
  const std::string pre = (root / "pre").string(), fine = (root / "fine").string(), pred = (root / "pred").string(),
                    bt = (root / "bt").string();
  CliResult r = run_cli("pretrain" + kTiny + " --run-dir " + pre);
  ASSERT_EQ(r.code, 0) << r.output;
  r = run_cli("finetune" + kTiny + " --checkpoint " + pre + "/pretrained.ckpt --run-dir " + fine);
  ASSERT_EQ(r.code, 0) << r.output;
  r = run_cli("predict" + kTiny + " --checkpoint " + fine + "/finetuned.ckpt --eval-split test --run-dir " + pred);
  ASSERT_EQ(r.code, 0) << r.output;
  r = run_cli("backtest" + kTiny + " --top_k 2 --predictions " + pred + "/predictions.csv --returns " + pred +
              "/returns.csv --run-dir " + bt);
  ASSERT_EQ(r.code, 0) << r.output;
  for (const char* f : {"metrics.csv", "ic.csv", "pnl.csv", "pnl.svg"}) EXPECT_TRUE(fs::exists(fs::path(bt) / f)) << f;
  EXPECT_NE(slurp(fs::path(bt) / "metrics.csv").find("sharpe"), std::string::npos);
}

TEST(Cli, CheckpointConfigMismatchIsRejected) {
  const fs::path root = scratch("mismatch");
  CliResult r = run_cli("pretrain" + kTiny + " --run-dir " + (root / "pre").string());
  ASSERT_EQ(r.code, 0) << r.output;
  r = run_cli("finetune" + kTiny + " --tgm_blocks 2 --checkpoint " + (root / "pre" / "pretrained.ckpt").string() +
              " --run-dir " + (root / "fine").string());
  EXPECT_EQ(r.code, 3) << r.output;
  EXPECT_NE(r.output.find("checkpoint config mismatch: tgm_blocks"), std::string::npos);
}
