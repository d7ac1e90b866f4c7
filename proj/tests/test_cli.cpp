#include <gtest/gtest.h>
#include <sys/wait.h>
#include <unistd.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "d2nn/config.hpp"
#include "d2nn/metrics.hpp"

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

struct CliRun {
  int code = -1;
  std::string out;
  std::string err;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<std::string> lines_of(const std::string& text) {
  std::vector<std::string> lines;
  std::istringstream in(text);
  for (std::string l; std::getline(in, l);) lines.push_back(l);
  return lines;
}

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() / ("d2nn_cli_" + std::to_string(::getpid()));
    fs::create_directories(dir_);
    tiny_ = (fs::path(D2NN_SOURCE_DIR) / "configs" / "synthetic_tiny.json").string();
    ::unsetenv("D2NN_SEED");
  }
  void TearDown() override { fs::remove_all(dir_); }

  CliRun run(const std::string& args) const {
    const fs::path out = dir_ / "stdout.txt", err = dir_ / "stderr.txt";
    const std::string cmd = std::string(D2NN_CLI_PATH) + " " + args + " >" + out.string() + " 2>" + err.string();
    const int status = std::system(cmd.c_str());
    CliRun r;
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    r.out = slurp(out);
    r.err = slurp(err);
    return r;
  }

  fs::path path(const std::string& name) const { return dir_ / name; }

  std::string write_config(const std::string& name, const json& j) const {
    std::ofstream(path(name)) << j.dump(2);
    return path(name).string();
  }

  json tiny_json() const { return json::parse(slurp(tiny_)); }

  fs::path dir_;
  std::string tiny_;
};

TEST_F(Cli, TrainIsDeterministicAndWritesItsOutputs) {
  CliRun a = run("train --config " + tiny_ + " --out " + path("a").string() + " --seed 7");
  ASSERT_EQ(a.code, 0) << a.err;
  CliRun b = run("train --config " + tiny_ + " --out " + path("b").string() + " --seed 7");
  ASSERT_EQ(b.code, 0) << b.err;
  for (const char* f : {"checkpoint.bin", "epochs.csv", "config.resolved.json"}) {
    EXPECT_TRUE(fs::exists(path("a") / f)) << f;
  }
  EXPECT_EQ(slurp(path("a") / "checkpoint.bin"), slurp(path("b") / "checkpoint.bin"));
  const auto epochs = lines_of(slurp(path("a") / "epochs.csv"));
  EXPECT_EQ(epochs[0].rfind("epoch,mean_loss,validation_auc", 0), 0u);
  EXPECT_GE(epochs.size(), 2u);
  EXPECT_NE(a.out.find("best epoch"), std::string::npos);

  CliRun c = run("train --config " + tiny_ + " --out " + path("c").string() + " --seed 8");
  ASSERT_EQ(c.code, 0) << c.err;
  EXPECT_NE(slurp(path("a") / "checkpoint.bin"), slurp(path("c") / "checkpoint.bin"));
}

TEST_F(Cli, ResolvedConfigReproducesTheRun) {
  ASSERT_EQ(run("train --config " + tiny_ + " --out " + path("a").string()).code, 0);
  const std::string snapshot = (path("a") / "config.resolved.json").string();
  const auto resolved = json::parse(slurp(snapshot));
  EXPECT_TRUE(resolved.contains("vocabulary"));
  EXPECT_EQ(resolved["seed"], 7);
  CliRun again = run("train --config " + snapshot + " --out " + path("b").string());
  ASSERT_EQ(again.code, 0) << again.err;
  EXPECT_EQ(slurp(path("a") / "checkpoint.bin"), slurp(path("b") / "checkpoint.bin"));
  EXPECT_EQ(slurp(snapshot), slurp(path("b") / "config.resolved.json"));
}

TEST_F(Cli, EnvironmentSeedOverridesTheConfig) {
  ASSERT_EQ(run("train --config " + tiny_ + " --out " + path("flag").string() + " --seed 12").code, 0);
  ::setenv("D2NN_SEED", "12", 1);
  ASSERT_EQ(run("train --config " + tiny_ + " --out " + path("env").string()).code, 0);
  ::unsetenv("D2NN_SEED");
  EXPECT_EQ(slurp(path("flag") / "checkpoint.bin"), slurp(path("env") / "checkpoint.bin"));
}

TEST_F(Cli, ConfigProblemsExitWithTwo) {
  CliRun missing = run("train --config " + path("nope.json").string() + " --out " + path("x").string());
  EXPECT_EQ(missing.code, 2);

  json j = tiny_json();
  j["model"]["widht"] = 3;
  CliRun unknown = run("train --config " + write_config("bad.json", j) + " --out " + path("x").string());
  EXPECT_EQ(unknown.code, 2);
  EXPECT_NE(unknown.err.find("model.widht"), std::string::npos) << unknown.err;

  EXPECT_EQ(run("").code, 2);
  EXPECT_EQ(run("train --out " + path("x").string()).code, 2);
  EXPECT_EQ(run("frobnicate").code, 2);
}

TEST_F(Cli, EvaluateWritesAStableReport) {
  ASSERT_EQ(run("train --config " + tiny_ + " --out " + path("m").string()).code, 0);
  const std::string ckpt = (path("m") / "checkpoint.bin").string();
  const std::string cfg = (path("m") / "config.resolved.json").string();

  CliRun a = run("evaluate --checkpoint " + ckpt + " --config " + cfg + " --out " + path("a.csv").string());
  ASSERT_EQ(a.code, 0) << a.err;
  CliRun b = run("evaluate --checkpoint " + ckpt + " --config " + cfg + " --out " + path("b.csv").string());
  ASSERT_EQ(b.code, 0) << b.err;
  EXPECT_EQ(slurp(path("a.csv")), slurp(path("b.csv")));
  EXPECT_EQ(a.out.rfind("tradeoff ", 0), 0u) << a.out;

  CliRun v = run("evaluate --checkpoint " + ckpt + " --config " + cfg + " --split validation");
  ASSERT_EQ(v.code, 0) << v.err;
  const auto lines = lines_of(slurp(path("m") / "metrics_validation.csv"));
  ASSERT_EQ(lines.size(), 14u);
  EXPECT_EQ(lines[0], "metric,k,value");

  CliRun k = run("evaluate --checkpoint " + ckpt + " --config " + cfg + " --k 1,3 --out " + path("k.csv").string());
  ASSERT_EQ(k.code, 0) << k.err;
  EXPECT_EQ(lines_of(slurp(path("k.csv"))).size(), 10u);

  EXPECT_EQ(run("evaluate --checkpoint " + ckpt + " --config " + cfg + " --k 0").code, 2);
  EXPECT_EQ(run("evaluate --checkpoint " + ckpt + " --config " + cfg + " --split train").code, 2);
}

TEST_F(Cli, EvaluateRefusesMismatchedCheckpoints) {
  ASSERT_EQ(run("train --config " + tiny_ + " --out " + path("m").string()).code, 0);
  json wider = tiny_json();
  wider["model"]["filters"] = 5;
  CliRun r = run("evaluate --checkpoint " + (path("m") / "checkpoint.bin").string() + " --config " +
                 write_config("wider.json", wider));
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("shape"), std::string::npos) << r.err;

  std::string bytes = slurp(path("m") / "checkpoint.bin");
  bytes.resize(bytes.size() / 2);
  std::ofstream(path("half.bin"), std::ios::binary) << bytes;
  EXPECT_EQ(run("evaluate --checkpoint " + path("half.bin").string() + " --config " + tiny_).code, 2);
}

TEST_F(Cli, AblateProducesOneRowPerVariant) {
  json j = tiny_json();
  j["optimizer"]["max_epochs"] = 1;
  const std::string cfg = write_config("one_epoch.json", j);
  CliRun r = run("ablate --config " + cfg + " --variants lti,sti,d2nn --out " + path("abl").string());
  ASSERT_EQ(r.code, 0) << r.err;
  const auto lines = lines_of(slurp(path("abl") / "ablation.csv"));
  ASSERT_EQ(lines.size(), 4u);
  EXPECT_EQ(lines[0], "variant,auc,mean_ndcg,mean_div,tradeoff");
  EXPECT_EQ(lines[1].rfind("lti,", 0), 0u);
  EXPECT_EQ(lines[2].rfind("sti,", 0), 0u);
  EXPECT_EQ(lines[3].rfind("d2nn,", 0), 0u);
  EXPECT_TRUE(fs::exists(path("abl") / "metrics_sti.csv"));

  CliRun mh = run("ablate --config " + cfg + " --variants multihead:16 --out " + path("mh").string());
  ASSERT_EQ(mh.code, 0) << mh.err;
  EXPECT_TRUE(fs::exists(path("mh") / "metrics_multihead-16.csv"));

  EXPECT_EQ(run("ablate --config " + cfg + " --variants , --out " + path("e").string()).code, 2);
  EXPECT_EQ(run("ablate --config " + cfg + " --variants d2nn,lstm --out " + path("e").string()).code, 2);
}

TEST_F(Cli, ReportMergesAndValidates) {
  const std::string m1 = path("run_a.csv").string(), m2 = path("run_b.csv").string();
  d2nn::MetricsReport ra, rb;
  ra.rmse = 0.4;
  ra.auc = 0.7;
  ra.ks = rb.ks = {5, 10};
  ra.ndcg = {0.3, 0.4};
  ra.div = {0.5, 0.6};
  ra.finalize();
  rb = ra;
  rb.auc = 0.8;
  rb.div = {0.2, 0.25};
  rb.finalize();
  d2nn::write_report_csv(m1, ra);
  d2nn::write_report_csv(m2, rb);

  CliRun single = run("report --in " + m1);
  ASSERT_EQ(single.code, 0) << single.err;
  EXPECT_EQ(single.out, slurp(m1));

  CliRun both = run("report --in " + m1 + " " + m2);
  ASSERT_EQ(both.code, 0) << both.err;
  const auto rows = lines_of(both.out);
  ASSERT_EQ(rows.size(), 3u);
  EXPECT_EQ(rows[0].rfind("variant,rmse,auc,ndcg@5,ndcg@10,div@5,div@10,mean_ndcg,mean_div,tradeoff", 0), 0u);
  EXPECT_EQ(rows[1].rfind("run_a,", 0), 0u);
  EXPECT_EQ(rows[2].rfind("run_b,", 0), 0u);
  // The tradeoff column agrees with the harmonic mean of the row's own means.
  for (std::size_t i = 1; i < rows.size(); ++i) {
    std::vector<double> cells;
    std::stringstream ss(rows[i]);
    std::string c;
    std::getline(ss, c, ',');
    while (std::getline(ss, c, ',')) cells.push_back(d2nn::parse_double(c));
    const std::size_t n = cells.size();
    EXPECT_EQ(cells[n - 1], d2nn::tradeoff(cells[n - 3], cells[n - 2]));
  }

  CliRun md = run("report --in " + m1 + " " + m2 + " --format md");
  ASSERT_EQ(md.code, 0) << md.err;
  EXPECT_EQ(md.out.rfind("| variant | rmse | auc |", 0), 0u) << md.out;
  EXPECT_NE(md.out.find("| run_b | 0.400 | 0.800 |"), std::string::npos) << md.out;

  std::ofstream(path("abl.csv")) << "variant,auc\nrun_a,0.7\n";
  EXPECT_EQ(run("report --in " + m1 + " " + path("abl.csv").string()).code, 0);
  std::ofstream(path("abl2.csv")) << "variant,auc\nrun_a,0.9\n";
  EXPECT_EQ(run("report --in " + m1 + " " + path("abl2.csv").string()).code, 2);
  EXPECT_EQ(run("report --in " + m1 + " --format html").code, 2);
}

TEST_F(Cli, HistoryCapTruncationIsReported) {
  json j = tiny_json();
  j["model"]["history_cap"] = 2;
  j["optimizer"]["max_epochs"] = 1;
  const std::string cfg = write_config("capped.json", j);
  CliRun r = run("train --config " + cfg + " --out " + path("capped").string());
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.err.find("older clicks are ignored"), std::string::npos) << r.err;
  CliRun plain = run("train --config " + tiny_ + " --out " + path("plain").string());
  EXPECT_EQ(plain.err.find("older clicks are ignored"), std::string::npos);
}

TEST_F(Cli, ShippedConfigsParse) {
  for (const auto& entry : fs::directory_iterator(fs::path(D2NN_SOURCE_DIR) / "configs"))
    EXPECT_NO_THROW(d2nn::load_run_config(entry.path().string())) << entry.path();
}

}  // namespace
