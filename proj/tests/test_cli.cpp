#include <gtest/gtest.h>

#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>

#include "json.hpp"
#include "mambapupil/config.hpp"

namespace fs = std::filesystem;
using namespace mambapupil;

namespace {

struct Outcome {
  int code = -1;
  std::string err;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

class Cli : public ::testing::Test {
 protected:
  static fs::path dir;

  static Outcome run(const std::string& args, const std::string& env = "") {
    const fs::path err = dir / "stderr.txt";
    const std::string cmd = env + " '" + std::string(MAMBAPUPIL_CLI) + "' " + args + " 2> '" + err.string() + "'";
    const int status = std::system(cmd.c_str());
    return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, slurp(err)};
  }

  static std::string p(const std::string& name) { return "'" + (dir / name).string() + "'"; }

  static void SetUpTestSuite() {
    dir = fs::temp_directory_path() / ("mambapupil_cli_" + std::to_string(::getpid()));
    fs::create_directories(dir);
    for (int i = 0; i < 2; ++i) {
      const std::string n = std::to_string(i);
      ASSERT_EQ(run("synth --preset mixed --duration 4 --seed " + std::to_string(20 + i) + " --events-out " +
                    p("ev" + n + ".csv") + " --labels-out " + p("lb" + n + ".csv"))
                    .code,
                0);
    }
    RunConfig c = desk_config();
    c.train.epochs = 2;
    c.data.events = {(dir / "ev0.csv").string(), (dir / "ev1.csv").string()};
    c.data.labels = {(dir / "lb0.csv").string(), (dir / "lb1.csv").string()};
    c.output.checkpoint = (dir / "model.mpck").string();
    c.output.metrics = (dir / "metrics.csv").string();
    std::ofstream(dir / "run.json") << dump_run_config(c);
  }

  static void TearDownTestSuite() { fs::remove_all(dir); }
};

fs::path Cli::dir;

}  // namespace

TEST_F(Cli, SynthIsDeterministic) {
  ASSERT_EQ(run("synth --preset mixed --seed 7 --duration 2 --events-out " + p("a.csv") + " --labels-out " + p("al.csv")).code, 0);
  ASSERT_EQ(run("synth --preset mixed --seed 7 --duration 2 --events-out " + p("b.csv") + " --labels-out " + p("bl.csv")).code, 0);
  EXPECT_FALSE(slurp(dir / "a.csv").empty());
  EXPECT_EQ(slurp(dir / "a.csv"), slurp(dir / "b.csv"));
  EXPECT_EQ(slurp(dir / "al.csv"), slurp(dir / "bl.csv"));
}

TEST_F(Cli, FixationPresetIsNearlySilent) {
  ASSERT_EQ(run("synth --preset fixation --duration 2 --events-out " + p("f.csv") + " --labels-out " + p("fl.csv")).code, 0);
  std::ifstream in(dir / "f.csv");
  std::size_t lines = 0;
  for (std::string l; std::getline(in, l);) ++lines;
  EXPECT_LT(lines, 200u);
  std::ifstream labels(dir / "fl.csv");
  std::size_t n = 0;
  for (std::string l; std::getline(labels, l);) ++n;
  EXPECT_EQ(n, 201u);
}

TEST_F(Cli, SynthUnwritableOutputIsDataError) {
  const Outcome r = run("synth --events-out /nonexistent/dir/e.csv --labels-out " + p("x.csv"));
  EXPECT_EQ(r.code, 2);
}

TEST_F(Cli, UsageErrors) {
  EXPECT_EQ(run("").code, 1);
  EXPECT_EQ(run("frobnicate").code, 1);
  EXPECT_EQ(run("synth --preset nope --events-out a --labels-out b").code, 1);
  EXPECT_EQ(run("--help").code, 0);
}

TEST_F(Cli, TrainEvalPredict) {
  const Outcome t = run("train --config " + p("run.json") + " --epochs 5");
  ASSERT_EQ(t.code, 0) << t.err;
  ASSERT_TRUE(fs::exists(dir / "model.mpck"));
  std::ifstream metrics(dir / "metrics.csv");
  std::string header;
  std::getline(metrics, header);
  EXPECT_EQ(header, "epoch,train_loss,val_loss,p5,p10,p15,p_error");
  std::size_t rows = 0;
  for (std::string l; std::getline(metrics, l);) ++rows;
  EXPECT_EQ(rows, 5u);

  const std::string eval = "eval --config " + p("run.json") + " --metrics-out " + p("m1.json") + " --predictions-out " +
                           p("pred1.csv");
  ASSERT_EQ(run(eval).code, 0);
  ASSERT_EQ(run("eval --config " + p("run.json") + " --metrics-out " + p("m2.json") + " --predictions-out " +
                p("pred2.csv"))
                .code,
            0);
  EXPECT_EQ(slurp(dir / "m1.json"), slurp(dir / "m2.json"));
  EXPECT_EQ(slurp(dir / "pred1.csv"), slurp(dir / "pred2.csv"));
  const auto j = nlohmann::json::parse(slurp(dir / "m1.json"));
  std::set<std::string> keys;
  for (auto it = j.begin(); it != j.end(); ++it) keys.insert(it.key());
  EXPECT_EQ(keys, (std::set<std::string>{"p5", "p10", "p15", "p_error", "n"}));
  EXPECT_LE(j["p5"].get<double>(), j["p10"].get<double>());

  ASSERT_EQ(run("predict --config " + p("run.json") + " --out " + p("live.csv")).code, 0);
  std::ifstream live(dir / "live.csv");
  std::string first;
  std::getline(live, first);
  EXPECT_EQ(std::count(first.begin(), first.end(), ','), 2);

  EXPECT_EQ(run("eval --config " + p("run.json") + " --checkpoint " + p("missing.mpck")).code, 2);
}

TEST_F(Cli, VariantOverrideTrains) {
  const Outcome r = run("train --config " + p("run.json") + " --epochs 1 --variant no_ssm --checkpoint " + p("ns.mpck") +
                    " --metrics " + p("ns.csv") + " --dump-config " + p("ns.json"));
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(load_run_config((dir / "ns.json").string()).model.variant, Variant::no_ssm);
  // A full-model config cannot load the ablation checkpoint.
  EXPECT_EQ(run("eval --config " + p("run.json") + " --checkpoint " + p("ns.mpck")).code, 2);
}

TEST_F(Cli, InvalidConfigFieldReportsPath) {
  std::ofstream(dir / "bad.json") << R"({"model": {"gru_hidden": -3}})";
  Outcome r = run("train --config " + p("bad.json"));
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("model"), std::string::npos) << r.err;
  std::ofstream(dir / "typo.json") << R"({"augment": {"prob_flp": 0.5}})";
  r = run("train --config " + p("typo.json"));
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("augment.prob_flp"), std::string::npos) << r.err;
}

TEST_F(Cli, ConfigPathFromEnvironment) {
  std::ofstream(dir / "envbad.json") << R"({"train": {"epochs": 0}})";
  const Outcome r = run("train", "MAMBAPUPIL_CONFIG=" + p("envbad.json"));
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("train"), std::string::npos) << r.err;
}

TEST_F(Cli, NonFiniteLossIsNumericFailure) {
  RunConfig c = load_run_config((dir / "run.json").string());
  c.train.schedule.lr_max = 1e30;
  c.train.epochs = 3;
  c.output.checkpoint = (dir / "nan.mpck").string();
  c.output.metrics = (dir / "nan.csv").string();
  std::ofstream(dir / "nan.json") << dump_run_config(c);
  EXPECT_EQ(run("train --config " + p("nan.json")).code, 3);
}

TEST_F(Cli, EncodeAndAugmentPreview) {
  ASSERT_EQ(run("encode --config " + p("run.json") + " --events " + p("ev0.csv") + " --out " + p("ev0.brep")).code, 0);
  const auto size = fs::file_size(dir / "ev0.brep");
  EXPECT_GT(size, 0u);
  EXPECT_EQ(size % (16 + 4 * 2 * 30 * 40), 0u);

  const std::string aug = "augment-preview --config " + p("run.json") + " --events " + p("ev0.csv") + " --labels " +
                          p("lb0.csv");
  ASSERT_EQ(run(aug + " --start 3 --out " + p("a1.brep") + " --labels-out " + p("a1.csv") + " > /dev/null").code, 0);
  ASSERT_EQ(run(aug + " --start 3 --out " + p("a2.brep") + " --labels-out " + p("a2.csv") + " > /dev/null").code, 0);
  EXPECT_EQ(fs::file_size(dir / "a1.brep"), 45u * (16 + 4 * 2 * 30 * 40));
  EXPECT_EQ(slurp(dir / "a1.brep"), slurp(dir / "a2.brep"));
  EXPECT_EQ(run(aug + " --start 100000").code, 1);
}

TEST_F(Cli, MissingInputIsDataError) {
  EXPECT_EQ(run("train --config " + p("run.json") + " --events " + p("none.csv") + " --labels " + p("lb0.csv")).code, 2);
}
