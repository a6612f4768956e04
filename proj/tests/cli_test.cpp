#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "lir/data.hpp"
#include "lir/detectors.hpp"
#include "lir/nn.hpp"
#include "lir/pipeline.hpp"
#include "lir/run_config.hpp"

namespace fs = std::filesystem;

namespace lir {
namespace {

int config_error_line(const std::string& text) {
  try {
    parse_run_config(text);
  } catch (const ConfigError& e) {
    return e.line();
  }
  ADD_FAILURE() << "accepted: " << text;
  return -1;
}

TEST(RunConfig, Defaults) {
  const auto c = parse_run_config("", "/base");
  EXPECT_EQ(c.out_dir, fs::path("/base/runs"));
  EXPECT_EQ(c.seeds, std::vector<std::uint64_t>{0});
  EXPECT_FALSE(c.train.rebo);
  EXPECT_EQ(c.train.hidden, (std::vector<int>{16, 16}));
  EXPECT_EQ(c.train.epochs, 100);
  EXPECT_FALSE(c.include_logits);
  EXPECT_FALSE(c.knn_k);
  EXPECT_EQ(c.vae.epochs, 200);
}

TEST(RunConfig, ParsesEveryKnownKey) {
  const auto c = parse_run_config(R"(# comment
out = results/a
seeds = 3, 4,5
task.n_classes = 4
task.radius = 6.5
train.objective = rebo
train.hidden = 8,8,8
rebo.lambda = 0.25
rebo.m_in = -3
rebo.m_out = -1
rebo.margins = calibrated
rebo.layers = 1,3
eval.detectors = ebo,knn
eval.include_logits = true
knn.k = 7
vae.latent = 2
)",
                                  "/cfg");
  EXPECT_EQ(c.out_dir, fs::path("/cfg/results/a"));
  EXPECT_EQ(c.seeds, (std::vector<std::uint64_t>{3, 4, 5}));
  EXPECT_EQ(c.task.n_classes, 4);
  EXPECT_EQ(c.task.radius, 6.5);
  ASSERT_TRUE(c.train.rebo);
  EXPECT_EQ(c.train.rebo->lambda, 0.25);
  EXPECT_EQ(c.train.rebo->m_in, -3.0);
  EXPECT_TRUE(c.train.rebo->calibrate_margins);
  EXPECT_EQ(c.train.rebo->layer_set, (std::vector<int>{1, 3}));
  EXPECT_EQ(c.train.hidden, (std::vector<int>{8, 8, 8}));
  EXPECT_EQ(c.detectors, (std::vector<std::string>{"ebo", "knn"}));
  EXPECT_TRUE(c.include_logits);
  EXPECT_EQ(c.knn_k, 7u);
  EXPECT_EQ(c.vae.latent, 2);
  EXPECT_EQ(c.seed_dir(4), fs::path("/cfg/results/a/seed_4"));
}

TEST(RunConfig, RejectsMalformedInput) {
  EXPECT_EQ(config_error_line("seeds = 1\ncolour = blue\n"), 2);
  EXPECT_EQ(config_error_line("seeds = 1\nseeds = 2\n"), 2);
  EXPECT_EQ(config_error_line("\n\ntrain.epochs =\n"), 3);
  EXPECT_EQ(config_error_line("train.epochs 5\n"), 1);
  EXPECT_EQ(config_error_line("train.epochs = five\n"), 1);
  EXPECT_EQ(config_error_line("train.lr = 0.1x\n"), 1);
  EXPECT_EQ(config_error_line("train.objective = hinge\n"), 1);
  EXPECT_EQ(config_error_line("eval.detectors = ebo,mds\n"), 1);
  EXPECT_EQ(config_error_line("eval.include_logits = maybe\n"), 1);
}

TEST(RunConfig, CanonicalFormAndHash) {
  const auto a = parse_run_config("train.epochs = 5\nseeds = 1\n", "/x");
  const auto b = parse_run_config("seeds=1\n# same settings, other order\ntrain.epochs=5\n", "/x");
  const auto c = parse_run_config("seeds=1\ntrain.epochs=6\n", "/x");
  EXPECT_EQ(a.canonical(), b.canonical());
  EXPECT_EQ(a.hash(), b.hash());
  EXPECT_NE(a.hash(), c.hash());
  EXPECT_EQ(a.hash().size(), 16u);
  EXPECT_NE(a.canonical().find("train.epochs=5\n"), std::string::npos);
}

TEST(RunConfig, LoadResolvesRelativeToFile) {
  const auto dir = fs::temp_directory_path() / "lir_cfg_test";
  fs::create_directories(dir);
  std::ofstream(dir / "run.cfg") << "out = here\n";
  EXPECT_EQ(load_run_config(dir / "run.cfg").out_dir, (dir / "here").lexically_normal());
  EXPECT_THROW(load_run_config(dir / "missing.cfg"), Error);
  fs::remove_all(dir);
}

struct Run {
  int status;
  std::string output;
};

Run run_cli(const std::string& args) {
  const std::string cmd = std::string(LIR_CLI_PATH) + " " + args + " 2>&1";
  Run r{-1, {}};
  FILE* pipe = popen(cmd.c_str(), "r");
  if (!pipe) return r;
  char buf[4096];
  while (std::fgets(buf, sizeof buf, pipe)) r.output += buf;
  const int raw = pclose(pipe);
  r.status = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
  return r;
}

std::string fmt_threshold(double t) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", t);
  return buf;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

std::vector<std::vector<std::string>> read_csv(const fs::path& p) {
  std::vector<std::vector<std::string>> rows;
  std::istringstream in(slurp(p));
  std::string line;
  while (std::getline(in, line)) {
    std::vector<std::string> cells;
    std::istringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    rows.push_back(cells);
  }
  return rows;
}

class EndToEnd : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = new fs::path(fs::temp_directory_path() / "lir_cli_e2e");
    fs::remove_all(*dir_);
    fs::create_directories(*dir_);
    std::ofstream(*dir_ / "run.cfg") << "out = runs\n"
                                        "seeds = 0\n"
                                        "task.n_train = 600\n"
                                        "task.n_seen_ood = 600\n"
                                        "task.n_eval = 400\n"
                                        "train.epochs = 40\n"
                                        "vae.epochs = 40\n"
                                        "eval.include_logits = true\n";
    for (const char* cmd : {"gen", "train", "eval"}) {
      const auto r = run_cli(std::string(cmd) + " --config " + (*dir_ / "run.cfg").string());
      ASSERT_EQ(r.status, 0) << cmd << ": " << r.output;
    }
  }
  static void TearDownTestSuite() {
    fs::remove_all(*dir_);
    delete dir_;
  }
  static fs::path seed0() { return *dir_ / "runs" / "seed_0"; }
  static fs::path* dir_;
};
fs::path* EndToEnd::dir_ = nullptr;

TEST_F(EndToEnd, WritesArtifactsAndManifests) {
  for (const char* f : {"net.lirn", "train_log.csv", "train_meta.json", "task/task.json", "eval/report.csv",
                        "eval/summary.json", "eval/profile.svg", "eval/detectors/ebo.lird",
                        "eval/detectors/ag_md.lird", "eval/detectors/ag_knn.lird", "eval/detectors/ag_vae.lird",
                        "eval/energies/test_id.lire", "eval/energies/far_ood.lire"})
    EXPECT_TRUE(fs::exists(seed0() / f)) << f;
  for (const char* m : {"manifest_gen.json", "manifest_train.json", "manifest_eval.json"}) {
    const auto text = slurp(*dir_ / "runs" / m);
    EXPECT_NE(text.find("config_hash"), std::string::npos) << m;
    EXPECT_NE(text.find("LIRE"), std::string::npos) << m;
  }
  const auto svg = slurp(seed0() / "eval" / "profile.svg");
  EXPECT_EQ(svg.rfind("<svg", 0), 0u);
  EXPECT_NE(svg.find("far_ood"), std::string::npos);
  const auto log = read_csv(seed0() / "train_log.csv");
  ASSERT_EQ(log.size(), 41u);
  EXPECT_EQ(log[0].front(), "epoch");
  EXPECT_EQ(log[0].back(), "train_acc");
}

TEST_F(EndToEnd, ReportShapeAndBhlDominance) {
  const auto rows = read_csv(seed0() / "eval" / "report.csv");
  ASSERT_FALSE(rows.empty());
  EXPECT_EQ(rows[0], (std::vector<std::string>{"detector", "layer", "split_name", "auroc", "fpr_at_tpr95", "n_id",
                                               "n_ood"}));
  std::map<std::string, double> ebo, bhl;
  std::size_t splits = 0;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    ASSERT_EQ(rows[i].size(), 7u);
    const double a = std::stod(rows[i][3]);
    EXPECT_GE(a, 0.0);
    EXPECT_LE(a, 1.0);
    if (rows[i][0] == "ebo") ebo[rows[i][2]] = a, ++splits;
    if (rows[i][0] == "bhl") bhl[rows[i][2]] = a;
  }
  EXPECT_EQ(splits, 9u);
  for (const auto& [split, a] : ebo) EXPECT_GE(bhl.at(split), a) << split;
}

TEST_F(EndToEnd, EvalIsByteReproducible) {
  const fs::path eval = seed0() / "eval";
  std::map<std::string, std::string> before;
  for (const auto& f : fs::recursive_directory_iterator(eval))
    if (f.is_regular_file()) before[fs::relative(f.path(), eval).string()] = slurp(f.path());
  const auto r = run_cli("eval --config " + (*dir_ / "run.cfg").string());
  ASSERT_EQ(r.status, 0) << r.output;
  EXPECT_GT(before.size(), 20u);
  for (const auto& [name, bytes] : before) EXPECT_EQ(slurp(eval / name), bytes) << name;
}

TEST_F(EndToEnd, ScoreThresholdAtIdFifthPercentile) {
  const auto ebo = load_detector(seed0() / "eval" / "detectors" / "ebo.lird");
  auto scores = ebo.score_rows(read_energy_file(seed0() / "eval" / "energies" / "test_id.lire"));
  std::sort(scores.begin(), scores.end());
  const double threshold = scores[static_cast<std::size_t>(std::floor(0.05 * static_cast<double>(scores.size())))];

  TaskSpec spec;
  spec.n_eval = 2000;
  const auto fresh = gen_task(spec, 12345).test_id;
  const auto net = load_net(seed0() / "net.lirn");
  const auto fresh_path = *dir_ / "fresh_id.lire";
  write_energy_file(extract_energies(net, fresh), fresh_path);

  const auto r = run_cli("score --detector " + (seed0() / "eval" / "detectors" / "ebo.lird").string() +
                         " --energies " + fresh_path.string() + " --threshold " + fmt_threshold(threshold));
  ASSERT_EQ(r.status, 0) << r.output;
  std::istringstream in(r.output);
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "index,score,verdict");
  std::size_t n = 0, accepted = 0;
  while (std::getline(in, line)) {
    ++n;
    accepted += line.ends_with(",ID");
  }
  ASSERT_EQ(n, fresh.n);
  EXPECT_GE(static_cast<double>(accepted) / static_cast<double>(n), 0.93);
}

TEST_F(EndToEnd, FailuresNameTheStage) {
  const auto missing = run_cli("train --config " + (*dir_ / "run.cfg").string() + " --out " +
                               (*dir_ / "nowhere").string());
  EXPECT_NE(missing.status, 0);
  EXPECT_NE(missing.output.find("stage train/load-task"), std::string::npos) << missing.output;

  std::ofstream(*dir_ / "bad.cfg") << "train.epochs = 1\nbogus = 2\n";
  const auto bad = run_cli("gen --config " + (*dir_ / "bad.cfg").string());
  EXPECT_EQ(bad.status, 2);
  EXPECT_NE(bad.output.find("stage config"), std::string::npos) << bad.output;
  EXPECT_NE(bad.output.find("line 2"), std::string::npos) << bad.output;

  LabeledMatrix narrow(3, 2);
  write_energy_file(narrow, *dir_ / "narrow.lire");
  const auto dim = run_cli("score --detector " + (seed0() / "eval" / "detectors" / "ag_md.lird").string() +
                           " --energies " + (*dir_ / "narrow.lire").string() + " --threshold 0");
  EXPECT_EQ(dim.status, 1);
  EXPECT_NE(dim.output.find("stage score"), std::string::npos) << dim.output;

  std::ofstream(*dir_ / "junk.lird") << "not a detector";
  const auto junk = run_cli("score --detector " + (*dir_ / "junk.lird").string() + " --energies " +
                            (*dir_ / "narrow.lire").string() + " --threshold 0");
  EXPECT_EQ(junk.status, 1);
  EXPECT_NE(junk.output.find("stage score/load-detector"), std::string::npos) << junk.output;

  EXPECT_NE(run_cli("score --detector /nonexistent --energies /nonexistent --threshold 0").status, 0);
}

}  // namespace
}  // namespace lir
