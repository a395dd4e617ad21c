#include <gtest/gtest.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "gnas/errors.hpp"
#include "harness.hpp"

using namespace gnas;
using namespace gnas::harness;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  fs::path dir = fs::temp_directory_path() / ("gnas_test_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

std::vector<std::string> lines_of(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  for (std::string l; std::getline(in, l);) out.push_back(l);
  return out;
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(GNAS_CLI) + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

const char* kQuickSearch = R"({
  "layers": 1, "heads": [1, 2], "hidden": [4, 8],
  "episodes": 4, "child_epochs": 3, "patience": 3,
  "nodes_per_block": 15, "train_per_class": 4, "feature_dim": 5,
  "record_wall_time": false
})";

}  // namespace

TEST(Config, ParsesKnownKeys) {
  const RunConfig c = parse_config(R"({"strategy": "random", "episodes": 7, "seed": 3, "lr": 0.01,
                                       "hidden": [8, 4], "skip": "searched", "repeats": 2,
                                       "dataset": "multigraph", "graph_count": 5})");
  EXPECT_EQ(c.search.strategy, Strategy::Random);
  EXPECT_EQ(c.search.episodes, 7u);
  EXPECT_EQ(c.search.seed, 3u);
  EXPECT_EQ(c.search.train.lr, 0.01);
  EXPECT_EQ(c.search.space.hidden, (std::vector<int>{4, 8}));
  EXPECT_EQ(c.search.space.skip, SkipMode::Searched);
  EXPECT_EQ(c.repeats, 2u);
  EXPECT_EQ(c.dataset, DatasetKind::Multigraph);
  EXPECT_EQ(c.multigraph.graph_count, 5u);
}

TEST(Config, RejectsUnknownKeysAndBadValues) {
  auto message = [](const std::string& json) -> std::string {
    try {
      parse_config(json);
    } catch (const ParameterError& e) {
      return e.what();
    }
    return "";
  };
  EXPECT_NE(message(R"({"episodez": 3})").find("episodez"), std::string::npos);
  EXPECT_NE(message(R"({"episodes": "many"})").find("episodes"), std::string::npos);
  EXPECT_NE(message(R"({"heads": [3]})").find("heads"), std::string::npos);
  EXPECT_NE(message(R"({"dataset": "citation"})").find("dataset_path"), std::string::npos);
  EXPECT_NE(message("[1, 2]"), "");
  EXPECT_NE(message("{not json"), "");
}

TEST(Config, ArchStringReplicatesSingleLayer) {
  const ActionSpace space = ActionSpace::full(2);
  const ArchDescription a = parse_arch("first-order,gcn,sum,relu,1,16", space);
  ASSERT_EQ(a.layers.size(), 2u);
  EXPECT_EQ(a.layers[0], a.layers[1]);
  EXPECT_THROW(parse_arch("first-order,gcn,sum,relu,3,16", space), ValidationError);
}

TEST(Report, CurveIsMonotone) {
  SearchLog log;
  const double rewards[] = {0.5, 0.9, 0.2, 0.85, 0.95};
  for (std::size_t e = 0; e < 5; ++e) log.records.push_back(SearchRecord{e, {}, rewards[e]});
  std::ostringstream out;
  write_curve_csv(out, log, 0.8);
  const auto lines = lines_of(out.str());
  ASSERT_EQ(lines.size(), 6u);
  EXPECT_EQ(lines[0], "episode,best_reward,count_above_threshold");
  EXPECT_EQ(lines[1], "0,0.5,0");
  EXPECT_EQ(lines[3], "2,0.9,1");
  EXPECT_EQ(lines[5], "4,0.95,3");
}

TEST(Report, StdOnlyWithSeveralRuns) {
  std::ostringstream out;
  write_report_csv(out, {ReportRow{"a", 2, 10, 0.5, 0.8, std::nullopt}, ReportRow{"b", 2, 10, 0.5, 0.8, 0.1}});
  const auto lines = lines_of(out.str());
  ASSERT_EQ(lines.size(), 3u);
  EXPECT_EQ(lines[1].back(), ',');
  EXPECT_NE(lines[2].back(), ',');
}

TEST(Cli, SearchRandomAndReport) {
  const fs::path dir = scratch("report");
  std::ofstream(dir / "cfg.json") << kQuickSearch;
  const std::string cfg = "--config " + (dir / "cfg.json").string();
  ASSERT_EQ(run_cli("search " + cfg + " --out " + (dir / "g").string()), 0);
  ASSERT_EQ(run_cli("random " + cfg + " --out " + (dir / "r").string()), 0);
  for (const char* sub : {"g", "r"}) {
    EXPECT_TRUE(fs::exists(dir / sub / "search.log"));
    EXPECT_TRUE(fs::exists(dir / sub / "topk.csv"));
  }
  ASSERT_EQ(run_cli("report " + cfg + " --out " + (dir / "rep").string() + " " + (dir / "g" / "search.log").string() +
                    " " + (dir / "r" / "search.log").string()),
            0);
  const auto report = lines_of(slurp(dir / "rep" / "report.csv"));
  ASSERT_EQ(report.size(), 3u);
  EXPECT_EQ(report[0], "model,depth,params,seconds_per_epoch,metric_mean,metric_std");
  for (const char* s : {"graphnas", "random"}) {
    const auto curve = lines_of(slurp(dir / "rep" / (std::string("curve_") + s + ".csv")));
    EXPECT_EQ(curve.size(), 5u);
  }
  ASSERT_EQ(run_cli("derive " + cfg + " --out " + (dir / "g").string()), 0);
  EXPECT_TRUE(fs::exists(dir / "g" / "derive.csv"));
}

TEST(Cli, SeedFlagOverridesConfig) {
  const fs::path dir = scratch("seed");
  std::ofstream(dir / "a.json") << R"({"layers": 1, "heads": [1], "hidden": [4], "episodes": 3, "child_epochs": 2,
                                       "patience": 2, "nodes_per_block": 15, "train_per_class": 4,
                                       "record_wall_time": false, "seed": 5})";
  const std::string cfg = "--config " + (dir / "a.json").string();
  ASSERT_EQ(run_cli("search " + cfg + " --out " + (dir / "x").string()), 0);
  ASSERT_EQ(run_cli("search " + cfg + " --seed 9 --out " + (dir / "y").string()), 0);
  ASSERT_EQ(run_cli("search " + cfg + " --seed 5 --out " + (dir / "z").string()), 0);
  const std::string x = slurp(dir / "x" / "search.log");
  EXPECT_NE(x.find("# seed=5"), std::string::npos);
  EXPECT_NE(slurp(dir / "y" / "search.log").find("# seed=9"), std::string::npos);
  EXPECT_EQ(x, slurp(dir / "z" / "search.log"));
}

TEST(Cli, TrainWritesReport) {
  const fs::path dir = scratch("train");
  std::ofstream(dir / "t.json") << R"({"layers": 2, "max_epochs": 20, "patience": 5, "repeats": 2})";
  ASSERT_EQ(run_cli("train --config " + (dir / "t.json").string() + " --arch first-order,gcn,sum,relu,1,16 --out " +
                    dir.string()),
            0);
  const auto report = lines_of(slurp(dir / "report.csv"));
  ASSERT_EQ(report.size(), 2u);
  EXPECT_EQ(report[1].rfind("\"first-order,gcn,sum,relu,1,16;first-order,gcn,sum,relu,1,16\",2,", 0), 0u);
  EXPECT_NE(report[1].back(), ',');  // two repeats give a std
}

TEST(Cli, ErrorsExitNonZero) {
  const fs::path dir = scratch("errors");
  std::ofstream(dir / "bad.json") << R"({"bogus_key": 1})";
  EXPECT_EQ(run_cli("search --config " + (dir / "bad.json").string()), 2);
  std::ofstream(dir / "cit.json") << R"({"dataset": "citation"})";
  EXPECT_EQ(run_cli("train --config " + (dir / "cit.json").string() + " --arch first-order,gcn,sum,relu,1,16"), 2);
  EXPECT_EQ(run_cli("search --strategy evolution --out " + dir.string()), 2);
  EXPECT_NE(run_cli("frobnicate"), 0);
}
