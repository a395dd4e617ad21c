#pragma once

// Command implementations behind the `gnas` executable. Each command takes a
// resolved RunConfig, writes its files under `out_dir` and returns an exit code.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "gnas/graph.hpp"
#include "gnas/search.hpp"

namespace gnas::harness {

enum class DatasetKind { Sbm, Multigraph, Citation };

struct RunConfig {
  SearchConfig search;
  DatasetKind dataset = DatasetKind::Sbm;
  std::filesystem::path dataset_path;
  SbmParams sbm;
  MultigraphParams multigraph;
  std::filesystem::path out_dir = "out";
  // Seeds run per command; metric std is reported when > 1.
  std::size_t repeats = 1;
  // Validation reward above which an episode counts toward the threshold curve.
  double threshold = 0.8;
  // Token string for `train`; one layer spec is replicated to every layer.
  std::string arch;
  // Search logs aggregated by `report`.
  std::vector<std::filesystem::path> logs;
};

// Fields parsed from a flat JSON object. Unknown keys, wrong types and out of
// range values throw ParameterError naming the key.
RunConfig parse_config(const std::string& json_text);
RunConfig load_config(const std::filesystem::path& path);

// Resolves a `--arch` string against the configured space.
ArchDescription parse_arch(const std::string& tokens, const ActionSpace& space);

LabeledDataset load_dataset(const RunConfig& config);

struct ReportRow {
  std::string model;
  std::size_t depth = 0;
  std::size_t params = 0;
  double seconds_per_epoch = 0.0;
  double metric_mean = 0.0;
  std::optional<double> metric_std;  // only when more than one run
};

void write_report_csv(std::ostream& out, const std::vector<ReportRow>& rows);
// episode, cumulative best reward, cumulative count above threshold.
void write_curve_csv(std::ostream& out, const SearchLog& log, double threshold);

int cmd_search(const RunConfig& config, std::ostream& msg);
int cmd_derive(const RunConfig& config, std::ostream& msg);
int cmd_train(const RunConfig& config, std::ostream& msg);
int cmd_random(const RunConfig& config, std::ostream& msg);
int cmd_report(const RunConfig& config, std::ostream& msg);

}  // namespace gnas::harness
