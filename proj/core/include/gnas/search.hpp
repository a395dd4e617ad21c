#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "gnas/arch_space.hpp"
#include "gnas/controller.hpp"
#include "gnas/gnn.hpp"
#include "gnas/graph.hpp"
#include "gnas/param_store.hpp"

namespace gnas {

enum class Strategy { GraphNas, Random, NasLike, EnasLike };

std::string_view strategy_name(Strategy s);
Strategy parse_strategy(std::string_view name);

// Replaces child training with a lookup; used for tests and zero-cost comparisons.
using SurrogateReward = std::function<double(const ArchDescription&)>;

struct SearchConfig {
  Strategy strategy = Strategy::GraphNas;
  ActionSpace space = ActionSpace::full(2);
  std::size_t episodes = 1000;
  // Epoch budget of every child trained during search.
  std::size_t child_epochs = 200;
  // Random-architecture rounds training shared weights before the controller starts (graphnas only).
  std::size_t exploration_epochs = 0;
  // Children start from and merge into the shared store (graphnas only).
  bool share_params = false;
  std::size_t derive_samples = 20;
  // Shared-weight training epochs before a derive candidate is scored.
  std::size_t derive_iterations = 5;
  // Validation nodes per derive scoring minibatch; 0 uses the whole validation set.
  std::size_t derive_minibatch = 0;
  bool derive_retrain = true;
  std::size_t top_k = 5;
  std::uint64_t seed = 0;

  TrainHyperparams train;
  ControllerOptions controller;
  SamplingOptions sampling;
  double controller_lr = 0.0035;
  double entropy_weight = 1e-4;
  double baseline_decay = 0.95;
  std::size_t batch_size = 1;

  std::size_t workers = 1;
  bool record_wall_time = true;

  // Throws ParameterError naming the offending field.
  void validate() const;
};

// Hyperparameters used for children trained during search: the full
// training settings capped at child_epochs, with dropout and L2 disabled
// when parameters are shared.
TrainHyperparams child_hyperparams(const SearchConfig& config, std::uint64_t seed);

struct SearchRecord {
  std::size_t episode = 0;
  ArchDescription arch;
  double raw_reward = 0.0;
  double shaped_reward = 0.0;
  double baseline = 0.0;
  double wall_ms = 0.0;
};

struct SearchLog {
  std::map<std::string, std::string> header;
  std::vector<SearchRecord> records;
};

// Line-oriented log: '#'-prefixed `key=value` header lines, then one
// tab-separated record per episode: index, arch (layers joined by ';'),
// raw reward, shaped reward, baseline, wall ms.
std::string format_record(const SearchRecord& record);
void write_log_header(std::ostream& out, const std::map<std::string, std::string>& header);
SearchLog read_log(std::istream& in, const ActionSpace& space);

struct SearchResult {
  SearchLog log;
  std::optional<Controller> controller;  // absent for random search
  SharedParamStore store;
  Baseline baseline;
  std::size_t child_optimizer_steps = 0;
  std::size_t diverged_children = 0;
};

// Per-episode seed derived from the run seed; independent of visit order.
std::uint64_t episode_seed(std::uint64_t run_seed, std::uint64_t episode, std::uint64_t stream = 0);

// Shared-weight warm-up with a frozen controller: each round trains a random
// architecture from store copies and merges it back when its shaped reward
// is positive. Rewards update `baseline`.
void exploration_phase(SharedParamStore& store, const ActionSpace& space, const LabeledDataset& dataset,
                       const SearchConfig& config, Baseline& baseline, std::mt19937_64& rng,
                       const SurrogateReward& surrogate = {});

// Runs the configured strategy. When `log_out` is set each record is written
// as soon as its episode finishes.
SearchResult search(const SearchConfig& config, const LabeledDataset& dataset, const SurrogateReward& surrogate = {},
                    std::ostream* log_out = nullptr);

struct DeriveCandidate {
  ArchDescription arch;
  double score = 0.0;
};

struct DeriveResult {
  ArchDescription best_arch;
  double best_score = 0.0;
  std::vector<DeriveCandidate> candidates;
  std::optional<TrainedResult> retrained;
};

// Samples derive_samples architectures from the controller, scores each on a
// validation minibatch after derive_iterations shared-weight epochs, and
// retrains the best (earliest on ties) from scratch with the full settings.
DeriveResult derive(const Controller& controller, const SharedParamStore& store, const LabeledDataset& dataset,
                    const SearchConfig& config, const SurrogateReward& surrogate = {});

// The k highest raw-reward records, descending, ties in episode order.
std::vector<SearchRecord> top_k_report(const SearchLog& log, std::size_t k);

}  // namespace gnas
