#include "gnas/search.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <istream>
#include <numeric>
#include <ostream>
#include <sstream>

#include "parallel.hpp"

namespace gnas {

std::string_view strategy_name(Strategy s) {
  switch (s) {
    case Strategy::GraphNas:
      return "graphnas";
    case Strategy::Random:
      return "random";
    case Strategy::NasLike:
      return "nas-like";
    case Strategy::EnasLike:
      return "enas-like";
  }
  return "?";
}

Strategy parse_strategy(std::string_view name) {
  for (Strategy s : {Strategy::GraphNas, Strategy::Random, Strategy::NasLike, Strategy::EnasLike}) {
    if (strategy_name(s) == name) return s;
  }
  throw ParameterError("strategy: unknown strategy '" + std::string(name) +
                       "' (expected graphnas, random, nas-like or enas-like)");
}

void SearchConfig::validate() const {
  try {
    space.check();
  } catch (const ValidationError& e) {
    throw ParameterError(std::string("space: ") + e.what());
  }
  if (exploration_epochs > 0 && strategy != Strategy::GraphNas) {
    throw ParameterError("exploration_epochs: exploration only applies to the graphnas strategy");
  }
  if (share_params && strategy != Strategy::GraphNas) {
    throw ParameterError("share_params: parameter sharing only applies to the graphnas strategy");
  }
  if (exploration_epochs > 0 && !share_params) {
    throw ParameterError("exploration_epochs: exploration trains shared parameters, enable share_params");
  }
  if (batch_size == 0) throw ParameterError("batch_size: must be >= 1");
  if (derive_samples == 0) throw ParameterError("derive_samples: must be >= 1");
  if (top_k == 0) throw ParameterError("top_k: must be >= 1");
  if (!(baseline_decay > 0.0 && baseline_decay < 1.0)) throw ParameterError("baseline_decay: must lie in (0, 1)");
  if (!(sampling.temperature > 0.0)) throw ParameterError("temperature: must be > 0");
  if (!(sampling.logit_clip > 0.0)) throw ParameterError("logit_clip: must be > 0");
  if (!(train.dropout_p >= 0.0 && train.dropout_p < 1.0)) throw ParameterError("dropout: must lie in [0, 1)");
  if (train.patience > train.max_epochs) throw ParameterError("patience: must not exceed max_epochs");
  if (!(train.lr > 0.0)) throw ParameterError("lr: must be > 0");
  if (!(controller_lr > 0.0)) throw ParameterError("controller_lr: must be > 0");
  if (controller.hidden == 0) throw ParameterError("controller_hidden: must be >= 1");
}

TrainHyperparams child_hyperparams(const SearchConfig& config, std::uint64_t seed) {
  TrainHyperparams hp = config.train;
  hp.max_epochs = config.child_epochs;
  hp.patience = std::min(hp.patience, hp.max_epochs);
  hp.seed = seed;
  if (config.share_params) {
    hp.dropout_p = 0.0;
    hp.l2_lambda = 0.0;
  }
  return hp;
}

std::uint64_t episode_seed(std::uint64_t run_seed, std::uint64_t episode, std::uint64_t stream) {
  // splitmix64 finalizer over a combination of the inputs.
  std::uint64_t z = run_seed ^ (episode * 0x9E3779B97F4A7C15ull) ^ (stream * 0xD1B54A32D192ED03ull);
  z += 0x9E3779B97F4A7C15ull;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

// ---- log format ----------------------------------------------------------------------

std::string format_record(const SearchRecord& r) {
  char buf[160];
  std::snprintf(buf, sizeof buf, "\t%.10g\t%.10g\t%.10g\t%.3f", r.raw_reward, r.shaped_reward, r.baseline, r.wall_ms);
  return std::to_string(r.episode) + "\t" + encode_line(r.arch) + buf;
}

void write_log_header(std::ostream& out, const std::map<std::string, std::string>& header) {
  for (const auto& [k, v] : header) out << "# " << k << '=' << v << '\n';
}

SearchLog read_log(std::istream& in, const ActionSpace& space) {
  SearchLog log;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    if (line[0] == '#') {
      auto eq = line.find('=');
      if (eq == std::string::npos) continue;
      std::string key = line.substr(1, eq - 1);
      key.erase(0, key.find_first_not_of(' '));
      log.header[key] = line.substr(eq + 1);
      continue;
    }
    std::istringstream ss(line);
    std::vector<std::string> fields;
    std::string f;
    while (std::getline(ss, f, '\t')) fields.push_back(f);
    if (fields.size() != 6) throw IngestionError(lineno, "search log: expected 6 tab-separated fields");
    SearchRecord r;
    try {
      r.episode = std::stoull(fields[0]);
      r.arch = decode(fields[1], space);
      r.raw_reward = std::stod(fields[2]);
      r.shaped_reward = std::stod(fields[3]);
      r.baseline = std::stod(fields[4]);
      r.wall_ms = std::stod(fields[5]);
    } catch (const ValidationError& e) {
      throw IngestionError(lineno, std::string("search log arch: ") + e.what());
    } catch (const std::exception&) {
      throw IngestionError(lineno, "search log: malformed number");
    }
    log.records.push_back(std::move(r));
  }
  return log;
}

// ---- child evaluation ----------------------------------------------------------------

namespace {

struct ChildOutcome {
  double reward = 0.0;
  bool diverged = false;
  std::vector<ShareKey> keys;
  std::vector<LayerParams> params;
  std::size_t optimizer_steps = 0;
};

// Builds `arch` (from store copies when `store` is set), trains it for
// `epochs` epochs and returns its best validation metric. Divergence scores 0.
ChildOutcome run_child(const ArchDescription& arch, const LabeledDataset& ds, const SearchConfig& config,
                       const SharedParamStore* store, std::size_t epochs, std::uint64_t seed) {
  ChildOutcome out;
  std::mt19937_64 rng(seed);
  ChildModel model = build_model(arch, ds.feature_dim(), ds.class_count, store, rng);
  TrainHyperparams hp = child_hyperparams(config, episode_seed(seed, 0, 1));
  hp.max_epochs = epochs;
  hp.patience = std::min(hp.patience, epochs);
  try {
    TrainedResult r = train_child(model, ds, hp);
    out.reward = r.best_val_metric;
    out.optimizer_steps = r.optimizer_steps;
  } catch (const TrainingError&) {
    out.reward = 0.0;
    out.diverged = true;
    return out;
  }
  for (const LayerGeometry& g : model.geometry) out.keys.push_back(g.key);
  out.params = std::move(model.layers);
  return out;
}

double elapsed_ms(std::chrono::steady_clock::time_point since) {
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - since).count();
}

std::map<std::string, std::string> log_header(const SearchConfig& c, const LabeledDataset& ds, bool surrogate) {
  std::map<std::string, std::string> h;
  h["strategy"] = std::string(strategy_name(c.strategy));
  h["seed"] = std::to_string(c.seed);
  h["episodes"] = std::to_string(c.episodes);
  h["child_epochs"] = std::to_string(c.child_epochs);
  h["layers"] = std::to_string(c.space.layer_count);
  h["share_params"] = c.share_params ? "true" : "false";
  h["in_dim"] = std::to_string(ds.feature_dim());
  h["classes"] = std::to_string(ds.class_count);
  h["reward"] = surrogate ? "surrogate" : "validation";
  return h;
}

}  // namespace

void exploration_phase(SharedParamStore& store, const ActionSpace& space, const LabeledDataset& dataset,
                       const SearchConfig& config, Baseline& baseline, std::mt19937_64& rng,
                       const SurrogateReward& surrogate) {
  for (std::size_t round = 0; round < config.exploration_epochs; ++round) {
    const ArchDescription arch = random_arch(space, rng);
    if (surrogate) {
      shape_reward(surrogate(arch), baseline, 0.0, 0.0);
      continue;
    }
    ChildOutcome child = run_child(arch, dataset, config, &store, config.child_epochs,
                                   episode_seed(config.seed, round, 2));
    const ShapedReward sr = shape_reward(child.reward, baseline, 0.0, 0.0);
    if (child.diverged) continue;
    for (std::size_t l = 0; l < child.keys.size(); ++l) store.merge_if_positive(child.keys[l], child.params[l], sr.shaped);
  }
}

SearchResult search(const SearchConfig& config, const LabeledDataset& dataset, const SurrogateReward& surrogate,
                    std::ostream* log_out) {
  config.validate();
  if (!surrogate) dataset.validate();
  SearchResult result;
  result.log.header = log_header(config, dataset, static_cast<bool>(surrogate));
  result.baseline.decay = config.baseline_decay;
  if (log_out) write_log_header(*log_out, result.log.header);

  auto emit = [&](SearchRecord rec) {
    if (!config.record_wall_time) rec.wall_ms = 0.0;
    if (log_out) *log_out << format_record(rec) << '\n' << std::flush;
    result.log.records.push_back(std::move(rec));
  };

  if (config.strategy == Strategy::Random) {
    // Episodes are independent, so they may be evaluated in parallel; records
    // are emitted in episode order.
    std::vector<SearchRecord> records(config.episodes);
    std::vector<std::size_t> steps(config.episodes, 0), diverged(config.episodes, 0);
    detail::parallel_for(config.episodes, config.workers, [&](std::size_t e) {
      const auto t0 = std::chrono::steady_clock::now();
      std::mt19937_64 rng(episode_seed(config.seed, e, 3));
      SearchRecord& rec = records[e];
      rec.episode = e;
      rec.arch = random_arch(config.space, rng);
      if (surrogate) {
        rec.raw_reward = surrogate(rec.arch);
      } else {
        ChildOutcome child = run_child(rec.arch, dataset, config, nullptr, config.child_epochs,
                                       episode_seed(config.seed, e));
        rec.raw_reward = child.reward;
        steps[e] = child.optimizer_steps;
        diverged[e] = child.diverged ? 1 : 0;
      }
      rec.wall_ms = elapsed_ms(t0);
    });
    for (std::size_t e = 0; e < config.episodes; ++e) {
      result.child_optimizer_steps += steps[e];
      result.diverged_children += diverged[e];
      emit(std::move(records[e]));
    }
    return result;
  }

  ControllerOptions copts = config.controller;
  copts.seed = episode_seed(config.seed, 0, 4);
  result.controller.emplace(config.space, copts);
  Controller& controller = *result.controller;
  Adam optimizer(controller.parameters(), AdamOptions{.lr = config.controller_lr});
  std::mt19937_64 rng(episode_seed(config.seed, 0, 5));

  if (config.strategy == Strategy::GraphNas && config.exploration_epochs > 0) {
    const std::uint64_t before = controller.checksum();
    exploration_phase(result.store, config.space, dataset, config, result.baseline, rng, surrogate);
    if (controller.checksum() != before) throw InvariantError("exploration modified the controller");
  }

  const bool sharing = config.strategy == Strategy::GraphNas && config.share_params;
  std::vector<Episode> batch;
  for (std::size_t e = 0; e < config.episodes; ++e) {
    const auto t0 = std::chrono::steady_clock::now();
    Episode ep = controller.sample(config.sampling, rng);
    ChildOutcome child;
    if (surrogate) {
      child.reward = surrogate(ep.arch);
    } else if (config.strategy == Strategy::EnasLike) {
      // Reward from store-built weights with no training steps.
      child = run_child(ep.arch, dataset, config, &result.store, 0, episode_seed(config.seed, e));
    } else {
      child = run_child(ep.arch, dataset, config, sharing ? &result.store : nullptr, config.child_epochs,
                        episode_seed(config.seed, e));
    }
    result.child_optimizer_steps += child.optimizer_steps;
    result.diverged_children += child.diverged ? 1 : 0;

    const ShapedReward sr = shape_reward(child.reward, result.baseline, ep.entropy_sum, config.entropy_weight);
    ep.reward = child.reward;
    ep.shaped_reward = sr.shaped;
    batch.push_back(ep);
    if (batch.size() == config.batch_size) {
      reinforce_step(controller, batch, optimizer, config.sampling);
      batch.clear();
    }
    if (sharing && !surrogate && !child.diverged) {
      for (std::size_t l = 0; l < child.keys.size(); ++l) {
        result.store.merge_if_positive(child.keys[l], child.params[l], sr.shaped);
      }
    }
    emit(SearchRecord{e, ep.arch, ep.reward, ep.shaped_reward, result.baseline.value, elapsed_ms(t0)});
  }
  if (!batch.empty()) reinforce_step(controller, batch, optimizer, config.sampling);
  return result;
}

// ---- derive --------------------------------------------------------------------------

DeriveResult derive(const Controller& controller, const SharedParamStore& store, const LabeledDataset& dataset,
                    const SearchConfig& config, const SurrogateReward& surrogate) {
  config.validate();
  DeriveResult out;
  std::mt19937_64 rng(episode_seed(config.seed, 0, 6));
  for (std::size_t i = 0; i < config.derive_samples; ++i) {
    out.candidates.push_back(DeriveCandidate{controller.sample(config.sampling, rng).arch, 0.0});
  }

  // Validation minibatch shared by every candidate.
  std::vector<std::vector<std::size_t>> minibatch;
  if (!surrogate) {
    for (const SplitMask& m : dataset.masks) minibatch.push_back(m.val);
    if (config.derive_minibatch > 0) {
      std::vector<std::pair<std::size_t, std::size_t>> pool;
      for (std::size_t g = 0; g < minibatch.size(); ++g) {
        for (std::size_t v : minibatch[g]) pool.emplace_back(g, v);
      }
      std::shuffle(pool.begin(), pool.end(), rng);
      pool.resize(std::min(pool.size(), config.derive_minibatch));
      for (auto& nodes : minibatch) nodes.clear();
      for (auto [g, v] : pool) minibatch[g].push_back(v);
    }
  }

  detail::parallel_for(out.candidates.size(), config.workers, [&](std::size_t i) {
    DeriveCandidate& c = out.candidates[i];
    if (surrogate) {
      c.score = surrogate(c.arch);
      return;
    }
    std::mt19937_64 crng(episode_seed(config.seed, i, 7));
    ChildModel model = build_model(c.arch, dataset.feature_dim(), dataset.class_count, &store, crng);
    TrainHyperparams hp = config.train;
    hp.max_epochs = config.derive_iterations;
    hp.patience = config.derive_iterations;
    hp.dropout_p = 0.0;
    hp.l2_lambda = 0.0;
    hp.seed = episode_seed(config.seed, i, 8);
    try {
      train_child(model, dataset, hp);
      c.score = evaluate_nodes(model, dataset, minibatch);
    } catch (const TrainingError&) {
      c.score = 0.0;
    }
  });

  std::size_t best = 0;
  for (std::size_t i = 1; i < out.candidates.size(); ++i) {
    if (out.candidates[i].score > out.candidates[best].score) best = i;
  }
  out.best_arch = out.candidates[best].arch;
  out.best_score = out.candidates[best].score;

  if (config.derive_retrain && !dataset.graphs.empty()) {
    std::mt19937_64 rrng(episode_seed(config.seed, 0, 9));
    ChildModel model = build_model(out.best_arch, dataset.feature_dim(), dataset.class_count, nullptr, rrng);
    TrainHyperparams hp = config.train;
    hp.seed = episode_seed(config.seed, 0, 10);
    out.retrained = train_child(model, dataset, hp);
  }
  return out;
}

std::vector<SearchRecord> top_k_report(const SearchLog& log, std::size_t k) {
  if (k == 0) throw ParameterError("top_k: k must be >= 1");
  std::vector<SearchRecord> sorted = log.records;
  std::stable_sort(sorted.begin(), sorted.end(),
                   [](const SearchRecord& a, const SearchRecord& b) { return a.raw_reward > b.raw_reward; });
  if (sorted.size() > k) sorted.resize(k);
  return sorted;
}

}  // namespace gnas
