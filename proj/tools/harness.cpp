#include "harness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <numeric>
#include <ostream>
#include <sstream>

#include <json.hpp>

namespace gnas::harness {

namespace {

using nlohmann::json;

template <class Kind, std::size_t N>
Kind token_lookup(const std::string& key, const std::string& tok, const Kind (&all)[N]) {
  for (Kind k : all) {
    if (token_of(k) == tok) return k;
  }
  throw ParameterError(key + ": unknown option '" + tok + "'");
}

// Options listed in any order come back in canonical order.
template <class Kind, std::size_t N>
std::vector<Kind> option_list(const std::string& key, const json& v, const Kind (&all)[N]) {
  if (!v.is_array() || v.empty()) throw ParameterError(key + ": expected a non-empty array of option names");
  std::vector<Kind> picked;
  for (const json& item : v) {
    if (!item.is_string()) throw ParameterError(key + ": options must be strings");
    picked.push_back(token_lookup(key, item.get<std::string>(), all));
  }
  std::vector<Kind> out;
  for (Kind k : all) {
    if (std::find(picked.begin(), picked.end(), k) != picked.end()) out.push_back(k);
  }
  return out;
}

std::vector<int> int_list(const std::string& key, const json& v, std::span<const int> all) {
  if (!v.is_array() || v.empty()) throw ParameterError(key + ": expected a non-empty array of integers");
  std::vector<int> picked;
  for (const json& item : v) {
    if (!item.is_number_integer()) throw ParameterError(key + ": options must be integers");
    const int x = item.get<int>();
    if (std::find(all.begin(), all.end(), x) == all.end()) {
      throw ParameterError(key + ": " + std::to_string(x) + " is not an allowed option");
    }
    picked.push_back(x);
  }
  std::vector<int> out;
  for (int x : all) {
    if (std::find(picked.begin(), picked.end(), x) != picked.end()) out.push_back(x);
  }
  return out;
}

std::size_t as_count(const std::string& key, const json& v) {
  if (!v.is_number_integer() || v.get<long long>() < 0) throw ParameterError(key + ": expected a non-negative integer");
  return v.get<std::size_t>();
}

double as_real(const std::string& key, const json& v) {
  if (!v.is_number()) throw ParameterError(key + ": expected a number");
  const double x = v.get<double>();
  if (!std::isfinite(x)) throw ParameterError(key + ": expected a finite number");
  return x;
}

bool as_bool(const std::string& key, const json& v) {
  if (!v.is_boolean()) throw ParameterError(key + ": expected true or false");
  return v.get<bool>();
}

std::string as_string(const std::string& key, const json& v) {
  if (!v.is_string()) throw ParameterError(key + ": expected a string");
  return v.get<std::string>();
}

using Setter = std::function<void(RunConfig&, const std::string&, const json&)>;

const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> table = [] {
    std::map<std::string, Setter> t;
    // search settings
    t["strategy"] = [](RunConfig& c, const std::string& k, const json& v) {
      c.search.strategy = parse_strategy(as_string(k, v));
    };
    t["layers"] = [](RunConfig& c, const std::string& k, const json& v) {
      c.search.space.layer_count = as_count(k, v);
    };
    t["skip"] = [](RunConfig& c, const std::string& k, const json& v) {
      const std::string s = as_string(k, v);
      if (s == "none") c.search.space.skip = SkipMode::None;
      else if (s == "fixed") c.search.space.skip = SkipMode::Fixed;
      else if (s == "searched") c.search.space.skip = SkipMode::Searched;
      else throw ParameterError(k + ": expected none, fixed or searched");
    };
    t["skip_merge"] = [](RunConfig& c, const std::string& k, const json& v) {
      c.search.space.fixed_merge = token_lookup(k, as_string(k, v), kAllMerge);
    };
    t["attention"] = [](RunConfig& c, const std::string& k, const json& v) {
      c.search.space.attention = option_list(k, v, kAllAttention);
    };
    t["aggregation"] = [](RunConfig& c, const std::string& k, const json& v) {
      c.search.space.aggregation = option_list(k, v, kAllAggregation);
    };
    t["activation"] = [](RunConfig& c, const std::string& k, const json& v) {
      c.search.space.activation = option_list(k, v, kAllActivation);
    };
    t["heads"] = [](RunConfig& c, const std::string& k, const json& v) {
      c.search.space.heads = int_list(k, v, kAllHeads);
    };
    t["hidden"] = [](RunConfig& c, const std::string& k, const json& v) {
      c.search.space.hidden = int_list(k, v, kAllHidden);
    };
    t["episodes"] = [](RunConfig& c, const std::string& k, const json& v) { c.search.episodes = as_count(k, v); };
    t["child_epochs"] = [](RunConfig& c, const std::string& k, const json& v) {
      c.search.child_epochs = as_count(k, v);
    };
    t["exploration_epochs"] = [](RunConfig& c, const std::string& k, const json& v) {
      c.search.exploration_epochs = as_count(k, v);
    };
    t["share_params"] = [](RunConfig& c, const std::string& k, const json& v) {
      c.search.share_params = as_bool(k, v);
    };
    t["derive_samples"] = [](RunConfig& c, const std::string& k, const json& v) {
      c.search.derive_samples = as_count(k, v);
    };
    t["derive_iterations"] = [](RunConfig& c, const std::string& k, const json& v) {
      c.search.derive_iterations = as_count(k, v);
    };
    t["derive_minibatch"] = [](RunConfig& c, const std::string& k, const json& v) {
      c.search.derive_minibatch = as_count(k, v);
    };
    t["derive_retrain"] = [](RunConfig& c, const std::string& k, const json& v) {
      c.search.derive_retrain = as_bool(k, v);
    };
    t["top_k"] = [](RunConfig& c, const std::string& k, const json& v) { c.search.top_k = as_count(k, v); };
    t["seed"] = [](RunConfig& c, const std::string& k, const json& v) { c.search.seed = as_count(k, v); };
    t["lr"] = [](RunConfig& c, const std::string& k, const json& v) { c.search.train.lr = as_real(k, v); };
    t["l2"] = [](RunConfig& c, const std::string& k, const json& v) { c.search.train.l2_lambda = as_real(k, v); };
    t["dropout"] = [](RunConfig& c, const std::string& k, const json& v) { c.search.train.dropout_p = as_real(k, v); };
    t["max_epochs"] = [](RunConfig& c, const std::string& k, const json& v) {
      c.search.train.max_epochs = as_count(k, v);
    };
    t["patience"] = [](RunConfig& c, const std::string& k, const json& v) { c.search.train.patience = as_count(k, v); };
    t["controller_hidden"] = [](RunConfig& c, const std::string& k, const json& v) {
      c.search.controller.hidden = as_count(k, v);
    };
    t["controller_init_range"] = [](RunConfig& c, const std::string& k, const json& v) {
      c.search.controller.init_range = as_real(k, v);
    };
    t["controller_lr"] = [](RunConfig& c, const std::string& k, const json& v) {
      c.search.controller_lr = as_real(k, v);
    };
    t["temperature"] = [](RunConfig& c, const std::string& k, const json& v) {
      c.search.sampling.temperature = as_real(k, v);
    };
    t["logit_clip"] = [](RunConfig& c, const std::string& k, const json& v) {
      c.search.sampling.logit_clip = as_real(k, v);
    };
    t["entropy_weight"] = [](RunConfig& c, const std::string& k, const json& v) {
      c.search.entropy_weight = as_real(k, v);
    };
    t["baseline_decay"] = [](RunConfig& c, const std::string& k, const json& v) {
      c.search.baseline_decay = as_real(k, v);
    };
    t["batch_size"] = [](RunConfig& c, const std::string& k, const json& v) { c.search.batch_size = as_count(k, v); };
    t["workers"] = [](RunConfig& c, const std::string& k, const json& v) { c.search.workers = as_count(k, v); };
    t["record_wall_time"] = [](RunConfig& c, const std::string& k, const json& v) {
      c.search.record_wall_time = as_bool(k, v);
    };
    // dataset
    t["dataset"] = [](RunConfig& c, const std::string& k, const json& v) {
      const std::string s = as_string(k, v);
      if (s == "sbm") c.dataset = DatasetKind::Sbm;
      else if (s == "multigraph") c.dataset = DatasetKind::Multigraph;
      else if (s == "citation") c.dataset = DatasetKind::Citation;
      else throw ParameterError(k + ": expected sbm, multigraph or citation");
    };
    t["dataset_path"] = [](RunConfig& c, const std::string& k, const json& v) { c.dataset_path = as_string(k, v); };
    t["data_seed"] = [](RunConfig& c, const std::string& k, const json& v) {
      c.sbm.seed = c.multigraph.seed = as_count(k, v);
    };
    t["blocks"] = [](RunConfig& c, const std::string& k, const json& v) {
      c.sbm.block_count = c.multigraph.block_count = as_count(k, v);
    };
    t["p_in"] = [](RunConfig& c, const std::string& k, const json& v) {
      c.sbm.p_in = c.multigraph.p_in = as_real(k, v);
    };
    t["p_out"] = [](RunConfig& c, const std::string& k, const json& v) {
      c.sbm.p_out = c.multigraph.p_out = as_real(k, v);
    };
    t["feature_dim"] = [](RunConfig& c, const std::string& k, const json& v) {
      c.sbm.feature_dim = c.multigraph.feature_dim = as_count(k, v);
    };
    t["signal"] = [](RunConfig& c, const std::string& k, const json& v) {
      c.sbm.signal_strength = c.multigraph.signal_strength = as_real(k, v);
    };
    t["nodes_per_block"] = [](RunConfig& c, const std::string& k, const json& v) {
      c.sbm.nodes_per_block = as_count(k, v);
    };
    t["train_per_class"] = [](RunConfig& c, const std::string& k, const json& v) {
      c.sbm.train_per_class = as_count(k, v);
    };
    t["val_count"] = [](RunConfig& c, const std::string& k, const json& v) { c.sbm.val_count = as_count(k, v); };
    t["test_count"] = [](RunConfig& c, const std::string& k, const json& v) { c.sbm.test_count = as_count(k, v); };
    t["graph_count"] = [](RunConfig& c, const std::string& k, const json& v) {
      c.multigraph.graph_count = as_count(k, v);
    };
    t["nodes_per_graph"] = [](RunConfig& c, const std::string& k, const json& v) {
      c.multigraph.nodes_per_graph = as_count(k, v);
    };
    t["label_count"] = [](RunConfig& c, const std::string& k, const json& v) {
      c.multigraph.label_count = as_count(k, v);
    };
    // harness
    t["out"] = [](RunConfig& c, const std::string& k, const json& v) { c.out_dir = as_string(k, v); };
    t["repeats"] = [](RunConfig& c, const std::string& k, const json& v) { c.repeats = as_count(k, v); };
    t["threshold"] = [](RunConfig& c, const std::string& k, const json& v) { c.threshold = as_real(k, v); };
    t["arch"] = [](RunConfig& c, const std::string& k, const json& v) { c.arch = as_string(k, v); };
    t["logs"] = [](RunConfig& c, const std::string& k, const json& v) {
      if (!v.is_array()) throw ParameterError(k + ": expected an array of paths");
      c.logs.clear();
      for (const json& p : v) c.logs.emplace_back(as_string(k, p));
    };
    return t;
  }();
  return table;
}

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream f(path);
  if (!f) throw Error("cannot write " + path.string());
  return f;
}

std::ifstream open_in(const std::filesystem::path& path, const std::string& what) {
  std::ifstream f(path);
  if (!f) throw Error(what + ": cannot read " + path.string());
  return f;
}

std::string fmt(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", x);
  return buf;
}

void write_topk(const std::filesystem::path& path, const SearchLog& log, std::size_t k) {
  auto f = open_out(path);
  f << "rank,episode,arch,reward\n";
  std::size_t rank = 1;
  for (const SearchRecord& r : top_k_report(log, k)) {
    f << rank++ << ',' << r.episode << ",\"" << encode_line(r.arch) << "\"," << fmt(r.raw_reward) << '\n';
  }
}

void check_repeats(const RunConfig& c) {
  if (c.repeats == 0) throw ParameterError("repeats: must be >= 1");
}

std::pair<double, std::optional<double>> mean_std(const std::vector<double>& xs) {
  const double mean = std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
  if (xs.size() < 2) return {mean, std::nullopt};
  double ss = 0.0;
  for (double x : xs) ss += (x - mean) * (x - mean);
  return {mean, std::sqrt(ss / static_cast<double>(xs.size() - 1))};
}

int run_search_strategy(RunConfig config, Strategy strategy, std::ostream& msg) {
  config.search.strategy = strategy;
  config.search.validate();
  const LabeledDataset ds = load_dataset(config);
  std::filesystem::create_directories(config.out_dir);
  auto log = open_out(config.out_dir / "search.log");
  SearchResult result = search(config.search, ds, {}, &log);
  write_topk(config.out_dir / "topk.csv", result.log, config.search.top_k);
  if (result.controller) {
    auto ck = open_out(config.out_dir / "controller.ckpt");
    result.controller->save(ck);
    auto st = open_out(config.out_dir / "store.ckpt");
    result.store.save(st);
  }
  const auto best = top_k_report(result.log, 1);
  msg << "episodes " << result.log.records.size() << '\n';
  if (!best.empty()) msg << "best " << encode_line(best.front().arch) << ' ' << fmt(best.front().raw_reward) << '\n';
  if (result.diverged_children) msg << "diverged children " << result.diverged_children << '\n';
  return 0;
}

}  // namespace

RunConfig parse_config(const std::string& json_text) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ParameterError(std::string("config: invalid JSON: ") + e.what());
  }
  if (!doc.is_object()) throw ParameterError("config: expected a flat JSON object");
  RunConfig c;
  const auto& table = setters();
  for (const auto& [key, value] : doc.items()) {
    auto it = table.find(key);
    if (it == table.end()) throw ParameterError(key + ": unknown config key");
    it->second(c, key, value);
  }
  if (c.dataset == DatasetKind::Citation && c.dataset_path.empty()) {
    throw ParameterError("dataset_path: required when dataset is citation");
  }
  return c;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw ParameterError("config: cannot read " + path.string());
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_config(ss.str());
}

ArchDescription parse_arch(const std::string& tokens, const ActionSpace& space) {
  if (tokens.find_first_of(";\n") == std::string::npos && space.layer_count > 1) {
    std::string repeated = tokens;
    for (std::size_t l = 1; l < space.layer_count; ++l) repeated += ";" + tokens;
    return decode(repeated, space);
  }
  return decode(tokens, space);
}

LabeledDataset load_dataset(const RunConfig& config) {
  switch (config.dataset) {
    case DatasetKind::Sbm:
      return generate_sbm(config.sbm);
    case DatasetKind::Multigraph:
      return generate_multigraph(config.multigraph);
    case DatasetKind::Citation:
      if (config.dataset_path.empty()) throw ParameterError("dataset_path: required when dataset is citation");
      if (!std::filesystem::exists(config.dataset_path)) {
        throw ParameterError("dataset_path: no such file " + config.dataset_path.string());
      }
      return load_citation(config.dataset_path);
  }
  throw ParameterError("dataset: unknown kind");
}

void write_report_csv(std::ostream& out, const std::vector<ReportRow>& rows) {
  out << "model,depth,params,seconds_per_epoch,metric_mean,metric_std\n";
  for (const ReportRow& r : rows) {
    out << '"' << r.model << "\"," << r.depth << ',' << r.params << ',' << fmt(r.seconds_per_epoch) << ','
        << fmt(r.metric_mean) << ',' << (r.metric_std ? fmt(*r.metric_std) : std::string()) << '\n';
  }
}

void write_curve_csv(std::ostream& out, const SearchLog& log, double threshold) {
  out << "episode,best_reward,count_above_threshold\n";
  double best = -INFINITY;
  std::size_t above = 0;
  for (const SearchRecord& r : log.records) {
    best = std::max(best, r.raw_reward);
    if (r.raw_reward > threshold) ++above;
    out << r.episode << ',' << fmt(best) << ',' << above << '\n';
  }
}

int cmd_search(const RunConfig& config, std::ostream& msg) {
  if (config.search.strategy == Strategy::Random) return cmd_random(config, msg);
  return run_search_strategy(config, config.search.strategy, msg);
}

int cmd_random(const RunConfig& config, std::ostream& msg) {
  RunConfig c = config;
  c.search.share_params = false;
  c.search.exploration_epochs = 0;
  return run_search_strategy(c, Strategy::Random, msg);
}

int cmd_derive(const RunConfig& config, std::ostream& msg) {
  config.search.validate();
  const LabeledDataset ds = load_dataset(config);
  Controller controller(config.search.space, config.search.controller);
  {
    auto f = open_in(config.out_dir / "controller.ckpt", "derive");
    controller.load(f);
  }
  SharedParamStore store;
  if (std::filesystem::exists(config.out_dir / "store.ckpt")) {
    auto f = open_in(config.out_dir / "store.ckpt", "derive");
    store.load(f);
  }
  DeriveResult r = derive(controller, store, ds, config.search);
  auto f = open_out(config.out_dir / "derive.csv");
  f << "candidate,arch,score\n";
  for (std::size_t i = 0; i < r.candidates.size(); ++i) {
    f << i << ",\"" << encode_line(r.candidates[i].arch) << "\"," << fmt(r.candidates[i].score) << '\n';
  }
  msg << "best " << encode_line(r.best_arch) << ' ' << fmt(r.best_score) << '\n';
  if (r.retrained) {
    auto rf = open_out(config.out_dir / "retrained.csv");
    rf << "arch,val_metric,test_metric,epochs\n";
    rf << '"' << encode_line(r.best_arch) << "\"," << fmt(r.retrained->best_val_metric) << ','
       << fmt(r.retrained->test_metric) << ',' << r.retrained->epochs_ran << '\n';
    msg << "retrained val " << fmt(r.retrained->best_val_metric) << " test " << fmt(r.retrained->test_metric)
        << " epochs " << r.retrained->epochs_ran << '\n';
  }
  return 0;
}

int cmd_train(const RunConfig& config, std::ostream& msg) {
  check_repeats(config);
  if (config.arch.empty()) throw ParameterError("arch: required by train");
  const ArchDescription arch = parse_arch(config.arch, config.search.space);
  std::vector<double> metrics, times;
  std::size_t params = 0;
  for (std::size_t rep = 0; rep < config.repeats; ++rep) {
    RunConfig c = config;
    c.sbm.seed += rep;
    c.multigraph.seed += rep;
    const LabeledDataset ds = load_dataset(c);
    std::mt19937_64 rng(episode_seed(config.search.seed, rep, 11));
    ChildModel model = build_model(arch, ds.feature_dim(), ds.class_count, nullptr, rng);
    params = model.parameter_count();
    TrainHyperparams hp = config.search.train;
    hp.seed = episode_seed(config.search.seed, rep, 12);
    const TrainedResult r = train_child(model, ds, hp);
    msg << "run " << rep << " val " << fmt(r.best_val_metric) << " test " << fmt(r.test_metric) << " epochs "
        << r.epochs_ran << " best_epoch " << r.best_epoch << " s/epoch " << fmt(r.seconds_per_epoch) << '\n';
    metrics.push_back(r.test_metric);
    times.push_back(r.seconds_per_epoch);
  }
  const auto [mean, sd] = mean_std(metrics);
  ReportRow row{encode_line(arch), arch.layers.size(), params, mean_std(times).first, mean, sd};
  std::filesystem::create_directories(config.out_dir);
  auto f = open_out(config.out_dir / "report.csv");
  write_report_csv(f, {row});
  msg << "params " << params << " test " << fmt(mean) << (sd ? " +- " + fmt(*sd) : std::string()) << '\n';
  return 0;
}

int cmd_report(const RunConfig& config, std::ostream& msg) {
  if (config.logs.empty()) throw ParameterError("logs: report needs at least one search log");
  std::map<std::string, std::vector<SearchLog>> by_strategy;
  for (const auto& path : config.logs) {
    // The log header names its depth; read it against that depth.
    ActionSpace space = config.search.space;
    {
      auto f = open_in(path, "report");
      std::string line;
      while (std::getline(f, line) && !line.empty() && line[0] == '#') {
        if (line.rfind("# layers=", 0) == 0) space.layer_count = std::stoull(line.substr(9));
      }
    }
    auto f = open_in(path, "report");
    SearchLog log = read_log(f, space);
    const std::string strategy = log.header.count("strategy") ? log.header["strategy"] : path.stem().string();
    by_strategy[strategy].push_back(std::move(log));
  }
  std::filesystem::create_directories(config.out_dir);
  std::vector<ReportRow> rows;
  for (const auto& [strategy, logs] : by_strategy) {
    std::vector<double> bests;
    double ms = 0.0;
    std::size_t episodes = 0, child_epochs = 1, params = 0, depth = 0;
    for (const SearchLog& log : logs) {
      const auto top = top_k_report(log, 1);
      if (top.empty()) continue;
      bests.push_back(top.front().raw_reward);
      depth = top.front().arch.layers.size();
      if (log.header.count("in_dim") && log.header.count("classes")) {
        std::mt19937_64 rng(0);
        params = build_model(top.front().arch, std::stoull(log.header.at("in_dim")),
                             std::stoull(log.header.at("classes")), nullptr, rng)
                     .parameter_count();
      }
      if (log.header.count("child_epochs")) child_epochs = std::max<std::size_t>(1, std::stoull(log.header.at("child_epochs")));
      for (const SearchRecord& r : log.records) ms += r.wall_ms;
      episodes += log.records.size();
    }
    if (bests.empty()) throw ParameterError("logs: every " + strategy + " log is empty");
    const auto [mean, sd] = mean_std(bests);
    const double sec_per_epoch = episodes ? ms / 1000.0 / static_cast<double>(episodes * child_epochs) : 0.0;
    rows.push_back(ReportRow{strategy, depth, params, sec_per_epoch, mean, sd});
    // One curve per strategy, from its first log.
    auto cf = open_out(config.out_dir / ("curve_" + strategy + ".csv"));
    write_curve_csv(cf, logs.front(), config.threshold);
  }
  auto f = open_out(config.out_dir / "report.csv");
  write_report_csv(f, rows);
  msg << "report rows " << rows.size() << '\n';
  return 0;
}

}  // namespace gnas::harness
