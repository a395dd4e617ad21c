// gnas: architecture search command line.
//
// Settings are resolved as built-in defaults, then the --config file, then
// command-line flags.

#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "gnas/runtime.hpp"
#include "harness.hpp"

namespace {

struct Flags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string arch;
  std::string strategy;
  std::vector<std::string> logs;
};

void add_common(CLI::App* cmd, Flags& f) {
  cmd->add_option("--config", f.config, "flat JSON config file");
  cmd->add_option("--seed", f.seed, "run seed (overrides the config)");
  cmd->add_option("--out", f.out, "output directory (overrides the config)");
  cmd->add_option("--strategy", f.strategy, "graphnas, random, nas-like or enas-like");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Graph neural architecture search"};
  app.require_subcommand(1);
  Flags flags;
  auto* search = app.add_subcommand("search", "run a controller search; writes search.log, topk.csv, checkpoints");
  auto* derive = app.add_subcommand("derive", "sample from a trained controller and retrain the best candidate");
  auto* train = app.add_subcommand("train", "train one architecture given as a token string");
  auto* random = app.add_subcommand("random", "random search baseline");
  auto* report = app.add_subcommand("report", "aggregate search logs into report.csv and curve files");
  for (auto* cmd : {search, derive, train, random, report}) add_common(cmd, flags);
  train->add_option("--arch", flags.arch, "layer tokens; one layer spec is repeated for every layer");
  report->add_option("logs", flags.logs, "search logs");
  CLI11_PARSE(app, argc, argv);
  gnas::configure_allocator();

  using namespace gnas::harness;
  try {
    RunConfig config = flags.config.empty() ? RunConfig{} : load_config(flags.config);
    if (flags.seed) config.search.seed = *flags.seed;
    if (!flags.out.empty()) config.out_dir = flags.out;
    if (!flags.arch.empty()) config.arch = flags.arch;
    if (!flags.strategy.empty()) config.search.strategy = gnas::parse_strategy(flags.strategy);
    if (!flags.logs.empty()) config.logs.assign(flags.logs.begin(), flags.logs.end());

    if (search->parsed()) return cmd_search(config, std::cout);
    if (derive->parsed()) return cmd_derive(config, std::cout);
    if (train->parsed()) return cmd_train(config, std::cout);
    if (random->parsed()) return cmd_random(config, std::cout);
    return cmd_report(config, std::cout);
  } catch (const gnas::ValidationError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const gnas::ParameterError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
