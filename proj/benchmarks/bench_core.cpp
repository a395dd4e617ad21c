#include <benchmark/benchmark.h>

#include <random>

#include "gnas/controller.hpp"
#include "gnas/gnn.hpp"
#include "gnas/runtime.hpp"

using namespace gnas;

namespace {

Tensor random_tensor(std::size_t r, std::size_t c, std::mt19937_64& rng) {
  std::normal_distribution<double> n;
  Tensor t(r, c);
  for (double& v : t.data()) v = n(rng);
  return t;
}

LabeledDataset sbm() {
  SbmParams p;
  p.seed = 1;
  return generate_sbm(p);
}

void BM_MatmulBackward(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  std::mt19937_64 rng(1);
  Parameter a("a", random_tensor(n, n, rng)), b("b", random_tensor(n, n, rng));
  for (auto _ : state) {
    Tape t;
    t.backward(sum(matmul(t.param(a), t.param(b))));
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(3 * n * n * n));
}
BENCHMARK(BM_MatmulBackward)->Arg(64)->Arg(256);

// One training epoch (forward, backward, Adam) of a two-layer child on the default SBM.
void BM_ChildEpoch(benchmark::State& state) {
  const LabeledDataset ds = sbm();
  const ActionSpace space = ActionSpace::full(2);
  const char* archs[] = {"first-order,gcn,sum,relu,1,16", "first-order,gat,sum,elu,8,8",
                         "first-order,gene-linear,mlp,tanh,4,64"};
  const ArchDescription arch = decode(std::string(archs[state.range(0)]) + ";" + archs[state.range(0)], space);
  std::mt19937_64 rng(2);
  ChildModel m = build_model(arch, ds.feature_dim(), ds.class_count, nullptr, rng);
  TrainHyperparams hp;
  hp.max_epochs = 1;
  hp.patience = 1;
  for (auto _ : state) benchmark::DoNotOptimize(train_child(m, ds, hp).best_val_metric);
  state.SetLabel(archs[state.range(0)]);
}
BENCHMARK(BM_ChildEpoch)->DenseRange(0, 2)->Unit(benchmark::kMillisecond);

void BM_ControllerSample(benchmark::State& state) {
  Controller c(ActionSpace::full(2), ControllerOptions{});
  std::mt19937_64 rng(3);
  for (auto _ : state) benchmark::DoNotOptimize(c.sample({}, rng).log_prob_sum);
}
BENCHMARK(BM_ControllerSample)->Unit(benchmark::kMicrosecond);

void BM_ReinforceStep(benchmark::State& state) {
  Controller c(ActionSpace::full(2), ControllerOptions{});
  Adam adam(c.parameters(), AdamOptions{.lr = 0.0035});
  std::mt19937_64 rng(4);
  Episode e = c.sample({}, rng);
  e.shaped_reward = 0.1;
  for (auto _ : state) reinforce_step(c, std::span<const Episode>(&e, 1), adam, {});
}
BENCHMARK(BM_ReinforceStep)->Unit(benchmark::kMicrosecond);

}  // namespace

int main(int argc, char** argv) {
  configure_allocator();
  benchmark::Initialize(&argc, argv);
  if (benchmark::ReportUnrecognizedArguments(argc, argv)) return 1;
  benchmark::RunSpecifiedBenchmarks();
  benchmark::Shutdown();
  return 0;
}
