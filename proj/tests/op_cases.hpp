#pragma once

// Gradient-check cases covering every differentiable tape operation.

#include <memory>
#include <string>
#include <vector>

#include "test_support.hpp"

namespace gnas::testing {

struct OpCase {
  std::string name;
  std::shared_ptr<std::vector<Parameter>> params;
  std::shared_ptr<void> keep_alive;  // graphs / indices the objective points into
  Objective objective;

  std::vector<Parameter*> parameter_ptrs() const {
    std::vector<Parameter*> out;
    for (Parameter& p : *params) out.push_back(&p);
    return out;
  }
};

// sum(out .* weights) with fixed random weights, so every output element
// contributes a distinct gradient.
inline Var project(Var out, const Tensor& weights) {
  return sum(hadamard(out, out.tape->constant(weights)));
}

inline std::vector<OpCase> op_cases(std::uint64_t seed = 7) {
  std::mt19937_64 rng(seed);
  std::vector<OpCase> cases;
  auto make = [&](std::string name, std::vector<std::pair<std::size_t, std::size_t>> shapes, double scale = 1.0) {
    OpCase c;
    c.name = std::move(name);
    c.params = std::make_shared<std::vector<Parameter>>();
    for (std::size_t i = 0; i < shapes.size(); ++i) {
      c.params->emplace_back("p" + std::to_string(i), random_tensor(shapes[i].first, shapes[i].second, rng, scale));
    }
    return c;
  };

  {
    auto c = make("matmul", {{3, 4}, {4, 5}});
    Tensor w = random_tensor(3, 5, rng);
    c.objective = [c, w](Tape& t) { return project(matmul(t.param((*c.params)[0]), t.param((*c.params)[1])), w); };
    cases.push_back(c);
  }
  for (const char* op : {"add", "sub", "hadamard"}) {
    auto c = make(op, {{3, 4}, {3, 4}});
    Tensor w = random_tensor(3, 4, rng);
    std::string k = op;
    c.objective = [c, w, k](Tape& t) {
      Var a = t.param((*c.params)[0]), b = t.param((*c.params)[1]);
      return project(k == "add" ? add(a, b) : k == "sub" ? sub(a, b) : hadamard(a, b), w);
    };
    cases.push_back(c);
  }
  {
    auto c = make("scale+add_scalar", {{2, 3}});
    Tensor w = random_tensor(2, 3, rng);
    c.objective = [c, w](Tape& t) { return project(add_scalar(scale(t.param((*c.params)[0]), -1.7), 0.3), w); };
    cases.push_back(c);
  }
  for (const char* op : {"add_row", "mul_row"}) {
    auto c = make(op, {{4, 3}, {1, 3}});
    Tensor w = random_tensor(4, 3, rng);
    std::string k = op;
    c.objective = [c, w, k](Tape& t) {
      Var a = t.param((*c.params)[0]), r = t.param((*c.params)[1]);
      return project(k == "add_row" ? add_row(a, r) : mul_row(a, r), w);
    };
    cases.push_back(c);
  }
  {
    auto c = make("scale_rows", {{4, 3}, {4, 1}});
    Tensor w = random_tensor(4, 3, rng);
    c.objective = [c, w](Tape& t) { return project(scale_rows(t.param((*c.params)[0]), t.param((*c.params)[1])), w); };
    cases.push_back(c);
  }
  for (ActivationKind k : {ActivationKind::Sigmoid, ActivationKind::Tanh, ActivationKind::Relu, ActivationKind::Linear,
                           ActivationKind::Softplus, ActivationKind::LeakyRelu, ActivationKind::Relu6,
                           ActivationKind::Elu}) {
    // Spread over [-8, 8] so relu6 saturation is exercised too.
    auto c = make("activation/" + std::to_string(static_cast<int>(k)), {{4, 5}}, 4.0);
    Tensor w = random_tensor(4, 5, rng);
    c.objective = [c, w, k](Tape& t) { return project(activation(k, t.param((*c.params)[0])), w); };
    cases.push_back(c);
  }
  {
    auto c = make("gather_rows", {{4, 3}});
    Tensor w = random_tensor(6, 3, rng);
    auto idx = std::make_shared<std::vector<std::size_t>>(std::vector<std::size_t>{0, 2, 2, 3, 0, 1});
    c.keep_alive = idx;
    c.objective = [c, w, idx](Tape& t) { return project(gather_rows(t.param((*c.params)[0]), *idx), w); };
    cases.push_back(c);
  }
  {
    auto c = make("slice_cols", {{3, 6}});
    Tensor w = random_tensor(3, 2, rng);
    c.objective = [c, w](Tape& t) { return project(slice_cols(t.param((*c.params)[0]), 3, 2), w); };
    cases.push_back(c);
  }
  for (const char* op : {"concat_cols", "mean_of"}) {
    auto c = make(op, {{3, 2}, {3, 2}, {3, 2}});
    std::string k = op;
    Tensor w = random_tensor(3, k == "concat_cols" ? 6 : 2, rng);
    c.objective = [c, w, k](Tape& t) {
      const Var parts[] = {t.param((*c.params)[0]), t.param((*c.params)[1]), t.param((*c.params)[2])};
      return project(k == "concat_cols" ? concat_cols(parts) : mean_of(parts), w);
    };
    cases.push_back(c);
  }
  {
    auto c = make("row_sum", {{4, 3}});
    Tensor w = random_tensor(4, 1, rng);
    c.objective = [c, w](Tape& t) { return project(row_sum(t.param((*c.params)[0])), w); };
    cases.push_back(c);
  }
  {
    auto c = make("sum", {{3, 3}});
    c.objective = [c](Tape& t) { return scale(sum(t.param((*c.params)[0])), 0.7); };
    cases.push_back(c);
  }
  {
    auto c = make("sum_squares", {{3, 3}});
    c.objective = [c](Tape& t) { return sum_squares(t.param((*c.params)[0])); };
    cases.push_back(c);
  }

  // Neighborhood operations on a small graph.
  auto graph = std::make_shared<Graph>(small_graph(6, 3, rng));
  const std::size_t E = graph->edge_count(), N = graph->node_count();
  {
    auto c = make("segment_softmax", {{E, 1}});
    c.keep_alive = graph;
    Tensor w = random_tensor(E, 1, rng);
    c.objective = [c, w, graph](Tape& t) { return project(segment_softmax(t.param((*c.params)[0]), graph->in_edges()), w); };
    cases.push_back(c);
  }
  for (AggKind k : {AggKind::Sum, AggKind::Mean, AggKind::Max}) {
    auto c = make("segment_aggregate/" + std::string(k == AggKind::Sum ? "sum" : k == AggKind::Mean ? "mean" : "max"),
                  {{E, 3}});
    c.keep_alive = graph;
    Tensor w = random_tensor(N, 3, rng);
    c.objective = [c, w, graph, k](Tape& t) {
      return project(segment_aggregate(k, t.param((*c.params)[0]), graph->in_edges()), w);
    };
    cases.push_back(c);
  }
  for (AggKind k : {AggKind::Sum, AggKind::Mean, AggKind::Max}) {
    auto c = make("propagate/" + std::string(k == AggKind::Sum ? "sum" : k == AggKind::Mean ? "mean" : "max"),
                  {{E, 1}, {N, 3}});
    c.keep_alive = graph;
    Tensor w = random_tensor(N, 3, rng);
    c.objective = [c, w, graph, k](Tape& t) {
      return project(propagate(k, t.param((*c.params)[0]), t.param((*c.params)[1]), graph->sources(),
                               graph->in_edges()),
                     w);
    };
    cases.push_back(c);
  }
  {
    auto c = make("dropout", {{5, 4}});
    Tensor w = random_tensor(5, 4, rng);
    c.objective = [c, w](Tape& t) {
      std::mt19937_64 mask_rng(99);  // same mask on every evaluation
      return project(dropout(t.param((*c.params)[0]), 0.4, true, mask_rng), w);
    };
    cases.push_back(c);
  }
  {
    auto c = make("softmax_cross_entropy", {{5, 3}});
    auto labels = std::make_shared<std::vector<int>>(std::vector<int>{0, 2, 1, 1, 0});
    auto rows = std::make_shared<std::vector<std::size_t>>(std::vector<std::size_t>{0, 1, 3, 4});
    c.keep_alive = std::make_shared<std::pair<decltype(labels), decltype(rows)>>(labels, rows);
    c.objective = [c, labels, rows](Tape& t) { return softmax_cross_entropy(t.param((*c.params)[0]), *labels, *rows); };
    cases.push_back(c);
  }
  {
    auto c = make("sigmoid_cross_entropy", {{4, 3}});
    Tensor targets(4, 3, {1, 0, 1, 0, 0, 1, 1, 1, 0, 0, 1, 0});
    auto rows = std::make_shared<std::vector<std::size_t>>(std::vector<std::size_t>{0, 2, 3});
    c.keep_alive = rows;
    c.objective = [c, targets, rows](Tape& t) {
      return sigmoid_cross_entropy(t.param((*c.params)[0]), targets, *rows);
    };
    cases.push_back(c);
  }
  {
    auto c = make("log_softmax+pick", {{1, 5}});
    c.objective = [c](Tape& t) {
      Var ls = log_softmax(t.param((*c.params)[0]));
      return add(pick(ls, 3), scale(pick(ls, 0), 0.5));
    };
    cases.push_back(c);
  }
  return cases;
}

}  // namespace gnas::testing
