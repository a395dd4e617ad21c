#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <random>
#include <vector>

#include "gnas/autodiff.hpp"
#include "gnas/graph.hpp"
#include "gnas/tensor.hpp"

namespace gnas::testing {

// Scalar objective recorded on a fresh tape.
using Objective = std::function<Var(Tape&)>;

inline Tensor random_tensor(std::size_t rows, std::size_t cols, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  Tensor t(rows, cols);
  for (double& v : t.data()) v = n(rng);
  return t;
}

inline double evaluate_objective(const Objective& f) {
  Tape tape;
  return f(tape).value().item();
}

// Relative error ||analytic - numeric|| / max(||analytic|| + ||numeric||, floor)
// over the concatenated gradient of every parameter, using central differences.
inline double gradient_error(const Objective& f, const std::vector<Parameter*>& params, double eps = 1e-6,
                             double floor = 1e-7) {
  for (Parameter* p : params) p->zero_grad();
  {
    Tape tape;
    tape.backward(f(tape));
  }
  double diff2 = 0.0, a2 = 0.0, n2 = 0.0;
  for (Parameter* p : params) {
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      const double orig = p->value[i];
      p->value[i] = orig + eps;
      const double up = evaluate_objective(f);
      p->value[i] = orig - eps;
      const double down = evaluate_objective(f);
      p->value[i] = orig;
      const double numeric = (up - down) / (2.0 * eps);
      const double analytic = p->grad[i];
      diff2 += (analytic - numeric) * (analytic - numeric);
      a2 += analytic * analytic;
      n2 += numeric * numeric;
    }
  }
  return std::sqrt(diff2) / std::max(std::sqrt(a2) + std::sqrt(n2), floor);
}

// Best error over a range of step sizes. Large steps straddle relu-style kinks
// and small steps drown in round-off when the loss is nearly flat; a wrong
// analytic gradient is wrong at every step size.
inline double gradient_error_sweep(const Objective& f, const std::vector<Parameter*>& params) {
  double best = std::numeric_limits<double>::infinity();
  for (double eps : {1e-4, 1e-5, 1e-6, 1e-7}) {
    best = std::min(best, gradient_error(f, params, eps));
    if (best < 1e-7) break;
  }
  return best;
}

// Ring of `n` nodes plus a few chords, random features.
inline Graph small_graph(std::size_t n, std::size_t dim, std::mt19937_64& rng) {
  std::vector<Edge> edges;
  for (std::size_t i = 0; i < n; ++i) {
    edges.emplace_back(i, (i + 1) % n);
    edges.emplace_back((i + 1) % n, i);
  }
  std::uniform_int_distribution<std::size_t> pick(0, n - 1);
  for (std::size_t k = 0; k < n / 2; ++k) edges.emplace_back(pick(rng), pick(rng));
  return Graph(n, edges, random_tensor(n, dim, rng));
}

// Single graph, single-label, every node in exactly one split.
inline LabeledDataset small_dataset(std::size_t n, std::size_t dim, std::size_t classes, std::mt19937_64& rng) {
  LabeledDataset ds;
  ds.graphs.push_back(small_graph(n, dim, rng));
  NodeLabels labels;
  SplitMask mask;
  for (std::size_t i = 0; i < n; ++i) {
    labels.classes.push_back(static_cast<int>(i % classes));
    (i % 3 == 0 ? mask.train : i % 3 == 1 ? mask.val : mask.test).push_back(i);
  }
  ds.labels.push_back(labels);
  ds.masks.push_back(mask);
  ds.class_count = classes;
  return ds;
}

}  // namespace gnas::testing
