#pragma once

// Tape-based reverse-mode differentiation over dense Tensors.
//
// A Tape records every primitive operation in execution order. Each recorded
// node owns its forward value and, after backward(), its gradient. Parameters
// enter the tape through Tape::param(); backward() accumulates into
// Parameter::grad. A tape is a single-threaded unit of work: independent
// tapes may run on separate threads, they share nothing.

#include <cstddef>
#include <functional>
#include <random>
#include <span>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "gnas/tensor.hpp"

namespace gnas {

class Tape;

// Handle to a node on a tape. Cheap to copy.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const Tensor& value() const;
  const Tensor& grad() const;
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
};

class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::size_t self)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Leaf that never receives a gradient.
  Var constant(Tensor value);
  // Leaf that receives a gradient (readable via Var::grad after backward).
  Var input(Tensor value);
  // Leaf bound to a parameter; the same parameter always maps to the same node.
  // The node reads Parameter::value in place and its gradient buffer is
  // Parameter::grad, so the parameter must outlive the tape and stay unmodified
  // until backward has run.
  Var param(Parameter& p);

  Var record(Tensor value, std::span<const Var> inputs, BackwardFn backward);

  // Seeds d(root)=1 and propagates to every upstream node exactly once.
  // Parameter gradients accumulate into Parameter::grad.
  void backward(Var root);

  const Tensor& value(std::size_t id) const {
    const Node& n = nodes_[id];
    return n.param ? n.param->value : n.value;
  }
  const Tensor& grad(std::size_t id) const {
    const Node& n = nodes_[id];
    return n.param ? n.param->grad : n.grad;
  }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  // Gradient buffer of `id`, allocated on first use.
  Tensor& grad_buffer(std::size_t id);
  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    Parameter* param = nullptr;
    BackwardFn backward;
  };
  std::vector<Node> nodes_;
  std::unordered_map<const Parameter*, std::size_t> param_nodes_;
};

// Grouping of edges by destination. Members of each segment are kept in
// ascending edge order so tie-breaking by lowest edge index is well defined.
// Operations taking a SegmentIndex keep a pointer to it: it must outlive the tape.
class SegmentIndex {
 public:
  SegmentIndex() = default;
  SegmentIndex(std::vector<std::size_t> segment_of, std::size_t segment_count);

  std::size_t segment_count() const { return offsets_.empty() ? 0 : offsets_.size() - 1; }
  std::size_t edge_count() const { return segment_of_.size(); }
  std::size_t segment_of(std::size_t edge) const { return segment_of_[edge]; }
  std::span<const std::size_t> members(std::size_t segment) const {
    return {members_.data() + offsets_[segment], offsets_[segment + 1] - offsets_[segment]};
  }
  const std::vector<std::size_t>& segment_ids() const { return segment_of_; }

 private:
  std::vector<std::size_t> segment_of_;
  std::vector<std::size_t> offsets_;
  std::vector<std::size_t> members_;
};

enum class ActivationKind { Sigmoid, Tanh, Relu, Linear, Softplus, LeakyRelu, Relu6, Elu };
enum class AggKind { Sum, Mean, Max, Mlp };

inline constexpr double kLeakyReluSlope = 0.2;
inline constexpr double kEluAlpha = 1.0;

double activate(ActivationKind kind, double x);
double activate_derivative(ActivationKind kind, double x);

// ---- elementwise / linear algebra -------------------------------------------------

Var matmul(Var a, Var b);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var hadamard(Var a, Var b);
Var scale(Var a, double s);
Var add_scalar(Var a, double s);
// a[MxN] + row[1xN] broadcast over rows.
Var add_row(Var a, Var row);
// a[MxN] * row[1xN] broadcast over rows.
Var mul_row(Var a, Var row);
// a[MxN] * col[Mx1] broadcast over columns.
Var scale_rows(Var a, Var col);
Var activation(ActivationKind kind, Var x);

// ---- shape manipulation ------------------------------------------------------------

Var gather_rows(Var a, std::span<const std::size_t> index);
Var slice_cols(Var a, std::size_t begin, std::size_t count);
Var concat_cols(std::span<const Var> parts);
Var mean_of(std::span<const Var> parts);
// Per-row sum: [MxN] -> [Mx1].
Var row_sum(Var a);
// Sum of all elements -> [1x1].
Var sum(Var a);
// Sum of squares of all elements -> [1x1].
Var sum_squares(Var a);

// ---- neighborhood operations -------------------------------------------------------

// scores[Ex1] -> weights[Ex1], softmax within each segment (max-subtracted).
Var segment_softmax(Var scores, const SegmentIndex& segments);
// messages[ExD] -> [SxD]; kind is Sum, Mean or Max (Max routes gradient to the
// first argmax). Mlp is composed by callers from these primitives.
Var segment_aggregate(AggKind kind, Var messages, const SegmentIndex& segments);
// Fused message passing (`source` is copied): out[s] = reduce_{e in s} weight[e] * features[source[e]].
// Equivalent to segment_aggregate(kind, scale_rows(gather_rows(features, source), weight))
// without materializing the ExD message matrix.
Var propagate(AggKind kind, Var weight, Var features, std::span<const std::size_t> source,
              const SegmentIndex& segments);

// ---- stochastic --------------------------------------------------------------------

// Inverted dropout. Identity when !training or p == 0.
Var dropout(Var x, double p, bool training, std::mt19937_64& rng);

// ---- losses ------------------------------------------------------------------------

// Mean softmax cross-entropy over `rows`; labels[r] is the class of row r.
Var softmax_cross_entropy(Var logits, std::span<const int> labels, std::span<const std::size_t> rows);
// Mean sigmoid binary cross-entropy over rows x columns; targets is 0/1 with logits' shape.
Var sigmoid_cross_entropy(Var logits, const Tensor& targets, std::span<const std::size_t> rows);
// Row-wise log-softmax of a [1xK] vector.
Var log_softmax(Var logits);
// Element (0, index) of a [1xK] vector as [1x1].
Var pick(Var row, std::size_t index);

}  // namespace gnas
