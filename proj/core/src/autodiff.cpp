#include "gnas/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <numeric>

#include <Eigen/Core>

namespace gnas {

namespace {
using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
Eigen::Map<RowMatrix> as_matrix(Tensor& t) { return {t.data().data(), Eigen::Index(t.rows()), Eigen::Index(t.cols())}; }
Eigen::Map<const RowMatrix> as_matrix(const Tensor& t) {
  return {t.data().data(), Eigen::Index(t.rows()), Eigen::Index(t.cols())};
}
}  // namespace

const Tensor& Var::value() const { return tape->value(id); }
const Tensor& Var::grad() const { return tape->grad(id); }

// ---- Tape ----------------------------------------------------------------------------

Var Tape::constant(Tensor value) {
  nodes_.push_back(Node{std::move(value), {}, false, nullptr, {}});
  return {this, nodes_.size() - 1};
}

Var Tape::input(Tensor value) {
  nodes_.push_back(Node{std::move(value), {}, true, nullptr, {}});
  return {this, nodes_.size() - 1};
}

Var Tape::param(Parameter& p) {
  if (auto it = param_nodes_.find(&p); it != param_nodes_.end()) return {this, it->second};
  if (!p.grad.same_shape(p.value)) p.grad = Tensor(p.value.rows(), p.value.cols());
  nodes_.push_back(Node{Tensor{}, {}, true, &p, {}});
  param_nodes_.emplace(&p, nodes_.size() - 1);
  return {this, nodes_.size() - 1};
}

Var Tape::record(Tensor value, std::span<const Var> inputs, BackwardFn backward) {
  bool needs = false;
  for (const Var& v : inputs) {
    if (v.tape != this) throw InvariantError("operation mixes variables from different tapes");
    needs = needs || nodes_[v.id].requires_grad;
  }
  nodes_.push_back(Node{std::move(value), {}, needs, nullptr, needs ? std::move(backward) : BackwardFn{}});
  return {this, nodes_.size() - 1};
}

Tensor& Tape::grad_buffer(std::size_t id) {
  Node& n = nodes_[id];
  if (n.param) return n.param->grad;
  if (n.grad.empty() && !n.value.empty()) n.grad = Tensor(n.value.rows(), n.value.cols());
  return n.grad;
}

void Tape::backward(Var root) {
  if (root.tape != this) throw InvariantError("backward root belongs to another tape");
  if (value(root.id).size() != 1) {
    throw ShapeError("backward requires a scalar root, got " + shape_string(value(root.id)));
  }
  if (!nodes_[root.id].requires_grad) return;
  grad_buffer(root.id)[0] += 1.0;
  // Nodes are appended in execution order, so reverse index order is a valid
  // reverse topological order.
  for (std::size_t i = root.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.requires_grad || n.param || n.grad.empty()) continue;
    if (n.backward) n.backward(*this, i);
  }
}

// ---- SegmentIndex --------------------------------------------------------------------

SegmentIndex::SegmentIndex(std::vector<std::size_t> segment_of, std::size_t segment_count)
    : segment_of_(std::move(segment_of)), offsets_(segment_count + 1, 0), members_(segment_of_.size()) {
  for (std::size_t s : segment_of_) {
    if (s >= segment_count) throw ParameterError("segment id out of range");
    ++offsets_[s + 1];
  }
  std::partial_sum(offsets_.begin(), offsets_.end(), offsets_.begin());
  std::vector<std::size_t> cursor(offsets_.begin(), offsets_.end() - 1);
  for (std::size_t e = 0; e < segment_of_.size(); ++e) members_[cursor[segment_of_[e]]++] = e;
}

// ---- activations ---------------------------------------------------------------------

double activate(ActivationKind kind, double x) {
  switch (kind) {
    case ActivationKind::Sigmoid:
      return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
    case ActivationKind::Tanh:
      return std::tanh(x);
    case ActivationKind::Relu:
      return x > 0 ? x : 0.0;
    case ActivationKind::Linear:
      return x;
    case ActivationKind::Softplus:
      return std::log1p(std::exp(-std::abs(x))) + std::max(x, 0.0);
    case ActivationKind::LeakyRelu:
      return x > 0 ? x : kLeakyReluSlope * x;
    case ActivationKind::Relu6:
      return std::clamp(x, 0.0, 6.0);
    case ActivationKind::Elu:
      return x > 0 ? x : kEluAlpha * std::expm1(x);
  }
  return x;
}

// Kinks take the left derivative.
double activate_derivative(ActivationKind kind, double x) {
  switch (kind) {
    case ActivationKind::Sigmoid: {
      double s = activate(ActivationKind::Sigmoid, x);
      return s * (1.0 - s);
    }
    case ActivationKind::Tanh: {
      double t = std::tanh(x);
      return 1.0 - t * t;
    }
    case ActivationKind::Relu:
      return x > 0 ? 1.0 : 0.0;
    case ActivationKind::Linear:
      return 1.0;
    case ActivationKind::Softplus:
      return activate(ActivationKind::Sigmoid, x);
    case ActivationKind::LeakyRelu:
      return x > 0 ? 1.0 : kLeakyReluSlope;
    case ActivationKind::Relu6:
      return x > 0 && x <= 6.0 ? 1.0 : 0.0;
    case ActivationKind::Elu:
      return x > 0 ? 1.0 : kEluAlpha * std::exp(x);
  }
  return 1.0;
}

// ---- helpers -------------------------------------------------------------------------

namespace {

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) {
    throw ShapeError(std::string(op) + ": shapes " + shape_string(a) + " and " + shape_string(b) + " differ");
  }
}

// grad of input `id`, or nullptr when it does not take gradients.
Tensor* grad_of(Tape& t, std::size_t id) { return t.requires_grad(id) ? &t.grad_buffer(id) : nullptr; }

template <class Fn, class Dn>
Var unary(Var x, Fn&& forward_elem, Dn derivative) {
  const Tensor& xv = x.value();
  Tensor out(xv.rows(), xv.cols());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = forward_elem(xv[i]);
  const Var in[] = {x};
  return x.tape->record(std::move(out), in, [xid = x.id, derivative](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    const Tensor& xv = t.value(xid);
    const Tensor& yv = t.value(self);
    Tensor& gx = t.grad_buffer(xid);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * derivative(xv[i], yv[i]);
  });
}

}  // namespace

// ---- elementwise / linear algebra ----------------------------------------------------

Var matmul(Var a, Var b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.cols() != bv.rows()) {
    throw ShapeError("matmul: inner dimensions disagree, " + shape_string(av) + " x " + shape_string(bv));
  }
  const std::size_t m = av.rows(), k = av.cols(), n = bv.cols();
  Tensor out(m, n);
  if (m && n && k) as_matrix(out).noalias() = as_matrix(av) * as_matrix(bv);
  const Var in[] = {a, b};
  return a.tape->record(std::move(out), in, [aid = a.id, bid = b.id, m, k, n](Tape& t, std::size_t self) {
    if (!m || !n || !k) return;
    const auto g = as_matrix(t.grad(self));
    if (Tensor* ga = grad_of(t, aid)) as_matrix(*ga).noalias() += g * as_matrix(t.value(bid)).transpose();
    if (Tensor* gb = grad_of(t, bid)) as_matrix(*gb).noalias() += as_matrix(t.value(aid)).transpose() * g;
  });
}

Var add(Var a, Var b) {
  require_same_shape("add", a.value(), b.value());
  Tensor out = a.value();
  out.add_(b.value());
  const Var in[] = {a, b};
  return a.tape->record(std::move(out), in, [aid = a.id, bid = b.id](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    if (Tensor* ga = grad_of(t, aid)) ga->add_(g);
    if (Tensor* gb = grad_of(t, bid)) gb->add_(g);
  });
}

Var sub(Var a, Var b) {
  require_same_shape("sub", a.value(), b.value());
  Tensor out = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  const Var in[] = {a, b};
  return a.tape->record(std::move(out), in, [aid = a.id, bid = b.id](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    if (Tensor* ga = grad_of(t, aid)) ga->add_(g);
    if (Tensor* gb = grad_of(t, bid)) {
      for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i] -= g[i];
    }
  });
}

Var hadamard(Var a, Var b) {
  require_same_shape("hadamard", a.value(), b.value());
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  Tensor out(av.rows(), av.cols());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  const Var in[] = {a, b};
  return a.tape->record(std::move(out), in, [aid = a.id, bid = b.id](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    const Tensor& av = t.value(aid);
    const Tensor& bv = t.value(bid);
    if (Tensor* ga = grad_of(t, aid)) {
      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] * bv[i];
    }
    if (Tensor* gb = grad_of(t, bid)) {
      for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i] += g[i] * av[i];
    }
  });
}

Var scale(Var a, double s) {
  Tensor out = a.value();
  for (double& v : out.data()) v *= s;
  const Var in[] = {a};
  return a.tape->record(std::move(out), in, [aid = a.id, s](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    Tensor& ga = t.grad_buffer(aid);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += s * g[i];
  });
}

Var add_scalar(Var a, double s) {
  Tensor out = a.value();
  for (double& v : out.data()) v += s;
  const Var in[] = {a};
  return a.tape->record(std::move(out), in, [aid = a.id](Tape& t, std::size_t self) {
    t.grad_buffer(aid).add_(t.grad(self));
  });
}

Var add_row(Var a, Var row) {
  const Tensor& av = a.value();
  const Tensor& rv = row.value();
  if (rv.rows() != 1 || rv.cols() != av.cols()) {
    throw ShapeError("add_row: " + shape_string(av) + " and " + shape_string(rv));
  }
  Tensor out = av;
  for (std::size_t i = 0; i < out.rows(); ++i) {
    for (std::size_t j = 0; j < out.cols(); ++j) out(i, j) += rv[j];
  }
  const Var in[] = {a, row};
  return a.tape->record(std::move(out), in, [aid = a.id, rid = row.id](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    if (Tensor* ga = grad_of(t, aid)) ga->add_(g);
    if (Tensor* gr = grad_of(t, rid)) {
      for (std::size_t i = 0; i < g.rows(); ++i) {
        for (std::size_t j = 0; j < g.cols(); ++j) (*gr)[j] += g(i, j);
      }
    }
  });
}

Var mul_row(Var a, Var row) {
  const Tensor& av = a.value();
  const Tensor& rv = row.value();
  if (rv.rows() != 1 || rv.cols() != av.cols()) {
    throw ShapeError("mul_row: " + shape_string(av) + " and " + shape_string(rv));
  }
  Tensor out = av;
  for (std::size_t i = 0; i < out.rows(); ++i) {
    for (std::size_t j = 0; j < out.cols(); ++j) out(i, j) *= rv[j];
  }
  const Var in[] = {a, row};
  return a.tape->record(std::move(out), in, [aid = a.id, rid = row.id](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    const Tensor& av = t.value(aid);
    const Tensor& rv = t.value(rid);
    Tensor* ga = grad_of(t, aid);
    Tensor* gr = grad_of(t, rid);
    for (std::size_t i = 0; i < g.rows(); ++i) {
      for (std::size_t j = 0; j < g.cols(); ++j) {
        if (ga) (*ga)(i, j) += g(i, j) * rv[j];
        if (gr) (*gr)[j] += g(i, j) * av(i, j);
      }
    }
  });
}

Var scale_rows(Var a, Var col) {
  const Tensor& av = a.value();
  const Tensor& cv = col.value();
  if (cv.cols() != 1 || cv.rows() != av.rows()) {
    throw ShapeError("scale_rows: " + shape_string(av) + " and " + shape_string(cv));
  }
  Tensor out = av;
  for (std::size_t i = 0; i < out.rows(); ++i) {
    for (double& v : out.row(i)) v *= cv[i];
  }
  const Var in[] = {a, col};
  return a.tape->record(std::move(out), in, [aid = a.id, cid = col.id](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    const Tensor& av = t.value(aid);
    const Tensor& cv = t.value(cid);
    Tensor* ga = grad_of(t, aid);
    Tensor* gc = grad_of(t, cid);
    for (std::size_t i = 0; i < g.rows(); ++i) {
      double acc = 0.0;
      for (std::size_t j = 0; j < g.cols(); ++j) {
        if (ga) (*ga)(i, j) += g(i, j) * cv[i];
        acc += g(i, j) * av(i, j);
      }
      if (gc) (*gc)[i] += acc;
    }
  });
}

namespace {

template <ActivationKind K>
Var activation_kernel(Var x) {
  const Tensor& xv = x.value();
  Tensor out(xv.rows(), xv.cols());
  const double* xp = xv.data().data();
  double* yp = out.data().data();
  for (std::size_t i = 0; i < xv.size(); ++i) yp[i] = activate(K, xp[i]);
  const Var in[] = {x};
  return x.tape->record(std::move(out), in, [xid = x.id](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    const double* xp = t.value(xid).data().data();
    const double* yp = t.value(self).data().data();
    const double* gp = g.data().data();
    double* gx = t.grad_buffer(xid).data().data();
    for (std::size_t i = 0; i < g.size(); ++i) {
      double dy;
      // Where it is cheaper, the derivative is taken from the output.
      if constexpr (K == ActivationKind::Sigmoid) dy = yp[i] * (1.0 - yp[i]);
      else if constexpr (K == ActivationKind::Tanh) dy = 1.0 - yp[i] * yp[i];
      else if constexpr (K == ActivationKind::Elu) dy = xp[i] > 0 ? 1.0 : yp[i] + kEluAlpha;
      else dy = activate_derivative(K, xp[i]);
      gx[i] += gp[i] * dy;
    }
  });
}

}  // namespace

Var activation(ActivationKind kind, Var x) {
  switch (kind) {
    case ActivationKind::Sigmoid:
      return activation_kernel<ActivationKind::Sigmoid>(x);
    case ActivationKind::Tanh:
      return activation_kernel<ActivationKind::Tanh>(x);
    case ActivationKind::Relu:
      return activation_kernel<ActivationKind::Relu>(x);
    case ActivationKind::Linear:
      return activation_kernel<ActivationKind::Linear>(x);
    case ActivationKind::Softplus:
      return activation_kernel<ActivationKind::Softplus>(x);
    case ActivationKind::LeakyRelu:
      return activation_kernel<ActivationKind::LeakyRelu>(x);
    case ActivationKind::Relu6:
      return activation_kernel<ActivationKind::Relu6>(x);
    case ActivationKind::Elu:
      return activation_kernel<ActivationKind::Elu>(x);
  }
  throw ParameterError("unknown activation kind");
}

// ---- shape manipulation --------------------------------------------------------------

Var gather_rows(Var a, std::span<const std::size_t> index) {
  const Tensor& av = a.value();
  Tensor out(index.size(), av.cols());
  for (std::size_t r = 0; r < index.size(); ++r) {
    if (index[r] >= av.rows()) throw ShapeError("gather_rows: row index out of range for " + shape_string(av));
    std::copy_n(av.row(index[r]).data(), av.cols(), out.row(r).data());
  }
  const Var in[] = {a};
  auto idx = std::make_shared<std::vector<std::size_t>>(index.begin(), index.end());
  return a.tape->record(std::move(out), in, [aid = a.id, idx](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    Tensor& ga = t.grad_buffer(aid);
    for (std::size_t r = 0; r < idx->size(); ++r) {
      double* dst = ga.row((*idx)[r]).data();
      const double* src = g.row(r).data();
      for (std::size_t j = 0; j < g.cols(); ++j) dst[j] += src[j];
    }
  });
}

Var slice_cols(Var a, std::size_t begin, std::size_t count) {
  const Tensor& av = a.value();
  if (begin + count > av.cols()) {
    throw ShapeError("slice_cols: [" + std::to_string(begin) + ", " + std::to_string(begin + count) +
                     ") outside " + shape_string(av));
  }
  Tensor out(av.rows(), count);
  for (std::size_t i = 0; i < av.rows(); ++i) std::copy_n(av.row(i).data() + begin, count, out.row(i).data());
  const Var in[] = {a};
  return a.tape->record(std::move(out), in, [aid = a.id, begin, count](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    Tensor& ga = t.grad_buffer(aid);
    for (std::size_t i = 0; i < g.rows(); ++i) {
      for (std::size_t j = 0; j < count; ++j) ga(i, begin + j) += g(i, j);
    }
  });
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  const std::size_t rows = parts[0].rows();
  std::size_t cols = 0;
  for (const Var& p : parts) {
    if (p.rows() != rows) {
      throw ShapeError("concat_cols: " + shape_string(parts[0].value()) + " and " + shape_string(p.value()));
    }
    cols += p.cols();
  }
  Tensor out(rows, cols);
  std::vector<std::size_t> ids, offsets;
  std::size_t off = 0;
  for (const Var& p : parts) {
    const Tensor& pv = p.value();
    for (std::size_t i = 0; i < rows; ++i) std::copy_n(pv.row(i).data(), pv.cols(), out.row(i).data() + off);
    ids.push_back(p.id);
    offsets.push_back(off);
    off += pv.cols();
  }
  return parts[0].tape->record(std::move(out), parts, [ids, offsets](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    for (std::size_t k = 0; k < ids.size(); ++k) {
      Tensor* gp = grad_of(t, ids[k]);
      if (!gp) continue;
      for (std::size_t i = 0; i < gp->rows(); ++i) {
        for (std::size_t j = 0; j < gp->cols(); ++j) (*gp)(i, j) += g(i, offsets[k] + j);
      }
    }
  });
}

Var mean_of(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("mean_of: no inputs");
  Tensor out(parts[0].rows(), parts[0].cols());
  std::vector<std::size_t> ids;
  for (const Var& p : parts) {
    require_same_shape("mean_of", parts[0].value(), p.value());
    out.add_(p.value());
    ids.push_back(p.id);
  }
  const double inv = 1.0 / static_cast<double>(parts.size());
  for (double& v : out.data()) v *= inv;
  return parts[0].tape->record(std::move(out), parts, [ids, inv](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    for (std::size_t id : ids) {
      if (Tensor* gp = grad_of(t, id)) {
        for (std::size_t i = 0; i < g.size(); ++i) (*gp)[i] += inv * g[i];
      }
    }
  });
}

Var row_sum(Var a) {
  const Tensor& av = a.value();
  Tensor out(av.rows(), 1);
  for (std::size_t i = 0; i < av.rows(); ++i) {
    double acc = 0.0;
    for (double v : av.row(i)) acc += v;
    out[i] = acc;
  }
  const Var in[] = {a};
  return a.tape->record(std::move(out), in, [aid = a.id](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    Tensor& ga = t.grad_buffer(aid);
    for (std::size_t i = 0; i < ga.rows(); ++i) {
      for (double& v : ga.row(i)) v += g[i];
    }
  });
}

Var sum(Var a) {
  const Tensor& av = a.value();
  double acc = std::accumulate(av.data().begin(), av.data().end(), 0.0);
  const Var in[] = {a};
  return a.tape->record(Tensor::scalar(acc), in, [aid = a.id](Tape& t, std::size_t self) {
    const double g = t.grad(self)[0];
    for (double& v : t.grad_buffer(aid).data()) v += g;
  });
}

Var sum_squares(Var a) {
  const Tensor& av = a.value();
  double acc = 0.0;
  for (double v : av.data()) acc += v * v;
  const Var in[] = {a};
  return a.tape->record(Tensor::scalar(acc), in, [aid = a.id](Tape& t, std::size_t self) {
    const double g = t.grad(self)[0];
    const Tensor& av = t.value(aid);
    Tensor& ga = t.grad_buffer(aid);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += 2.0 * av[i] * g;
  });
}

// ---- neighborhood operations ---------------------------------------------------------

Var segment_softmax(Var scores, const SegmentIndex& segments) {
  const Tensor& sv = scores.value();
  if (sv.cols() != 1 || sv.rows() != segments.edge_count()) {
    throw ShapeError("segment_softmax: scores " + shape_string(sv) + " for " +
                     std::to_string(segments.edge_count()) + " edges");
  }
  Tensor out(sv.rows(), 1);
  for (std::size_t s = 0; s < segments.segment_count(); ++s) {
    auto members = segments.members(s);
    if (members.empty()) throw InvariantError("segment_softmax: segment " + std::to_string(s) + " is empty");
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t e : members) mx = std::max(mx, sv[e]);
    double z = 0.0;
    for (std::size_t e : members) {
      out[e] = std::exp(sv[e] - mx);
      z += out[e];
    }
    for (std::size_t e : members) out[e] /= z;
  }
  const Var in[] = {scores};
  return scores.tape->record(std::move(out), in, [sid = scores.id, seg = &segments](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    const Tensor& y = t.value(self);
    Tensor& gs = t.grad_buffer(sid);
    for (std::size_t s = 0; s < seg->segment_count(); ++s) {
      auto members = seg->members(s);
      double dot = 0.0;
      for (std::size_t e : members) dot += g[e] * y[e];
      for (std::size_t e : members) gs[e] += y[e] * (g[e] - dot);
    }
  });
}

namespace {

// Shared kernel of segment_aggregate and propagate. `weight` may be null (all
// ones) and `source` may be empty (identity row mapping).
struct MessageView {
  const Tensor* features;
  const Tensor* weight;
  const std::vector<std::size_t>* source;

  std::size_t row(std::size_t e) const { return source->empty() ? e : (*source)[e]; }
  double w(std::size_t e) const { return weight ? (*weight)[e] : 1.0; }
};

Tensor reduce_forward(AggKind kind, const MessageView& m, const SegmentIndex& seg,
                      std::vector<std::size_t>* argmax) {
  const std::size_t d = m.features->cols();
  Tensor out(seg.segment_count(), d);
  if (kind == AggKind::Max) argmax->assign(seg.segment_count() * d, 0);
  for (std::size_t s = 0; s < seg.segment_count(); ++s) {
    auto members = seg.members(s);
    double* orow = out.row(s).data();
    if (kind == AggKind::Max) {
      if (members.empty()) continue;
      // Strict comparison keeps the earliest edge on ties.
      std::size_t* arg = argmax->data() + s * d;
      const double w0 = m.w(members[0]);
      const double* first = m.features->row(m.row(members[0])).data();
      for (std::size_t j = 0; j < d; ++j) {
        orow[j] = w0 * first[j];
        arg[j] = members[0];
      }
      for (std::size_t e : members.subspan(1)) {
        const double we = m.w(e);
        const double* frow = m.features->row(m.row(e)).data();
        for (std::size_t j = 0; j < d; ++j) {
          const double v = we * frow[j];
          if (v > orow[j]) {
            orow[j] = v;
            arg[j] = e;
          }
        }
      }
      continue;
    }
    for (std::size_t e : members) {
      const double we = m.w(e);
      const double* frow = m.features->row(m.row(e)).data();
      for (std::size_t j = 0; j < d; ++j) orow[j] += we * frow[j];
    }
    if (kind == AggKind::Mean && !members.empty()) {
      const double inv = 1.0 / static_cast<double>(members.size());
      for (std::size_t j = 0; j < d; ++j) orow[j] *= inv;
    }
  }
  return out;
}

void reduce_backward(AggKind kind, const MessageView& m, const SegmentIndex& seg,
                     const std::vector<std::size_t>& argmax, const Tensor& g, Tensor* gfeat, Tensor* gweight) {
  const std::size_t d = m.features->cols();
  for (std::size_t s = 0; s < seg.segment_count(); ++s) {
    auto members = seg.members(s);
    if (members.empty()) continue;
    const double* grow = g.row(s).data();
    if (kind == AggKind::Max) {
      for (std::size_t j = 0; j < d; ++j) {
        const std::size_t e = argmax[s * d + j];
        if (gfeat) (*gfeat)(m.row(e), j) += m.w(e) * grow[j];
        if (gweight) (*gweight)[e] += (*m.features)(m.row(e), j) * grow[j];
      }
      continue;
    }
    const double norm = kind == AggKind::Mean ? 1.0 / static_cast<double>(members.size()) : 1.0;
    for (std::size_t e : members) {
      const double we = m.w(e) * norm;
      const std::size_t r = m.row(e);
      if (gfeat) {
        double* frow = gfeat->row(r).data();
        for (std::size_t j = 0; j < d; ++j) frow[j] += we * grow[j];
      }
      if (gweight) {
        const double* xrow = m.features->row(r).data();
        double acc = 0.0;
        for (std::size_t j = 0; j < d; ++j) acc += xrow[j] * grow[j];
        (*gweight)[e] += norm * acc;
      }
    }
  }
}

void require_reducible(AggKind kind) {
  if (kind == AggKind::Mlp) {
    throw ParameterError("mlp aggregation is composed from sum aggregation and transforms");
  }
}

}  // namespace

Var segment_aggregate(AggKind kind, Var messages, const SegmentIndex& segments) {
  require_reducible(kind);
  const Tensor& mv = messages.value();
  if (mv.rows() != segments.edge_count()) {
    throw ShapeError("segment_aggregate: messages " + shape_string(mv) + " for " +
                     std::to_string(segments.edge_count()) + " edges");
  }
  static const std::vector<std::size_t> kIdentity;
  auto argmax = std::make_shared<std::vector<std::size_t>>();
  Tensor out = reduce_forward(kind, MessageView{&mv, nullptr, &kIdentity}, segments, argmax.get());
  const Var in[] = {messages};
  return messages.tape->record(
      std::move(out), in, [mid = messages.id, kind, seg = &segments, argmax](Tape& t, std::size_t self) {
        const Tensor& mv = t.value(mid);
        reduce_backward(kind, MessageView{&mv, nullptr, &kIdentity}, *seg, *argmax, t.grad(self),
                        &t.grad_buffer(mid), nullptr);
      });
}

Var propagate(AggKind kind, Var weight, Var features, std::span<const std::size_t> source,
              const SegmentIndex& segments) {
  require_reducible(kind);
  const Tensor& wv = weight.value();
  const Tensor& fv = features.value();
  if (wv.cols() != 1 || wv.rows() != segments.edge_count() || source.size() != segments.edge_count()) {
    throw ShapeError("propagate: weight " + shape_string(wv) + " for " + std::to_string(segments.edge_count()) +
                     " edges");
  }
  for (std::size_t s : source) {
    if (s >= fv.rows()) throw ShapeError("propagate: source row out of range for " + shape_string(fv));
  }
  auto src = std::make_shared<std::vector<std::size_t>>(source.begin(), source.end());
  auto argmax = std::make_shared<std::vector<std::size_t>>();
  Tensor out = reduce_forward(kind, MessageView{&fv, &wv, src.get()}, segments, argmax.get());
  const Var in[] = {weight, features};
  return weight.tape->record(std::move(out), in,
                             [wid = weight.id, fid = features.id, kind, seg = &segments, src, argmax](
                                 Tape& t, std::size_t self) {
                               const Tensor& wv = t.value(wid);
                               const Tensor& fv = t.value(fid);
                               reduce_backward(kind, MessageView{&fv, &wv, src.get()}, *seg, *argmax,
                                               t.grad(self), grad_of(t, fid), grad_of(t, wid));
                             });
}

// ---- stochastic ----------------------------------------------------------------------

Var dropout(Var x, double p, bool training, std::mt19937_64& rng) {
  if (!(p >= 0.0 && p < 1.0)) throw ParameterError("dropout probability must lie in [0, 1)");
  if (!training || p == 0.0) return x;
  const Tensor& xv = x.value();
  auto mask = std::make_shared<std::vector<double>>(xv.size());
  // Keep iff a raw 64-bit draw falls below (1 - p) * 2^64.
  const auto cut = static_cast<std::uint64_t>(std::ldexp(1.0 - p, 64) >= 0x1p64 ? ~0ull : std::ldexp(1.0 - p, 64));
  const double s = 1.0 / (1.0 - p);
  Tensor out(xv.rows(), xv.cols());
  for (std::size_t i = 0; i < xv.size(); ++i) {
    (*mask)[i] = rng() < cut ? s : 0.0;
    out[i] = xv[i] * (*mask)[i];
  }
  const Var in[] = {x};
  return x.tape->record(std::move(out), in, [xid = x.id, mask](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    Tensor& gx = t.grad_buffer(xid);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * (*mask)[i];
  });
}

// ---- losses --------------------------------------------------------------------------

Var softmax_cross_entropy(Var logits, std::span<const int> labels, std::span<const std::size_t> rows) {
  if (rows.empty()) throw ParameterError("cross-entropy over an empty mask");
  const Tensor& lv = logits.value();
  if (labels.size() != lv.rows()) {
    throw ShapeError("softmax_cross_entropy: " + std::to_string(labels.size()) + " labels for logits " +
                     shape_string(lv));
  }
  const std::size_t c = lv.cols();
  auto probs = std::make_shared<Tensor>(rows.size(), c);
  double loss = 0.0;
  for (std::size_t k = 0; k < rows.size(); ++k) {
    const std::size_t r = rows[k];
    const int y = labels[r];
    if (y < 0 || static_cast<std::size_t>(y) >= c) throw ParameterError("label out of range for logits");
    auto lrow = lv.row(r);
    const double mx = *std::max_element(lrow.begin(), lrow.end());
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) z += std::exp(lrow[j] - mx);
    const double lse = mx + std::log(z);
    loss += lse - lrow[y];
    for (std::size_t j = 0; j < c; ++j) (*probs)(k, j) = std::exp(lrow[j] - lse);
  }
  const double inv = 1.0 / static_cast<double>(rows.size());
  auto picked = std::make_shared<std::vector<std::pair<std::size_t, int>>>();
  for (std::size_t r : rows) picked->emplace_back(r, labels[r]);
  const Var in[] = {logits};
  return logits.tape->record(Tensor::scalar(loss * inv), in,
                             [lid = logits.id, probs, picked, inv, c](Tape& t, std::size_t self) {
                               const double g = t.grad(self)[0] * inv;
                               Tensor& gl = t.grad_buffer(lid);
                               for (std::size_t k = 0; k < picked->size(); ++k) {
                                 auto [r, y] = (*picked)[k];
                                 for (std::size_t j = 0; j < c; ++j) gl(r, j) += g * (*probs)(k, j);
                                 gl(r, static_cast<std::size_t>(y)) -= g;
                               }
                             });
}

Var sigmoid_cross_entropy(Var logits, const Tensor& targets, std::span<const std::size_t> rows) {
  if (rows.empty()) throw ParameterError("cross-entropy over an empty mask");
  const Tensor& lv = logits.value();
  require_same_shape("sigmoid_cross_entropy", lv, targets);
  const std::size_t c = lv.cols();
  double loss = 0.0;
  for (std::size_t r : rows) {
    for (std::size_t j = 0; j < c; ++j) {
      const double x = lv(r, j);
      const double y = targets(r, j);
      // log(1 + e^x) - y x, evaluated stably.
      loss += std::max(x, 0.0) - x * y + std::log1p(std::exp(-std::abs(x)));
    }
  }
  const double inv = 1.0 / static_cast<double>(rows.size() * c);
  auto rows_copy = std::make_shared<std::vector<std::size_t>>(rows.begin(), rows.end());
  auto tgt = std::make_shared<Tensor>(targets);
  const Var in[] = {logits};
  return logits.tape->record(Tensor::scalar(loss * inv), in,
                             [lid = logits.id, rows_copy, tgt, inv, c](Tape& t, std::size_t self) {
                               const double g = t.grad(self)[0] * inv;
                               const Tensor& lv = t.value(lid);
                               Tensor& gl = t.grad_buffer(lid);
                               for (std::size_t r : *rows_copy) {
                                 for (std::size_t j = 0; j < c; ++j) {
                                   gl(r, j) += g * (activate(ActivationKind::Sigmoid, lv(r, j)) - (*tgt)(r, j));
                                 }
                               }
                             });
}

Var log_softmax(Var logits) {
  const Tensor& lv = logits.value();
  if (lv.rows() != 1) throw ShapeError("log_softmax expects a row vector, got " + shape_string(lv));
  const double mx = *std::max_element(lv.data().begin(), lv.data().end());
  double z = 0.0;
  for (double v : lv.data()) z += std::exp(v - mx);
  const double lse = mx + std::log(z);
  Tensor out(1, lv.cols());
  for (std::size_t j = 0; j < lv.cols(); ++j) out[j] = lv[j] - lse;
  const Var in[] = {logits};
  return logits.tape->record(std::move(out), in, [lid = logits.id](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    const Tensor& y = t.value(self);
    double gsum = 0.0;
    for (double v : g.data()) gsum += v;
    Tensor& gl = t.grad_buffer(lid);
    for (std::size_t j = 0; j < g.size(); ++j) gl[j] += g[j] - std::exp(y[j]) * gsum;
  });
}

Var pick(Var row, std::size_t index) {
  const Tensor& rv = row.value();
  if (rv.rows() != 1 || index >= rv.cols()) throw ShapeError("pick: index out of range for " + shape_string(rv));
  const Var in[] = {row};
  return row.tape->record(Tensor::scalar(rv[index]), in, [rid = row.id, index](Tape& t, std::size_t self) {
    t.grad_buffer(rid)[index] += t.grad(self)[0];
  });
}

}  // namespace gnas
