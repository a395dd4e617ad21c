#include "gnas/gnn.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>

#include "gnas/optim.hpp"
#include "gnas/param_store.hpp"

namespace gnas {

// ---- geometry ------------------------------------------------------------------------

std::vector<LayerGeometry> layer_geometry(const ArchDescription& arch, std::size_t in_dim, std::size_t classes) {
  if (in_dim == 0 || classes == 0) throw ParameterError("layer_geometry: in_dim and classes must be >= 1");
  std::vector<std::size_t> rep_dims{in_dim};
  std::vector<LayerGeometry> out;
  for (std::size_t l = 0; l < arch.layers.size(); ++l) {
    const LayerSpec& s = arch.layers[l];
    if (s.heads <= 0 || s.hidden <= 0) throw ValidationError("layer " + std::to_string(l + 1), "non-positive width");
    LayerGeometry g;
    g.is_output = l + 1 == arch.layers.size();
    g.activation = s.activation;
    g.key.layer_index = l;
    g.key.attention = s.attention;
    g.key.aggregation = s.aggregation;
    g.key.in_dim = rep_dims.back();
    g.key.heads = static_cast<std::size_t>(s.heads);
    g.key.hidden = g.is_output ? classes : static_cast<std::size_t>(s.hidden);
    g.combined_dim = g.is_output ? g.key.hidden : g.key.heads * g.key.hidden;
    g.out_dim = g.combined_dim;
    if (s.skip_from) {
      if (*s.skip_from > l) {
        throw ValidationError("layer " + std::to_string(l + 1) + " skip_from", "not a previous layer");
      }
      g.skip_from = s.skip_from;
      g.skip_dim = rep_dims[*s.skip_from];
      g.merge = g.is_output ? MergeKind::Add : s.merge;
      if (g.merge == MergeKind::Add) {
        if (g.skip_dim != g.combined_dim) {
          g.key.residual_dim = g.skip_dim;
          g.key.residual_out = g.combined_dim;
        }
      } else {
        g.out_dim = g.combined_dim + g.skip_dim;
      }
    }
    rep_dims.push_back(g.out_dim);
    out.push_back(g);
  }
  return out;
}

// ---- parameters ----------------------------------------------------------------------

namespace {

struct HeadShapes {
  std::array<std::size_t, 2> left{0, 0}, right{0, 0}, att_out{0, 0};
  bool mlp = false;
};

HeadShapes head_shapes(const ShareKey& key) {
  const std::size_t h = key.hidden;
  HeadShapes s;
  switch (key.attention) {
    case AttentionKind::Const:
    case AttentionKind::Gcn:
      break;
    case AttentionKind::Gat:
    case AttentionKind::SymGat:
      s.left = {h, 1};
      s.right = {h, 1};
      break;
    case AttentionKind::Cos:
      s.left = {h, h};
      s.right = {h, h};
      break;
    case AttentionKind::Linear:
      s.left = {h, 1};
      break;
    case AttentionKind::GeneLinear:
      s.left = {1, h};
      s.right = {1, h};
      s.att_out = {h, 1};
      break;
  }
  s.mlp = key.aggregation == AggKind::Mlp;
  return s;
}

std::optional<Parameter> make_param(const char* name, std::array<std::size_t, 2> shape, std::mt19937_64& rng) {
  if (shape[0] == 0) return std::nullopt;
  // Row-vector gene-linear weights act elementwise; their fans are the hidden width.
  const std::size_t fan_in = shape[0] == 1 ? shape[1] : shape[0];
  return Parameter(name, glorot_init_shaped(shape[0], shape[1], fan_in, shape[1], rng));
}

bool shape_is(const std::optional<Parameter>& p, std::array<std::size_t, 2> shape) {
  if (shape[0] == 0) return !p.has_value();
  return p.has_value() && p->value.rows() == shape[0] && p->value.cols() == shape[1];
}

template <typename P, typename F>
void for_each_param(P& layer, F&& fn) {
  fn(layer.transform);
  for (auto& h : layer.heads) {
    for (auto* opt : {&h.att_left, &h.att_right, &h.att_out, &h.mlp_in, &h.mlp_out}) {
      if (opt->has_value()) fn(**opt);
    }
  }
  if (layer.residual) fn(*layer.residual);
}

}  // namespace

LayerParams init_layer_params(const ShareKey& key, std::mt19937_64& rng) {
  LayerParams p;
  p.transform = Parameter("W_T", glorot_init(key.in_dim, key.heads * key.hidden, rng));
  const HeadShapes hs = head_shapes(key);
  for (std::size_t k = 0; k < key.heads; ++k) {
    HeadParams h;
    h.att_left = make_param("W_l", hs.left, rng);
    h.att_right = make_param("W_r", hs.right, rng);
    h.att_out = make_param("W_a", hs.att_out, rng);
    if (hs.mlp) {
      h.mlp_in = make_param("W_mlp1", {key.hidden, key.hidden}, rng);
      h.mlp_out = make_param("W_mlp2", {key.hidden, key.hidden}, rng);
    }
    p.heads.push_back(std::move(h));
  }
  if (key.residual_dim > 0) p.residual = Parameter("W_res", glorot_init(key.residual_dim, key.residual_out, rng));
  return p;
}

bool params_match_key(const LayerParams& p, const ShareKey& key) {
  if (p.transform.value.rows() != key.in_dim || p.transform.value.cols() != key.heads * key.hidden) return false;
  if (p.heads.size() != key.heads) return false;
  const HeadShapes hs = head_shapes(key);
  const std::array<std::size_t, 2> mlp = hs.mlp ? std::array<std::size_t, 2>{key.hidden, key.hidden}
                                                 : std::array<std::size_t, 2>{0, 0};
  for (const HeadParams& h : p.heads) {
    if (!shape_is(h.att_left, hs.left) || !shape_is(h.att_right, hs.right) || !shape_is(h.att_out, hs.att_out) ||
        !shape_is(h.mlp_in, mlp) || !shape_is(h.mlp_out, mlp)) {
      return false;
    }
  }
  return shape_is(p.residual, key.residual_dim > 0 ? std::array<std::size_t, 2>{key.residual_dim, key.residual_out}
                                                   : std::array<std::size_t, 2>{0, 0});
}

std::vector<Parameter*> LayerParams::parameters() {
  std::vector<Parameter*> out;
  for_each_param(*this, [&](Parameter& p) { out.push_back(&p); });
  return out;
}

std::vector<const Parameter*> LayerParams::parameters() const {
  std::vector<const Parameter*> out;
  for_each_param(*this, [&](const Parameter& p) { out.push_back(&p); });
  return out;
}

std::size_t LayerParams::parameter_count() const {
  std::size_t n = 0;
  for_each_param(*this, [&](const Parameter& p) { n += p.size(); });
  return n;
}

bool LayerParams::same_shapes(const LayerParams& other) const {
  auto a = parameters();
  auto b = other.parameters();
  if (a.size() != b.size() || heads.size() != other.heads.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i]->name != b[i]->name || !a[i]->value.same_shape(b[i]->value)) return false;
  }
  return true;
}

bool LayerParams::same_values(const LayerParams& other) const {
  if (!same_shapes(other)) return false;
  auto a = parameters();
  auto b = other.parameters();
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i]->value != b[i]->value) return false;
  }
  return true;
}

std::vector<Parameter*> ChildModel::parameters() {
  std::vector<Parameter*> out;
  for (auto& l : layers) {
    auto p = l.parameters();
    out.insert(out.end(), p.begin(), p.end());
  }
  return out;
}

std::size_t ChildModel::parameter_count() const {
  std::size_t n = 0;
  for (const auto& l : layers) n += l.parameter_count();
  return n;
}

void ChildModel::zero_grad() {
  for (Parameter* p : parameters()) p->zero_grad();
}

ChildModel build_model(const ArchDescription& arch, std::size_t in_dim, std::size_t classes,
                       const SharedParamStore* store, std::mt19937_64& rng) {
  if (arch.layers.empty()) throw ValidationError("layer_count", "architecture has no layers");
  ChildModel m;
  m.arch = arch;
  m.in_dim = in_dim;
  m.classes = classes;
  m.geometry = layer_geometry(arch, in_dim, classes);
  for (const LayerGeometry& g : m.geometry) {
    m.layers.push_back(store ? store->fetch_copy(g.key, rng) : init_layer_params(g.key, rng));
  }
  return m;
}

// ---- attention -----------------------------------------------------------------------

namespace {

Var param_var(Tape& t, std::optional<Parameter>& p, const char* what) {
  if (!p) throw InvariantError(std::string("attention parameter ") + what + " missing for this attention kind");
  return t.param(*p);
}

Var leaky(Var x) { return activation(ActivationKind::LeakyRelu, x); }

}  // namespace

Var attention_score(AttentionKind kind, Var h_i, Var h_j, double d_i, double d_j, HeadParams& params) {
  Tape& t = *h_i.tape;
  switch (kind) {
    case AttentionKind::Const:
      return t.constant(Tensor::scalar(1.0));
    case AttentionKind::Gcn:
      return t.constant(Tensor::scalar(1.0 / std::sqrt(d_i * d_j)));
    case AttentionKind::Gat: {
      Var wl = param_var(t, params.att_left, "W_l"), wr = param_var(t, params.att_right, "W_r");
      return leaky(add(matmul(h_i, wl), matmul(h_j, wr)));
    }
    case AttentionKind::SymGat: {
      Var wl = param_var(t, params.att_left, "W_l"), wr = param_var(t, params.att_right, "W_r");
      Var ij = leaky(add(matmul(h_i, wl), matmul(h_j, wr)));
      Var ji = leaky(add(matmul(h_j, wl), matmul(h_i, wr)));
      return add(ji, ij);
    }
    case AttentionKind::Cos: {
      Var wl = param_var(t, params.att_left, "W_l"), wr = param_var(t, params.att_right, "W_r");
      return sum(hadamard(matmul(h_i, wl), matmul(h_j, wr)));
    }
    case AttentionKind::Linear: {
      Var wl = param_var(t, params.att_left, "W_l");
      return activation(ActivationKind::Tanh, matmul(h_j, wl));
    }
    case AttentionKind::GeneLinear: {
      Var wl = param_var(t, params.att_left, "W_l"), wr = param_var(t, params.att_right, "W_r");
      Var wa = param_var(t, params.att_out, "W_a");
      return matmul(activation(ActivationKind::Tanh, add(hadamard(h_i, wl), hadamard(h_j, wr))), wa);
    }
  }
  throw InvariantError("unknown attention kind");
}

Var edge_attention_scores(AttentionKind kind, Var z, const Graph& graph, HeadParams& params) {
  Tape& t = *z.tape;
  const auto& src = graph.sources();
  const auto& dst = graph.targets();
  const std::size_t e = graph.edge_count();
  switch (kind) {
    case AttentionKind::Const:
      return t.constant(Tensor(e, 1, 1.0));
    case AttentionKind::Gcn: {
      Tensor s(e, 1);
      const auto& deg = graph.degrees();
      for (std::size_t k = 0; k < e; ++k) {
        s[k] = 1.0 / std::sqrt(static_cast<double>(deg[dst[k]]) * static_cast<double>(deg[src[k]]));
      }
      return t.constant(std::move(s));
    }
    case AttentionKind::Gat:
    case AttentionKind::SymGat: {
      Var left = matmul(z, param_var(t, params.att_left, "W_l"));
      Var right = matmul(z, param_var(t, params.att_right, "W_r"));
      Var ij = leaky(add(gather_rows(left, dst), gather_rows(right, src)));
      if (kind == AttentionKind::Gat) return ij;
      Var ji = leaky(add(gather_rows(left, src), gather_rows(right, dst)));
      return add(ji, ij);
    }
    case AttentionKind::Cos: {
      Var p = matmul(z, param_var(t, params.att_left, "W_l"));
      Var q = matmul(z, param_var(t, params.att_right, "W_r"));
      return row_sum(hadamard(gather_rows(p, dst), gather_rows(q, src)));
    }
    case AttentionKind::Linear: {
      Var s = matmul(z, param_var(t, params.att_left, "W_l"));
      return activation(ActivationKind::Tanh, gather_rows(s, src));
    }
    case AttentionKind::GeneLinear: {
      Var p = mul_row(z, param_var(t, params.att_left, "W_l"));
      Var q = mul_row(z, param_var(t, params.att_right, "W_r"));
      Var inner = activation(ActivationKind::Tanh, add(gather_rows(p, dst), gather_rows(q, src)));
      return matmul(inner, param_var(t, params.att_out, "W_a"));
    }
  }
  throw InvariantError("unknown attention kind");
}

Var aggregate_neighbors(AggKind kind, Var alpha, Var z, const Graph& graph, HeadParams& params) {
  if (kind != AggKind::Mlp) return propagate(kind, alpha, z, graph.sources(), graph.in_edges());
  // Per-message perceptron W2 relu(W1 (alpha z_j)) summed over the neighborhood.
  // The first product is taken per node since (alpha z) W1 = alpha (z W1).
  Tape& t = *z.tape;
  Var first = matmul(z, param_var(t, params.mlp_in, "W_mlp1"));
  Var hidden = activation(ActivationKind::Relu, scale_rows(gather_rows(first, graph.sources()), alpha));
  Var pooled = segment_aggregate(AggKind::Sum, hidden, graph.in_edges());
  return matmul(pooled, param_var(t, params.mlp_out, "W_mlp2"));
}

// ---- forward -------------------------------------------------------------------------

Var forward(ChildModel& model, Tape& tape, const Graph& graph, const ForwardOptions& opt, std::mt19937_64& rng) {
  if (graph.feature_dim() != model.in_dim) {
    throw ShapeError("forward: graph has " + std::to_string(graph.feature_dim()) + " features, model expects " +
                     std::to_string(model.in_dim));
  }
  std::vector<Var> reps{tape.constant(graph.features())};
  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    const LayerGeometry& g = model.geometry[l];
    LayerParams& p = model.layers[l];
    Var input = dropout(reps.back(), opt.dropout, opt.training, rng);
    Var z = matmul(input, tape.param(p.transform));
    std::vector<Var> heads;
    for (std::size_t k = 0; k < g.key.heads; ++k) {
      Var zk = g.key.heads == 1 ? z : slice_cols(z, k * g.key.hidden, g.key.hidden);
      Var scores = edge_attention_scores(g.key.attention, zk, graph, p.heads[k]);
      Var alpha = segment_softmax(scores, graph.in_edges());
      alpha = dropout(alpha, opt.dropout, opt.training, rng);
      heads.push_back(aggregate_neighbors(g.key.aggregation, alpha, zk, graph, p.heads[k]));
    }
    Var combined = heads.size() == 1 ? heads[0] : (g.is_output ? mean_of(heads) : concat_cols(heads));
    if (g.skip_from) {
      Var source = reps[*g.skip_from];
      if (g.merge == MergeKind::Add) {
        combined = add(combined, p.residual ? matmul(source, tape.param(*p.residual)) : source);
      } else {
        const Var parts[] = {combined, source};
        combined = concat_cols(parts);
      }
    }
    reps.push_back(activation(g.activation, combined));
  }
  return reps.back();
}

// ---- metrics -------------------------------------------------------------------------

double accuracy(const Tensor& logits, std::span<const int> labels, std::span<const std::size_t> rows) {
  if (rows.empty()) throw ParameterError("accuracy over an empty mask");
  std::size_t correct = 0;
  for (std::size_t r : rows) {
    auto row = logits.row(r);
    const auto best = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
    if (best == labels[r]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(rows.size());
}

F1Counts f1_counts(const Tensor& logits, const Tensor& targets, std::span<const std::size_t> rows) {
  F1Counts c;
  for (std::size_t r : rows) {
    for (std::size_t j = 0; j < logits.cols(); ++j) {
      const bool pred = logits(r, j) > 0.0;
      const bool truth = targets(r, j) > 0.5;
      if (pred && truth) ++c.tp;
      if (pred && !truth) ++c.fp;
      if (!pred && truth) ++c.fn;
    }
  }
  return c;
}

double F1Counts::micro_f1() const {
  const double denom = 2.0 * static_cast<double>(tp) + static_cast<double>(fp) + static_cast<double>(fn);
  return denom == 0.0 ? 0.0 : 2.0 * static_cast<double>(tp) / denom;
}

namespace {

Var task_loss(const LabeledDataset& ds, std::size_t g, Var logits, std::span<const std::size_t> rows) {
  if (ds.task == TaskKind::SingleLabel) return softmax_cross_entropy(logits, ds.labels[g].classes, rows);
  return sigmoid_cross_entropy(logits, ds.labels[g].targets, rows);
}

struct MaskScore {
  double metric = 0.0;
  double loss = 0.0;
};

// One inference pass per graph; metric pooled over all listed nodes, loss
// averaged over them.
MaskScore score_nodes(ChildModel& model, const LabeledDataset& ds, const std::vector<std::vector<std::size_t>>& nodes) {
  std::size_t total = 0, correct = 0;
  double weighted_loss = 0.0;
  F1Counts counts;
  for (std::size_t g = 0; g < ds.graphs.size(); ++g) {
    const auto& rows = nodes[g];
    if (rows.empty()) continue;
    Tape tape;
    std::mt19937_64 unused(0);
    Var logits = forward(model, tape, ds.graphs[g], ForwardOptions{}, unused);
    weighted_loss += task_loss(ds, g, logits, rows).value().item() * static_cast<double>(rows.size());
    if (ds.task == TaskKind::SingleLabel) {
      correct += static_cast<std::size_t>(
          std::llround(accuracy(logits.value(), ds.labels[g].classes, rows) * static_cast<double>(rows.size())));
    } else {
      F1Counts c = f1_counts(logits.value(), ds.labels[g].targets, rows);
      counts.tp += c.tp;
      counts.fp += c.fp;
      counts.fn += c.fn;
    }
    total += rows.size();
  }
  if (total == 0) throw ParameterError("evaluate over an empty mask");
  MaskScore out;
  out.loss = weighted_loss / static_cast<double>(total);
  out.metric = ds.task == TaskKind::SingleLabel ? static_cast<double>(correct) / static_cast<double>(total)
                                                : counts.micro_f1();
  return out;
}

std::vector<std::vector<std::size_t>> mask_nodes(const LabeledDataset& ds, MaskKind kind) {
  std::vector<std::vector<std::size_t>> out;
  for (const auto& m : ds.masks) out.push_back(mask_of(m, kind));
  return out;
}

}  // namespace

double evaluate(ChildModel& model, const LabeledDataset& ds, MaskKind mask) {
  return score_nodes(model, ds, mask_nodes(ds, mask)).metric;
}

double evaluate_nodes(ChildModel& model, const LabeledDataset& ds, const std::vector<std::vector<std::size_t>>& nodes) {
  if (nodes.size() != ds.graphs.size()) throw ParameterError("evaluate_nodes: one node list per graph required");
  return score_nodes(model, ds, nodes).metric;
}

double evaluate_loss(ChildModel& model, const LabeledDataset& ds, MaskKind mask) {
  return score_nodes(model, ds, mask_nodes(ds, mask)).loss;
}

// ---- training ------------------------------------------------------------------------

TrainedResult train_child(ChildModel& model, const LabeledDataset& ds, const TrainHyperparams& hp) {
  if (ds.mask_size(MaskKind::Train) == 0 || ds.mask_size(MaskKind::Val) == 0) {
    throw ParameterError("train_child: train and validation masks must be non-empty");
  }
  if (!(hp.dropout_p >= 0.0 && hp.dropout_p < 1.0)) throw ParameterError("train_child: dropout must lie in [0, 1)");
  TrainedResult result;
  std::mt19937_64 rng(hp.seed);
  Adam adam(model.parameters(), AdamOptions{.lr = hp.lr});
  const double total_train = static_cast<double>(ds.mask_size(MaskKind::Train));

  double best_metric = -std::numeric_limits<double>::infinity();
  double best_loss = std::numeric_limits<double>::infinity();
  std::vector<LayerParams> best_params = model.layers;
  std::vector<double> epoch_seconds;
  const auto val_nodes = mask_nodes(ds, MaskKind::Val);

  for (std::size_t epoch = 1; epoch <= hp.max_epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    adam.zero_grad();
    double epoch_loss = 0.0;
    for (std::size_t g = 0; g < ds.graphs.size(); ++g) {
      const auto& rows = ds.masks[g].train;
      if (rows.empty()) continue;
      Tape tape;
      Var logits = forward(model, tape, ds.graphs[g], ForwardOptions{true, hp.dropout_p}, rng);
      Var loss = scale(task_loss(ds, g, logits, rows), static_cast<double>(rows.size()) / total_train);
      if (hp.l2_lambda > 0.0) {
        for (Parameter* p : model.parameters()) {
          loss = add(loss, scale(sum_squares(tape.param(*p)), hp.l2_lambda / static_cast<double>(ds.graphs.size())));
        }
      }
      epoch_loss += loss.value().item();
      tape.backward(loss);
    }
    if (!std::isfinite(epoch_loss)) throw TrainingError(epoch, "training loss is not finite");
    adam.step();

    const MaskScore val = score_nodes(model, ds, val_nodes);
    const double val_metric = val.metric;
    const double val_loss = val.loss;
    result.epochs_ran = epoch;
    epoch_seconds.push_back(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
    if (val_metric > best_metric || (val_metric == best_metric && val_loss < best_loss)) {
      best_metric = val_metric;
      best_loss = std::isfinite(val_loss) ? val_loss : best_loss;
      best_params = model.layers;
      result.best_epoch = epoch;
    } else if (epoch - result.best_epoch > hp.patience) {
      break;
    }
  }

  model.layers = std::move(best_params);
  result.optimizer_steps = adam.steps();
  if (hp.max_epochs == 0) {
    const MaskScore val = score_nodes(model, ds, val_nodes);
    best_metric = val.metric;
    best_loss = val.loss;
  }
  result.best_val_metric = best_metric;
  result.best_val_loss = best_loss;
  result.test_metric = ds.mask_size(MaskKind::Test) > 0 ? evaluate(model, ds, MaskKind::Test) : 0.0;
  if (epoch_seconds.size() > 1) {
    std::vector<double> tail(epoch_seconds.begin() + 1, epoch_seconds.end());
    std::nth_element(tail.begin(), tail.begin() + static_cast<std::ptrdiff_t>(tail.size() / 2), tail.end());
    result.seconds_per_epoch = tail[tail.size() / 2];
  } else if (!epoch_seconds.empty()) {
    result.seconds_per_epoch = epoch_seconds.front();
  }
  result.final_params = model.layers;
  return result;
}

}  // namespace gnas
