#pragma once

// Child GNN construction, forward pass, training and evaluation.
//
// Each layer runs: dropout(input) -> W_T transform -> per-head attention
// scores -> softmax over the in-neighborhood -> aggregation -> head
// combination (concat on hidden layers, mean on the output layer) ->
// residual merge -> activation.

#include <compare>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <random>
#include <vector>

#include "gnas/arch_space.hpp"
#include "gnas/autodiff.hpp"
#include "gnas/graph.hpp"

namespace gnas {

class SharedParamStore;

// Parameter signature of one layer. Two layers with equal keys have
// parameters of identical shapes and may exchange them.
struct ShareKey {
  std::size_t layer_index = 0;
  AttentionKind attention = AttentionKind::Const;
  AggKind aggregation = AggKind::Sum;
  std::size_t in_dim = 0;
  std::size_t heads = 1;
  std::size_t hidden = 1;
  // Input width of the residual projection W_res, 0 when the layer has none.
  std::size_t residual_dim = 0;
  // Output width of the residual projection (heads*hidden on hidden layers, hidden on the output layer).
  std::size_t residual_out = 0;

  friend auto operator<=>(const ShareKey&, const ShareKey&) = default;
};

// Resolved shapes of one layer of a concrete architecture.
struct LayerGeometry {
  ShareKey key;
  ActivationKind activation = ActivationKind::Relu;
  bool is_output = false;
  std::optional<std::size_t> skip_from;
  std::size_t skip_dim = 0;
  MergeKind merge = MergeKind::Add;
  std::size_t combined_dim = 0;  // after head combination
  std::size_t out_dim = 0;       // after residual merge
};

// The output layer always has `classes` hidden units per head and averages
// its heads; a concat merge on the output layer is applied as add so the
// logits keep width `classes`.
std::vector<LayerGeometry> layer_geometry(const ArchDescription& arch, std::size_t in_dim, std::size_t classes);

struct HeadParams {
  std::optional<Parameter> att_left;
  std::optional<Parameter> att_right;
  std::optional<Parameter> att_out;  // gene-linear W_a
  std::optional<Parameter> mlp_in;
  std::optional<Parameter> mlp_out;
};

struct LayerParams {
  Parameter transform;  // W_T [in_dim x heads*hidden]
  std::vector<HeadParams> heads;
  std::optional<Parameter> residual;  // W_res [residual_dim x residual_out]

  std::vector<Parameter*> parameters();
  std::vector<const Parameter*> parameters() const;
  std::size_t parameter_count() const;
  // True when both hold the same parameter set with the same shapes.
  bool same_shapes(const LayerParams& other) const;
  // Values only; gradients are not compared.
  bool same_values(const LayerParams& other) const;
};

// Glorot-initialized parameters for a layer signature.
LayerParams init_layer_params(const ShareKey& key, std::mt19937_64& rng);

struct ChildModel {
  ArchDescription arch;
  std::vector<LayerGeometry> geometry;
  std::vector<LayerParams> layers;
  std::size_t in_dim = 0;
  std::size_t classes = 0;

  std::vector<Parameter*> parameters();
  std::size_t parameter_count() const;
  void zero_grad();
};

// Builds a model for `arch`. Layers whose ShareKey is present in `store` start
// from a copy of the stored parameters, the rest are Glorot-initialized.
ChildModel build_model(const ArchDescription& arch, std::size_t in_dim, std::size_t classes,
                       const SharedParamStore* store, std::mt19937_64& rng);

// Scalar pre-normalization score e_ij for target node i and neighbor j.
// h_i, h_j are [1 x hidden] transformed features of one head.
Var attention_score(AttentionKind kind, Var h_i, Var h_j, double d_i, double d_j, HeadParams& params);

// Per-edge scores [E x 1] for one head; z is that head's [N x hidden] transformed features.
Var edge_attention_scores(AttentionKind kind, Var z, const Graph& graph, HeadParams& params);

// Per-destination aggregation of alpha-weighted neighbor features.
Var aggregate_neighbors(AggKind kind, Var alpha, Var z, const Graph& graph, HeadParams& params);

struct ForwardOptions {
  bool training = false;
  double dropout = 0.0;
};

// Logits [N x classes] recorded on `tape`.
Var forward(ChildModel& model, Tape& tape, const Graph& graph, const ForwardOptions& options,
            std::mt19937_64& rng);

struct TrainHyperparams {
  double lr = 0.005;
  double l2_lambda = 0.0005;
  double dropout_p = 0.6;
  std::size_t max_epochs = 200;
  std::size_t patience = 100;
  std::uint64_t seed = 0;
};

struct TrainedResult {
  double best_val_metric = 0.0;
  double best_val_loss = 0.0;
  double test_metric = 0.0;
  std::size_t epochs_ran = 0;
  std::size_t best_epoch = 0;
  std::size_t optimizer_steps = 0;
  // Median wall time of the epochs after the first, seconds.
  double seconds_per_epoch = 0.0;
  std::vector<LayerParams> final_params;
};

// Adam on the training loss with early stopping on validation metric (ties
// broken by lower validation loss). Stops once `patience` epochs pass without
// improvement and restores the best epoch's parameters into `model`.
// With max_epochs == 0 the model is evaluated as-is.
TrainedResult train_child(ChildModel& model, const LabeledDataset& dataset, const TrainHyperparams& hp);

// Mean loss over the mask (cross-entropy for single-label, binary
// cross-entropy for multi-label), no regularization, inference mode.
double evaluate_loss(ChildModel& model, const LabeledDataset& dataset, MaskKind mask);

// Accuracy (single-label) or micro-F1 (multi-label) on the given mask.
double evaluate(ChildModel& model, const LabeledDataset& dataset, MaskKind mask);
// Same, restricted to an explicit subset of the mask's nodes of graph 0..n
// (`nodes[g]` lists node ids of graph g).
double evaluate_nodes(ChildModel& model, const LabeledDataset& dataset,
                      const std::vector<std::vector<std::size_t>>& nodes);

double accuracy(const Tensor& logits, std::span<const int> labels, std::span<const std::size_t> rows);

struct F1Counts {
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t fn = 0;
  double micro_f1() const;
};
// Predictions are logit > 0 (sigmoid > 0.5).
F1Counts f1_counts(const Tensor& logits, const Tensor& targets, std::span<const std::size_t> rows);

}  // namespace gnas
