#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <utility>
#include <vector>

#include "gnas/autodiff.hpp"
#include "gnas/tensor.hpp"

namespace gnas {

using Edge = std::pair<std::size_t, std::size_t>;  // (src, dst)

// Directed graph with node features. Construction canonicalizes the edge list:
// duplicates are dropped, a self-loop is added to every node, and edges are
// sorted by (dst, src). Immutable afterwards.
class Graph {
 public:
  Graph() = default;
  Graph(std::size_t node_count, const std::vector<Edge>& edges, Tensor features);

  std::size_t node_count() const { return node_count_; }
  std::size_t edge_count() const { return edges_.size(); }
  std::size_t feature_dim() const { return features_.cols(); }
  const std::vector<Edge>& edges() const { return edges_; }
  const Tensor& features() const { return features_; }
  // In-degree including the self-loop.
  const std::vector<std::size_t>& degrees() const { return degrees_; }
  const std::vector<std::size_t>& sources() const { return sources_; }
  const std::vector<std::size_t>& targets() const { return targets_; }
  // Edges grouped by destination node.
  const SegmentIndex& in_edges() const { return in_edges_; }

  friend bool operator==(const Graph& a, const Graph& b) {
    return a.node_count_ == b.node_count_ && a.edges_ == b.edges_ && a.features_ == b.features_;
  }

 private:
  std::size_t node_count_ = 0;
  std::vector<Edge> edges_;
  Tensor features_;
  std::vector<std::size_t> degrees_;
  std::vector<std::size_t> sources_;
  std::vector<std::size_t> targets_;
  SegmentIndex in_edges_;
};

enum class TaskKind { SingleLabel, MultiLabel };

struct SplitMask {
  std::vector<std::size_t> train;
  std::vector<std::size_t> val;
  std::vector<std::size_t> test;

  friend bool operator==(const SplitMask&, const SplitMask&) = default;
};

enum class MaskKind { Train, Val, Test };

// Labels for the nodes of one graph. Single-label tasks fill `classes`;
// multi-label tasks fill `targets` (node_count x label_count, entries 0/1).
struct NodeLabels {
  std::vector<int> classes;
  Tensor targets;

  friend bool operator==(const NodeLabels&, const NodeLabels&) = default;
};

struct LabeledDataset {
  std::vector<Graph> graphs;
  std::vector<NodeLabels> labels;
  std::vector<SplitMask> masks;
  TaskKind task = TaskKind::SingleLabel;
  // Class count (single-label) or label vector length (multi-label).
  std::size_t class_count = 0;

  std::size_t feature_dim() const { return graphs.empty() ? 0 : graphs.front().feature_dim(); }
  std::size_t mask_size(MaskKind kind) const;

  // Throws InvariantError when any construction invariant is violated.
  void validate() const;

  friend bool operator==(const LabeledDataset&, const LabeledDataset&) = default;
};

const std::vector<std::size_t>& mask_of(const SplitMask& m, MaskKind kind);

struct SbmParams {
  std::size_t block_count = 2;
  std::size_t nodes_per_block = 50;
  double p_in = 0.2;
  double p_out = 0.02;
  std::size_t feature_dim = 16;
  double signal_strength = 1.0;
  std::uint64_t seed = 0;
  std::size_t train_per_class = 20;
  // 0 means half of the nodes left after the train draw.
  std::size_t val_count = 0;
  // 0 means every remaining node.
  std::size_t test_count = 0;
};

// Single graph, node label = block id, features = block mean * signal + N(0,1).
LabeledDataset generate_sbm(const SbmParams& params);

struct MultigraphParams {
  std::size_t graph_count = 4;
  std::size_t nodes_per_graph = 60;
  std::size_t block_count = 3;
  double p_in = 0.2;
  double p_out = 0.02;
  std::size_t feature_dim = 16;
  std::size_t label_count = 4;
  double signal_strength = 1.0;
  std::uint64_t seed = 0;
};

// Multi-label dataset of independent SBM graphs. Whole graphs go to
// train/val/test; validation and test each get max(1, graph_count / 12) graphs.
LabeledDataset generate_multigraph(const MultigraphParams& params);

// Line-oriented text format:
//   nodes N features F classes C task {single|multi}
//   node <id> <f_1..f_F> <label | C binary labels>
//   edge <src> <dst>              (undirected, symmetrized on load)
//   mask {train|val|test} <id...>
LabeledDataset read_citation(std::istream& in);
LabeledDataset load_citation(const std::filesystem::path& path);
void write_citation(std::ostream& out, const LabeledDataset& dataset);
void save_citation(const std::filesystem::path& path, const LabeledDataset& dataset);

}  // namespace gnas
