#include "gnas/graph.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <istream>
#include <numeric>
#include <ostream>
#include <random>
#include <set>
#include <sstream>
#include <string>

namespace gnas {

// ---- Graph ---------------------------------------------------------------------------

Graph::Graph(std::size_t node_count, const std::vector<Edge>& edges, Tensor features)
    : node_count_(node_count), features_(std::move(features)) {
  if (features_.rows() != node_count) {
    throw ShapeError("graph: features " + shape_string(features_) + " for " + std::to_string(node_count) +
                     " nodes");
  }
  std::vector<Edge> canon;
  canon.reserve(edges.size() + node_count);
  for (const auto& [s, d] : edges) {
    if (s >= node_count || d >= node_count) {
      throw ParameterError("graph: edge (" + std::to_string(s) + ", " + std::to_string(d) +
                           ") has an endpoint outside [0, " + std::to_string(node_count) + ")");
    }
    canon.emplace_back(s, d);
  }
  for (std::size_t v = 0; v < node_count; ++v) canon.emplace_back(v, v);
  std::sort(canon.begin(), canon.end(), [](const Edge& a, const Edge& b) {
    return a.second != b.second ? a.second < b.second : a.first < b.first;
  });
  canon.erase(std::unique(canon.begin(), canon.end()), canon.end());
  edges_ = std::move(canon);

  degrees_.assign(node_count, 0);
  sources_.reserve(edges_.size());
  targets_.reserve(edges_.size());
  for (const auto& [s, d] : edges_) {
    ++degrees_[d];
    sources_.push_back(s);
    targets_.push_back(d);
  }
  in_edges_ = SegmentIndex(targets_, node_count);
}

// ---- LabeledDataset ------------------------------------------------------------------

const std::vector<std::size_t>& mask_of(const SplitMask& m, MaskKind kind) {
  switch (kind) {
    case MaskKind::Train:
      return m.train;
    case MaskKind::Val:
      return m.val;
    case MaskKind::Test:
      return m.test;
  }
  return m.train;
}

std::size_t LabeledDataset::mask_size(MaskKind kind) const {
  std::size_t n = 0;
  for (const auto& m : masks) n += mask_of(m, kind).size();
  return n;
}

void LabeledDataset::validate() const {
  if (graphs.size() != labels.size() || graphs.size() != masks.size()) {
    throw InvariantError("dataset: graphs, labels and masks differ in count");
  }
  for (std::size_t g = 0; g < graphs.size(); ++g) {
    const Graph& graph = graphs[g];
    const std::size_t n = graph.node_count();
    if (graph.feature_dim() != feature_dim()) throw InvariantError("dataset: graphs disagree on feature_dim");
    std::size_t degree_total = std::accumulate(graph.degrees().begin(), graph.degrees().end(), std::size_t{0});
    if (degree_total != graph.edge_count()) throw InvariantError("dataset: degree sum != edge count");
    if (task == TaskKind::SingleLabel) {
      if (labels[g].classes.size() != n) throw InvariantError("dataset: label count != node count");
      for (int c : labels[g].classes) {
        if (c < 0 || static_cast<std::size_t>(c) >= class_count) {
          throw InvariantError("dataset: class index out of range");
        }
      }
    } else if (labels[g].targets.rows() != n || labels[g].targets.cols() != class_count) {
      throw InvariantError("dataset: multi-label matrix has the wrong shape");
    }
    std::vector<int> owner(n, -1);
    int kind = 0;
    for (const auto* set : {&masks[g].train, &masks[g].val, &masks[g].test}) {
      for (std::size_t v : *set) {
        if (v >= n) throw InvariantError("dataset: mask index out of range");
        if (owner[v] != -1) throw InvariantError("dataset: masks are not pairwise disjoint");
        owner[v] = kind;
      }
      ++kind;
    }
  }
}

// ---- generators ----------------------------------------------------------------------

namespace {

void check_sbm_probabilities(double p_in, double p_out) {
  if (!(p_out >= 0.0 && p_out < p_in && p_in <= 1.0)) {
    throw ParameterError("sbm: require 0 <= p_out < p_in <= 1");
  }
}

// Symmetric SBM edge list over `blocks` (block id per node).
std::vector<Edge> sample_sbm_edges(const std::vector<int>& blocks, double p_in, double p_out,
                                   std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<Edge> edges;
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    for (std::size_t j = i + 1; j < blocks.size(); ++j) {
      const double p = blocks[i] == blocks[j] ? p_in : p_out;
      if (u(rng) < p) {
        edges.emplace_back(i, j);
        edges.emplace_back(j, i);
      }
    }
  }
  return edges;
}

Tensor block_means(std::size_t block_count, std::size_t dim, std::mt19937_64& rng) {
  std::normal_distribution<double> n01(0.0, 1.0);
  Tensor means(block_count, dim);
  for (double& v : means.data()) v = n01(rng);
  return means;
}

Tensor block_features(const std::vector<int>& blocks, const Tensor& means, double signal, std::mt19937_64& rng) {
  std::normal_distribution<double> n01(0.0, 1.0);
  Tensor f(blocks.size(), means.cols());
  for (std::size_t v = 0; v < blocks.size(); ++v) {
    for (std::size_t j = 0; j < means.cols(); ++j) {
      f(v, j) = signal * means(static_cast<std::size_t>(blocks[v]), j) + n01(rng);
    }
  }
  return f;
}

}  // namespace

LabeledDataset generate_sbm(const SbmParams& p) {
  check_sbm_probabilities(p.p_in, p.p_out);
  if (p.block_count < 2) throw ParameterError("sbm: block_count must be >= 2");
  if (p.nodes_per_block == 0) throw ParameterError("sbm: nodes_per_block must be >= 1");
  if (p.feature_dim == 0) throw ParameterError("sbm: feature_dim must be >= 1");
  if (p.train_per_class >= p.nodes_per_block) {
    throw ParameterError("sbm: train_per_class must be smaller than nodes_per_block");
  }
  std::mt19937_64 rng(p.seed);
  const std::size_t n = p.block_count * p.nodes_per_block;
  std::vector<int> blocks(n);
  for (std::size_t v = 0; v < n; ++v) blocks[v] = static_cast<int>(v / p.nodes_per_block);

  auto edges = sample_sbm_edges(blocks, p.p_in, p.p_out, rng);
  Tensor means = block_means(p.block_count, p.feature_dim, rng);
  Tensor features = block_features(blocks, means, p.signal_strength, rng);

  SplitMask mask;
  std::vector<std::size_t> rest;
  for (std::size_t b = 0; b < p.block_count; ++b) {
    std::vector<std::size_t> members(p.nodes_per_block);
    std::iota(members.begin(), members.end(), b * p.nodes_per_block);
    std::shuffle(members.begin(), members.end(), rng);
    mask.train.insert(mask.train.end(), members.begin(), members.begin() + p.train_per_class);
    rest.insert(rest.end(), members.begin() + p.train_per_class, members.end());
  }
  std::shuffle(rest.begin(), rest.end(), rng);
  const std::size_t val_n = p.val_count == 0 ? rest.size() / 2 : p.val_count;
  if (val_n == 0 || val_n >= rest.size()) throw ParameterError("sbm: not enough nodes left for val/test");
  const std::size_t test_n = p.test_count == 0 ? rest.size() - val_n : p.test_count;
  if (test_n == 0 || val_n + test_n > rest.size()) throw ParameterError("sbm: not enough nodes left for test");
  mask.val.assign(rest.begin(), rest.begin() + static_cast<std::ptrdiff_t>(val_n));
  mask.test.assign(rest.begin() + static_cast<std::ptrdiff_t>(val_n),
                   rest.begin() + static_cast<std::ptrdiff_t>(val_n + test_n));
  std::sort(mask.train.begin(), mask.train.end());
  std::sort(mask.val.begin(), mask.val.end());
  std::sort(mask.test.begin(), mask.test.end());

  LabeledDataset ds;
  ds.graphs.emplace_back(n, edges, std::move(features));
  ds.labels.push_back(NodeLabels{blocks, {}});
  ds.masks.push_back(std::move(mask));
  ds.task = TaskKind::SingleLabel;
  ds.class_count = p.block_count;
  ds.validate();
  return ds;
}

LabeledDataset generate_multigraph(const MultigraphParams& p) {
  if (p.graph_count < 3) throw ParameterError("multigraph: graph_count must be >= 3");
  check_sbm_probabilities(p.p_in, p.p_out);
  if (p.block_count == 0 || p.nodes_per_graph == 0 || p.feature_dim == 0 || p.label_count == 0) {
    throw ParameterError("multigraph: block_count, nodes_per_graph, feature_dim and label_count must be >= 1");
  }
  std::mt19937_64 rng(p.seed);
  std::bernoulli_distribution coin(0.5);
  std::bernoulli_distribution flip(0.05);
  std::uniform_int_distribution<int> pick_block(0, static_cast<int>(p.block_count) - 1);

  // Block means and label patterns are shared by every graph so that what is
  // learned on training graphs transfers to held-out ones.
  Tensor means = block_means(p.block_count, p.feature_dim, rng);
  std::vector<std::vector<int>> patterns(p.block_count, std::vector<int>(p.label_count));
  for (auto& pat : patterns) {
    for (int& bit : pat) bit = coin(rng) ? 1 : 0;
  }

  const std::size_t held_out = std::max<std::size_t>(1, p.graph_count / 12);
  const std::size_t train_graphs = p.graph_count - 2 * held_out;

  LabeledDataset ds;
  ds.task = TaskKind::MultiLabel;
  ds.class_count = p.label_count;
  for (std::size_t g = 0; g < p.graph_count; ++g) {
    std::vector<int> blocks(p.nodes_per_graph);
    for (int& b : blocks) b = pick_block(rng);
    auto edges = sample_sbm_edges(blocks, p.p_in, p.p_out, rng);
    Tensor features = block_features(blocks, means, p.signal_strength, rng);
    Tensor targets(p.nodes_per_graph, p.label_count);
    for (std::size_t v = 0; v < p.nodes_per_graph; ++v) {
      for (std::size_t l = 0; l < p.label_count; ++l) {
        int bit = patterns[static_cast<std::size_t>(blocks[v])][l];
        targets(v, l) = flip(rng) ? 1 - bit : bit;
      }
    }
    std::vector<std::size_t> all(p.nodes_per_graph);
    std::iota(all.begin(), all.end(), std::size_t{0});
    SplitMask mask;
    if (g < train_graphs) {
      mask.train = all;
    } else if (g < train_graphs + held_out) {
      mask.val = all;
    } else {
      mask.test = all;
    }
    ds.graphs.emplace_back(p.nodes_per_graph, edges, std::move(features));
    ds.labels.push_back(NodeLabels{{}, std::move(targets)});
    ds.masks.push_back(std::move(mask));
  }
  ds.validate();
  return ds;
}

// ---- citation file format ------------------------------------------------------------

namespace {

std::vector<std::string> split_ws(const std::string& line) {
  std::istringstream ss(line);
  std::vector<std::string> out;
  std::string tok;
  while (ss >> tok) out.push_back(tok);
  return out;
}

std::size_t parse_count(const std::string& tok, std::size_t line, const char* field) {
  std::size_t v = 0;
  auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (ec != std::errc{} || ptr != tok.data() + tok.size()) {
    throw IngestionError(line, std::string(field) + ": expected a non-negative integer, got '" + tok + "'");
  }
  return v;
}

double parse_real(const std::string& tok, std::size_t line, const char* field) {
  try {
    std::size_t used = 0;
    double v = std::stod(tok, &used);
    if (used == tok.size()) return v;
  } catch (const std::exception&) {
  }
  throw IngestionError(line, std::string(field) + ": expected a real number, got '" + tok + "'");
}

}  // namespace

LabeledDataset read_citation(std::istream& in) {
  std::string line;
  std::size_t lineno = 0;
  bool have_header = false;
  std::size_t n = 0, f = 0, c = 0;
  TaskKind task = TaskKind::SingleLabel;
  Tensor features;
  std::vector<int> classes;
  Tensor targets;
  std::vector<bool> seen;
  std::vector<Edge> edges;
  SplitMask mask;

  while (std::getline(in, line)) {
    ++lineno;
    auto tok = split_ws(line);
    if (tok.empty() || tok[0][0] == '#') continue;
    if (!have_header) {
      if (tok.size() != 8 || tok[0] != "nodes" || tok[2] != "features" || tok[4] != "classes" || tok[6] != "task") {
        throw IngestionError(lineno, "header: expected 'nodes N features F classes C task {single|multi}'");
      }
      n = parse_count(tok[1], lineno, "nodes");
      f = parse_count(tok[3], lineno, "features");
      c = parse_count(tok[5], lineno, "classes");
      if (tok[7] == "single") {
        task = TaskKind::SingleLabel;
      } else if (tok[7] == "multi") {
        task = TaskKind::MultiLabel;
      } else {
        throw IngestionError(lineno, "task: expected 'single' or 'multi', got '" + tok[7] + "'");
      }
      if (c == 0) throw IngestionError(lineno, "classes: must be >= 1");
      features = Tensor(n, f);
      classes.assign(task == TaskKind::SingleLabel ? n : 0, 0);
      if (task == TaskKind::MultiLabel) targets = Tensor(n, c);
      seen.assign(n, false);
      have_header = true;
      continue;
    }
    const std::string& kind = tok[0];
    if (kind == "node") {
      const std::size_t labels = task == TaskKind::SingleLabel ? 1 : c;
      if (tok.size() != 2 + f + labels) {
        throw IngestionError(lineno, "node: expected " + std::to_string(1 + f + labels) + " fields, got " +
                                         std::to_string(tok.size() - 1));
      }
      const std::size_t id = parse_count(tok[1], lineno, "node id");
      if (id >= n) throw IngestionError(lineno, "node id: " + std::to_string(id) + " >= node count");
      if (seen[id]) throw IngestionError(lineno, "node id: " + std::to_string(id) + " declared twice");
      seen[id] = true;
      for (std::size_t j = 0; j < f; ++j) features(id, j) = parse_real(tok[2 + j], lineno, "feature");
      if (task == TaskKind::SingleLabel) {
        const std::size_t y = parse_count(tok[2 + f], lineno, "label");
        if (y >= c) {
          throw IngestionError(lineno, "label: " + std::to_string(y) + " >= class count " + std::to_string(c));
        }
        classes[id] = static_cast<int>(y);
      } else {
        for (std::size_t l = 0; l < c; ++l) {
          const std::size_t bit = parse_count(tok[2 + f + l], lineno, "label");
          if (bit > 1) throw IngestionError(lineno, "label: multi-label entries must be 0 or 1");
          targets(id, l) = static_cast<double>(bit);
        }
      }
    } else if (kind == "edge") {
      if (tok.size() != 3) throw IngestionError(lineno, "edge: expected 'edge <src> <dst>'");
      const std::size_t s = parse_count(tok[1], lineno, "edge src");
      const std::size_t d = parse_count(tok[2], lineno, "edge dst");
      if (s >= n || d >= n) throw IngestionError(lineno, "edge: endpoint outside node range");
      edges.emplace_back(s, d);
      edges.emplace_back(d, s);
    } else if (kind == "mask") {
      if (tok.size() < 2) throw IngestionError(lineno, "mask: missing split name");
      std::vector<std::size_t>* target = nullptr;
      if (tok[1] == "train") {
        target = &mask.train;
      } else if (tok[1] == "val") {
        target = &mask.val;
      } else if (tok[1] == "test") {
        target = &mask.test;
      } else {
        throw IngestionError(lineno, "mask: unknown split '" + tok[1] + "'");
      }
      for (std::size_t k = 2; k < tok.size(); ++k) {
        const std::size_t id = parse_count(tok[k], lineno, "mask id");
        if (id >= n) throw IngestionError(lineno, "mask id: " + std::to_string(id) + " >= node count");
        target->push_back(id);
      }
    } else {
      throw IngestionError(lineno, "unknown record '" + kind + "'");
    }
  }
  if (!have_header) throw IngestionError(lineno, "header: missing");
  for (std::size_t v = 0; v < n; ++v) {
    if (!seen[v]) throw IngestionError(lineno, "node " + std::to_string(v) + " never declared");
  }
  for (auto* m : {&mask.train, &mask.val, &mask.test}) std::sort(m->begin(), m->end());

  LabeledDataset ds;
  ds.graphs.emplace_back(n, edges, std::move(features));
  ds.labels.push_back(NodeLabels{std::move(classes), std::move(targets)});
  ds.masks.push_back(std::move(mask));
  ds.task = task;
  ds.class_count = c;
  try {
    ds.validate();
  } catch (const InvariantError& e) {
    throw IngestionError(lineno, e.what());
  }
  return ds;
}

LabeledDataset load_citation(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IngestionError(0, "cannot open '" + path.string() + "'");
  return read_citation(in);
}

void write_citation(std::ostream& out, const LabeledDataset& ds) {
  if (ds.graphs.size() != 1) throw ParameterError("citation format holds exactly one graph");
  const Graph& g = ds.graphs[0];
  const std::size_t n = g.node_count(), f = g.feature_dim();
  out << "nodes " << n << " features " << f << " classes " << ds.class_count << " task "
      << (ds.task == TaskKind::SingleLabel ? "single" : "multi") << '\n';
  char buf[32];
  for (std::size_t v = 0; v < n; ++v) {
    out << "node " << v;
    for (std::size_t j = 0; j < f; ++j) {
      std::snprintf(buf, sizeof buf, "%.17g", g.features()(v, j));
      out << ' ' << buf;
    }
    if (ds.task == TaskKind::SingleLabel) {
      out << ' ' << ds.labels[0].classes[v];
    } else {
      for (std::size_t l = 0; l < ds.class_count; ++l) out << ' ' << static_cast<int>(ds.labels[0].targets(v, l));
    }
    out << '\n';
  }
  // Stored edges are symmetric; each undirected edge is written once.
  for (const auto& [s, d] : g.edges()) {
    if (s < d) out << "edge " << s << ' ' << d << '\n';
  }
  const char* names[] = {"train", "val", "test"};
  const SplitMask& m = ds.masks[0];
  int k = 0;
  for (const auto* set : {&m.train, &m.val, &m.test}) {
    out << "mask " << names[k++];
    for (std::size_t v : *set) out << ' ' << v;
    out << '\n';
  }
}

void save_citation(const std::filesystem::path& path, const LabeledDataset& ds) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write '" + path.string() + "'");
  write_citation(out, ds);
}

}  // namespace gnas
