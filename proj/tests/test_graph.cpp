#include <gtest/gtest.h>

#include <set>
#include <sstream>

#include "gnas/errors.hpp"
#include "gnas/graph.hpp"

using namespace gnas;

TEST(Graph, CanonicalizesEdges) {
  // duplicate (0,1), explicit self-loop on 2, unsorted input
  const std::vector<Edge> raw = {{2, 1}, {0, 1}, {0, 1}, {2, 2}, {1, 0}};
  const Graph g(3, raw, Tensor(3, 2));
  const std::vector<Edge> expected = {{0, 0}, {1, 0}, {0, 1}, {1, 1}, {2, 1}, {2, 2}};
  EXPECT_EQ(g.edges(), expected);
  EXPECT_EQ(g.degrees(), (std::vector<std::size_t>{2, 3, 1}));
  std::size_t total = 0;
  for (std::size_t d : g.degrees()) total += d;
  EXPECT_EQ(total, g.edge_count());
  for (std::size_t e = 0; e < g.edge_count(); ++e) {
    EXPECT_EQ(g.sources()[e], g.edges()[e].first);
    EXPECT_EQ(g.targets()[e], g.edges()[e].second);
  }
  for (std::size_t v = 0; v < 3; ++v) {
    for (std::size_t e : g.in_edges().members(v)) EXPECT_EQ(g.targets()[e], v);
  }
}

TEST(Graph, RejectsBadInput) {
  EXPECT_THROW(Graph(3, {{0, 3}}, Tensor(3, 1)), ParameterError);
  EXPECT_THROW(Graph(3, {}, Tensor(2, 1)), ShapeError);
}

TEST(Sbm, SplitsAreDisjointAndSized) {
  SbmParams p;
  p.seed = 4;
  const LabeledDataset ds = generate_sbm(p);
  EXPECT_NO_THROW(ds.validate());
  ASSERT_EQ(ds.graphs.size(), 1u);
  EXPECT_EQ(ds.graphs[0].node_count(), 100u);
  EXPECT_EQ(ds.class_count, 2u);
  EXPECT_EQ(ds.mask_size(MaskKind::Train), 40u);
  EXPECT_EQ(ds.mask_size(MaskKind::Val), 30u);
  EXPECT_EQ(ds.mask_size(MaskKind::Test), 30u);
  // 20 training nodes per class
  std::vector<int> per_class(2, 0);
  for (std::size_t v : ds.masks[0].train) ++per_class[static_cast<std::size_t>(ds.labels[0].classes[v])];
  EXPECT_EQ(per_class, (std::vector<int>{20, 20}));
  // symmetric
  std::set<Edge> edges(ds.graphs[0].edges().begin(), ds.graphs[0].edges().end());
  for (const Edge& e : edges) EXPECT_TRUE(edges.count({e.second, e.first}));
}

TEST(Sbm, DeterministicPerSeed) {
  SbmParams p;
  p.seed = 9;
  EXPECT_EQ(generate_sbm(p), generate_sbm(p));
  SbmParams q = p;
  q.seed = 10;
  EXPECT_FALSE(generate_sbm(p) == generate_sbm(q));
}

TEST(Sbm, IntraBlockDensityExceedsInter) {
  SbmParams p;
  p.seed = 1;
  p.nodes_per_block = 100;
  const LabeledDataset ds = generate_sbm(p);
  const auto& y = ds.labels[0].classes;
  double in = 0, out = 0;
  for (const Edge& e : ds.graphs[0].edges()) {
    if (e.first == e.second) continue;
    (y[e.first] == y[e.second] ? in : out) += 1;
  }
  // ordered pairs: in ~ 2*100*99*0.2, out ~ 2*100*100*0.02
  EXPECT_NEAR(in / (2 * 100 * 99), 0.2, 0.02);
  EXPECT_NEAR(out / (2 * 100 * 100), 0.02, 0.006);
}

TEST(Sbm, RejectsBadParameters) {
  SbmParams p;
  p.p_in = 0.01;
  p.p_out = 0.02;
  EXPECT_THROW(generate_sbm(p), ParameterError);
  SbmParams q;
  q.train_per_class = 50;
  EXPECT_THROW(generate_sbm(q), ParameterError);
}

TEST(Multigraph, WholeGraphSplits) {
  MultigraphParams p;
  p.graph_count = 24;
  p.nodes_per_graph = 10;
  p.seed = 3;
  const LabeledDataset ds = generate_multigraph(p);
  EXPECT_NO_THROW(ds.validate());
  EXPECT_EQ(ds.task, TaskKind::MultiLabel);
  std::size_t val_graphs = 0, test_graphs = 0;
  for (const SplitMask& m : ds.masks) {
    const int used = !m.train.empty() + !m.val.empty() + !m.test.empty();
    EXPECT_EQ(used, 1);
    val_graphs += !m.val.empty();
    test_graphs += !m.test.empty();
  }
  EXPECT_EQ(val_graphs, 2u);
  EXPECT_EQ(test_graphs, 2u);
}

TEST(Citation, RoundTripPreservesDataset) {
  SbmParams p;
  p.seed = 2;
  p.feature_dim = 3;
  const LabeledDataset ds = generate_sbm(p);
  std::stringstream buf;
  write_citation(buf, ds);
  EXPECT_EQ(read_citation(buf), ds);
}

TEST(Citation, ParsesHandWrittenFile) {
  std::istringstream in(
      "# tiny\n"
      "nodes 3 features 2 classes 2 task single\n"
      "node 0 1.5 -2 1\n"
      "node 1 0 0 0\n"
      "node 2 3 4 1\n"
      "edge 0 1\n"
      "mask train 0 2\n"
      "mask val 1\n");
  const LabeledDataset ds = read_citation(in);
  EXPECT_EQ(ds.graphs[0].edge_count(), 5u);  // two directions + three self-loops
  EXPECT_EQ(ds.labels[0].classes, (std::vector<int>{1, 0, 1}));
  EXPECT_EQ(ds.graphs[0].features()(0, 1), -2.0);
  EXPECT_EQ(ds.masks[0].train, (std::vector<std::size_t>{0, 2}));
  EXPECT_TRUE(ds.masks[0].test.empty());
}

namespace {
std::size_t failing_line(const std::string& text) {
  std::istringstream in(text);
  try {
    read_citation(in);
  } catch (const IngestionError& e) {
    return e.line();
  }
  return 0;
}
}  // namespace

TEST(Citation, ErrorsCarryLineNumbers) {
  const std::string head = "nodes 2 features 1 classes 2 task single\n";
  EXPECT_EQ(failing_line("nodes two features 1 classes 2 task single\n"), 1u);
  EXPECT_EQ(failing_line(head + "node 0 0.5 1\nnode 1 x 0\n"), 3u);
  EXPECT_EQ(failing_line(head + "node 0 0.5 1\nnode 1 0.5 2\n"), 3u);
  EXPECT_EQ(failing_line(head + "node 0 0.5 1\nnode 0 0.5 1\n"), 3u);
  EXPECT_EQ(failing_line(head + "node 0 0.5 1\nnode 1 0.5 0\n\nedge 0 5\n"), 5u);
  EXPECT_EQ(failing_line(head + "node 0 0.5 1\nnode 1 0.5 0\nmask train 0\nmask val 0\n"), 5u);
  EXPECT_EQ(failing_line(head + "node 0 0.5 1\nbogus\n"), 3u);
  EXPECT_EQ(failing_line(head + "node 0 0.5 1\n"), 2u);  // node 1 missing, reported at EOF
  EXPECT_THROW(load_citation("/nonexistent/file.txt"), IngestionError);
}
