#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <numeric>

#include "gnas/errors.hpp"
#include "gnas/gnn.hpp"
#include "model_cases.hpp"

using namespace gnas;
using namespace gnas::testing;

namespace {

double leaky(double x) { return x > 0 ? x : 0.2 * x; }

// Row `r` of z times column `c` of w.
double row_dot_col(const Tensor& z, std::size_t r, const Tensor& w, std::size_t c = 0) {
  double s = 0.0;
  for (std::size_t k = 0; k < z.cols(); ++k) s += z(r, k) * w(k, c);
  return s;
}

// Attention score of edge j -> i written directly from the formula table.
double oracle_score(AttentionKind kind, const Tensor& z, std::size_t i, std::size_t j, double di, double dj,
                    const HeadParams& p) {
  switch (kind) {
    case AttentionKind::Const:
      return 1.0;
    case AttentionKind::Gcn:
      return 1.0 / std::sqrt(di * dj);
    case AttentionKind::Gat:
      return leaky(row_dot_col(z, i, p.att_left->value) + row_dot_col(z, j, p.att_right->value));
    case AttentionKind::SymGat:
      return leaky(row_dot_col(z, i, p.att_left->value) + row_dot_col(z, j, p.att_right->value)) +
             leaky(row_dot_col(z, j, p.att_left->value) + row_dot_col(z, i, p.att_right->value));
    case AttentionKind::Cos: {
      double s = 0.0;
      for (std::size_t c = 0; c < z.cols(); ++c) {
        s += row_dot_col(z, i, p.att_left->value, c) * row_dot_col(z, j, p.att_right->value, c);
      }
      return s;
    }
    case AttentionKind::Linear:
      return std::tanh(row_dot_col(z, j, p.att_left->value));
    case AttentionKind::GeneLinear: {
      double s = 0.0;
      for (std::size_t c = 0; c < z.cols(); ++c) {
        s += std::tanh(p.att_left->value[c] * z(i, c) + p.att_right->value[c] * z(j, c)) * p.att_out->value[c];
      }
      return s;
    }
  }
  return 0.0;
}

LayerSpec layer(AttentionKind a, AggKind g, ActivationKind act, int heads, int hidden) {
  return LayerSpec{SamplingKind::FirstOrder, a, g, act, heads, hidden, std::nullopt, MergeKind::Add};
}

}  // namespace

TEST(Gnn, EveryForwardComboMatchesFiniteDifferences) {
  std::size_t checked = 0;
  for (AttentionKind a : kAllAttention) {
    for (AggKind g : kAllAggregation) {
      for (ActivationKind act : kAllActivation) {
        const bool residual = (checked % 2) == 1;
        const ModelCheck r = model_gradient_check(a, g, act, residual, 100 + checked);
        SCOPED_TRACE(encode_line(r.arch));
        EXPECT_LT(r.error, 1e-4);
        ++checked;
      }
    }
  }
  EXPECT_EQ(checked, 224u);
}

TEST(Gnn, BatchedAttentionMatchesFormulaTable) {
  std::mt19937_64 rng(21);
  const Graph g = small_graph(7, 4, rng);
  const Tensor z = random_tensor(g.node_count(), 4, rng);
  for (AttentionKind kind : kAllAttention) {
    SCOPED_TRACE(std::string(token_of(kind)));
    ShareKey key{0, kind, AggKind::Sum, 4, 1, 4, 0, 0};
    LayerParams p = init_layer_params(key, rng);
    Tape t;
    const Tensor scores = edge_attention_scores(kind, t.constant(z), g, p.heads[0]).value();
    ASSERT_EQ(scores.rows(), g.edge_count());
    for (std::size_t e = 0; e < g.edge_count(); ++e) {
      const std::size_t i = g.targets()[e], j = g.sources()[e];
      const double di = static_cast<double>(g.degrees()[i]), dj = static_cast<double>(g.degrees()[j]);
      EXPECT_NEAR(scores[e], oracle_score(kind, z, i, j, di, dj, p.heads[0]), 1e-12);
      // The per-pair scalar route agrees too.
      Tape s;
      const std::size_t ri[] = {i}, rj[] = {j};
      Var zi = gather_rows(s.constant(z), ri), zj = gather_rows(s.constant(z), rj);
      EXPECT_NEAR(attention_score(kind, zi, zj, di, dj, p.heads[0]).value().item(), scores[e], 1e-12);
    }
  }
}

TEST(Gnn, AggregatorsMatchPlainArithmetic) {
  std::mt19937_64 rng(8);
  const Graph g = small_graph(6, 3, rng);
  const Tensor z = random_tensor(g.node_count(), 3, rng);
  const Tensor alpha = random_tensor(g.edge_count(), 1, rng);
  for (AggKind kind : kAllAggregation) {
    ShareKey key{0, AttentionKind::Const, kind, 3, 1, 3, 0, 0};
    LayerParams p = init_layer_params(key, rng);
    Tape t;
    const Tensor out = aggregate_neighbors(kind, t.constant(alpha), t.constant(z), g, p.heads[0]).value();
    for (std::size_t v = 0; v < g.node_count(); ++v) {
      auto members = g.in_edges().members(v);
      std::vector<double> expect(3, kind == AggKind::Max ? -INFINITY : 0.0);
      for (std::size_t e : members) {
        const std::size_t j = g.sources()[e];
        EXPECT_EQ(g.targets()[e], v);
        std::vector<double> msg(3);
        for (std::size_t c = 0; c < 3; ++c) msg[c] = alpha[e] * z(j, c);
        if (kind == AggKind::Mlp) {
          // W2 relu(W1 msg), both applied as right-multiplications of row vectors.
          std::vector<double> hdn(3, 0.0);
          for (std::size_t c = 0; c < 3; ++c) {
            for (std::size_t k = 0; k < 3; ++k) hdn[c] += msg[k] * p.heads[0].mlp_in->value(k, c);
            hdn[c] = std::max(hdn[c], 0.0);
          }
          for (std::size_t c = 0; c < 3; ++c) {
            for (std::size_t k = 0; k < 3; ++k) expect[c] += hdn[k] * p.heads[0].mlp_out->value(k, c);
          }
          continue;
        }
        for (std::size_t c = 0; c < 3; ++c) {
          expect[c] = kind == AggKind::Max ? std::max(expect[c], msg[c]) : expect[c] + msg[c];
        }
      }
      for (std::size_t c = 0; c < 3; ++c) {
        const double e = kind == AggKind::Mean ? expect[c] / members.size() : expect[c];
        EXPECT_NEAR(out(v, c), e, 1e-12);
      }
    }
  }
}

TEST(Gnn, ParameterCountMatchesHandCount) {
  // in 10, classes 3.
  // layer 1 gat x8 heads x16: W_T 10*128 + 8 heads * (16 + 16) = 1280 + 256
  // layer 2 gene-linear mlp x2 heads, hidden = classes = 3:
  //   W_T 128*6 + 2 heads * (3 + 3 + 3 + 9 + 9) = 768 + 54
  ArchDescription arch{{layer(AttentionKind::Gat, AggKind::Sum, ActivationKind::Elu, 8, 16),
                        layer(AttentionKind::GeneLinear, AggKind::Mlp, ActivationKind::Linear, 2, 4)}};
  std::mt19937_64 rng(1);
  ChildModel m = build_model(arch, 10, 3, nullptr, rng);
  EXPECT_EQ(m.parameter_count(), 1280u + 256u + 768u + 54u);
  std::size_t summed = 0;
  for (Parameter* p : m.parameters()) summed += p->value.size();
  EXPECT_EQ(summed, m.parameter_count());
}

TEST(Gnn, ResidualProjectionOnlyWhenWidthsDiffer) {
  ArchDescription arch{{layer(AttentionKind::Gcn, AggKind::Sum, ActivationKind::Relu, 2, 8),
                        layer(AttentionKind::Gcn, AggKind::Sum, ActivationKind::Relu, 1, 8)}};
  arch.layers[0].skip_from = 0;  // raw input (width 16) into 2*8 = 16: no projection
  arch.layers[1].skip_from = 0;  // raw input (16) into classes (3): projection
  const auto geo = layer_geometry(arch, 16, 3);
  EXPECT_EQ(geo[0].key.residual_dim, 0u);
  EXPECT_EQ(geo[1].key.residual_dim, 16u);
  EXPECT_EQ(geo[1].key.residual_out, 3u);
  arch.layers[0].merge = MergeKind::Concat;
  EXPECT_EQ(layer_geometry(arch, 16, 3)[0].out_dim, 32u);
}

TEST(Gnn, OutputLayerHasClassWidth) {
  std::mt19937_64 rng(2);
  LabeledDataset ds = small_dataset(9, 5, 4, rng);
  ArchDescription arch{{layer(AttentionKind::Gat, AggKind::Max, ActivationKind::Tanh, 4, 8),
                        layer(AttentionKind::Cos, AggKind::Mean, ActivationKind::Linear, 6, 64)}};
  ChildModel m = build_model(arch, 5, 4, nullptr, rng);
  Tape t;
  Var logits = forward(m, t, ds.graphs[0], ForwardOptions{}, rng);
  EXPECT_EQ(logits.rows(), 9u);
  EXPECT_EQ(logits.cols(), 4u);
}

TEST(Gnn, MicroF1MatchesBruteForce) {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    const Tensor logits = random_tensor(12, 5, rng);
    Tensor targets(12, 5);
    std::bernoulli_distribution b(0.4);
    for (double& v : targets.data()) v = b(rng) ? 1.0 : 0.0;
    std::vector<std::size_t> rows;
    for (std::size_t r = 0; r < 12; ++r) {
      if (b(rng)) rows.push_back(r);
    }
    if (rows.empty()) rows.push_back(0);
    double tp = 0, fp = 0, fn = 0;
    for (std::size_t r : rows) {
      for (std::size_t c = 0; c < 5; ++c) {
        const bool pred = 1.0 / (1.0 + std::exp(-logits(r, c))) > 0.5;
        const bool truth = targets(r, c) == 1.0;
        tp += pred && truth;
        fp += pred && !truth;
        fn += !pred && truth;
      }
    }
    const double expect = tp == 0 ? 0.0 : 2 * tp / (2 * tp + fp + fn);
    EXPECT_NEAR(f1_counts(logits, targets, rows).micro_f1(), expect, 1e-12);
  }
}

TEST(Gnn, AccuracyCountsArgmax) {
  const Tensor logits(3, 2, {0.1, 0.9, 2.0, -1.0, 0.0, 0.5});
  const std::vector<int> labels{1, 1, 1};
  const std::vector<std::size_t> rows{0, 1, 2};
  EXPECT_NEAR(accuracy(logits, labels, rows), 2.0 / 3.0, 1e-15);
}

TEST(Gnn, EarlyStoppingHaltsWithinPatiencePlusOne) {
  std::mt19937_64 rng(6);
  for (std::size_t patience : {0u, 1u, 3u, 7u}) {
    LabeledDataset ds = small_dataset(15, 4, 3, rng);
    ArchDescription arch{{layer(AttentionKind::Gat, AggKind::Sum, ActivationKind::Relu, 1, 8),
                          layer(AttentionKind::Gat, AggKind::Sum, ActivationKind::Linear, 1, 8)}};
    ChildModel m = build_model(arch, 4, 3, nullptr, rng);
    TrainHyperparams hp;
    hp.max_epochs = 300;
    hp.patience = patience;
    hp.seed = patience;
    const TrainedResult r = train_child(m, ds, hp);
    EXPECT_LE(r.epochs_ran, r.best_epoch + patience + 1);
    if (r.epochs_ran < hp.max_epochs) EXPECT_EQ(r.epochs_ran, r.best_epoch + patience + 1);
    EXPECT_EQ(r.optimizer_steps, r.epochs_ran);
  }
}

TEST(Gnn, TrainingRestoresBestParameters) {
  std::mt19937_64 rng(9);
  LabeledDataset ds = small_dataset(24, 4, 2, rng);
  ArchDescription arch{{layer(AttentionKind::Gcn, AggKind::Sum, ActivationKind::Relu, 1, 8),
                        layer(AttentionKind::Gcn, AggKind::Sum, ActivationKind::Linear, 1, 8)}};
  ChildModel m = build_model(arch, 4, 2, nullptr, rng);
  TrainHyperparams hp;
  hp.max_epochs = 60;
  hp.patience = 10;
  const TrainedResult r = train_child(m, ds, hp);
  EXPECT_DOUBLE_EQ(evaluate(m, ds, MaskKind::Val), r.best_val_metric);
  EXPECT_DOUBLE_EQ(evaluate_loss(m, ds, MaskKind::Val), r.best_val_loss);
}

TEST(Gnn, LearnsSeparableBlockModel) {
  SbmParams sp;
  sp.seed = 3;
  const LabeledDataset ds = generate_sbm(sp);
  ArchDescription arch{{layer(AttentionKind::Gcn, AggKind::Sum, ActivationKind::Relu, 1, 16),
                        layer(AttentionKind::Gcn, AggKind::Sum, ActivationKind::Relu, 1, 16)}};
  std::mt19937_64 rng(3);
  ChildModel m = build_model(arch, ds.feature_dim(), ds.class_count, nullptr, rng);
  TrainHyperparams hp;
  hp.seed = 3;
  const TrainedResult r = train_child(m, ds, hp);
  EXPECT_GT(r.test_metric, 0.9);
}

TEST(Gnn, NonFiniteLossRaisesTrainingError) {
  std::mt19937_64 rng(10);
  LabeledDataset ds = small_dataset(9, 3, 2, rng);
  // One infinite feature turns the logits into inf - inf.
  Tensor bad = ds.graphs[0].features();
  bad(4, 1) = std::numeric_limits<double>::infinity();
  ds.graphs[0] = Graph(9, ds.graphs[0].edges(), bad);
  ArchDescription arch{{layer(AttentionKind::Const, AggKind::Sum, ActivationKind::Linear, 1, 4)}};
  ChildModel m = build_model(arch, 3, 2, nullptr, rng);
  TrainHyperparams hp;
  hp.max_epochs = 5;
  hp.dropout_p = 0.0;
  EXPECT_THROW(train_child(m, ds, hp), TrainingError);
}

TEST(Gnn, MultiLabelTrainingReportsMicroF1) {
  MultigraphParams mp;
  mp.seed = 2;
  const LabeledDataset ds = generate_multigraph(mp);
  ASSERT_EQ(ds.task, TaskKind::MultiLabel);
  ArchDescription arch{{layer(AttentionKind::Gat, AggKind::Sum, ActivationKind::Elu, 2, 16),
                        layer(AttentionKind::Gat, AggKind::Sum, ActivationKind::Linear, 1, 16)}};
  std::mt19937_64 rng(2);
  ChildModel m = build_model(arch, ds.feature_dim(), ds.class_count, nullptr, rng);
  TrainHyperparams hp;
  hp.max_epochs = 40;
  hp.dropout_p = 0.0;
  const TrainedResult r = train_child(m, ds, hp);
  EXPECT_GE(r.best_val_metric, 0.0);
  EXPECT_LE(r.best_val_metric, 1.0);
  EXPECT_GT(r.test_metric, 0.5);
}

TEST(Gnn, RelabelingNodesPermutesLogits) {
  std::mt19937_64 rng(30);
  const Graph g = small_graph(9, 4, rng);
  std::vector<std::size_t> perm(9);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  std::vector<Edge> edges;
  for (const Edge& e : g.edges()) edges.emplace_back(perm[e.first], perm[e.second]);
  Tensor features(9, 4);
  for (std::size_t v = 0; v < 9; ++v) {
    for (std::size_t c = 0; c < 4; ++c) features(perm[v], c) = g.features()(v, c);
  }
  const Graph h(9, edges, features);
  for (AttentionKind a : kAllAttention) {
    for (AggKind agg : kAllAggregation) {
      ArchDescription arch{{layer(a, agg, ActivationKind::Elu, 2, 4), layer(a, agg, ActivationKind::Linear, 2, 4)}};
      ChildModel m = build_model(arch, 4, 3, nullptr, rng);
      Tape t1, t2;
      const Tensor y = forward(m, t1, g, {}, rng).value();
      const Tensor z = forward(m, t2, h, {}, rng).value();
      for (std::size_t v = 0; v < 9; ++v) {
        for (std::size_t c = 0; c < 3; ++c) EXPECT_NEAR(z(perm[v], c), y(v, c), 1e-10) << encode_line(arch);
      }
    }
  }
}
