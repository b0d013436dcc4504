#include "dackgr/policy.h"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include <gtest/gtest.h>

#include "support/temp_dir.h"

namespace dackgr {
namespace {

TEST(CompletionBudget, PaperExamples) {
  EXPECT_EQ(completion_budget(10, 0.33, 20), 4u);
  EXPECT_EQ(completion_relation_count(4, 2), 2u);
  EXPECT_EQ(completion_budget(100, 0.5, 20), 20u);
  EXPECT_EQ(completion_relation_count(20, 5), 4u);
}

TEST(CompletionBudget, EdgeCases) {
  EXPECT_EQ(completion_budget(10, 0.0, 20), 0u);
  EXPECT_EQ(completion_budget(0, 0.5, 20), 0u);
  EXPECT_EQ(completion_budget(1, 0.2, 20), 1u);
  EXPECT_EQ(completion_budget(10, 0.2, 20), 2u);  // no round-up of 2.0000000004
  EXPECT_EQ(completion_budget(1000, 1.0, 7), 7u);
  EXPECT_EQ(completion_relation_count(1, 2), 1u);
  EXPECT_EQ(completion_relation_count(0, 2), 0u);
  EXPECT_THROW(completion_relation_count(3, 0), std::invalid_argument);
}

TEST(CompletionConfig, ValidatesAndRoundTrips) {
  CompletionConfig c{0.25, 10, 3};
  auto back = CompletionConfig::from_json(c.to_json());
  EXPECT_EQ(back.alpha, 0.25);
  EXPECT_EQ(back.max_actions, 10u);
  EXPECT_EQ(back.top_k, 3u);
  EXPECT_THROW(CompletionConfig::from_json({{"alpha", 1.5}}),
               std::invalid_argument);
  EXPECT_THROW(CompletionConfig::from_json({{"top_k", 0}}),
               std::invalid_argument);
}

Tensor embedding_table() {
  return Tensor({3, 2}, {1.0, 0.0,  //
                         0.0, 1.0,  //
                         2.0, 2.0});
}

TEST(Anticipation, OneHotSelectsThatRowUnderEveryStrategy) {
  const Tensor emb = embedding_table();
  const std::vector<double> p = {0.0, 0.0, 1.0};
  Rng rng(3);
  for (auto s : {AnticipationStrategy::kSample, AnticipationStrategy::kTopOne,
                 AnticipationStrategy::kAverage}) {
    auto v = anticipate(emb, p, s, rng);
    ASSERT_EQ(v.size(), 2u);
    EXPECT_DOUBLE_EQ(v[0], 2.0) << anticipation_name(s);
    EXPECT_DOUBLE_EQ(v[1], 2.0) << anticipation_name(s);
  }
}

TEST(Anticipation, UniformAverageIsTheMeanAndTopOneTakesLowestId) {
  const Tensor emb = embedding_table();
  const std::vector<double> p(3, 1.0 / 3.0);
  Rng rng(3);
  auto avg = anticipate(emb, p, AnticipationStrategy::kAverage, rng);
  EXPECT_NEAR(avg[0], 1.0, 1e-12);
  EXPECT_NEAR(avg[1], 1.0, 1e-12);
  auto top = anticipate(emb, p, AnticipationStrategy::kTopOne, rng);
  EXPECT_EQ(top, (std::vector<double>{1.0, 0.0}));
  auto off = anticipate(emb, p, AnticipationStrategy::kOff, rng);
  EXPECT_EQ(off, (std::vector<double>{0.0, 0.0}));
}

TEST(Anticipation, SampleFrequenciesMatchDistribution) {
  const std::vector<double> p = {0.1, 0.2, 0.3, 0.4};
  Rng rng(11);
  std::vector<double> freq(p.size(), 0.0);
  const int n = 200000;
  for (int i = 0; i < n; ++i) freq[sample_index(p, rng)] += 1.0 / n;
  double tv = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) tv += std::abs(freq[i] - p[i]);
  EXPECT_LT(0.5 * tv, 1e-2);
}

TEST(Anticipation, NamesParse) {
  for (auto s : {AnticipationStrategy::kOff, AnticipationStrategy::kSample,
                 AnticipationStrategy::kTopOne, AnticipationStrategy::kAverage})
    EXPECT_EQ(parse_anticipation(anticipation_name(s)), s);
  EXPECT_EQ(parse_anticipation("top1"), AnticipationStrategy::kTopOne);
  EXPECT_THROW(parse_anticipation("mean"), std::invalid_argument);
}

// a -r-> b, a -s-> c, b -r-> c, c -s-> d
KnowledgeGraph toy() {
  std::vector<NamedTriple> train = {
      {"a", "r", "b"}, {"a", "s", "c"}, {"b", "r", "c"}, {"c", "s", "d"}};
  return KnowledgeGraph::build(train, {}, {});
}

PolicyConfig small_policy(AnticipationStrategy a = AnticipationStrategy::kOff) {
  PolicyConfig c;
  c.dim = 4;
  c.hidden = 5;
  c.layers = 1;
  c.anticipation = a;
  c.seed = 7;
  return c;
}

PolicyNetwork make_policy(const KnowledgeGraph& kg,
                          AnticipationStrategy a = AnticipationStrategy::kOff) {
  return PolicyNetwork(small_policy(a), kg.entity_count(),
                       kg.vocab().relation_count(), 3);
}

struct Scored {
  Tensor state;
  Tensor logits;
  Tensor probs;
  ad::Mask mask;
};

Scored score(const PolicyNetwork& policy, const std::vector<ActionSpace>& spaces,
             int query_relation = 0) {
  ad::Graph g(false);
  std::vector<int> heads, rels, ents;
  for (const auto& s : spaces) {
    heads.push_back(s.front().entity);
    rels.push_back(query_relation);
    ents.push_back(s.front().entity);
  }
  auto history = policy.init_history(g, heads);
  Tensor antic({spaces.size(), policy.anticipation_dim()}, 0.5);
  auto state = policy.encode_state(g, g.constant(antic), rels, ents,
                                   history.top());
  Scored out;
  auto logits = policy.action_logits(g, state, spaces, &out.mask);
  out.state = state.value();
  out.logits = logits.value();
  out.probs = ad::softmax(logits, &out.mask).value();
  return out;
}

TEST(PolicyNetwork, SingleActionHasProbabilityOne) {
  auto kg = toy();
  auto policy = make_policy(kg);
  const int d = *kg.vocab().entity_id("d");
  ActionSpace space = {{kg.vocab().loop_relation(), d, ActionOrigin::kSelfLoop}};
  auto s = score(policy, {space});
  ASSERT_EQ(s.probs.size(), 1u);
  EXPECT_EQ(s.probs[0], 1.0);
}

TEST(PolicyNetwork, DuplicateActionsScoreEqually) {
  auto kg = toy();
  auto policy = make_policy(kg);
  const int a = *kg.vocab().entity_id("a");
  const int b = *kg.vocab().entity_id("b");
  ActionSpace space = {{0, b}, {0, b}, {kg.vocab().loop_relation(), a}};
  auto s = score(policy, {space});
  EXPECT_EQ(s.logits.at(0, 0), s.logits.at(0, 1));
  EXPECT_EQ(s.probs.at(0, 0), s.probs.at(0, 1));
}

TEST(PolicyNetwork, LogitsMatchHandComputation) {
  auto kg = toy();
  auto policy = make_policy(kg);
  ActionSpace space;
  const int a = *kg.vocab().entity_id("a");
  for (const auto& act : kg.adjacency(a)) space.push_back(act);
  space.push_back({kg.vocab().loop_relation(), a, ActionOrigin::kSelfLoop});
  auto s = score(policy, {space});

  auto& ps = policy.parameters();
  const Tensor& w2 = ps.find("w2.weight")->value;
  const Tensor& b2 = ps.find("w2.bias")->value;
  const Tensor& w1 = ps.find("w1.weight")->value;
  const Tensor& b1 = ps.find("w1.bias")->value;
  const Tensor& rel = ps.find("relation")->value;
  const Tensor& ent = ps.find("entity")->value;
  std::vector<double> hidden(w2.cols());
  for (std::size_t j = 0; j < w2.cols(); ++j) {
    double v = b2[j];
    for (std::size_t i = 0; i < w2.rows(); ++i) v += s.state[i] * w2.at(i, j);
    hidden[j] = std::max(0.0, v);
  }
  std::vector<double> query(w1.cols());
  for (std::size_t j = 0; j < w1.cols(); ++j) {
    double v = b1[j];
    for (std::size_t i = 0; i < w1.rows(); ++i) v += hidden[i] * w1.at(i, j);
    query[j] = v;
  }
  const std::size_t d = rel.cols();
  std::vector<double> logits;
  for (const auto& act : space) {
    double v = 0.0;
    for (std::size_t i = 0; i < d; ++i)
      v += rel.at(act.relation, i) * query[i] + ent.at(act.entity, i) * query[d + i];
    logits.push_back(v);
  }
  const double mx = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (double l : logits) z += std::exp(l - mx);
  for (std::size_t j = 0; j < space.size(); ++j) {
    EXPECT_NEAR(s.logits.at(0, j), logits[j], 1e-12);
    EXPECT_NEAR(s.probs.at(0, j), std::exp(logits[j] - mx) / z, 1e-12);
  }
}

TEST(PolicyNetwork, PaddedRowsMatchUnbatchedRows) {
  auto kg = toy();
  auto policy = make_policy(kg);
  const int a = *kg.vocab().entity_id("a");
  const int c = *kg.vocab().entity_id("c");
  ActionSpace wide(kg.adjacency(a).begin(), kg.adjacency(a).end());
  wide.push_back({kg.vocab().loop_relation(), a, ActionOrigin::kSelfLoop});
  ActionSpace narrow = {{kg.vocab().loop_relation(), c, ActionOrigin::kSelfLoop}};
  auto batched = score(policy, {wide, narrow});
  auto alone = score(policy, {narrow});
  EXPECT_EQ(batched.probs.at(1, 0), alone.probs.at(0, 0));
  for (std::size_t j = 1; j < batched.probs.cols(); ++j) {
    EXPECT_EQ(batched.mask[batched.probs.cols() + j], 0);
    EXPECT_EQ(batched.probs.at(1, j), 0.0);
  }
}

TEST(PolicyNetwork, EmptySpaceThrows) {
  auto kg = toy();
  auto policy = make_policy(kg);
  ad::Graph g(false);
  const int head[] = {0};
  auto history = policy.init_history(g, head);
  const int rel[] = {0};
  auto state = policy.encode_state(g, ad::Var(), rel, head, history.top());
  EXPECT_THROW(policy.action_logits(g, state, {ActionSpace{}}, nullptr),
               std::invalid_argument);
}

TEST(PolicyNetwork, AnticipationShapeIsChecked) {
  auto kg = toy();
  auto policy = make_policy(kg, AnticipationStrategy::kSample);
  ad::Graph g(false);
  const int head[] = {0};
  auto history = policy.init_history(g, head);
  const int rel[] = {0};
  EXPECT_THROW(policy.encode_state(g, g.constant(Tensor({1, 2})), rel, head,
                                   history.top()),
               ShapeError);
  EXPECT_EQ(policy.state_dim(), 3u + 2 * 4 + 5);
}

TEST(PolicyNetwork, RelationAttentionIsADistributionOverBaseRelations) {
  auto kg = toy();
  auto policy = make_policy(kg);
  ad::Graph g(false);
  const int heads[] = {0, 1, 2};
  auto history = policy.init_history(g, heads);
  const int rels[] = {0, 1, 0};
  auto state = policy.encode_state(g, ad::Var(), rels, heads, history.top());
  auto att = ad::softmax(policy.relation_logits(g, state)).value();
  ASSERT_EQ(att.cols(), static_cast<std::size_t>(kg.vocab().base_relation_count()));
  for (std::size_t b = 0; b < att.rows(); ++b) {
    auto row = att.row(b);
    EXPECT_NEAR(std::accumulate(row.begin(), row.end(), 0.0), 1.0, 1e-12);
  }
}

TEST(PolicyNetwork, CheckpointRoundTrip) {
  auto kg = toy();
  auto policy = make_policy(kg, AnticipationStrategy::kAverage);
  testing::TempDir dir;
  policy.save(dir / "ckpt", 5);
  auto loaded = PolicyNetwork::load(dir / "ckpt");
  EXPECT_EQ(loaded.config().anticipation, AnticipationStrategy::kAverage);
  EXPECT_EQ(loaded.anticipation_dim(), 3u);
  const int a = *kg.vocab().entity_id("a");
  ActionSpace space(kg.adjacency(a).begin(), kg.adjacency(a).end());
  auto x = score(policy, {space});
  auto y = score(loaded, {space});
  for (std::size_t j = 0; j < space.size(); ++j)
    EXPECT_EQ(x.logits[j], y.logits[j]);
}

TEST(PolicyNetwork, SnapshotRestore) {
  auto kg = toy();
  auto policy = make_policy(kg);
  auto snap = policy.snapshot();
  for (auto* p : policy.parameters().all()) p->value.fill(0.25);
  policy.restore(snap);
  auto fresh = make_policy(kg);
  auto a = policy.parameters().all();
  auto b = fresh.parameters().all();
  for (std::size_t i = 0; i < a.size(); ++i)
    EXPECT_TRUE(std::equal(a[i]->value.values().begin(),
                           a[i]->value.values().end(),
                           b[i]->value.values().begin()));
}

class ProposalTest : public ::testing::Test {
 protected:
  ProposalTest() : kg_(toy()), kge_(kge_config(), kg_.entity_count(),
                                    kg_.relation_count()) {}

  static KgeConfig kge_config() {
    KgeConfig c;
    c.kind = KgeKind::kDistMult;
    c.dim = 4;
    return c;
  }

  KnowledgeGraph kg_;
  ScoreModel kge_;
};

TEST_F(ProposalTest, RespectsBudgetAndSkipsExistingEdges) {
  TopTailCache cache(kge_, 3);
  for (double alpha : {0.2, 0.5, 1.0})
    for (std::size_t k : {1u, 2u, 3u})
      for (int e = 0; e < kg_.entity_count(); ++e) {
        CompletionConfig cfg{alpha, 20, k};
        const std::vector<double> att = {0.7, 0.3};
        const std::size_t n = kg_.adjacency(e).size() + 1;
        auto out = propose_completions(att, e, n, cfg, cache, kg_);
        EXPECT_LE(out.size(), completion_budget(n, alpha, 20));
        std::set<std::pair<int, int>> seen;
        for (const auto& a : out) {
          EXPECT_EQ(a.origin, ActionOrigin::kCompletion);
          EXPECT_FALSE(kg_.has_edge(e, a.relation, a.entity));
          EXPECT_NE(a.entity, e);
          EXPECT_LT(a.relation, kg_.vocab().base_relation_count());
          EXPECT_TRUE(seen.insert({a.relation, a.entity}).second);
        }
      }
}

TEST_F(ProposalTest, FollowsAttentionOrderAndTopTails) {
  TopTailCache cache(kge_, 2);
  const int d = *kg_.vocab().entity_id("d");  // no outgoing edges
  CompletionConfig cfg{1.0, 20, 2};
  // N = 3 gives a budget of 3, filled from the preferred relation first.
  // A tail equal to d itself is skipped.
  const std::vector<double> att = {0.1, 0.9};
  auto out = propose_completions(att, d, 3, cfg, cache, kg_);
  std::vector<Action> expected;
  for (int r : {1, 0})
    for (const auto& [e, score] : kge_.top_k_tails(d, r, 2))
      if (e != d && expected.size() < 3)
        expected.push_back({r, e, ActionOrigin::kCompletion});
  EXPECT_EQ(out, expected);
}

TEST_F(ProposalTest, DisabledWhenAlphaIsZero) {
  TopTailCache cache(kge_, 2);
  CompletionConfig cfg{0.0, 20, 2};
  const std::vector<double> att = {0.5, 0.5};
  EXPECT_TRUE(propose_completions(att, 0, 5, cfg, cache, kg_).empty());
}

}  // namespace
}  // namespace dackgr
