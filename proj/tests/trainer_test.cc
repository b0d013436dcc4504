#include "dackgr/trainer.h"

#include <cmath>

#include <gtest/gtest.h>

#include "support/loss_cases.h"
#include "support/ranking_oracle.h"

namespace dackgr {
namespace {

TrainConfig tiny_config() {
  TrainConfig c;
  c.epochs = 50;
  c.batch_size = 8;
  c.rollouts = 8;
  c.lr = 0.05;
  c.entropy_weight = 0.0;
  c.eval_every = 0;
  c.policy.dim = 4;
  c.policy.hidden = 4;
  c.policy.layers = 1;
  c.policy.anticipation = AnticipationStrategy::kOff;
  c.env.max_steps = 1;
  c.env.mask_gold_edge = false;
  return c;
}

std::vector<double> flatten(const ParameterStore& store) {
  std::vector<double> out;
  for (const Parameter* p : store.all())
    out.insert(out.end(), p->value.values().begin(), p->value.values().end());
  return out;
}

// Probability that a one-step policy picks `target` from the query's head.
double action_probability(Trainer& tr, const Query& q, const Action& target) {
  ad::Graph g(false);
  std::vector<AgentState> states = {tr.environment().reset(q, {}, true)};
  const int head[] = {q.head};
  auto history = tr.policy().init_history(g, head);
  auto step = score_step(tr.policy(), tr.environment(), g,
                         anticipation_input(tr.policy(), g, states), states,
                         history);
  for (std::size_t j = 0; j < step.spaces[0].size(); ++j)
    if (step.spaces[0][j] == target) return std::exp(step.log_probs.value().at(0, j));
  return 0.0;
}

TEST(Trainer, LearnsASingleEdge) {
  auto kg = KnowledgeGraph::build(
      std::vector<NamedTriple>{{"a", "r", "b"}, {"b", "s", "c"}, {"c", "s", "d"}},
      {}, {});
  TrainConfig c = tiny_config();
  c.query_relations = {"r"};
  Trainer tr(kg, nullptr, c);
  ASSERT_EQ(tr.training_queries().size(), 1u);
  double last = 0.0;
  tr.train([&](const EpochReport& r) { last = r.hit_rate; });
  EXPECT_EQ(last, 1.0);
}

TEST(Trainer, ZeroRewardLeavesParametersUnchanged) {
  // The query tail sits in a different component, so every episode misses.
  auto kg = KnowledgeGraph::build(
      std::vector<NamedTriple>{{"a", "r", "b"}, {"c", "s", "d"}}, {}, {});
  TrainConfig c = tiny_config();
  c.baseline = BaselineMode::kNone;
  c.env.max_steps = 2;
  Trainer tr(kg, nullptr, c);
  const std::vector<double> before = flatten(tr.policy().parameters());
  const int a = *kg.vocab().entity_id("a");
  const int d = *kg.vocab().entity_id("d");
  const std::vector<Query> q = {{a, 0, d}};
  Rng rng(3);
  for (int i = 0; i < 5; ++i) {
    auto traces = tr.rollout_batch(q, 4, rng, true);
    for (const auto& t : traces) EXPECT_EQ(t.reward, 0.0);
  }
  EXPECT_EQ(flatten(tr.policy().parameters()), before);
}

TEST(Trainer, TracesCoverTheHorizon) {
  auto kg = testing::random_toy_kg(2, 10, 2, 25);
  TrainConfig c = tiny_config();
  c.env.max_steps = 3;
  Trainer tr(kg, nullptr, c);
  Rng rng(1);
  auto traces = tr.rollout_batch(tr.training_queries(), 3, rng, false);
  ASSERT_EQ(traces.size(), tr.training_queries().size() * 3);
  for (const auto& t : traces) {
    EXPECT_EQ(t.steps.size(), 3u);
    EXPECT_EQ(t.terminal, t.steps.back().action.entity);
  }
  EXPECT_TRUE(tr.rollout_batch(tr.training_queries(), 0, rng, false).empty());
  EXPECT_TRUE(tr.rollout_batch({}, 3, rng, false).empty());
}

TEST(Trainer, UniformPolicySamplesUniformly) {
  // Zero output weights make every action logit equal.
  std::vector<NamedTriple> facts;
  for (int i = 0; i < 4; ++i) facts.push_back({"hub", "r", "x" + std::to_string(i)});
  auto kg = KnowledgeGraph::build(facts, {}, {});
  TrainConfig c = tiny_config();
  c.env.mask_gold_edge = false;
  Trainer tr(kg, nullptr, c);
  for (Parameter* p : tr.policy().parameters().all())
    if (p->name.rfind("w1.", 0) == 0)
      for (double& v : p->value.values()) v = 0.0;
  const Query q = tr.training_queries().front();
  Rng rng(8);
  auto traces = tr.rollout_batch(std::vector<Query>{q}, 20000, rng, false);
  std::map<int, double> freq;
  for (const auto& t : traces) freq[t.terminal] += 1.0;
  // Four edges plus the self-loop.
  ASSERT_EQ(freq.size(), 5u);
  double tv = 0.0;
  for (const auto& [e, n] : freq) tv += std::abs(n / traces.size() - 0.2);
  EXPECT_LT(tv / 2.0, 0.02);
}

TEST(Trainer, RecordedLogProbsMatchReplay) {
  auto kg = testing::random_toy_kg(5, 12, 3, 30);
  TrainConfig c = tiny_config();
  c.env.max_steps = 3;
  c.env.mask_gold_edge = true;
  Trainer tr(kg, nullptr, c);
  Rng rng(2);
  auto traces = tr.rollout_batch(tr.training_queries(), 2, rng, false);
  std::vector<double> adv;
  double expected = 0.0;
  for (std::size_t i = 0; i < traces.size(); ++i) {
    adv.push_back(0.1 * static_cast<double>(i % 7) - 0.3);
    double lp = 0.0;
    for (const auto& s : traces[i].steps) lp += s.log_prob;
    expected -= adv.back() * lp;
  }
  expected /= static_cast<double>(traces.size());
  ad::Graph g(true);
  ad::Var loss = tr.replay_loss(g, traces, adv, 0.0);
  EXPECT_NEAR(loss.value()[0], expected, 1e-12);
}

TEST(Trainer, DcRatioCountsCompletionChoices) {
  auto kg = testing::random_toy_kg(7, 12, 3, 30);
  KgeConfig kc;
  kc.kind = KgeKind::kDistMult;
  kc.dim = 6;
  kc.epochs = 3;
  kc.eval_every = 0;
  auto kge = train_kge(kg, kc);
  TrainConfig c = tiny_config();
  c.epochs = 2;
  c.env.max_steps = 3;
  c.env.completion = {0.5, 20, 2};
  c.policy.anticipation = AnticipationStrategy::kSample;
  Trainer tr(kg, &kge, c);
  const std::vector<double> kge_before = flatten(kge.parameters());
  auto rep = tr.train_epoch(0);
  EXPECT_GT(rep.completion_choices, 0u);
  EXPECT_EQ(rep.total_choices, rep.episodes * 3);
  EXPECT_DOUBLE_EQ(rep.dc_ratio, static_cast<double>(rep.completion_choices) /
                                     static_cast<double>(rep.total_choices));
  // The policy never writes into the frozen KGE.
  EXPECT_EQ(flatten(kge.parameters()), kge_before);

  Rng rng(4);
  auto traces = tr.rollout_batch(tr.training_queries(), 2, rng, false);
  std::size_t dc = 0, total = 0;
  for (const auto& t : traces) {
    dc += t.completion_choices();
    total += t.steps.size();
  }
  EXPECT_DOUBLE_EQ(dc_hits_ratio(traces),
                   static_cast<double>(dc) / static_cast<double>(total));
}

TEST(Trainer, PolicyLossMatchesFiniteDifferences) {
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    auto r = testing::policy_loss_gradients(seed);
    EXPECT_LE(r.max_rel_error, 1e-4) << r.worst;
    EXPECT_GT(r.checked, 0u);
  }
}

TEST(Trainer, SameSeedSameRun) {
  auto kg = testing::random_toy_kg(9, 12, 3, 30);
  TrainConfig c = tiny_config();
  c.epochs = 3;
  c.env.max_steps = 2;
  c.eval_every = 1;
  c.entropy_weight = 0.01;
  c.action_dropout = 0.1;
  auto run = [&] {
    Trainer tr(kg, nullptr, c);
    nlohmann::json log = nlohmann::json::array();
    for (const auto& r : tr.train()) log.push_back(r.to_json());
    return std::make_pair(log.dump(), flatten(tr.policy().parameters()));
  };
  auto first = run();
  auto second = run();
  EXPECT_EQ(first.first, second.first);
  EXPECT_EQ(first.second, second.second);
}

TEST(Trainer, BanditProbabilityRises) {
  // One rewarded edge against the self-loop.
  auto kg = KnowledgeGraph::build(std::vector<NamedTriple>{{"a", "r", "b"}}, {}, {});
  for (double lr : {1e-3, 1e-2}) {
    TrainConfig c = tiny_config();
    c.lr = lr;
    c.baseline = BaselineMode::kNone;
    Trainer tr(kg, nullptr, c);
    const Query q = tr.training_queries().front();
    const Action gold{q.relation, q.tail, ActionOrigin::kGraph};
    const double p0 = action_probability(tr, q, gold);
    Rng rng(1);
    for (int i = 0; i < 100; ++i) tr.rollout_batch(std::vector<Query>{q}, 4, rng, true);
    EXPECT_GT(action_probability(tr, q, gold), p0) << "lr " << lr;
  }
}

TEST(Trainer, EntropyWeightDecaysLinearly) {
  TrainConfig c;
  c.epochs = 10;
  c.entropy_weight = 0.02;
  EXPECT_DOUBLE_EQ(entropy_weight_at(c, 0), 0.02);
  EXPECT_DOUBLE_EQ(entropy_weight_at(c, 5), 0.01);
  EXPECT_DOUBLE_EQ(entropy_weight_at(c, 10), 0.0);
}

TEST(Trainer, ConfigAndReportRoundTrip) {
  TrainConfig c;
  c.epochs = 7;
  c.baseline = BaselineMode::kNone;
  c.query_relations = {"r"};
  c.env.completion.alpha = 0.33;
  EXPECT_EQ(TrainConfig::from_json(c.to_json()).to_json(), c.to_json());
  EXPECT_THROW(TrainConfig::from_json({{"baseline", "median"}}),
               std::invalid_argument);
  EXPECT_THROW(TrainConfig::from_json({{"lr", 0.0}}), std::invalid_argument);
  EpochReport r;
  r.epoch = 3;
  r.hit_rate = 0.5;
  r.valid = metrics_from_ranks(std::vector<double>{1, 3});
  EXPECT_EQ(EpochReport::from_json(r.to_json()).to_json(), r.to_json());
}

TEST(Trainer, RejectsUnknownQueryRelation) {
  auto kg = KnowledgeGraph::build(std::vector<NamedTriple>{{"a", "r", "b"}}, {}, {});
  TrainConfig c = tiny_config();
  c.query_relations = {"nope"};
  EXPECT_THROW(Trainer(kg, nullptr, c), std::invalid_argument);
}

}  // namespace
}  // namespace dackgr
