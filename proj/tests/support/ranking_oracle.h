#ifndef DACKGR_TESTS_RANKING_ORACLE_H_
#define DACKGR_TESTS_RANKING_ORACLE_H_

#include <algorithm>
#include <limits>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "dackgr/evaluator.h"

namespace dackgr::testing {

// Every T-hop path of a query, scored one path at a time with a batch of one.
inline std::vector<BeamEntry> enumerate_paths(
    const PolicyNetwork& policy, Environment& env, const Query& query,
    const std::vector<double>& anticipation) {
  std::vector<BeamEntry> out;
  const std::size_t horizon = env.config().max_steps;
  // Depth-first over prefixes; each prefix replays its history from scratch.
  std::vector<BeamEntry> stack = {BeamEntry{}};
  while (!stack.empty()) {
    BeamEntry prefix = std::move(stack.back());
    stack.pop_back();
    if (prefix.actions.size() == horizon) {
      out.push_back(std::move(prefix));
      continue;
    }
    ad::Graph g(false);
    AgentState state = env.reset(query, anticipation, false);
    const int head[] = {query.head};
    LstmState history = policy.init_history(g, head);
    for (const Action& a : prefix.actions) {
      state.entity = a.entity;
      ++state.step;
      const Action taken[] = {a};
      history = policy.advance(g, history, taken);
    }
    std::vector<AgentState> states = {state};
    ad::Var antic = anticipation_input(policy, g, states);
    StepScores step = score_step(policy, env, g, antic, states, history);
    const Tensor& lp = step.log_probs.value();
    for (std::size_t j = 0; j < step.spaces[0].size(); ++j) {
      BeamEntry next = prefix;
      next.actions.push_back(step.spaces[0][j]);
      next.log_prob = prefix.log_prob + lp.at(0, j);
      stack.push_back(std::move(next));
    }
  }
  return out;
}

// Orders paths by score, then by their action sequences.
inline void sort_paths(std::vector<BeamEntry>& paths) {
  auto key = [](const BeamEntry& b) {
    std::vector<std::tuple<int, int, int>> k;
    for (const auto& a : b.actions)
      k.emplace_back(a.relation, a.entity, static_cast<int>(a.origin));
    return k;
  };
  std::sort(paths.begin(), paths.end(), [&](const BeamEntry& a, const BeamEntry& b) {
    if (a.log_prob != b.log_prob) return a.log_prob > b.log_prob;
    return key(a) < key(b);
  });
}

inline bool same_paths(std::vector<BeamEntry> a, std::vector<BeamEntry> b) {
  if (a.size() != b.size()) return false;
  sort_paths(a);
  sort_paths(b);
  for (std::size_t i = 0; i < a.size(); ++i)
    if (a[i].log_prob != b[i].log_prob || a[i].actions != b[i].actions)
      return false;
  return true;
}

// Filtered rank by sorting the whole entity list: known answers other than
// the gold are removed, reached entities come first by score then id, and an
// unreached gold takes the mean position of the unreached entities.
inline double brute_force_rank(const std::vector<BeamEntry>& paths, int head,
                               int gold, const std::vector<int>& known,
                               int entity_count) {
  const double none = -std::numeric_limits<double>::infinity();
  std::vector<double> best(static_cast<std::size_t>(entity_count), none);
  std::vector<bool> reached(static_cast<std::size_t>(entity_count), false);
  for (const auto& p : paths) {
    const int e = p.terminal(head);
    reached[e] = true;
    best[e] = std::max(best[e], p.log_prob);
  }
  std::vector<int> order;
  for (int e = 0; e < entity_count; ++e) {
    const bool other_answer =
        e != gold && std::find(known.begin(), known.end(), e) != known.end();
    if (!other_answer) order.push_back(e);
  }
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    if (reached[a] != reached[b]) return reached[a] > reached[b];
    if (reached[a] && best[a] != best[b]) return best[a] > best[b];
    return a < b;
  });
  if (reached[gold]) {
    for (std::size_t i = 0; i < order.size(); ++i)
      if (order[i] == gold) return static_cast<double>(i + 1);
  }
  double first = 0.0, count = 0.0;
  for (std::size_t i = 0; i < order.size(); ++i)
    if (!reached[order[i]]) {
      if (count == 0.0) first = static_cast<double>(i + 1);
      count += 1.0;
    }
  return first + (count - 1.0) / 2.0;
}

inline RankingMetrics brute_force_metrics(const std::vector<double>& ranks) {
  RankingMetrics m;
  m.count = ranks.size();
  double rr = 0.0;
  std::size_t h1 = 0, h3 = 0, h10 = 0;
  for (double r : ranks) {
    rr += 1.0 / r;
    h1 += r <= 1.0;
    h3 += r <= 3.0;
    h10 += r <= 10.0;
  }
  if (!ranks.empty()) {
    const double n = static_cast<double>(ranks.size());
    m.mrr = rr / n;
    m.hits1 = static_cast<double>(h1) / n;
    m.hits3 = static_cast<double>(h3) / n;
    m.hits10 = static_cast<double>(h10) / n;
  }
  return m;
}

// Random graph with `entities` nodes and `relations` base relations; the
// valid and test splits are drawn from the same edge pool.
inline KnowledgeGraph random_toy_kg(std::uint64_t seed, int entities,
                                    int relations, int facts) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> ent(0, entities - 1), rel(0, relations - 1);
  std::vector<NamedTriple> train, valid, test;
  std::vector<NamedTriple> all;
  while (static_cast<int>(all.size()) < facts) {
    NamedTriple t{"e" + std::to_string(ent(rng)), "r" + std::to_string(rel(rng)),
                  "e" + std::to_string(ent(rng))};
    if (std::find(all.begin(), all.end(), t) == all.end()) all.push_back(t);
  }
  for (std::size_t i = 0; i < all.size(); ++i)
    (i % 10 == 0 ? test : i % 10 == 1 ? valid : train).push_back(all[i]);
  return KnowledgeGraph::build(train, valid, test);
}

}  // namespace dackgr::testing

#endif  // DACKGR_TESTS_RANKING_ORACLE_H_
