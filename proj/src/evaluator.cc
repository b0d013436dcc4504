#include "dackgr/evaluator.h"

#include <algorithm>
#include <map>
#include <numeric>
#include <optional>
#include <sstream>

namespace dackgr {

std::vector<BeamEntry> beam_search(const PolicyNetwork& policy,
                                   Environment& env, const Query& query,
                                   std::size_t beam_width,
                                   const std::vector<double>& anticipation) {
  if (beam_width == 0) return {};
  ad::Graph g(false);
  std::vector<AgentState> states = {env.reset(query, anticipation, false)};
  std::vector<BeamEntry> beams(1);
  const int head[] = {query.head};
  LstmState history = policy.init_history(g, head);
  for (std::size_t t = 0; t < env.config().max_steps; ++t) {
    ad::Var antic = anticipation_input(policy, g, states);
    StepScores step = score_step(policy, env, g, antic, states, history);
    const Tensor& lp = step.log_probs.value();
    struct Candidate {
      double score;
      std::size_t row, action;
    };
    std::vector<Candidate> cands;
    for (std::size_t b = 0; b < states.size(); ++b)
      for (std::size_t j = 0; j < step.spaces[b].size(); ++j)
        cands.push_back({beams[b].log_prob + lp.at(b, j), b, j});
    const std::size_t keep = std::min(beam_width, cands.size());
    std::partial_sort(cands.begin(), cands.begin() + static_cast<long>(keep),
                      cands.end(), [](const Candidate& a, const Candidate& c) {
                        if (a.score != c.score) return a.score > c.score;
                        if (a.row != c.row) return a.row < c.row;
                        return a.action < c.action;
                      });
    cands.resize(keep);
    std::vector<AgentState> next_states;
    std::vector<BeamEntry> next_beams;
    std::vector<int> rows;
    std::vector<Action> taken;
    for (const auto& c : cands) {
      const auto& space = step.spaces[c.row];
      next_states.push_back(env.step(states[c.row], space, c.action));
      BeamEntry e = beams[c.row];
      e.actions.push_back(space[c.action]);
      e.log_prob = c.score;
      next_beams.push_back(std::move(e));
      rows.push_back(static_cast<int>(c.row));
      taken.push_back(space[c.action]);
    }
    states = std::move(next_states);
    beams = std::move(next_beams);
    if (t + 1 < env.config().max_steps)
      history = policy.advance(g, Lstm::gather(history, rows), taken);
  }
  return beams;
}

std::vector<std::pair<int, double>> terminal_scores(
    std::span<const BeamEntry> beams, int head) {
  std::map<int, double> best;
  for (const auto& b : beams) {
    const int e = b.terminal(head);
    auto it = best.find(e);
    if (it == best.end() || b.log_prob > it->second) best[e] = b.log_prob;
  }
  return {best.begin(), best.end()};
}

double filtered_rank(std::span<const std::pair<int, double>> scores, int gold,
                     std::span<const int> filtered, int entity_count) {
  auto is_filtered = [&](int e) {
    return e != gold && std::binary_search(filtered.begin(), filtered.end(), e);
  };
  std::optional<double> gold_score;
  for (const auto& [e, s] : scores)
    if (e == gold) gold_score = s;
  std::size_t reached = 0, better = 0;
  for (const auto& [e, s] : scores) {
    if (is_filtered(e)) continue;
    ++reached;
    if (gold_score && e != gold &&
        (s > *gold_score || (s == *gold_score && e < gold)))
      ++better;
  }
  if (gold_score) return static_cast<double>(better + 1);
  // The gold and every other unreached, unfiltered entity share the block
  // after the reached ones; report its midpoint. Filtered entities leave the
  // ranking whether reached or not.
  std::size_t removed = 0;
  for (int e : filtered) removed += e != gold;
  const std::size_t m =
      static_cast<std::size_t>(entity_count) - reached - removed;
  return static_cast<double>(reached) + static_cast<double>(m + 1) / 2.0;
}

nlohmann::json RankingMetrics::to_json() const {
  return {{"count", count},
          {"mrr", mrr},
          {"hits@1", hits1},
          {"hits@3", hits3},
          {"hits@10", hits10}};
}

RankingMetrics RankingMetrics::from_json(const nlohmann::json& j) {
  RankingMetrics m;
  m.count = j.at("count");
  m.mrr = j.at("mrr");
  m.hits1 = j.at("hits@1");
  m.hits3 = j.at("hits@3");
  m.hits10 = j.at("hits@10");
  return m;
}

RankingMetrics metrics_from_ranks(std::span<const double> ranks) {
  RankingMetrics m;
  m.count = ranks.size();
  if (ranks.empty()) return m;
  for (double r : ranks) {
    m.mrr += 1.0 / r;
    m.hits1 += r <= 1.0;
    m.hits3 += r <= 3.0;
    m.hits10 += r <= 10.0;
  }
  const double n = static_cast<double>(ranks.size());
  m.mrr /= n;
  m.hits1 /= n;
  m.hits3 /= n;
  m.hits10 /= n;
  return m;
}

std::vector<double> eval_anticipation(const PolicyNetwork& policy,
                                      const Environment& env,
                                      const Query& query, std::uint64_t seed) {
  if (!policy.uses_anticipation()) return {};
  std::seed_seq seq{seed, static_cast<std::uint64_t>(query.head),
                    static_cast<std::uint64_t>(query.relation)};
  Rng rng(seq);
  return env.anticipation(query, policy.config().anticipation, rng);
}

RankingResult evaluate(const PolicyNetwork& policy, Environment& env,
                       std::span<const Query> queries,
                       const EvalConfig& config) {
  RankingResult result;
  std::vector<double> ranks;
  const KnowledgeGraph& kg = env.graph();
  for (const auto& q : queries) {
    auto beams = beam_search(policy, env, q, config.beam_width,
                             eval_anticipation(policy, env, q, config.seed));
    auto scores = terminal_scores(beams, q.head);
    QueryResult qr;
    qr.query = q;
    qr.rank = filtered_rank(scores, q.tail, kg.filter_candidates(q.head, q.relation),
                            kg.entity_count());
    const std::size_t keep = std::min(config.keep_paths, beams.size());
    qr.paths.assign(beams.begin(), beams.begin() + static_cast<long>(keep));
    ranks.push_back(qr.rank);
    result.queries.push_back(std::move(qr));
  }
  result.metrics = metrics_from_ranks(ranks);
  return result;
}

std::string format_path(const BeamEntry& path, const Query& query,
                        const Vocab& vocab) {
  std::ostringstream out;
  out << vocab.entity_name(query.head);
  for (const auto& a : path.actions) {
    const bool dc = a.origin == ActionOrigin::kCompletion;
    out << (dc ? " ==" : " --") << vocab.relation_name(a.relation)
        << (dc ? "==> " : "--> ") << vocab.entity_name(a.entity);
  }
  return out.str();
}

double dc_hits_ratio(std::span<const EpisodeTrace> traces) {
  std::size_t total = 0, completion = 0;
  for (const auto& t : traces) {
    total += t.steps.size();
    completion += t.completion_choices();
  }
  return total ? static_cast<double>(completion) / static_cast<double>(total)
               : 0.0;
}

double last_epochs_average(std::span<const double> values, std::size_t k) {
  if (values.empty() || k == 0) return 0.0;
  const std::size_t n = std::min(k, values.size());
  const double s =
      std::accumulate(values.end() - static_cast<long>(n), values.end(), 0.0);
  return s / static_cast<double>(n);
}

}  // namespace dackgr
