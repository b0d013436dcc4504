#ifndef DACKGR_EVALUATOR_H_
#define DACKGR_EVALUATOR_H_

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "dackgr/environment.h"
#include "dackgr/policy.h"
#include "json.hpp"

namespace dackgr {

struct BeamEntry {
  std::vector<Action> actions;
  double log_prob = 0.0;

  int terminal(int head) const {
    return actions.empty() ? head : actions.back().entity;
  }
};

// Top `beam_width` paths of exactly T hops by cumulative log-probability,
// ties broken by parent beam and then action position. `anticipation` is the
// query's e_p (empty when the policy does not use it).
std::vector<BeamEntry> beam_search(const PolicyNetwork& policy,
                                   Environment& env, const Query& query,
                                   std::size_t beam_width,
                                   const std::vector<double>& anticipation);

// Best path log-probability per terminal entity, sorted by entity id.
std::vector<std::pair<int, double>> terminal_scores(
    std::span<const BeamEntry> beams, int head);

// Filtered rank of `gold`. Reached entities are ordered by descending score
// and then ascending id; other known answers in `filtered` are skipped. An
// unreached gold sits in the middle of the unreached block.
double filtered_rank(std::span<const std::pair<int, double>> scores, int gold,
                     std::span<const int> filtered, int entity_count);

struct RankingMetrics {
  std::size_t count = 0;
  double mrr = 0.0;
  double hits1 = 0.0;
  double hits3 = 0.0;
  double hits10 = 0.0;

  nlohmann::json to_json() const;
  static RankingMetrics from_json(const nlohmann::json& j);
  friend bool operator==(const RankingMetrics&, const RankingMetrics&) = default;
};

RankingMetrics metrics_from_ranks(std::span<const double> ranks);

struct EvalConfig {
  std::size_t beam_width = 64;
  std::uint64_t seed = 1;      // for sampled anticipation
  std::size_t keep_paths = 3;  // paths stored per query for dumps
};

struct QueryResult {
  Query query;
  double rank = 0.0;
  std::vector<BeamEntry> paths;
};

struct RankingResult {
  std::vector<QueryResult> queries;
  RankingMetrics metrics;
};

// e_p used at inference; sampled strategies draw from a per-query stream so
// results do not depend on evaluation order.
std::vector<double> eval_anticipation(const PolicyNetwork& policy,
                                      const Environment& env,
                                      const Query& query, std::uint64_t seed);

RankingResult evaluate(const PolicyNetwork& policy, Environment& env,
                       std::span<const Query> queries, const EvalConfig& config);

// "a --r--> b ==s==> c" where "==>" marks completion actions.
std::string format_path(const BeamEntry& path, const Query& query,
                        const Vocab& vocab);

// Completion-origin choices over all choices.
double dc_hits_ratio(std::span<const EpisodeTrace> traces);
// Mean of the last `k` values (all of them when fewer).
double last_epochs_average(std::span<const double> values, std::size_t k = 5);

}  // namespace dackgr

#endif  // DACKGR_EVALUATOR_H_
