#ifndef DACKGR_ENVIRONMENT_H_
#define DACKGR_ENVIRONMENT_H_

#include <memory>
#include <optional>
#include <span>
#include <vector>

#include "dackgr/kg_store.h"
#include "dackgr/kge.h"
#include "dackgr/policy.h"
#include "json.hpp"

namespace dackgr {

struct Query {
  int head = 0;
  int relation = 0;
  int tail = 0;
  friend bool operator==(const Query&, const Query&) = default;
};

std::vector<Query> queries_of(std::span<const Triple> triples);

struct EnvConfig {
  std::size_t max_steps = 3;  // T
  // Hide the query's own edge (e_s, r_q, e_o) and its inverse from training
  // action spaces.
  bool mask_gold_edge = true;
  // Wrong terminals earn sigmoid(KGE score) instead of 0.
  bool reward_shaping = true;
  CompletionConfig completion;

  nlohmann::json to_json() const;
  static EnvConfig from_json(const nlohmann::json& j);
};

struct AgentState {
  Query query;
  std::size_t step = 0;
  int entity = 0;
  // e_p; constant for the episode, empty when anticipation is off.
  std::vector<double> anticipation;
  bool mask_gold = false;
};

struct TraceStep {
  Action action;
  std::size_t index = 0;  // position in the step's action space
  double log_prob = 0.0;
};

struct EpisodeTrace {
  Query query;
  std::vector<double> anticipation;
  std::vector<TraceStep> steps;
  int terminal = -1;
  double reward = 0.0;

  bool hit() const { return terminal == query.tail; }
  std::size_t completion_choices() const;
  nlohmann::json to_json() const;
};

// The MDP over a fixed graph. The KGE is optional; without it anticipation,
// completion and reward shaping are unavailable.
class Environment {
 public:
  Environment(const KnowledgeGraph& kg, const ScoreModel* kge, EnvConfig config);

  const KnowledgeGraph& graph() const { return kg_; }
  const ScoreModel* kge() const { return kge_; }
  const EnvConfig& config() const { return config_; }
  bool completion_enabled() const { return cache_ != nullptr; }

  AgentState reset(const Query& query, std::vector<double> anticipation,
                   bool training) const;
  // Graph actions of the current entity followed by the self-loop, with the
  // query edge and its inverse removed during training.
  ActionSpace graph_actions(const AgentState& state) const;
  // graph_actions plus completion proposals ranked by `relation_attention`
  // (ignored when completion is off).
  ActionSpace build_action_space(const AgentState& state,
                                 std::span<const double> relation_attention);
  AgentState step(const AgentState& state, const ActionSpace& space,
                  std::size_t index) const;
  // 1 on a hit, otherwise the shaped KGE score or 0. `raw_score` may carry a
  // precomputed KGE logit of (e_s, r_q, e_T).
  double reward(const AgentState& final_state,
                std::optional<double> raw_score = std::nullopt) const;

  // KGE tail distribution of a query and the anticipation vector drawn from
  // it under `strategy`.
  std::vector<double> anticipation(const Query& query,
                                   AnticipationStrategy strategy,
                                   Rng& rng) const;

 private:
  const KnowledgeGraph& kg_;
  const ScoreModel* kge_;
  EnvConfig config_;
  std::unique_ptr<TopTailCache> cache_;
};

// One decision step for a batch of states: assembles each row's action space
// (with completion ranked by the policy's relation attention) and scores it.
struct StepScores {
  std::vector<ActionSpace> spaces;
  ad::Mask mask;
  ad::Var logits;            // [B x width]
  ad::Var log_probs;         // masked log-softmax of logits
  ad::Var relation_log_attention;  // [B x R]; invalid without completion
};

StepScores score_step(const PolicyNetwork& policy, Environment& env,
                      ad::Graph& g, ad::Var anticipation,
                      std::span<const AgentState> states,
                      const LstmState& history);

// e_p rows of a batch as a constant, or an invalid Var when unused.
ad::Var anticipation_input(const PolicyNetwork& policy, ad::Graph& g,
                           std::span<const AgentState> states);

}  // namespace dackgr

#endif  // DACKGR_ENVIRONMENT_H_
