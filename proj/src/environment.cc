#include "dackgr/environment.h"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace dackgr {

std::vector<Query> queries_of(std::span<const Triple> triples) {
  std::vector<Query> out;
  out.reserve(triples.size());
  for (const auto& t : triples) out.push_back({t.head, t.relation, t.tail});
  return out;
}

nlohmann::json EnvConfig::to_json() const {
  return {{"max_steps", max_steps},
          {"mask_gold_edge", mask_gold_edge},
          {"reward_shaping", reward_shaping},
          {"completion", completion.to_json()}};
}

EnvConfig EnvConfig::from_json(const nlohmann::json& j) {
  EnvConfig c;
  c.max_steps = j.value("max_steps", c.max_steps);
  c.mask_gold_edge = j.value("mask_gold_edge", c.mask_gold_edge);
  c.reward_shaping = j.value("reward_shaping", c.reward_shaping);
  if (j.contains("completion"))
    c.completion = CompletionConfig::from_json(j.at("completion"));
  if (c.max_steps == 0) throw std::invalid_argument("max_steps must be >= 1");
  return c;
}

std::size_t EpisodeTrace::completion_choices() const {
  std::size_t n = 0;
  for (const auto& s : steps) n += s.action.origin == ActionOrigin::kCompletion;
  return n;
}

nlohmann::json EpisodeTrace::to_json() const {
  nlohmann::json steps_json = nlohmann::json::array();
  for (const auto& s : steps)
    steps_json.push_back({{"relation", s.action.relation},
                          {"entity", s.action.entity},
                          {"origin", origin_name(s.action.origin)},
                          {"log_prob", s.log_prob}});
  return {{"query", {query.head, query.relation, query.tail}},
          {"steps", steps_json},
          {"terminal", terminal},
          {"reward", reward}};
}

Environment::Environment(const KnowledgeGraph& kg, const ScoreModel* kge,
                         EnvConfig config)
    : kg_(kg), kge_(kge), config_(std::move(config)) {
  if (config_.max_steps == 0)
    throw std::invalid_argument("max_steps must be >= 1");
  config_.completion.validate();
  if (config_.completion.enabled()) {
    if (!kge_) throw std::invalid_argument("completion requires a KGE model");
    cache_ = std::make_unique<TopTailCache>(*kge_, config_.completion.top_k);
  }
}

AgentState Environment::reset(const Query& query,
                              std::vector<double> anticipation,
                              bool training) const {
  AgentState s;
  s.query = query;
  s.entity = query.head;
  s.anticipation = std::move(anticipation);
  s.mask_gold = training && config_.mask_gold_edge;
  return s;
}

ActionSpace Environment::graph_actions(const AgentState& state) const {
  ActionSpace out;
  // The query edge stays hidden whenever the agent stands on either of its
  // ends, so a self-loop followed by the edge cannot read off the answer.
  const Query& q = state.query;
  const int inverse = kg_.vocab().inverse_of(q.relation);
  for (const auto& a : kg_.adjacency(state.entity)) {
    if (state.mask_gold &&
        ((state.entity == q.head && a.relation == q.relation &&
          a.entity == q.tail) ||
         (state.entity == q.tail && a.relation == inverse &&
          a.entity == q.head)))
      continue;
    out.push_back(a);
  }
  out.push_back({kg_.vocab().loop_relation(), state.entity,
                 ActionOrigin::kSelfLoop});
  return out;
}

ActionSpace Environment::build_action_space(
    const AgentState& state, std::span<const double> relation_attention) {
  ActionSpace space = graph_actions(state);
  if (!cache_) return space;
  // The masked query edge is missing from the agent's view, so completion
  // may propose it like any other absent fact.
  std::optional<Triple> hidden;
  if (state.mask_gold)
    hidden = Triple{state.query.head, state.query.relation, state.query.tail};
  auto extra = propose_completions(relation_attention, state.entity,
                                   space.size(), config_.completion, *cache_,
                                   kg_, hidden);
  space.insert(space.end(), extra.begin(), extra.end());
  return space;
}

AgentState Environment::step(const AgentState& state, const ActionSpace& space,
                             std::size_t index) const {
  if (state.step >= config_.max_steps)
    throw std::logic_error("step: episode already has T steps");
  if (index >= space.size())
    throw std::out_of_range("step: action " + std::to_string(index) +
                            " outside a space of " +
                            std::to_string(space.size()));
  AgentState next = state;
  next.entity = space[index].entity;
  ++next.step;
  return next;
}

double Environment::reward(const AgentState& final_state,
                           std::optional<double> raw_score) const {
  if (final_state.entity == final_state.query.tail) return 1.0;
  if (!config_.reward_shaping || !kge_) return 0.0;
  const double raw =
      raw_score ? *raw_score
                : kge_->raw_score(final_state.query.head,
                                  final_state.query.relation,
                                  final_state.entity);
  const double f = raw >= 0 ? 1.0 / (1.0 + std::exp(-raw))
                             : std::exp(raw) / (1.0 + std::exp(raw));
  // A full reward is reserved for hits.
  return std::min(f, std::nextafter(1.0, 0.0));
}

std::vector<double> Environment::anticipation(const Query& query,
                                              AnticipationStrategy strategy,
                                              Rng& rng) const {
  if (strategy == AnticipationStrategy::kOff) return {};
  if (!kge_) throw std::invalid_argument("anticipation requires a KGE model");
  const auto p = kge_->tail_distribution(query.head, query.relation);
  return anticipate(kge_->entity_embeddings(), p, strategy, rng);
}

ad::Var anticipation_input(const PolicyNetwork& policy, ad::Graph& g,
                           std::span<const AgentState> states) {
  if (!policy.uses_anticipation()) return {};
  const std::size_t d = policy.anticipation_dim();
  Tensor t({states.size(), d});
  for (std::size_t b = 0; b < states.size(); ++b) {
    const auto& v = states[b].anticipation;
    if (v.size() != d)
      throw ShapeError("anticipation vector of size " + std::to_string(v.size()) +
                       ", policy expects " + std::to_string(d));
    std::copy(v.begin(), v.end(), t.row(b).begin());
  }
  return g.constant(std::move(t));
}

StepScores score_step(const PolicyNetwork& policy, Environment& env,
                      ad::Graph& g, ad::Var anticipation,
                      std::span<const AgentState> states,
                      const LstmState& history) {
  std::vector<int> rq, et;
  for (const auto& s : states) {
    rq.push_back(s.query.relation);
    et.push_back(s.entity);
  }
  ad::Var state = policy.encode_state(g, anticipation, rq, et, history.top());
  StepScores out;
  std::vector<double> attention;
  const std::size_t nrel = static_cast<std::size_t>(policy.base_relation_count());
  if (env.completion_enabled()) {
    out.relation_log_attention =
        ad::log_softmax(policy.relation_logits(g, state));
    const auto& lw = out.relation_log_attention.value();
    attention.resize(lw.size());
    for (std::size_t i = 0; i < lw.size(); ++i) attention[i] = std::exp(lw[i]);
  }
  for (std::size_t b = 0; b < states.size(); ++b) {
    std::span<const double> row;
    if (!attention.empty()) row = {attention.data() + b * nrel, nrel};
    out.spaces.push_back(env.build_action_space(states[b], row));
  }
  out.logits = policy.action_logits(g, state, out.spaces, &out.mask);
  out.log_probs = ad::log_softmax(out.logits, &out.mask);
  return out;
}

}  // namespace dackgr
