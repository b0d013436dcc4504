#include "dackgr/trainer.h"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <stdexcept>

#include "dackgr/log.h"

namespace dackgr {
namespace {

std::string baseline_name(BaselineMode m) {
  return m == BaselineMode::kNone ? "none" : "moving-average";
}

BaselineMode parse_baseline(const std::string& s) {
  if (s == "none") return BaselineMode::kNone;
  if (s == "moving-average" || s == "ema") return BaselineMode::kMovingAverage;
  throw std::invalid_argument("unknown baseline '" + s +
                              "' (expected none or moving-average)");
}

}  // namespace

nlohmann::json TrainConfig::to_json() const {
  return {{"epochs", epochs},
          {"batch_size", batch_size},
          {"rollouts", rollouts},
          {"lr", lr},
          {"entropy_weight", entropy_weight},
          {"baseline", baseline_name(baseline)},
          {"baseline_decay", baseline_decay},
          {"action_dropout", action_dropout},
          {"seed", seed},
          {"eval_every", eval_every},
          {"beam_width", beam_width},
          {"valid_limit", valid_limit},
          {"query_relations", query_relations},
          {"policy", policy.to_json()},
          {"env", env.to_json()}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
  TrainConfig c;
  c.epochs = j.value("epochs", c.epochs);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.rollouts = j.value("rollouts", c.rollouts);
  c.lr = j.value("lr", c.lr);
  c.entropy_weight = j.value("entropy_weight", c.entropy_weight);
  if (j.contains("baseline")) c.baseline = parse_baseline(j.at("baseline"));
  c.baseline_decay = j.value("baseline_decay", c.baseline_decay);
  c.action_dropout = j.value("action_dropout", c.action_dropout);
  c.seed = j.value("seed", c.seed);
  c.eval_every = j.value("eval_every", c.eval_every);
  c.beam_width = j.value("beam_width", c.beam_width);
  c.valid_limit = j.value("valid_limit", c.valid_limit);
  c.query_relations = j.value("query_relations", c.query_relations);
  if (j.contains("policy")) c.policy = PolicyConfig::from_json(j.at("policy"));
  if (j.contains("env")) c.env = EnvConfig::from_json(j.at("env"));
  if (c.batch_size == 0) throw std::invalid_argument("batch_size must be >= 1");
  if (!(c.lr > 0)) throw std::invalid_argument("lr must be positive");
  if (c.action_dropout < 0 || c.action_dropout >= 1)
    throw std::invalid_argument("action_dropout must lie in [0, 1)");
  return c;
}

nlohmann::json EpochReport::to_json() const {
  nlohmann::json j = {{"epoch", epoch},
                      {"episodes", episodes},
                      {"mean_reward", mean_reward},
                      {"hit_rate", hit_rate},
                      {"dc_ratio", dc_ratio},
                      {"completion_choices", completion_choices},
                      {"total_choices", total_choices},
                      {"loss", loss},
                      {"entropy_weight", entropy_weight}};
  if (valid) j["valid"] = valid->to_json();
  return j;
}

EpochReport EpochReport::from_json(const nlohmann::json& j) {
  EpochReport r;
  r.epoch = j.at("epoch");
  r.episodes = j.at("episodes");
  r.mean_reward = j.at("mean_reward");
  r.hit_rate = j.at("hit_rate");
  r.dc_ratio = j.at("dc_ratio");
  r.completion_choices = j.at("completion_choices");
  r.total_choices = j.at("total_choices");
  r.loss = j.at("loss");
  r.entropy_weight = j.value("entropy_weight", 0.0);
  if (j.contains("valid")) r.valid = RankingMetrics::from_json(j.at("valid"));
  return r;
}

double entropy_weight_at(const TrainConfig& config, std::size_t epoch) {
  if (config.epochs == 0) return config.entropy_weight;
  const double frac =
      static_cast<double>(epoch) / static_cast<double>(config.epochs);
  return config.entropy_weight * std::max(0.0, 1.0 - frac);
}

Trainer::Trainer(const KnowledgeGraph& kg, const ScoreModel* kge,
                 TrainConfig config)
    : kg_(kg),
      kge_(kge),
      config_(std::move(config)),
      env_(kg, kge, config_.env),
      policy_(config_.policy, kg.entity_count(), kg.relation_count(),
              kge && config_.policy.anticipation != AnticipationStrategy::kOff
                  ? kge->config().dim
                  : 0),
      adam_(policy_.parameters().all(), AdamConfig{.lr = config_.lr}),
      rng_(config_.seed) {
  if (config_.policy.anticipation != AnticipationStrategy::kOff && !kge)
    throw std::invalid_argument("anticipation requires a KGE model");
  std::vector<int> allowed;
  for (const auto& name : config_.query_relations) {
    auto id = kg.vocab().relation_id(name);
    if (!id || !kg.vocab().is_base(*id))
      throw std::invalid_argument("unknown query relation '" + name + "'");
    allowed.push_back(*id);
  }
  auto keep = [&](const Triple& t) {
    return allowed.empty() ||
           std::find(allowed.begin(), allowed.end(), t.relation) != allowed.end();
  };
  for (const auto& t : kg.train())
    if (keep(t)) queries_.push_back({t.head, t.relation, t.tail});
  for (const auto& t : kg.valid())
    if (keep(t)) valid_.push_back({t.head, t.relation, t.tail});
  if (config_.valid_limit && valid_.size() > config_.valid_limit)
    valid_.resize(config_.valid_limit);
}

std::vector<std::vector<double>> Trainer::sample_anticipation(
    std::span<const Query> queries, Rng& rng) {
  std::vector<std::vector<double>> out(queries.size());
  if (!policy_.uses_anticipation()) return out;
  std::map<std::pair<int, int>, std::vector<double>> dist;
  for (const auto& q : queries) {
    auto key = std::make_pair(q.head, q.relation);
    if (!dist.count(key)) dist[key] = kge_->tail_distribution(q.head, q.relation);
  }
  for (std::size_t i = 0; i < queries.size(); ++i)
    out[i] = anticipate(kge_->entity_embeddings(),
                        dist.at({queries[i].head, queries[i].relation}),
                        policy_.config().anticipation, rng);
  return out;
}

Trainer::Episodes Trainer::run(ad::Graph& g, std::span<const Query> queries,
                               std::vector<std::vector<double>> anticipation,
                               bool training, const Chooser& choose) {
  const std::size_t n = queries.size();
  Episodes ep;
  ep.traces.resize(n);
  std::vector<AgentState> states;
  std::vector<int> heads;
  for (std::size_t b = 0; b < n; ++b) {
    ep.traces[b].query = queries[b];
    ep.traces[b].anticipation = anticipation[b];
    states.push_back(env_.reset(queries[b], std::move(anticipation[b]), training));
    heads.push_back(queries[b].head);
  }
  LstmState history = policy_.init_history(g, heads);
  const std::size_t steps = env_.config().max_steps;
  for (std::size_t t = 0; t < steps; ++t) {
    ad::Var antic = anticipation_input(policy_, g, states);
    StepScores sc = score_step(policy_, env_, g, antic, states, history);
    const Tensor& lp = sc.log_probs.value();
    const std::size_t width = lp.cols();
    std::vector<int> picks(n), rel_cols(n, 0);
    Tensor is_completion({n, 1});
    std::vector<Action> taken(n);
    for (std::size_t b = 0; b < n; ++b) {
      const auto& space = sc.spaces[b];
      std::span<const double> row(lp.data() + b * width, space.size());
      const std::size_t idx = choose(b, t, space, row);
      if (idx >= space.size())
        throw std::out_of_range("chosen action outside the action space");
      picks[b] = static_cast<int>(idx);
      taken[b] = space[idx];
      if (taken[b].origin == ActionOrigin::kCompletion) {
        rel_cols[b] = taken[b].relation;
        is_completion[b] = 1.0;
      }
      ep.traces[b].steps.push_back({taken[b], idx, row[idx]});
      states[b] = env_.step(states[b], space, idx);
    }
    ad::Var step_lp = ad::pick(sc.log_probs, picks);
    if (sc.relation_log_attention.valid())
      step_lp = ad::add(step_lp,
                        ad::mul(ad::pick(sc.relation_log_attention, rel_cols),
                                g.constant(std::move(is_completion))));
    ad::Var probs = ad::softmax(sc.logits, &sc.mask);
    ad::Var entropy = ad::scale(ad::row_sum(ad::mul(probs, sc.log_probs)), -1.0);
    ep.log_prob_sum = t == 0 ? step_lp : ad::add(ep.log_prob_sum, step_lp);
    ep.entropy_sum = t == 0 ? entropy : ad::add(ep.entropy_sum, entropy);
    if (t + 1 < steps) history = policy_.advance(g, history, taken);
  }
  for (std::size_t b = 0; b < n; ++b) ep.traces[b].terminal = states[b].entity;
  return ep;
}

std::vector<double> Trainer::rewards(std::vector<EpisodeTrace>& traces) {
  std::map<std::pair<int, int>, std::size_t> row_of;
  std::vector<int> heads, rels;
  const bool shaped = env_.config().reward_shaping && kge_;
  if (shaped) {
    for (const auto& tr : traces) {
      auto key = std::make_pair(tr.query.head, tr.query.relation);
      if (row_of.emplace(key, heads.size()).second) {
        heads.push_back(key.first);
        rels.push_back(key.second);
      }
    }
  }
  Tensor logits = shaped ? kge_->tail_logits(heads, rels) : Tensor();
  std::vector<double> out;
  for (auto& tr : traces) {
    AgentState final_state;
    final_state.query = tr.query;
    final_state.entity = tr.terminal;
    final_state.step = tr.steps.size();
    std::optional<double> raw;
    if (shaped)
      raw = logits.at(row_of.at({tr.query.head, tr.query.relation}), tr.terminal);
    tr.reward = env_.reward(final_state, raw);
    out.push_back(tr.reward);
  }
  return out;
}

ad::Var Trainer::loss_of(ad::Graph& g, const Episodes& e,
                         std::span<const double> advantages,
                         double entropy_weight) {
  const std::size_t n = e.traces.size();
  Tensor adv({n, 1});
  for (std::size_t b = 0; b < n; ++b) adv[b] = advantages[b];
  const double inv = 1.0 / static_cast<double>(n);
  ad::Var loss = ad::scale(
      ad::sum(ad::mul(e.log_prob_sum, g.constant(std::move(adv)))), -inv);
  if (entropy_weight != 0.0) {
    const double steps = static_cast<double>(env_.config().max_steps);
    loss = ad::add(loss, ad::scale(ad::sum(e.entropy_sum),
                                   -entropy_weight * inv / steps));
  }
  return loss;
}

std::vector<EpisodeTrace> Trainer::rollout_batch(std::span<const Query> queries,
                                                 std::size_t n_rollouts,
                                                 Rng& rng, bool update,
                                                 double entropy_weight,
                                                 BatchStats* stats) {
  if (n_rollouts == 0 || queries.empty()) return {};
  std::vector<Query> expanded;
  for (const auto& q : queries)
    for (std::size_t i = 0; i < n_rollouts; ++i) expanded.push_back(q);
  auto antic = sample_anticipation(expanded, rng);
  const double dropout = update ? config_.action_dropout : 0.0;
  Chooser sample = [&](std::size_t, std::size_t, const ActionSpace&,
                       std::span<const double> log_probs) {
    std::vector<double> p(log_probs.size());
    for (std::size_t i = 0; i < p.size(); ++i) p[i] = std::exp(log_probs[i]);
    if (dropout > 0.0) {
      std::bernoulli_distribution drop(dropout);
      std::vector<double> kept = p;
      bool any = false;
      for (auto& v : kept) {
        if (drop(rng)) v = 0.0;
        any |= v > 0.0;
      }
      if (any) return sample_index(kept, rng);
    }
    return sample_index(p, rng);
  };
  ad::Graph g(update);
  Episodes ep = run(g, expanded, std::move(antic), true, sample);
  const auto r = rewards(ep.traces);
  const double mean_r =
      std::accumulate(r.begin(), r.end(), 0.0) / static_cast<double>(r.size());
  std::vector<double> adv = r;
  if (config_.baseline == BaselineMode::kMovingAverage)
    for (auto& a : adv) a -= baseline_;
  double loss_value = 0.0;
  if (update) {
    ad::Var loss = loss_of(g, ep, adv, entropy_weight);
    loss_value = loss.value()[0];
    if (!std::isfinite(loss_value))
      throw DivergenceError("policy loss is " + std::to_string(loss_value) +
                            " (lr " + std::to_string(config_.lr) + ")");
    adam_.zero_grad();
    g.backward(loss);
    adam_.step();
    if (config_.baseline == BaselineMode::kMovingAverage)
      baseline_ = config_.baseline_decay * baseline_ +
                  (1.0 - config_.baseline_decay) * mean_r;
  }
  if (stats) {
    stats->episodes += ep.traces.size();
    stats->reward_sum += std::accumulate(r.begin(), r.end(), 0.0);
    stats->loss += loss_value;
    for (const auto& tr : ep.traces) {
      stats->hits += tr.hit();
      stats->completion_choices += tr.completion_choices();
      stats->total_choices += tr.steps.size();
    }
  }
  return std::move(ep.traces);
}

ad::Var Trainer::replay_loss(ad::Graph& g, std::span<const EpisodeTrace> traces,
                             std::span<const double> advantages,
                             double entropy_weight) {
  std::vector<Query> queries;
  std::vector<std::vector<double>> antic;
  for (const auto& tr : traces) {
    queries.push_back(tr.query);
    antic.push_back(tr.anticipation);
  }
  Chooser replay = [&](std::size_t row, std::size_t t, const ActionSpace& space,
                       std::span<const double>) {
    const auto& s = traces[row].steps.at(t);
    if (s.index >= space.size() || !(space[s.index] == s.action))
      throw std::logic_error("replay diverged from the recorded trace");
    return s.index;
  };
  Episodes ep = run(g, queries, std::move(antic), true, replay);
  return loss_of(g, ep, advantages, entropy_weight);
}

RankingMetrics Trainer::validate() {
  EvalConfig cfg;
  cfg.beam_width = config_.beam_width;
  cfg.seed = config_.seed;
  cfg.keep_paths = 0;
  return evaluate(policy_, env_, valid_, cfg).metrics;
}

EpochReport Trainer::train_epoch(std::size_t epoch) {
  std::vector<Query> order = queries_;
  std::shuffle(order.begin(), order.end(), rng_);
  EpochReport rep;
  rep.epoch = epoch;
  rep.entropy_weight = entropy_weight_at(config_, epoch);
  BatchStats stats;
  std::size_t batches = 0;
  for (std::size_t start = 0; start < order.size();
       start += config_.batch_size) {
    const std::size_t end = std::min(order.size(), start + config_.batch_size);
    rollout_batch(std::span<const Query>(order).subspan(start, end - start),
                  config_.rollouts, rng_, true, rep.entropy_weight, &stats);
    ++batches;
  }
  rep.episodes = stats.episodes;
  if (stats.episodes) {
    const double n = static_cast<double>(stats.episodes);
    rep.mean_reward = stats.reward_sum / n;
    rep.hit_rate = static_cast<double>(stats.hits) / n;
  }
  rep.completion_choices = stats.completion_choices;
  rep.total_choices = stats.total_choices;
  rep.dc_ratio = stats.total_choices
                     ? static_cast<double>(stats.completion_choices) /
                           static_cast<double>(stats.total_choices)
                     : 0.0;
  rep.loss = batches ? stats.loss / static_cast<double>(batches) : 0.0;
  const bool last = epoch + 1 == config_.epochs;
  if (config_.eval_every && !valid_.empty() &&
      ((epoch + 1) % config_.eval_every == 0 || last)) {
    rep.valid = validate();
    // Hits@10 saturates early on small graphs; MRR breaks its ties.
    const auto& v = *rep.valid;
    if (v.hits10 > best_hits10_ ||
        (v.hits10 == best_hits10_ && v.mrr > best_mrr_)) {
      best_hits10_ = v.hits10;
      best_mrr_ = v.mrr;
      best_epoch_ = static_cast<int>(epoch);
      best_params_ = policy_.snapshot();
    }
  }
  log_info("epoch " + std::to_string(epoch) + " reward " +
           std::to_string(rep.mean_reward) + " hit " +
           std::to_string(rep.hit_rate) + " dc " + std::to_string(rep.dc_ratio) +
           (rep.valid ? " valid hits@10 " + std::to_string(rep.valid->hits10)
                      : std::string()));
  return rep;
}

std::vector<EpochReport> Trainer::train(
    const std::function<void(const EpochReport&)>& on_epoch) {
  std::vector<EpochReport> reports;
  for (std::size_t e = 0; e < config_.epochs; ++e) {
    reports.push_back(train_epoch(e));
    if (on_epoch) on_epoch(reports.back());
  }
  if (!best_params_.empty()) policy_.restore(best_params_);
  return reports;
}

}  // namespace dackgr
