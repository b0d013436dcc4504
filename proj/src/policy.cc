#include "dackgr/policy.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include "dackgr/checkpoint.h"

namespace dackgr {

std::string anticipation_name(AnticipationStrategy s) {
  switch (s) {
    case AnticipationStrategy::kOff:
      return "off";
    case AnticipationStrategy::kSample:
      return "sample";
    case AnticipationStrategy::kTopOne:
      return "top-one";
    case AnticipationStrategy::kAverage:
      return "average";
  }
  return "?";
}

AnticipationStrategy parse_anticipation(const std::string& name) {
  if (name == "off") return AnticipationStrategy::kOff;
  if (name == "sample") return AnticipationStrategy::kSample;
  if (name == "top-one" || name == "top1") return AnticipationStrategy::kTopOne;
  if (name == "average") return AnticipationStrategy::kAverage;
  throw std::invalid_argument("unknown anticipation strategy '" + name +
                              "' (expected off, sample, top-one or average)");
}

nlohmann::json CompletionConfig::to_json() const {
  return {{"alpha", alpha}, {"max_actions", max_actions}, {"top_k", top_k}};
}

CompletionConfig CompletionConfig::from_json(const nlohmann::json& j) {
  CompletionConfig c;
  c.alpha = j.value("alpha", c.alpha);
  c.max_actions = j.value("max_actions", c.max_actions);
  c.top_k = j.value("top_k", c.top_k);
  c.validate();
  return c;
}

void CompletionConfig::validate() const {
  if (!(alpha >= 0.0 && alpha <= 1.0))
    throw std::invalid_argument("completion alpha must lie in [0, 1]");
  if (max_actions < 1) throw std::invalid_argument("completion M must be >= 1");
  if (top_k < 1) throw std::invalid_argument("completion k must be >= 1");
}

std::size_t completion_budget(std::size_t n, double alpha,
                              std::size_t max_actions) {
  if (alpha <= 0.0 || n == 0) return 0;
  // The tolerance keeps products such as 0.2 * 10 from rounding up to 3.
  const double raw = alpha * static_cast<double>(n);
  const auto wanted = static_cast<std::size_t>(std::ceil(raw - 1e-9));
  return std::min(wanted, max_actions);
}

std::size_t completion_relation_count(std::size_t budget, std::size_t k) {
  if (k == 0) throw std::invalid_argument("k must be >= 1");
  return (budget + k - 1) / k;
}

nlohmann::json PolicyConfig::to_json() const {
  return {{"dim", dim},
          {"hidden", hidden},
          {"layers", layers},
          {"anticipation", anticipation_name(anticipation)},
          {"seed", seed}};
}

PolicyConfig PolicyConfig::from_json(const nlohmann::json& j) {
  PolicyConfig c;
  c.dim = j.value("dim", c.dim);
  c.hidden = j.value("hidden", c.hidden);
  c.layers = j.value("layers", c.layers);
  if (j.contains("anticipation"))
    c.anticipation = parse_anticipation(j.at("anticipation"));
  c.seed = j.value("seed", c.seed);
  if (c.dim == 0 || c.hidden == 0 || c.layers == 0)
    throw std::invalid_argument("policy dim, hidden and layers must be >= 1");
  return c;
}

std::size_t sample_index(std::span<const double> p, Rng& rng) {
  if (p.empty()) throw std::invalid_argument("sample_index: empty distribution");
  const double total = std::accumulate(p.begin(), p.end(), 0.0);
  const double u = std::uniform_real_distribution<double>(0.0, total)(rng);
  double acc = 0.0;
  std::size_t last = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] <= 0.0) continue;
    acc += p[i];
    last = i;
    if (u < acc) return i;
  }
  return last;
}

std::vector<double> anticipate(const Tensor& embeddings,
                               std::span<const double> p,
                               AnticipationStrategy strategy, Rng& rng) {
  const std::size_t d = embeddings.cols();
  std::vector<double> out(d, 0.0);
  if (strategy == AnticipationStrategy::kOff) return out;
  if (p.size() != embeddings.rows())
    throw ShapeError("anticipate: distribution over " +
                     std::to_string(p.size()) + " entities, table has " +
                     std::to_string(embeddings.rows()));
  auto copy_row = [&](std::size_t e) {
    auto row = embeddings.row(e);
    std::copy(row.begin(), row.end(), out.begin());
  };
  switch (strategy) {
    case AnticipationStrategy::kSample:
      copy_row(sample_index(p, rng));
      break;
    case AnticipationStrategy::kTopOne:
      // max_element returns the first maximum, i.e. the smallest id.
      copy_row(static_cast<std::size_t>(
          std::max_element(p.begin(), p.end()) - p.begin()));
      break;
    case AnticipationStrategy::kAverage:
      for (std::size_t e = 0; e < p.size(); ++e) {
        if (p[e] == 0.0) continue;
        auto row = embeddings.row(e);
        for (std::size_t j = 0; j < d; ++j) out[j] += p[e] * row[j];
      }
      break;
    case AnticipationStrategy::kOff:
      break;
  }
  return out;
}

ActionSpace propose_completions(std::span<const double> relation_attention,
                                int entity, std::size_t action_count,
                                const CompletionConfig& config,
                                TopTailCache& tails, const KnowledgeGraph& kg,
                                std::optional<Triple> hidden) {
  const std::size_t budget =
      completion_budget(action_count, config.alpha, config.max_actions);
  if (budget == 0 || relation_attention.empty()) return {};
  if (tails.k() < config.top_k)
    throw std::invalid_argument("completion cache holds fewer than k tails");
  std::vector<int> order(relation_attention.size());
  std::iota(order.begin(), order.end(), 0);
  const std::size_t x = std::min(
      order.size(), completion_relation_count(budget, config.top_k));
  std::partial_sort(order.begin(), order.begin() + static_cast<long>(x),
                    order.end(), [&](int a, int b) {
                      const double wa = relation_attention[a];
                      const double wb = relation_attention[b];
                      return wa != wb ? wa > wb : a < b;
                    });
  ActionSpace out;
  for (std::size_t i = 0; i < x && out.size() < budget; ++i) {
    const int r = order[i];
    const auto top = tails.get(entity, r);
    for (std::size_t j = 0; j < config.top_k && j < top.size(); ++j) {
      const int e = top[j].first;
      // Staying put is already covered by the self-loop.
      if (e == entity) continue;
      const bool is_hidden =
          hidden && *hidden == Triple{entity, r, e};
      if (kg.has_edge(entity, r, e) && !is_hidden) continue;
      out.push_back({r, e, ActionOrigin::kCompletion});
      if (out.size() == budget) break;
    }
  }
  return out;
}

PolicyNetwork::PolicyNetwork(const PolicyConfig& config, int entities,
                             int relations, std::size_t anticipation_dim)
    : config_(config),
      entities_(entities),
      relations_(relations),
      anticipation_dim_(anticipation_dim) {
  if (entities <= 0 || relations < 3 || relations % 2 == 0)
    throw std::invalid_argument(
        "PolicyNetwork needs entities and a 2R+1 relation vocabulary");
  if (config.dim == 0 || config.hidden == 0 || config.layers == 0)
    throw std::invalid_argument("policy dim, hidden and layers must be >= 1");
  if (uses_anticipation() && anticipation_dim == 0)
    throw std::invalid_argument("anticipation needs a KGE embedding size");
  Rng rng(config.seed);
  const std::size_t d = config.dim, h = config.hidden;
  const auto ne = static_cast<std::size_t>(entities);
  const auto nr = static_cast<std::size_t>(relations) + 1;
  entity_ = &store_.add("entity", xavier_uniform({ne, d}, ne, d, rng));
  relation_ = &store_.add("relation", xavier_uniform({nr, d}, nr, d, rng));
  lstm_ = Lstm(store_, "lstm", 2 * d, h, config.layers, rng);
  w2_ = Linear(store_, "w2", state_dim(), h, rng);
  w1_ = Linear(store_, "w1", h, 2 * d, rng);
  completion_hidden_ = Linear(store_, "completion.hidden", state_dim(), h, rng);
  completion_out_ = Linear(store_, "completion.out", h, d, rng);
}

std::size_t PolicyNetwork::state_dim() const {
  return (uses_anticipation() ? anticipation_dim_ : 0) + 2 * config_.dim +
         config_.hidden;
}

LstmState PolicyNetwork::init_history(ad::Graph& g,
                                      std::span<const int> heads) const {
  std::vector<int> start(heads.size(), start_relation());
  auto x = action_embeddings(g, start, heads);
  return lstm_.step(g, x, lstm_.zero_state(g, heads.size()));
}

LstmState PolicyNetwork::advance(ad::Graph& g, const LstmState& prev,
                                 std::span<const Action> taken) const {
  std::vector<int> rels, ents;
  for (const auto& a : taken) {
    rels.push_back(a.relation);
    ents.push_back(a.entity);
  }
  return lstm_.step(g, action_embeddings(g, rels, ents), prev);
}

ad::Var PolicyNetwork::action_embeddings(ad::Graph& g,
                                         std::span<const int> relations,
                                         std::span<const int> entities) const {
  return ad::concat({ad::lookup(g, *relation_, relations),
                     ad::lookup(g, *entity_, entities)});
}

ad::Var PolicyNetwork::encode_state(ad::Graph& g, ad::Var anticipation,
                                    std::span<const int> query_relations,
                                    std::span<const int> entities,
                                    ad::Var history) const {
  std::vector<ad::Var> parts;
  if (uses_anticipation()) {
    if (!anticipation.valid() || anticipation.cols() != anticipation_dim_ ||
        anticipation.rows() != entities.size())
      throw ShapeError("encode_state: anticipation must be [" +
                       std::to_string(entities.size()) + "x" +
                       std::to_string(anticipation_dim_) + "]");
    parts.push_back(anticipation);
  }
  parts.push_back(ad::lookup(g, *relation_, query_relations));
  parts.push_back(ad::lookup(g, *entity_, entities));
  parts.push_back(history);
  return ad::concat(parts);
}

ad::Var PolicyNetwork::action_logits(ad::Graph& g, ad::Var state,
                                     const std::vector<ActionSpace>& spaces,
                                     ad::Mask* mask) const {
  if (spaces.size() != state.rows())
    throw ShapeError("action_logits: " + std::to_string(spaces.size()) +
                     " action spaces for " + std::to_string(state.rows()) +
                     " states");
  std::size_t width = 0;
  for (const auto& s : spaces) {
    if (s.empty()) throw std::invalid_argument("action_logits: empty action space");
    width = std::max(width, s.size());
  }
  std::vector<int> rels, ents;
  ad::Mask m(spaces.size() * width, 0);
  for (std::size_t b = 0; b < spaces.size(); ++b)
    for (std::size_t j = 0; j < width; ++j) {
      if (j < spaces[b].size()) {
        rels.push_back(spaces[b][j].relation);
        ents.push_back(spaces[b][j].entity);
        m[b * width + j] = 1;
      } else {
        rels.push_back(spaces[b][0].relation);
        ents.push_back(spaces[b][0].entity);
      }
    }
  ad::Var query = w1_(g, ad::relu(w2_(g, state)));
  ad::Var logits = ad::group_dot(action_embeddings(g, rels, ents), query, width);
  if (mask) *mask = std::move(m);
  return logits;
}

ad::Var PolicyNetwork::relation_logits(ad::Graph& g, ad::Var state) const {
  std::vector<int> ids(static_cast<std::size_t>(base_relation_count()));
  std::iota(ids.begin(), ids.end(), 0);
  ad::Var m = completion_out_(g, ad::relu(completion_hidden_(g, state)));
  return ad::matmul_transposed(m, ad::lookup(g, *relation_, ids));
}

void PolicyNetwork::save(const std::filesystem::path& dir, std::int64_t step,
                         nlohmann::json extra) const {
  std::vector<const Parameter*> params;
  for (const Parameter* p : std::as_const(store_).all()) params.push_back(p);
  CheckpointInfo info;
  info.seed = config_.seed;
  info.step = step;
  extra["model"] = "policy";
  extra["config"] = config_.to_json();
  extra["entities"] = entities_;
  extra["relations"] = relations_;
  extra["anticipation_dim"] = anticipation_dim_;
  info.extra = std::move(extra);
  save_checkpoint(dir, params, info);
}

PolicyNetwork PolicyNetwork::load(const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw CheckpointError("no manifest.json in " + dir.string());
  const auto manifest = nlohmann::json::parse(in);
  const auto& extra = manifest.at("extra");
  if (extra.value("model", "") != "policy")
    throw CheckpointError(dir.string() + " does not hold a policy checkpoint");
  PolicyNetwork policy(PolicyConfig::from_json(extra.at("config")),
                       extra.at("entities").get<int>(),
                       extra.at("relations").get<int>(),
                       extra.at("anticipation_dim").get<std::size_t>());
  auto params = policy.store_.all();
  load_checkpoint(dir, params);
  return policy;
}

std::vector<Tensor> PolicyNetwork::snapshot() const {
  std::vector<Tensor> out;
  for (const Parameter* p : std::as_const(store_).all()) out.push_back(p->value);
  return out;
}

void PolicyNetwork::restore(const std::vector<Tensor>& values) {
  auto params = store_.all();
  if (values.size() != params.size())
    throw std::invalid_argument("restore: parameter count mismatch");
  for (std::size_t i = 0; i < params.size(); ++i) params[i]->value = values[i];
}

}  // namespace dackgr
