#ifndef DACKGR_POLICY_H_
#define DACKGR_POLICY_H_

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dackgr/autodiff.h"
#include "dackgr/kg_store.h"
#include "dackgr/kge.h"
#include "dackgr/nn.h"
#include "json.hpp"

namespace dackgr {

enum class AnticipationStrategy { kOff, kSample, kTopOne, kAverage };

std::string anticipation_name(AnticipationStrategy s);
AnticipationStrategy parse_anticipation(const std::string& name);

struct CompletionConfig {
  double alpha = 0.0;          // proportion of extra actions; 0 disables
  std::size_t max_actions = 20;  // M
  std::size_t top_k = 2;         // tails kept per proposed relation

  bool enabled() const { return alpha > 0.0; }
  nlohmann::json to_json() const;
  static CompletionConfig from_json(const nlohmann::json& j);
  void validate() const;
};

// N_add = min(ceil(alpha * n), max_actions).
std::size_t completion_budget(std::size_t n, double alpha,
                              std::size_t max_actions);
// x = ceil(budget / k).
std::size_t completion_relation_count(std::size_t budget, std::size_t k);

struct PolicyConfig {
  std::size_t dim = 200;
  std::size_t hidden = 200;
  std::size_t layers = 3;
  AnticipationStrategy anticipation = AnticipationStrategy::kSample;
  std::uint64_t seed = 1;

  nlohmann::json to_json() const;
  static PolicyConfig from_json(const nlohmann::json& j);
};

// Prediction vector e_p for one query from the KGE tail distribution `p`.
// Rows of `embeddings` are KGE entity vectors. kOff yields zeros.
std::vector<double> anticipate(const Tensor& embeddings,
                               std::span<const double> p,
                               AnticipationStrategy strategy, Rng& rng);

// Index drawn from a discrete distribution by inverse CDF.
std::size_t sample_index(std::span<const double> p, Rng& rng);

// Relations ranked by attention (descending, ties by ascending id), the top
// x of them expanded with the KGE's top-k tails from `entity`. Proposals that
// are existing graph edges are dropped, except `hidden` (an edge removed from
// the agent's view), and the list is cut to N_add, where N = `action_count`.
ActionSpace propose_completions(std::span<const double> relation_attention,
                                int entity, std::size_t action_count,
                                const CompletionConfig& config,
                                TopTailCache& tails, const KnowledgeGraph& kg,
                                std::optional<Triple> hidden = std::nullopt);

// History LSTM, action scorer and completion attention. Embedding tables are
// independent of the KGE. Relation ids follow Vocab; one extra row serves as
// the start token fed to the LSTM before the first hop.
class PolicyNetwork {
 public:
  PolicyNetwork(const PolicyConfig& config, int entities, int relations,
                std::size_t anticipation_dim);
  PolicyNetwork(PolicyNetwork&&) = default;
  PolicyNetwork& operator=(PolicyNetwork&&) = default;

  const PolicyConfig& config() const { return config_; }
  int entity_count() const { return entities_; }
  int relation_count() const { return relations_; }
  int base_relation_count() const { return (relations_ - 1) / 2; }
  int start_relation() const { return relations_; }
  std::size_t anticipation_dim() const { return anticipation_dim_; }
  bool uses_anticipation() const {
    return config_.anticipation != AnticipationStrategy::kOff;
  }
  std::size_t state_dim() const;

  // h_0 after consuming the start token from each head entity.
  LstmState init_history(ad::Graph& g, std::span<const int> heads) const;
  LstmState advance(ad::Graph& g, const LstmState& prev,
                    std::span<const Action> taken) const;
  // [r; e] rows, [n x 2d].
  ad::Var action_embeddings(ad::Graph& g, std::span<const int> relations,
                            std::span<const int> entities) const;
  // [e_p; r_q; e_t; h_t], e_p omitted when anticipation is off.
  ad::Var encode_state(ad::Graph& g, ad::Var anticipation,
                       std::span<const int> query_relations,
                       std::span<const int> entities, ad::Var history) const;
  // Scores A_t (W1 ReLU(W2 s_t)) for each row's space, padded to the widest
  // space. `mask` receives 1 for real entries. Output [B x width].
  ad::Var action_logits(ad::Graph& g, ad::Var state,
                        const std::vector<ActionSpace>& spaces,
                        ad::Mask* mask) const;
  // MLP(s_t) . [r_1 .. r_R] over base relations, [B x R].
  ad::Var relation_logits(ad::Graph& g, ad::Var state) const;

  ParameterStore& parameters() { return store_; }
  const ParameterStore& parameters() const { return store_; }

  void save(const std::filesystem::path& dir, std::int64_t step = 0,
            nlohmann::json extra = nlohmann::json::object()) const;
  static PolicyNetwork load(const std::filesystem::path& dir);

  std::vector<Tensor> snapshot() const;
  void restore(const std::vector<Tensor>& values);

 private:
  PolicyConfig config_;
  int entities_;
  int relations_;
  std::size_t anticipation_dim_;
  mutable ParameterStore store_;
  Parameter* entity_ = nullptr;
  Parameter* relation_ = nullptr;
  Lstm lstm_;
  Linear w2_, w1_;
  Linear completion_hidden_, completion_out_;
};

}  // namespace dackgr

#endif  // DACKGR_POLICY_H_
