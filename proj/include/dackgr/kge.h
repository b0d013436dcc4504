#ifndef DACKGR_KGE_H_
#define DACKGR_KGE_H_

#include <cstdint>
#include <filesystem>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "dackgr/autodiff.h"
#include "dackgr/checkpoint.h"
#include "dackgr/kg_store.h"
#include "dackgr/nn.h"
#include "json.hpp"

namespace dackgr {

enum class KgeKind { kTransE, kDistMult, kConvE };

std::string kge_kind_name(KgeKind kind);
KgeKind parse_kge_kind(const std::string& name);

struct KgeConfig {
  KgeKind kind = KgeKind::kConvE;
  std::size_t dim = 200;
  double lr = 0.003;
  std::size_t epochs = 200;
  std::size_t batch_size = 128;
  double label_smoothing = 0.1;
  // TransE margin ranking.
  std::size_t negatives = 16;
  double margin = 4.0;
  // ConvE. Embeddings are reshaped to conv_height x (dim / conv_height).
  std::size_t conv_height = 20;
  std::size_t conv_filters = 32;
  std::size_t kernel = 3;
  double input_dropout = 0.2;
  double feature_dropout = 0.2;
  double hidden_dropout = 0.3;
  // Early stopping on filtered valid MRR, checked every eval_every epochs.
  std::size_t eval_every = 10;
  std::size_t patience = 5;
  std::uint64_t seed = 1;

  nlohmann::json to_json() const;
  static KgeConfig from_json(const nlohmann::json& j);
};

using ScoredEntity = std::pair<int, double>;

// A frozen (after training) triple scorer. Inference methods are const and
// safe to call concurrently.
class ScoreModel {
 public:
  ScoreModel(const KgeConfig& config, int entities, int relations);
  ScoreModel(ScoreModel&&) = default;
  ScoreModel& operator=(ScoreModel&&) = default;
  ScoreModel(const ScoreModel&) = delete;
  ScoreModel& operator=(const ScoreModel&) = delete;

  KgeKind kind() const { return config_.kind; }
  const KgeConfig& config() const { return config_; }
  int entity_count() const { return entities_; }
  int relation_count() const { return relations_; }

  // Raw scores of every tail for each (head, relation) query, [n x |E|].
  Tensor tail_logits(std::span<const int> heads,
                     std::span<const int> relations) const;
  double raw_score(int head, int relation, int tail) const;
  // sigmoid(raw_score), in (0,1).
  double score(int head, int relation, int tail) const;
  // Softmax of tail_logits over all entities.
  std::vector<double> tail_distribution(int head, int relation) const;
  // Descending probability, ties broken by ascending entity id; k is clamped
  // to |E|.
  std::vector<ScoredEntity> top_k_tails(int head, int relation,
                                        std::size_t k) const;
  const Tensor& entity_embeddings() const { return entity_->value; }

  // Differentiable logits over all tails, used by 1-vs-all training.
  ad::Var forward_all_tails(ad::Graph& g, std::span<const int> heads,
                            std::span<const int> relations, bool training,
                            Rng& rng);
  // Differentiable raw scores of explicit triples, [n x 1].
  ad::Var forward_triples(ad::Graph& g, std::span<const int> heads,
                          std::span<const int> relations,
                          std::span<const int> tails);

  ParameterStore& parameters() { return store_; }

  void save(const std::filesystem::path& dir, std::int64_t step = 0) const;
  static ScoreModel load(const std::filesystem::path& dir);

  // Snapshot of all trainable values plus batch-norm statistics.
  struct State {
    std::vector<Tensor> values;
    std::vector<ad::BatchNormStats> norms;
  };
  State snapshot() const;
  void restore(const State& state);

 private:
  ad::Var conve_hidden(ad::Graph& g, std::span<const int> heads,
                       std::span<const int> relations, bool training,
                       Rng& rng) const;

  KgeConfig config_;
  int entities_;
  int relations_;
  // Mutable so that const inference can place parameters on a local tape.
  mutable ParameterStore store_;
  Parameter* entity_ = nullptr;
  Parameter* relation_ = nullptr;
  // ConvE only.
  Parameter* filters_ = nullptr;
  Parameter* conv_bias_ = nullptr;
  Parameter* entity_bias_ = nullptr;
  Parameter* bn_gamma_[3] = {nullptr, nullptr, nullptr};
  Parameter* bn_beta_[3] = {nullptr, nullptr, nullptr};
  Linear fc_;
  mutable ad::BatchNormStats bn_[3];
};

struct KgeTrainReport {
  std::size_t epochs_run = 0;
  int best_epoch = -1;
  double best_valid_mrr = 0.0;
  std::vector<double> epoch_loss;
};

class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Trains on the train split plus inverse triples. Keeps the parameters with
// the best filtered valid MRR when a valid split exists.
ScoreModel train_kge(const KnowledgeGraph& kg, const KgeConfig& config,
                     KgeTrainReport* report = nullptr);

// Filtered tail-prediction MRR of the model on the given triples.
double kge_filtered_mrr(const ScoreModel& model, const KnowledgeGraph& kg,
                        std::span<const Triple> triples);

// Thread-safe memo of top-k tail predictions per (head, relation).
class TopTailCache {
 public:
  TopTailCache(const ScoreModel& model, std::size_t k);
  std::vector<ScoredEntity> get(int head, int relation);
  std::size_t k() const { return k_; }

 private:
  const ScoreModel& model_;
  std::size_t k_;
  std::mutex mutex_;
  std::unordered_map<std::uint64_t, std::vector<ScoredEntity>> cache_;
};

}  // namespace dackgr

#endif  // DACKGR_KGE_H_
