#ifndef DACKGR_TRAINER_H_
#define DACKGR_TRAINER_H_

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dackgr/environment.h"
#include "dackgr/evaluator.h"
#include "dackgr/optim.h"
#include "dackgr/policy.h"
#include "json.hpp"

namespace dackgr {

enum class BaselineMode { kNone, kMovingAverage };

struct TrainConfig {
  std::size_t epochs = 20;
  std::size_t batch_size = 128;  // queries per batch
  std::size_t rollouts = 20;     // episodes per query
  double lr = 1e-3;              // beta
  // Decays linearly to zero over the run.
  double entropy_weight = 0.01;
  BaselineMode baseline = BaselineMode::kMovingAverage;
  double baseline_decay = 0.95;
  // Probability of hiding an action while sampling training rollouts.
  double action_dropout = 0.0;
  std::uint64_t seed = 1;
  // Validation every eval_every epochs (0 disables); the parameters with the
  // best valid Hits@10 (then MRR) are kept.
  std::size_t eval_every = 1;
  std::size_t beam_width = 64;
  std::size_t valid_limit = 0;  // 0 evaluates every valid query
  // Base relation names used as training queries; empty means all.
  std::vector<std::string> query_relations;
  PolicyConfig policy;
  EnvConfig env;

  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
};

struct EpochReport {
  std::size_t epoch = 0;
  std::size_t episodes = 0;
  double mean_reward = 0.0;
  double hit_rate = 0.0;
  double dc_ratio = 0.0;
  std::size_t completion_choices = 0;
  std::size_t total_choices = 0;
  double loss = 0.0;
  double entropy_weight = 0.0;
  std::optional<RankingMetrics> valid;

  nlohmann::json to_json() const;
  static EpochReport from_json(const nlohmann::json& j);
};

struct BatchStats {
  std::size_t episodes = 0;
  double reward_sum = 0.0;
  std::size_t hits = 0;
  std::size_t completion_choices = 0;
  std::size_t total_choices = 0;
  double loss = 0.0;
};

// REINFORCE over batched rollouts. One instance owns the policy, the
// optimizer and the environment; it is not shared between threads.
class Trainer {
 public:
  Trainer(const KnowledgeGraph& kg, const ScoreModel* kge, TrainConfig config);

  const TrainConfig& config() const { return config_; }
  PolicyNetwork& policy() { return policy_; }
  const PolicyNetwork& policy() const { return policy_; }
  Environment& environment() { return env_; }
  std::span<const Query> training_queries() const { return queries_; }
  double baseline() const { return baseline_; }

  // Samples `n_rollouts` episodes per query with log-probabilities recorded
  // at sampling time. With `update`, applies one REINFORCE step using
  // `entropy_weight`.
  std::vector<EpisodeTrace> rollout_batch(std::span<const Query> queries,
                                          std::size_t n_rollouts, Rng& rng,
                                          bool update,
                                          double entropy_weight = 0.0,
                                          BatchStats* stats = nullptr);

  // Rebuilds the REINFORCE loss of recorded traces on `g` by replaying their
  // action choices. `advantages` holds one value per trace.
  ad::Var replay_loss(ad::Graph& g, std::span<const EpisodeTrace> traces,
                      std::span<const double> advantages,
                      double entropy_weight);

  EpochReport train_epoch(std::size_t epoch);
  // Runs every epoch, restores the best-validated parameters and returns the
  // reports.
  std::vector<EpochReport> train(
      const std::function<void(const EpochReport&)>& on_epoch = {});

  RankingMetrics validate();
  int best_epoch() const { return best_epoch_; }
  double best_valid_hits10() const { return best_hits10_; }

 private:
  struct Episodes {
    std::vector<EpisodeTrace> traces;
    ad::Var log_prob_sum;  // [B x 1]
    ad::Var entropy_sum;   // [B x 1]
  };
  using Chooser = std::function<std::size_t(
      std::size_t row, std::size_t t, const ActionSpace& space,
      std::span<const double> log_probs)>;
  Episodes run(ad::Graph& g, std::span<const Query> queries,
               std::vector<std::vector<double>> anticipation, bool training,
               const Chooser& choose);
  std::vector<std::vector<double>> sample_anticipation(
      std::span<const Query> queries, Rng& rng);
  std::vector<double> rewards(std::vector<EpisodeTrace>& traces);
  ad::Var loss_of(ad::Graph& g, const Episodes& e,
                  std::span<const double> advantages, double entropy_weight);

  const KnowledgeGraph& kg_;
  const ScoreModel* kge_;
  TrainConfig config_;
  Environment env_;
  PolicyNetwork policy_;
  Adam adam_;
  Rng rng_;
  std::vector<Query> queries_;
  std::vector<Query> valid_;
  double baseline_ = 0.0;
  int best_epoch_ = -1;
  double best_hits10_ = -1.0;
  double best_mrr_ = -1.0;
  std::vector<Tensor> best_params_;
};

double entropy_weight_at(const TrainConfig& config, std::size_t epoch);

}  // namespace dackgr

#endif  // DACKGR_TRAINER_H_
