#include "dackgr/kge.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>

#include "dackgr/log.h"
#include "dackgr/optim.h"

namespace dackgr {
namespace {

double sigmoid(double v) {
  return v >= 0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
}

std::vector<double> softmax_vector(std::span<const double> logits) {
  std::vector<double> p(logits.size());
  if (logits.empty()) return p;
  const double mx = *std::max_element(logits.begin(), logits.end());
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) s += p[i] = std::exp(logits[i] - mx);
  for (auto& v : p) v /= s;
  return p;
}

std::uint64_t cache_key(int head, int relation) {
  return (static_cast<std::uint64_t>(head) << 32) |
         static_cast<std::uint32_t>(relation);
}

}  // namespace

std::string kge_kind_name(KgeKind kind) {
  switch (kind) {
    case KgeKind::kTransE:
      return "transe";
    case KgeKind::kDistMult:
      return "distmult";
    case KgeKind::kConvE:
      return "conve";
  }
  return "?";
}

KgeKind parse_kge_kind(const std::string& name) {
  std::string s = name;
  std::transform(s.begin(), s.end(), s.begin(), ::tolower);
  if (s == "transe") return KgeKind::kTransE;
  if (s == "distmult") return KgeKind::kDistMult;
  if (s == "conve") return KgeKind::kConvE;
  throw std::invalid_argument("unknown KGE kind '" + name +
                              "' (expected transe, distmult or conve)");
}

nlohmann::json KgeConfig::to_json() const {
  return {{"kind", kge_kind_name(kind)},
          {"dim", dim},
          {"lr", lr},
          {"epochs", epochs},
          {"batch_size", batch_size},
          {"label_smoothing", label_smoothing},
          {"negatives", negatives},
          {"margin", margin},
          {"conv_height", conv_height},
          {"conv_filters", conv_filters},
          {"kernel", kernel},
          {"input_dropout", input_dropout},
          {"feature_dropout", feature_dropout},
          {"hidden_dropout", hidden_dropout},
          {"eval_every", eval_every},
          {"patience", patience},
          {"seed", seed}};
}

KgeConfig KgeConfig::from_json(const nlohmann::json& j) {
  KgeConfig c;
  if (j.contains("kind")) c.kind = parse_kge_kind(j.at("kind"));
  c.dim = j.value("dim", c.dim);
  c.lr = j.value("lr", c.lr);
  c.epochs = j.value("epochs", c.epochs);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.label_smoothing = j.value("label_smoothing", c.label_smoothing);
  c.negatives = j.value("negatives", c.negatives);
  c.margin = j.value("margin", c.margin);
  c.conv_height = j.value("conv_height", c.conv_height);
  c.conv_filters = j.value("conv_filters", c.conv_filters);
  c.kernel = j.value("kernel", c.kernel);
  c.input_dropout = j.value("input_dropout", c.input_dropout);
  c.feature_dropout = j.value("feature_dropout", c.feature_dropout);
  c.hidden_dropout = j.value("hidden_dropout", c.hidden_dropout);
  c.eval_every = j.value("eval_every", c.eval_every);
  c.patience = j.value("patience", c.patience);
  c.seed = j.value("seed", c.seed);
  return c;
}

ScoreModel::ScoreModel(const KgeConfig& config, int entities, int relations)
    : config_(config), entities_(entities), relations_(relations) {
  if (entities <= 0 || relations <= 0)
    throw std::invalid_argument("ScoreModel needs at least one entity and relation");
  Rng rng(config.seed);
  const std::size_t d = config.dim;
  const auto ne = static_cast<std::size_t>(entities);
  const auto nr = static_cast<std::size_t>(relations);
  entity_ = &store_.add("entity", xavier_uniform({ne, d}, ne, d, rng));
  relation_ = &store_.add("relation", xavier_uniform({nr, d}, nr, d, rng));
  if (config.kind != KgeKind::kConvE) return;

  const std::size_t h = config.conv_height;
  if (h == 0 || d % h != 0)
    throw std::invalid_argument("ConvE: dim must be divisible by conv_height");
  const std::size_t w = d / h, k = config.kernel;
  if (k > w || k > 2 * h)
    throw std::invalid_argument("ConvE: kernel larger than reshaped embedding");
  const std::size_t f = config.conv_filters;
  filters_ = &store_.add("conv.filters",
                         xavier_uniform({f, 1, k, k}, k * k, f * k * k, rng));
  conv_bias_ = &store_.add("conv.bias", Tensor({1, f}));
  entity_bias_ = &store_.add("entity_bias", Tensor({ne, 1}));
  const std::size_t channels[3] = {1, f, d};
  for (int i = 0; i < 3; ++i) {
    bn_gamma_[i] = &store_.add("bn" + std::to_string(i) + ".gamma",
                               Tensor({1, channels[i]}, 1.0));
    bn_beta_[i] =
        &store_.add("bn" + std::to_string(i) + ".beta", Tensor({1, channels[i]}));
  }
  const std::size_t flat = f * (2 * h - k + 1) * (w - k + 1);
  fc_ = Linear(store_, "fc", flat, d, rng);
}

ad::Var ScoreModel::conve_hidden(ad::Graph& g, std::span<const int> heads,
                                 std::span<const int> relations, bool training,
                                 Rng& rng) const {
  const std::size_t n = heads.size(), d = config_.dim;
  const std::size_t h = config_.conv_height, w = d / h;
  ad::Var x = ad::concat({ad::lookup(g, *entity_, heads),
                          ad::lookup(g, *relation_, relations)});
  x = ad::reshape(x, {n, 1, 2 * h, w});
  auto bn = [&](ad::Var v, int i) {
    return ad::batch_norm(v, g.parameter(*bn_gamma_[i]),
                          g.parameter(*bn_beta_[i]), bn_[i], training);
  };
  x = ad::dropout(bn(x, 0), config_.input_dropout, rng, training);
  x = ad::conv2d(x, g.parameter(*filters_), g.parameter(*conv_bias_));
  x = ad::dropout(ad::relu(bn(x, 1)), config_.feature_dropout, rng, training);
  x = ad::reshape(x, {n, x.value().size() / n});
  x = fc_(g, x);
  x = ad::dropout(x, config_.hidden_dropout, rng, training);
  return ad::relu(bn(x, 2));
}

ad::Var ScoreModel::forward_all_tails(ad::Graph& g, std::span<const int> heads,
                                      std::span<const int> relations,
                                      bool training, Rng& rng) {
  switch (config_.kind) {
    case KgeKind::kDistMult: {
      ad::Var hr = ad::mul(ad::lookup(g, *entity_, heads),
                           ad::lookup(g, *relation_, relations));
      return ad::matmul_transposed(hr, g.parameter(*entity_));
    }
    case KgeKind::kConvE: {
      ad::Var hidden = conve_hidden(g, heads, relations, training, rng);
      ad::Var bias = ad::reshape(g.parameter(*entity_bias_),
                                 {1, static_cast<std::size_t>(entities_)});
      return ad::add_bias(ad::matmul_transposed(hidden, g.parameter(*entity_)),
                          bias);
    }
    case KgeKind::kTransE:
      break;
  }
  throw std::logic_error("TransE is trained with sampled negatives, not 1-vs-all");
}

ad::Var ScoreModel::forward_triples(ad::Graph& g, std::span<const int> heads,
                                    std::span<const int> relations,
                                    std::span<const int> tails) {
  ad::Var h = ad::lookup(g, *entity_, heads);
  ad::Var r = ad::lookup(g, *relation_, relations);
  ad::Var t = ad::lookup(g, *entity_, tails);
  switch (config_.kind) {
    case KgeKind::kTransE:
      return ad::scale(ad::row_sum(ad::abs(ad::sub(ad::add(h, r), t))), -1.0);
    case KgeKind::kDistMult:
      return ad::row_sum(ad::mul(ad::mul(h, r), t));
    case KgeKind::kConvE: {
      Rng unused(0);
      ad::Var hidden = conve_hidden(g, heads, relations, false, unused);
      return ad::add(ad::group_dot(t, hidden, 1),
                     ad::lookup(g, *entity_bias_, tails));
    }
  }
  throw std::logic_error("unknown KGE kind");
}

Tensor ScoreModel::tail_logits(std::span<const int> heads,
                               std::span<const int> relations) const {
  const std::size_t n = heads.size(), d = config_.dim;
  const auto ne = static_cast<std::size_t>(entities_);
  if (config_.kind == KgeKind::kTransE) {
    Tensor out({n, ne});
    const Tensor& E = entity_->value;
    const Tensor& R = relation_->value;
    std::vector<double> q(d);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < d; ++j)
        q[j] = E.at(heads[i], j) + R.at(relations[i], j);
      for (std::size_t e = 0; e < ne; ++e) {
        const double* t = E.data() + e * d;
        double dist = 0.0;
        for (std::size_t j = 0; j < d; ++j) dist += std::fabs(q[j] - t[j]);
        out.at(i, e) = -dist;
      }
    }
    return out;
  }
  ad::Graph g(false);
  Rng unused(0);
  auto* self = const_cast<ScoreModel*>(this);
  return self->forward_all_tails(g, heads, relations, false, unused).value();
}

double ScoreModel::raw_score(int head, int relation, int tail) const {
  ad::Graph g(false);
  const int h[] = {head}, r[] = {relation}, t[] = {tail};
  auto* self = const_cast<ScoreModel*>(this);
  return self->forward_triples(g, h, r, t).value()[0];
}

double ScoreModel::score(int head, int relation, int tail) const {
  return sigmoid(raw_score(head, relation, tail));
}

std::vector<double> ScoreModel::tail_distribution(int head,
                                                  int relation) const {
  const int h[] = {head}, r[] = {relation};
  Tensor logits = tail_logits(h, r);
  return softmax_vector(logits.values());
}

std::vector<ScoredEntity> ScoreModel::top_k_tails(int head, int relation,
                                                  std::size_t k) const {
  auto p = tail_distribution(head, relation);
  std::vector<int> order(p.size());
  std::iota(order.begin(), order.end(), 0);
  k = std::min(k, order.size());
  std::partial_sort(order.begin(), order.begin() + static_cast<long>(k),
                    order.end(), [&](int a, int b) {
                      return p[a] != p[b] ? p[a] > p[b] : a < b;
                    });
  std::vector<ScoredEntity> out;
  for (std::size_t i = 0; i < k; ++i) out.emplace_back(order[i], p[order[i]]);
  return out;
}

ScoreModel::State ScoreModel::snapshot() const {
  State s;
  for (const Parameter* p : store_.all()) s.values.push_back(p->value);
  for (const auto& b : bn_) s.norms.push_back(b);
  return s;
}

void ScoreModel::restore(const State& state) {
  auto params = store_.all();
  for (std::size_t i = 0; i < params.size(); ++i)
    params[i]->value = state.values[i];
  for (std::size_t i = 0; i < 3; ++i) bn_[i] = state.norms[i];
}

void ScoreModel::save(const std::filesystem::path& dir,
                      std::int64_t step) const {
  std::vector<const Parameter*> params;
  for (const Parameter* p : store_.all()) params.push_back(p);
  std::vector<Parameter> stats;
  if (config_.kind == KgeKind::kConvE) {
    for (int i = 0; i < 3; ++i) {
      const auto& b = bn_[i];
      const std::size_t c = bn_gamma_[i]->value.size();
      auto fill = [&](const std::vector<double>& v, double dflt) {
        return v.size() == c ? Tensor({1, c}, v) : Tensor({1, c}, dflt);
      };
      stats.emplace_back("bn" + std::to_string(i) + ".running_mean",
                         fill(b.running_mean, 0.0));
      stats.emplace_back("bn" + std::to_string(i) + ".running_var",
                         fill(b.running_var, 1.0));
    }
  }
  for (const auto& p : stats) params.push_back(&p);
  CheckpointInfo info;
  info.seed = config_.seed;
  info.step = step;
  info.extra = {{"model", "kge"},
                {"config", config_.to_json()},
                {"entities", entities_},
                {"relations", relations_}};
  save_checkpoint(dir, params, info);
}

ScoreModel ScoreModel::load(const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw CheckpointError("no manifest.json in " + dir.string());
  const auto manifest = nlohmann::json::parse(in);
  const auto& extra = manifest.at("extra");
  if (extra.value("model", "") != "kge")
    throw CheckpointError(dir.string() + " does not hold a KGE checkpoint");
  ScoreModel model(KgeConfig::from_json(extra.at("config")),
                   extra.at("entities").get<int>(),
                   extra.at("relations").get<int>());
  std::vector<Parameter*> params = model.store_.all();
  std::vector<Parameter> stats;
  if (model.kind() == KgeKind::kConvE) {
    for (int i = 0; i < 3; ++i) {
      const std::size_t c = model.bn_gamma_[i]->value.size();
      stats.emplace_back("bn" + std::to_string(i) + ".running_mean",
                         Tensor({1, c}));
      stats.emplace_back("bn" + std::to_string(i) + ".running_var",
                         Tensor({1, c}));
    }
  }
  for (auto& p : stats) params.push_back(&p);
  load_checkpoint(dir, params);
  for (std::size_t i = 0; i < stats.size(); i += 2) {
    auto& b = model.bn_[i / 2];
    auto mv = stats[i].value.values();
    auto vv = stats[i + 1].value.values();
    b.running_mean.assign(mv.begin(), mv.end());
    b.running_var.assign(vv.begin(), vv.end());
  }
  return model;
}

double kge_filtered_mrr(const ScoreModel& model, const KnowledgeGraph& kg,
                        std::span<const Triple> triples) {
  if (triples.empty()) return 0.0;
  constexpr std::size_t kChunk = 256;
  double total = 0.0;
  for (std::size_t start = 0; start < triples.size(); start += kChunk) {
    const std::size_t end = std::min(triples.size(), start + kChunk);
    std::vector<int> heads, rels;
    for (std::size_t i = start; i < end; ++i) {
      heads.push_back(triples[i].head);
      rels.push_back(triples[i].relation);
    }
    Tensor logits = model.tail_logits(heads, rels);
    for (std::size_t i = start; i < end; ++i) {
      const auto& t = triples[i];
      auto row = logits.row(i - start);
      auto known = kg.filter_candidates(t.head, t.relation);
      const double gold = row[t.tail];
      std::size_t rank = 1;
      for (std::size_t e = 0; e < row.size(); ++e) {
        const int ei = static_cast<int>(e);
        if (ei == t.tail) continue;
        if (std::binary_search(known.begin(), known.end(), ei)) continue;
        if (row[e] > gold || (row[e] == gold && ei < t.tail)) ++rank;
      }
      total += 1.0 / static_cast<double>(rank);
    }
  }
  return total / static_cast<double>(triples.size());
}

namespace {

void check_finite(double loss, std::size_t epoch, std::size_t batch,
                  const KgeConfig& config) {
  if (!std::isfinite(loss)) {
    throw DivergenceError("train_kge(" + kge_kind_name(config.kind) +
                          "): loss is " + std::to_string(loss) + " at epoch " +
                          std::to_string(epoch) + ", batch " +
                          std::to_string(batch) + " (lr " +
                          std::to_string(config.lr) + ")");
  }
}

double train_one_vs_all_epoch(ScoreModel& model, const KgeConfig& config,
                              const std::vector<std::pair<int, int>>& pairs,
                              const std::map<std::pair<int, int>,
                                             std::vector<int>>& tails,
                              Adam& adam, Rng& rng, std::size_t epoch) {
  std::vector<std::size_t> order(pairs.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  const auto ne = static_cast<std::size_t>(model.entity_count());
  const double eps = config.label_smoothing;
  double total = 0.0;
  std::size_t batches = 0;
  for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
    const std::size_t end = std::min(order.size(), start + config.batch_size);
    std::vector<int> heads, rels;
    Tensor targets({end - start, ne}, eps / static_cast<double>(ne));
    for (std::size_t i = start; i < end; ++i) {
      const auto& p = pairs[order[i]];
      heads.push_back(p.first);
      rels.push_back(p.second);
      for (int t : tails.at(p))
        targets.at(i - start, t) = 1.0 - eps + eps / static_cast<double>(ne);
    }
    ad::Graph g;
    ad::Var logits = model.forward_all_tails(g, heads, rels, true, rng);
    ad::Var loss = ad::bce_with_logits(logits, targets);
    check_finite(loss.value()[0], epoch, batches, config);
    adam.zero_grad();
    g.backward(loss);
    adam.step();
    total += loss.value()[0];
    ++batches;
  }
  return batches ? total / static_cast<double>(batches) : 0.0;
}

double train_margin_epoch(ScoreModel& model, const KgeConfig& config,
                          std::vector<Triple>& triples, Adam& adam, Rng& rng,
                          std::size_t epoch) {
  std::shuffle(triples.begin(), triples.end(), rng);
  std::uniform_int_distribution<int> pick_entity(0, model.entity_count() - 1);
  double total = 0.0;
  std::size_t batches = 0;
  const std::size_t negs = std::max<std::size_t>(1, config.negatives);
  for (std::size_t start = 0; start < triples.size();
       start += config.batch_size) {
    const std::size_t end = std::min(triples.size(), start + config.batch_size);
    std::vector<int> h, r, t, tn;
    for (std::size_t i = start; i < end; ++i)
      for (std::size_t k = 0; k < negs; ++k) {
        h.push_back(triples[i].head);
        r.push_back(triples[i].relation);
        t.push_back(triples[i].tail);
        tn.push_back(pick_entity(rng));
      }
    ad::Graph g;
    ad::Var pos = model.forward_triples(g, h, r, t);
    ad::Var neg = model.forward_triples(g, h, r, tn);
    ad::Var margin = g.constant(Tensor({h.size(), 1}, config.margin));
    ad::Var loss = ad::mean(ad::relu(ad::add(margin, ad::sub(neg, pos))));
    check_finite(loss.value()[0], epoch, batches, config);
    adam.zero_grad();
    g.backward(loss);
    adam.step();
    total += loss.value()[0];
    ++batches;
  }
  return batches ? total / static_cast<double>(batches) : 0.0;
}

}  // namespace

ScoreModel train_kge(const KnowledgeGraph& kg, const KgeConfig& config,
                     KgeTrainReport* report) {
  ScoreModel model(config, kg.entity_count(), kg.relation_count());
  Rng rng(config.seed + 0x9e3779b97f4a7c15ULL);
  Adam adam(model.parameters().all(), AdamConfig{.lr = config.lr});

  std::vector<Triple> triples;
  for (const auto& t : kg.train()) {
    triples.push_back(t);
    triples.push_back({t.tail, kg.vocab().inverse_of(t.relation), t.head});
  }
  std::map<std::pair<int, int>, std::vector<int>> tails;
  for (const auto& t : triples) tails[{t.head, t.relation}].push_back(t.tail);
  std::vector<std::pair<int, int>> pairs;
  for (const auto& [key, v] : tails) pairs.push_back(key);

  KgeTrainReport local;
  KgeTrainReport& rep = report ? *report : local;
  rep = KgeTrainReport{};
  const bool select = !kg.valid().empty() && config.eval_every > 0;
  ScoreModel::State best;
  std::size_t stale = 0;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    if (triples.empty()) break;
    const double loss =
        config.kind == KgeKind::kTransE
            ? train_margin_epoch(model, config, triples, adam, rng, epoch)
            : train_one_vs_all_epoch(model, config, pairs, tails, adam, rng,
                                     epoch);
    rep.epoch_loss.push_back(loss);
    rep.epochs_run = epoch + 1;
    const bool last = epoch + 1 == config.epochs;
    if (select && ((epoch + 1) % config.eval_every == 0 || last)) {
      const double mrr = kge_filtered_mrr(model, kg, kg.valid());
      log_info("kge epoch " + std::to_string(epoch + 1) + " loss " +
               std::to_string(loss) + " valid MRR " + std::to_string(mrr));
      if (rep.best_epoch < 0 || mrr > rep.best_valid_mrr) {
        rep.best_valid_mrr = mrr;
        rep.best_epoch = static_cast<int>(epoch + 1);
        best = model.snapshot();
        stale = 0;
      } else if (++stale >= config.patience) {
        break;
      }
    }
  }
  if (select && rep.best_epoch >= 0) model.restore(best);
  return model;
}

TopTailCache::TopTailCache(const ScoreModel& model, std::size_t k)
    : model_(model), k_(k) {}

std::vector<ScoredEntity> TopTailCache::get(int head, int relation) {
  const auto key = cache_key(head, relation);
  std::lock_guard<std::mutex> lock(mutex_);
  auto it = cache_.find(key);
  if (it != cache_.end()) return it->second;
  auto top = model_.top_k_tails(head, relation, k_);
  cache_.emplace(key, top);
  return top;
}

}  // namespace dackgr
