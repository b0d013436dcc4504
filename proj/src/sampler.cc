#include "dackgr/sampler.h"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <set>
#include <stdexcept>
#include <unordered_set>

namespace dackgr {

std::vector<NamedTriple> retain_fraction(std::span<const NamedTriple> triples,
                                         double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction <= 1.0))
    throw std::invalid_argument("fraction must lie in (0, 1]");
  const auto n = static_cast<std::size_t>(
      std::ceil(fraction * static_cast<double>(triples.size()) - 1e-9));
  if (n == 0) throw std::invalid_argument("sample is empty");
  std::vector<std::size_t> order(triples.size());
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  order.resize(n);
  std::sort(order.begin(), order.end());
  std::vector<NamedTriple> out;
  out.reserve(n);
  for (std::size_t i : order) out.push_back(triples[i]);
  return out;
}

std::vector<NamedTriple> sample_by_entities(std::span<const NamedTriple> triples,
                                            std::span<const std::string> seeds,
                                            std::size_t expansion_rounds) {
  if (seeds.empty()) throw std::invalid_argument("entity seed set is empty");
  std::unordered_set<std::string> keep(seeds.begin(), seeds.end());
  for (std::size_t round = 0; round < expansion_rounds; ++round) {
    std::vector<std::string> added;
    for (const auto& t : triples) {
      if (keep.count(t.head) && !keep.count(t.tail)) added.push_back(t.tail);
      if (keep.count(t.tail) && !keep.count(t.head)) added.push_back(t.head);
    }
    if (added.empty()) break;
    keep.insert(added.begin(), added.end());
  }
  std::vector<NamedTriple> out;
  for (const auto& t : triples)
    if (keep.count(t.head) || keep.count(t.tail)) out.push_back(t);
  return out;
}

std::vector<std::string> random_entities(std::span<const NamedTriple> triples,
                                         std::size_t count, std::uint64_t seed) {
  std::set<std::string> all;
  for (const auto& t : triples) {
    all.insert(t.head);
    all.insert(t.tail);
  }
  std::vector<std::string> pool(all.begin(), all.end());
  std::mt19937_64 rng(seed);
  std::shuffle(pool.begin(), pool.end(), rng);
  pool.resize(std::min(count, pool.size()));
  return pool;
}

Splits resplit(std::span<const NamedTriple> triples, SplitRatios ratios,
               std::uint64_t seed, std::size_t max_attempts) {
  if (ratios.train < 0 || ratios.valid < 0 || ratios.test < 0 ||
      std::abs(ratios.train + ratios.valid + ratios.test - 1.0) > 1e-6)
    throw std::invalid_argument("split ratios must be non-negative and sum to 1");
  const double n = static_cast<double>(triples.size());
  const auto n_valid = static_cast<std::size_t>(std::floor(ratios.valid * n));
  const auto n_test = static_cast<std::size_t>(std::floor(ratios.test * n));
  std::mt19937_64 rng(seed);
  for (std::size_t attempt = 0; attempt < max_attempts; ++attempt) {
    std::vector<NamedTriple> pool(triples.begin(), triples.end());
    std::shuffle(pool.begin(), pool.end(), rng);
    Splits s;
    s.test.assign(pool.begin(), pool.begin() + n_test);
    s.valid.assign(pool.begin() + n_test, pool.begin() + n_test + n_valid);
    s.train.assign(pool.begin() + n_test + n_valid, pool.end());
    std::unordered_set<std::string> entities, relations;
    for (const auto& t : s.train) {
      entities.insert(t.head);
      entities.insert(t.tail);
      relations.insert(t.relation);
    }
    // Moving a triple only widens coverage, so one pass in a fixed order is
    // enough.
    auto cover = [&](std::vector<NamedTriple>& split) {
      std::vector<NamedTriple> kept;
      for (auto& t : split) {
        if (entities.count(t.head) && entities.count(t.tail) &&
            relations.count(t.relation)) {
          kept.push_back(std::move(t));
          continue;
        }
        entities.insert(t.head);
        entities.insert(t.tail);
        relations.insert(t.relation);
        s.train.push_back(std::move(t));
        ++s.reassigned;
      }
      split = std::move(kept);
    };
    cover(s.valid);
    cover(s.test);
    if ((n_valid == 0 || !s.valid.empty()) && (n_test == 0 || !s.test.empty()))
      return s;
  }
  throw std::runtime_error("could not draw entity-covered splits in " +
                           std::to_string(max_attempts) + " attempts");
}

SparsityReport sparsity_of(std::span<const NamedTriple> triples) {
  return KnowledgeGraph::build(triples, {}, {}).sparsity();
}

}  // namespace dackgr
