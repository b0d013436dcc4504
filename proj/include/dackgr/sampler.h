#ifndef DACKGR_SAMPLER_H_
#define DACKGR_SAMPLER_H_

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "dackgr/kg_store.h"

namespace dackgr {

// Uniform sample without replacement of ceil(fraction * |triples|) triples,
// kept in input order. Samples with the same seed are nested in fraction.
std::vector<NamedTriple> retain_fraction(std::span<const NamedTriple> triples,
                                         double fraction, std::uint64_t seed);

// Triples with at least one endpoint in the entity list. Each expansion round
// first adds every neighbour of the current list.
std::vector<NamedTriple> sample_by_entities(std::span<const NamedTriple> triples,
                                            std::span<const std::string> seeds,
                                            std::size_t expansion_rounds);

// `count` distinct entities drawn uniformly from the triples' endpoints.
std::vector<std::string> random_entities(std::span<const NamedTriple> triples,
                                         std::size_t count, std::uint64_t seed);

struct SplitRatios {
  double train = 0.8;
  double valid = 0.1;
  double test = 0.1;
};

struct Splits {
  std::vector<NamedTriple> train, valid, test;
  std::size_t reassigned = 0;  // held-out triples moved to train
};

// Shuffled disjoint splits. Valid and test triples whose entities or relation
// are missing from train move to train. A draw that leaves a requested
// held-out split empty is redrawn, up to `max_attempts` times.
Splits resplit(std::span<const NamedTriple> triples, SplitRatios ratios,
               std::uint64_t seed, std::size_t max_attempts = 100);

// Entity, relation and degree statistics of a triple set.
SparsityReport sparsity_of(std::span<const NamedTriple> triples);

}  // namespace dackgr

#endif  // DACKGR_SAMPLER_H_
