#ifndef DACKGR_KG_STORE_H_
#define DACKGR_KG_STORE_H_

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "json.hpp"

namespace dackgr {

class ParseError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Triple {
  int head = 0;
  int relation = 0;
  int tail = 0;
  friend auto operator<=>(const Triple&, const Triple&) = default;
};

struct NamedTriple {
  std::string head;
  std::string relation;
  std::string tail;
  friend auto operator<=>(const NamedTriple&, const NamedTriple&) = default;
};

// Column order of a triple file.
enum class TripleFormat { kHeadRelationTail, kHeadTailRelation };

std::vector<NamedTriple> read_triples(const std::filesystem::path& path,
                                      TripleFormat format =
                                          TripleFormat::kHeadRelationTail);
void write_triples(const std::filesystem::path& path,
                   std::span<const NamedTriple> triples);

// Entity and relation vocabularies. Base relations occupy ids [0, R); the
// inverse of base relation r is r + R; the self-loop relation is 2R.
class Vocab {
 public:
  int entity_count() const { return static_cast<int>(entities_.size()); }
  int base_relation_count() const {
    return static_cast<int>(relations_.size());
  }
  // Base + inverse + self-loop.
  int relation_count() const { return 2 * base_relation_count() + 1; }
  int loop_relation() const { return 2 * base_relation_count(); }
  bool is_base(int r) const { return r >= 0 && r < base_relation_count(); }
  bool is_inverse(int r) const {
    return r >= base_relation_count() && r < loop_relation();
  }
  int inverse_of(int r) const;

  const std::string& entity_name(int e) const { return entities_.at(e); }
  std::string relation_name(int r) const;
  std::optional<int> entity_id(std::string_view name) const;
  std::optional<int> relation_id(std::string_view name) const;

  // Returns the existing id or assigns the next one.
  int intern_entity(const std::string& name);
  int intern_relation(const std::string& name);

  void write_tsv(const std::filesystem::path& entities,
                 const std::filesystem::path& relations) const;

  static constexpr std::string_view kInverseSuffix = "_inv";
  static constexpr std::string_view kLoopName = "LOOP";

 private:
  std::vector<std::string> entities_;
  std::vector<std::string> relations_;
  std::unordered_map<std::string, int> entity_ids_;
  std::unordered_map<std::string, int> relation_ids_;
};

enum class ActionOrigin : std::uint8_t { kGraph, kSelfLoop, kCompletion };

const char* origin_name(ActionOrigin origin);

struct Action {
  int relation = 0;
  int entity = 0;
  ActionOrigin origin = ActionOrigin::kGraph;
  friend bool operator==(const Action&, const Action&) = default;
};

using ActionSpace = std::vector<Action>;

struct SparsityReport {
  std::size_t entities = 0;
  std::size_t relations = 0;
  std::size_t facts = 0;
  double mean_out_degree = 0.0;
  double median_out_degree = 0.0;

  nlohmann::json to_json() const;
};

struct GraphOptions {
  std::size_t max_out_degree = 200;
  // When set, entities above max_out_degree keep the edges whose targets
  // have the largest out-degree.
  bool truncate = false;
};

// Immutable after construction. Adjacency holds train facts plus their
// inverses, sorted by (relation, entity).
class KnowledgeGraph {
 public:
  static KnowledgeGraph load(const std::filesystem::path& train,
                             const std::filesystem::path& valid,
                             const std::filesystem::path& test,
                             TripleFormat format =
                                 TripleFormat::kHeadRelationTail,
                             GraphOptions options = {});
  // Loads train.tsv / valid.tsv / test.tsv from a directory.
  static KnowledgeGraph load_dir(const std::filesystem::path& dir,
                                 TripleFormat format =
                                     TripleFormat::kHeadRelationTail,
                                 GraphOptions options = {});
  static KnowledgeGraph build(std::span<const NamedTriple> train,
                              std::span<const NamedTriple> valid,
                              std::span<const NamedTriple> test,
                              GraphOptions options = {});

  const Vocab& vocab() const { return vocab_; }
  int entity_count() const { return vocab_.entity_count(); }
  int relation_count() const { return vocab_.relation_count(); }

  std::span<const Triple> train() const { return train_; }
  std::span<const Triple> valid() const { return valid_; }
  std::span<const Triple> test() const { return test_; }

  // Graph edges only, without the self-loop.
  std::span<const Action> adjacency(int entity) const;
  // Graph edges followed by the mandatory (LOOP, entity) action.
  ActionSpace actions_of(int entity) const;
  // True for train facts and their inverses.
  bool has_edge(int head, int relation, int tail) const;
  // Every tail t with (head, relation, t) in any split, ascending.
  std::span<const int> filter_candidates(int head, int relation) const;

  SparsityReport sparsity() const;

 private:
  static std::uint64_t pair_key(int head, int relation);
  static std::uint64_t triple_key(int head, int relation, int tail);

  Vocab vocab_;
  std::vector<Triple> train_, valid_, test_;
  std::vector<std::vector<Action>> adjacency_;
  std::unordered_set<std::uint64_t> edges_;
  std::unordered_map<std::uint64_t, std::vector<int>> known_tails_;
};

}  // namespace dackgr

#endif  // DACKGR_KG_STORE_H_
