#include "dackgr/kg_store.h"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include "dackgr/log.h"

namespace dackgr {
namespace {

std::vector<std::string_view> split_tabs(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find('\t', start);
    if (pos == std::string_view::npos) {
      out.push_back(line.substr(start));
      break;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
  return out;
}

constexpr int kMaxEntities = 1 << 24;
constexpr int kMaxRelations = (1 << 15) - 1;

}  // namespace

std::vector<NamedTriple> read_triples(const std::filesystem::path& path,
                                      TripleFormat format) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open " + path.string());
  std::vector<NamedTriple> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto fields = split_tabs(line);
    if (fields.size() != 3 ||
        std::any_of(fields.begin(), fields.end(),
                    [](std::string_view f) { return f.empty(); })) {
      throw ParseError(path.string() + ":" + std::to_string(lineno) +
                       ": expected three non-empty tab-separated fields");
    }
    NamedTriple t;
    t.head = fields[0];
    if (format == TripleFormat::kHeadRelationTail) {
      t.relation = fields[1];
      t.tail = fields[2];
    } else {
      t.tail = fields[1];
      t.relation = fields[2];
    }
    out.push_back(std::move(t));
  }
  return out;
}

void write_triples(const std::filesystem::path& path,
                   std::span<const NamedTriple> triples) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (const auto& t : triples)
    out << t.head << '\t' << t.relation << '\t' << t.tail << '\n';
}

int Vocab::inverse_of(int r) const {
  const int n = base_relation_count();
  if (r < n) return r + n;
  if (r < 2 * n) return r - n;
  return r;
}

std::string Vocab::relation_name(int r) const {
  const int n = base_relation_count();
  if (r >= 0 && r < n) return relations_[r];
  if (r >= n && r < 2 * n)
    return relations_[r - n] + std::string(kInverseSuffix);
  if (r == 2 * n) return std::string(kLoopName);
  throw std::out_of_range("relation id " + std::to_string(r));
}

std::optional<int> Vocab::entity_id(std::string_view name) const {
  auto it = entity_ids_.find(std::string(name));
  if (it == entity_ids_.end()) return std::nullopt;
  return it->second;
}

std::optional<int> Vocab::relation_id(std::string_view name) const {
  if (auto it = relation_ids_.find(std::string(name));
      it != relation_ids_.end())
    return it->second;
  if (name == kLoopName) return loop_relation();
  if (name.size() > kInverseSuffix.size() && name.ends_with(kInverseSuffix)) {
    auto base = name.substr(0, name.size() - kInverseSuffix.size());
    if (auto it = relation_ids_.find(std::string(base));
        it != relation_ids_.end())
      return inverse_of(it->second);
  }
  return std::nullopt;
}

int Vocab::intern_entity(const std::string& name) {
  auto [it, inserted] =
      entity_ids_.emplace(name, static_cast<int>(entities_.size()));
  if (inserted) {
    if (entities_.size() >= static_cast<std::size_t>(kMaxEntities))
      throw ParseError("too many entities");
    entities_.push_back(name);
  }
  return it->second;
}

int Vocab::intern_relation(const std::string& name) {
  auto [it, inserted] =
      relation_ids_.emplace(name, static_cast<int>(relations_.size()));
  if (inserted) {
    if (relations_.size() >= static_cast<std::size_t>(kMaxRelations))
      throw ParseError("too many relations");
    relations_.push_back(name);
  }
  return it->second;
}

void Vocab::write_tsv(const std::filesystem::path& entities,
                      const std::filesystem::path& relations) const {
  std::ofstream e(entities);
  if (!e) throw std::runtime_error("cannot write " + entities.string());
  for (int i = 0; i < entity_count(); ++i) e << entities_[i] << '\t' << i << '\n';
  std::ofstream r(relations);
  if (!r) throw std::runtime_error("cannot write " + relations.string());
  for (int i = 0; i < relation_count(); ++i)
    r << relation_name(i) << '\t' << i << '\n';
}

const char* origin_name(ActionOrigin origin) {
  switch (origin) {
    case ActionOrigin::kGraph:
      return "graph";
    case ActionOrigin::kSelfLoop:
      return "self-loop";
    case ActionOrigin::kCompletion:
      return "completion";
  }
  return "?";
}

nlohmann::json SparsityReport::to_json() const {
  return {{"entities", entities},
          {"relations", relations},
          {"facts", facts},
          {"mean_out_degree", mean_out_degree},
          {"median_out_degree", median_out_degree}};
}

std::uint64_t KnowledgeGraph::pair_key(int head, int relation) {
  return (static_cast<std::uint64_t>(head) << 20) |
         static_cast<std::uint64_t>(relation);
}

std::uint64_t KnowledgeGraph::triple_key(int head, int relation, int tail) {
  return (static_cast<std::uint64_t>(head) << 40) |
         (static_cast<std::uint64_t>(relation) << 24) |
         static_cast<std::uint64_t>(tail);
}

KnowledgeGraph KnowledgeGraph::load(const std::filesystem::path& train,
                                    const std::filesystem::path& valid,
                                    const std::filesystem::path& test,
                                    TripleFormat format,
                                    GraphOptions options) {
  auto tr = read_triples(train, format);
  auto va = read_triples(valid, format);
  auto te = read_triples(test, format);
  return build(tr, va, te, options);
}

KnowledgeGraph KnowledgeGraph::load_dir(const std::filesystem::path& dir,
                                        TripleFormat format,
                                        GraphOptions options) {
  return load(dir / "train.tsv", dir / "valid.tsv", dir / "test.tsv", format,
              options);
}

KnowledgeGraph KnowledgeGraph::build(std::span<const NamedTriple> train,
                                     std::span<const NamedTriple> valid,
                                     std::span<const NamedTriple> test,
                                     GraphOptions options) {
  KnowledgeGraph kg;
  for (auto split : {train, valid, test})
    for (const auto& t : split) {
      kg.vocab_.intern_entity(t.head);
      kg.vocab_.intern_relation(t.relation);
      kg.vocab_.intern_entity(t.tail);
    }
  const int nrel = kg.vocab_.base_relation_count();
  for (int r = 0; r < nrel; ++r) {
    const std::string& name = kg.vocab_.relation_name(r);
    const bool reserved =
        name == Vocab::kLoopName ||
        (name.ends_with(Vocab::kInverseSuffix) &&
         kg.vocab_.relation_id(
             name.substr(0, name.size() - Vocab::kInverseSuffix.size())));
    if (reserved)
      throw ParseError("relation name '" + name +
                       "' collides with a generated relation name");
  }

  std::set<Triple> seen_train;
  auto encode = [&](std::span<const NamedTriple> in, std::vector<Triple>& out,
                    const char* split, bool check_train) {
    std::set<Triple> seen;
    std::size_t dropped = 0;
    for (const auto& nt : in) {
      Triple t{*kg.vocab_.entity_id(nt.head), *kg.vocab_.relation_id(nt.relation),
               *kg.vocab_.entity_id(nt.tail)};
      if (!seen.insert(t).second || (check_train && seen_train.count(t))) {
        ++dropped;
        continue;
      }
      out.push_back(t);
    }
    if (dropped)
      log_warning(std::string("dropped ") + std::to_string(dropped) +
                  " duplicate triple(s) from " + split);
    return seen;
  };
  seen_train = encode(train, kg.train_, "train", false);
  encode(valid, kg.valid_, "valid", true);
  encode(test, kg.test_, "test", true);

  const int ne = kg.vocab_.entity_count();
  kg.adjacency_.assign(ne, {});
  for (const auto& t : kg.train_) {
    kg.adjacency_[t.head].push_back({t.relation, t.tail, ActionOrigin::kGraph});
    kg.adjacency_[t.tail].push_back(
        {kg.vocab_.inverse_of(t.relation), t.head, ActionOrigin::kGraph});
  }
  auto by_key = [](const Action& a, const Action& b) {
    return std::tie(a.relation, a.entity) < std::tie(b.relation, b.entity);
  };
  for (auto& adj : kg.adjacency_) std::sort(adj.begin(), adj.end(), by_key);

  if (options.truncate) {
    std::vector<std::size_t> degree(ne);
    for (int e = 0; e < ne; ++e) degree[e] = kg.adjacency_[e].size();
    for (auto& adj : kg.adjacency_) {
      if (adj.size() <= options.max_out_degree) continue;
      std::stable_sort(adj.begin(), adj.end(),
                       [&](const Action& a, const Action& b) {
                         return degree[a.entity] > degree[b.entity];
                       });
      adj.resize(options.max_out_degree);
      std::sort(adj.begin(), adj.end(), by_key);
    }
  }
  for (int e = 0; e < ne; ++e)
    for (const auto& a : kg.adjacency_[e])
      kg.edges_.insert(triple_key(e, a.relation, a.entity));

  for (const auto* split : {&kg.train_, &kg.valid_, &kg.test_})
    for (const auto& t : *split)
      kg.known_tails_[pair_key(t.head, t.relation)].push_back(t.tail);
  for (auto& [key, tails] : kg.known_tails_) {
    std::sort(tails.begin(), tails.end());
    tails.erase(std::unique(tails.begin(), tails.end()), tails.end());
  }
  return kg;
}

std::span<const Action> KnowledgeGraph::adjacency(int entity) const {
  return adjacency_.at(entity);
}

ActionSpace KnowledgeGraph::actions_of(int entity) const {
  const auto& adj = adjacency_.at(entity);
  ActionSpace out(adj.begin(), adj.end());
  out.push_back({vocab_.loop_relation(), entity, ActionOrigin::kSelfLoop});
  return out;
}

bool KnowledgeGraph::has_edge(int head, int relation, int tail) const {
  return edges_.count(triple_key(head, relation, tail)) > 0;
}

std::span<const int> KnowledgeGraph::filter_candidates(int head,
                                                       int relation) const {
  auto it = known_tails_.find(pair_key(head, relation));
  if (it == known_tails_.end()) return {};
  return it->second;
}

SparsityReport KnowledgeGraph::sparsity() const {
  SparsityReport r;
  r.entities = static_cast<std::size_t>(vocab_.entity_count());
  r.relations = static_cast<std::size_t>(vocab_.base_relation_count());
  r.facts = train_.size();
  if (r.entities == 0) return r;
  std::vector<std::size_t> degree(r.entities, 0);
  for (const auto& t : train_) ++degree[t.head];
  r.mean_out_degree =
      static_cast<double>(r.facts) / static_cast<double>(r.entities);
  std::sort(degree.begin(), degree.end());
  const std::size_t n = degree.size();
  r.median_out_degree =
      n % 2 ? static_cast<double>(degree[n / 2])
            : 0.5 * static_cast<double>(degree[n / 2 - 1] + degree[n / 2]);
  return r;
}

}  // namespace dackgr
