#include "dackgr/kg_store.h"

#include <gtest/gtest.h>

#include "support/temp_dir.h"

namespace dackgr {
namespace {

KnowledgeGraph toy() {
  std::vector<NamedTriple> train = {
      {"a", "r", "b"}, {"b", "r", "c"}, {"a", "s", "c"}};
  return KnowledgeGraph::build(train, {}, {});
}

TEST(KgStoreTest, ToyGraphActions) {
  auto kg = toy();
  const auto& v = kg.vocab();
  const int a = *v.entity_id("a"), b = *v.entity_id("b"), c = *v.entity_id("c");
  const int r = *v.relation_id("r"), s = *v.relation_id("s");
  auto acts = kg.actions_of(a);
  ASSERT_EQ(acts.size(), 3u);
  EXPECT_EQ(acts[0], (Action{r, b, ActionOrigin::kGraph}));
  EXPECT_EQ(acts[1], (Action{s, c, ActionOrigin::kGraph}));
  EXPECT_EQ(acts[2], (Action{v.loop_relation(), a, ActionOrigin::kSelfLoop}));

  auto from_c = kg.adjacency(c);
  ASSERT_EQ(from_c.size(), 2u);
  for (const auto& act : from_c) EXPECT_TRUE(v.is_inverse(act.relation));
  EXPECT_TRUE(kg.has_edge(c, v.inverse_of(s), a));
  EXPECT_FALSE(kg.has_edge(c, s, a));

  auto sp = kg.sparsity();
  EXPECT_EQ(sp.entities, 3u);
  EXPECT_EQ(sp.facts, 3u);
  EXPECT_DOUBLE_EQ(sp.mean_out_degree, 1.0);
  EXPECT_DOUBLE_EQ(sp.median_out_degree, 1.0);

  auto filt = kg.filter_candidates(a, r);
  ASSERT_EQ(filt.size(), 1u);
  EXPECT_EQ(filt[0], b);
}

TEST(KgStoreTest, RelationNaming) {
  auto kg = toy();
  const auto& v = kg.vocab();
  EXPECT_EQ(v.base_relation_count(), 2);
  EXPECT_EQ(v.relation_count(), 5);
  EXPECT_EQ(v.relation_name(v.inverse_of(0)), v.relation_name(0) + "_inv");
  EXPECT_EQ(v.relation_name(v.loop_relation()), "LOOP");
  EXPECT_EQ(*v.relation_id("r_inv"), v.inverse_of(*v.relation_id("r")));
  EXPECT_EQ(v.inverse_of(v.inverse_of(1)), 1);
}

TEST(KgStoreTest, FilterCoversAllSplits) {
  std::vector<NamedTriple> train = {{"a", "r", "b"}, {"b", "r", "c"}};
  std::vector<NamedTriple> valid = {{"a", "r", "c"}};
  std::vector<NamedTriple> test = {{"a", "r", "d"}, {"a", "r", "b"}};
  auto kg = KnowledgeGraph::build(train, valid, test);
  EXPECT_EQ(kg.test().size(), 1u);  // duplicate of a train fact dropped
  const auto& v = kg.vocab();
  auto f = kg.filter_candidates(*v.entity_id("a"), *v.relation_id("r"));
  EXPECT_EQ(f.size(), 3u);
  EXPECT_TRUE(std::is_sorted(f.begin(), f.end()));
  // Held-out facts are not traversable.
  EXPECT_FALSE(kg.has_edge(*v.entity_id("a"), *v.relation_id("r"),
                           *v.entity_id("c")));
}

TEST(KgStoreTest, EmptyFilesGiveEmptyGraph) {
  testing::TempDir dir;
  dir.write("train.tsv", "");
  dir.write("valid.tsv", "");
  dir.write("test.tsv", "");
  auto kg = KnowledgeGraph::load_dir(dir.path());
  EXPECT_EQ(kg.entity_count(), 0);
  EXPECT_EQ(kg.sparsity().facts, 0u);
}

TEST(KgStoreTest, ParseErrorCarriesLineNumber) {
  testing::TempDir dir;
  auto p = dir.write("bad.tsv", "a\tr\tb\n\nb\tr\n");
  try {
    read_triples(p);
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find(":3:"), std::string::npos) << e.what();
  }
  auto q = dir.write("empty_field.tsv", "a\t\tb\n");
  EXPECT_THROW(read_triples(q), ParseError);
}

TEST(KgStoreTest, HeadTailRelationColumnOrder) {
  testing::TempDir dir;
  auto p = dir.write("htr.tsv", "a\tb\tr\n");
  auto t = read_triples(p, TripleFormat::kHeadTailRelation);
  ASSERT_EQ(t.size(), 1u);
  EXPECT_EQ(t[0].relation, "r");
  EXPECT_EQ(t[0].tail, "b");
}

TEST(KgStoreTest, ReservedRelationNamesAreRejected) {
  std::vector<NamedTriple> loop = {{"a", "LOOP", "b"}};
  EXPECT_THROW(KnowledgeGraph::build(loop, {}, {}), ParseError);
  std::vector<NamedTriple> inv = {{"a", "r", "b"}, {"a", "r_inv", "b"}};
  EXPECT_THROW(KnowledgeGraph::build(inv, {}, {}), ParseError);
}

TEST(KgStoreTest, LoadingIsDeterministic) {
  testing::TempDir dir;
  dir.write("train.tsv", "x\tp\ty\ny\tq\tz\nz\tp\tx\nx\tq\tz\n");
  dir.write("valid.tsv", "y\tp\tz\n");
  dir.write("test.tsv", "z\tq\ty\n");
  auto a = KnowledgeGraph::load_dir(dir.path());
  auto b = KnowledgeGraph::load_dir(dir.path());
  ASSERT_EQ(a.entity_count(), b.entity_count());
  for (int e = 0; e < a.entity_count(); ++e) {
    EXPECT_EQ(a.vocab().entity_name(e), b.vocab().entity_name(e));
    EXPECT_EQ(a.actions_of(e), b.actions_of(e));
  }
}

TEST(KgStoreTest, TruncationKeepsHighDegreeTargets) {
  std::vector<NamedTriple> train;
  for (int i = 0; i < 5; ++i)
    train.push_back({"hub", "r", "n" + std::to_string(i)});
  for (int j = 0; j < 3; ++j) train.push_back({"n4", "s", "m" + std::to_string(j)});
  GraphOptions opts;
  opts.max_out_degree = 2;
  opts.truncate = true;
  auto kg = KnowledgeGraph::build(train, {}, {}, opts);
  const auto& v = kg.vocab();
  auto adj = kg.adjacency(*v.entity_id("hub"));
  ASSERT_EQ(adj.size(), 2u);
  bool has_n4 = false;
  for (const auto& a : adj) has_n4 |= a.entity == *v.entity_id("n4");
  EXPECT_TRUE(has_n4);
}

}  // namespace
}  // namespace dackgr
