#include "dackgr/nn.h"

#include <gtest/gtest.h>

#include "dackgr/checkpoint.h"
#include "dackgr/optim.h"
#include "support/temp_dir.h"

namespace dackgr {
namespace {

TEST(AdamTest, ZeroGradientLeavesParametersUnchanged) {
  Parameter p("p", Tensor::matrix(1, 3, {1, -2, 3}));
  Adam adam({&p}, {});
  p.zero_grad();
  for (int i = 0; i < 3; ++i) adam.step();
  EXPECT_EQ(p.value[0], 1.0);
  EXPECT_EQ(p.value[1], -2.0);
  EXPECT_EQ(p.value[2], 3.0);
}

TEST(AdamTest, FirstStepMovesByLearningRate) {
  Parameter p("p", Tensor::matrix(1, 2, {0.5, 0.5}));
  AdamConfig cfg;
  cfg.lr = 0.01;
  Adam adam({&p}, cfg);
  p.grad.fill(1.0);
  adam.step();
  EXPECT_NEAR(p.value[0], 0.5 - 0.01, 1e-8);
  EXPECT_EQ(adam.steps(), 1);
}

TEST(AdamTest, MinimizesQuadratic) {
  Parameter p("p", Tensor::matrix(1, 1, {4.0}));
  AdamConfig cfg;
  cfg.lr = 0.1;
  Adam adam({&p}, cfg);
  for (int i = 0; i < 500; ++i) {
    adam.zero_grad();
    ad::Graph g;
    auto x = g.parameter(p);
    g.backward(ad::sum(ad::mul(x, x)));
    adam.step();
  }
  EXPECT_NEAR(p.value[0], 0.0, 1e-2);
}

TEST(ParameterStoreTest, RejectsDuplicateNames) {
  ParameterStore store;
  store.add("a", Tensor({1, 1}));
  EXPECT_THROW(store.add("a", Tensor({1, 1})), std::invalid_argument);
  EXPECT_NE(store.find("a"), nullptr);
  EXPECT_EQ(store.find("b"), nullptr);
}

TEST(NnTest, InitializationIsSeedDeterministic) {
  auto build = [](std::uint64_t seed) {
    Rng rng(seed);
    ParameterStore store;
    Lstm lstm(store, "lstm", 4, 5, 2, rng);
    Linear lin(store, "lin", 5, 3, rng);
    std::vector<double> out;
    for (auto* p : store.all())
      out.insert(out.end(), p->value.values().begin(), p->value.values().end());
    return out;
  };
  EXPECT_EQ(build(3), build(3));
  EXPECT_NE(build(3), build(4));
}

TEST(NnTest, StackedLstmShapes) {
  Rng rng(1);
  ParameterStore store;
  Lstm lstm(store, "lstm", 4, 5, 3, rng);
  ad::Graph g;
  auto s = lstm.zero_state(g, 2);
  s = lstm.step(g, g.constant(Tensor({2, 4}, 0.5)), s);
  EXPECT_EQ(s.h.size(), 3u);
  EXPECT_EQ(s.top().shape(), (Shape{2, 5}));
  const int rows[] = {1, 1, 0};
  auto gathered = Lstm::gather(s, rows);
  EXPECT_EQ(gathered.top().shape(), (Shape{3, 5}));
}

TEST(CheckpointTest, RoundTripsDoublePrecisionExactly) {
  testing::TempDir dir;
  Parameter a("a", Tensor::matrix(2, 2, {1.0 / 3, -2.5, 1e-12, 7}));
  Parameter b("b.bias", Tensor::matrix(1, 3, {0.1, 0.2, 0.3}));
  CheckpointInfo info;
  info.seed = 42;
  info.step = 17;
  info.extra = {{"note", "x"}};
  const Parameter* saved[] = {&a, &b};
  save_checkpoint(dir.path(), saved, info);

  Parameter a2("a", Tensor({2, 2}));
  Parameter b2("b.bias", Tensor({1, 3}));
  Parameter* loaded[] = {&a2, &b2};
  auto got = load_checkpoint(dir.path(), loaded);
  EXPECT_EQ(got.seed, 42u);
  EXPECT_EQ(got.step, 17);
  EXPECT_EQ(got.extra["note"], "x");
  for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(a2.value[i], a.value[i]);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(b2.value[i], b.value[i]);
}

TEST(CheckpointTest, SinglePrecisionRoundTripsWithinFloatError) {
  testing::TempDir dir;
  Parameter a("a", Tensor::matrix(1, 2, {1.0 / 3, 123.456}));
  CheckpointInfo info;
  info.precision = Precision::kFloat32;
  const Parameter* saved[] = {&a};
  save_checkpoint(dir.path(), saved, info);
  Parameter a2("a", Tensor({1, 2}));
  Parameter* loaded[] = {&a2};
  EXPECT_EQ(load_checkpoint(dir.path(), loaded).precision, Precision::kFloat32);
  EXPECT_NEAR(a2.value[0], 1.0 / 3, 1e-7);
  EXPECT_NEAR(a2.value[1], 123.456, 1e-4);
}

TEST(CheckpointTest, ShapeMismatchAndMissingParametersFail) {
  testing::TempDir dir;
  Parameter a("a", Tensor({2, 2}));
  const Parameter* saved[] = {&a};
  save_checkpoint(dir.path(), saved, {});
  Parameter wrong("a", Tensor({1, 4}));
  Parameter* w[] = {&wrong};
  EXPECT_THROW(load_checkpoint(dir.path(), w), CheckpointError);
  Parameter missing("zzz", Tensor({2, 2}));
  Parameter* m[] = {&missing};
  EXPECT_THROW(load_checkpoint(dir.path(), m), CheckpointError);
  Parameter* none[] = {&a};
  EXPECT_THROW(load_checkpoint(dir / "absent", none), CheckpointError);
}

}  // namespace
}  // namespace dackgr
