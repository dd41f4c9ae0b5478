#include <gtest/gtest.h>

#include <cmath>

#include "sceneaware/losses.hpp"
#include "test_util.hpp"

using namespace sceneaware;

namespace {

std::vector<Position> shifted(const std::vector<Position>& a, Position d) {
  auto out = a;
  for (auto& p : out) p = p + d;
  return out;
}

SceneContext open_scene() {
  return {"OPEN", WalkabilityMask::filled(20, 20, 1.0), Homography::identity(), {}};
}

}  // namespace

TEST(MseLoss, Examples) {
  testutil::Gen g(1);
  const auto gt = g.track(12, 5.0);
  EXPECT_EQ(mse_loss(gt, gt), 0.0);
  EXPECT_NEAR(mse_loss(shifted(gt, {1, 0}), gt), 1.0, 1e-12);
  EXPECT_NEAR(mse_loss(shifted(gt, {3, 4}), gt), 25.0, 1e-12);
  EXPECT_THROW(mse_loss(std::vector<Position>(11), gt), Error);
}

TEST(MseLoss, TranslationInvariant) {
  testutil::Gen g(2);
  for (int i = 0; i < 200; ++i) {
    const auto a = g.track(12, 4.0), b = g.track(12, 4.0);
    const Position d = g.point(50.0);
    EXPECT_NEAR(mse_loss(shifted(a, d), shifted(b, d)), mse_loss(a, b), 1e-9);
  }
}

TEST(CollisionLoss, Examples) {
  SceneContext ctx = open_scene();
  std::vector<Position> walk(12, {5.0, 5.0});
  EXPECT_EQ(collision_loss(walk, ctx, 30.0, CollisionMode::Exact), 0.0);
  EXPECT_EQ(collision_loss(walk, ctx, 30.0, CollisionMode::Surrogate), 0.0);
  SceneContext blocked{"B", WalkabilityMask::filled(20, 20, 0.0), Homography::identity(), {}};
  EXPECT_EQ(collision_loss(walk, blocked, 30.0, CollisionMode::Exact), 360.0);
  walk[4] = {-7.0, 3.0};
  EXPECT_EQ(collision_loss(walk, ctx, 30.0, CollisionMode::Exact), 30.0);
  try {
    collision_loss(walk, ctx, -1.0, CollisionMode::Exact);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::NegativeWeight);
  }
}

TEST(CollisionLoss, ExactIsIntegerMultipleOfWeight) {
  const SceneContext ctx = testutil::banded_scene();
  testutil::Gen g(3);
  for (int i = 0; i < 300; ++i) {
    std::vector<Position> pred(12);
    for (auto& p : pred) p = {g.uniform(-10, 45), g.uniform(-10, 35)};
    const double lambda = g.uniform(0.1, 50.0);
    const double ratio = collision_loss(pred, ctx, lambda, CollisionMode::Exact) / lambda;
    EXPECT_NEAR(ratio, std::round(ratio), 1e-9);
    EXPECT_GE(ratio, 0.0);
    EXPECT_LE(ratio, 12.0);
  }
}

TEST(BestOfK, Examples) {
  testutil::Gen g(4);
  const auto gt = g.track(12, 3.0);
  const auto one = g.track(12, 3.0);
  const BestOfK single = best_of_k_loss({one}, gt);
  EXPECT_EQ(single.loss, mse_loss(one, gt));
  EXPECT_EQ(single.index, 0u);
  EXPECT_EQ(best_of_k_loss({one, gt, one}, gt).loss, 0.0);
  const std::vector<std::vector<Position>> s = {shifted(gt, {2, 0}), shifted(gt, {1, 0}), shifted(gt, {3, 0})};
  const BestOfK b = best_of_k_loss(s, gt);
  EXPECT_NEAR(b.loss, 1.0, 1e-12);
  EXPECT_EQ(b.index, 1u);
  EXPECT_EQ(best_of_k_loss({shifted(gt, {1, 0}), shifted(gt, {0, 1})}, gt).index, 0u);
  try {
    best_of_k_loss({}, gt);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::EmptySamples);
  }
}

TEST(BestOfK, BoundedByMeanAndMonotone) {
  testutil::Gen g(5);
  for (int trial = 0; trial < 200; ++trial) {
    const auto gt = g.track(12, 3.0);
    std::vector<std::vector<Position>> samples;
    double prev = std::numeric_limits<double>::infinity();
    double sum = 0.0;
    for (int k = 0; k < 10; ++k) {
      samples.push_back(g.track(12, 3.0));
      sum += mse_loss(samples.back(), gt);
      const double best = best_of_k_loss(samples, gt).loss;
      EXPECT_LE(best, prev);
      EXPECT_LE(best, sum / static_cast<double>(samples.size()) + 1e-12);
      prev = best;
    }
  }
}

TEST(KlLoss, Examples) {
  EXPECT_EQ(kl_loss(std::vector<double>{0, 0, 0}, std::vector<double>{0, 0, 0}), 0.0);
  EXPECT_NEAR(kl_loss(std::vector<double>{1.0}, std::vector<double>{0.0}), 0.5, 1e-15);
  EXPECT_NEAR(kl_loss(std::vector<double>{0.0}, std::vector<double>{1.0}), 0.5 * (std::exp(1.0) - 2.0), 1e-15);
  EXPECT_NEAR(kl_loss(std::vector<double>{0.0}, std::vector<double>{1.0}), 0.3591, 1e-4);
  try {
    kl_loss(std::vector<double>{NAN}, std::vector<double>{0.0});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::NonFinite);
  }
}

TEST(KlLoss, NonNegative) {
  testutil::Gen g(6);
  for (int i = 0; i < 2000; ++i) {
    std::vector<double> mu(4), lv(4);
    for (auto& v : mu) v = g.uniform(-5, 5);
    for (auto& v : lv) v = g.uniform(-10, 10);
    EXPECT_GE(kl_loss(mu, lv), 0.0);
  }
}

TEST(TotalLoss, Examples) {
  EXPECT_EQ(total_loss(Variant::Deterministic, {}, 30.0, 0.1).total, 0.0);
  LossComponents det;
  det.mse_or_best = 2.0;
  det.collision_exact = 30.0;
  det.collision_surrogate = 12.5;
  const LossBreakdown d = total_loss(Variant::Deterministic, det, 30.0, 0.1);
  EXPECT_DOUBLE_EQ(d.total_exact, 32.0);
  EXPECT_DOUBLE_EQ(d.total, 14.5);
  LossComponents st;
  st.mse_or_best = 1.0;
  st.kl = 2.0;
  const LossBreakdown s = total_loss(Variant::Stochastic, st, 30.0, 0.1);
  EXPECT_NEAR(s.total, 1.2, 1e-12);
  EXPECT_NEAR(s.total_exact, 1.2, 1e-12);
  const auto j = s.to_json(7);
  EXPECT_EQ(j.at("step"), 7);
  for (const char* key : {"total", "mse_or_best", "kl", "collision_exact", "collision_surrogate"})
    EXPECT_TRUE(j.contains(key)) << key;
}

TEST(SurrogateGraph, MatchesScalarSurrogate) {
  const SceneContext ctx = testutil::banded_scene();
  testutil::Gen g(7);
  std::vector<Position> pred(12);
  for (auto& p : pred) p = {g.uniform(10, 30), g.uniform(0, 20)};
  ad::Tape tape;
  const ad::Var v = graph::collision_surrogate(tape.constant(graph::positions_matrix(pred)), ctx, 30.0);
  EXPECT_NEAR(v.scalar(), collision_loss(pred, ctx, 30.0, CollisionMode::Surrogate), 1e-12);
}
