#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "sceneaware/metrics.hpp"
#include "test_util.hpp"

using namespace sceneaware;

namespace {

WindowResult result(const std::string& scene, double ade, double fde, std::optional<Category> c,
                    std::size_t collisions = 0, std::size_t points = 12) {
  static int counter = 0;
  return {scene + ":" + std::to_string(counter++), scene, ade, fde, c, collisions, points};
}

std::vector<Position> rigid(const std::vector<Position>& a, double angle, Position shift) {
  std::vector<Position> out;
  const double c = std::cos(angle), s = std::sin(angle);
  for (const Position& p : a) out.push_back({c * p.x - s * p.y + shift.x, s * p.x + c * p.y + shift.y});
  return out;
}

}  // namespace

TEST(Displacement, Examples) {
  const std::vector<Position> gt = {{0, 0}, {1, 0}, {2, 0}, {3, 0}};
  EXPECT_EQ(displacement_metrics(gt, gt).ade, 0.0);
  const std::vector<Position> pred = {{0, 0.1}, {1, 0.5}, {2, -0.8}, {3, 1.2}};
  const Displacement d = displacement_metrics(pred, gt);
  EXPECT_NEAR(d.ade, 0.65, 1e-12);
  EXPECT_NEAR(d.fde, 1.2, 1e-12);
  const std::vector<Position> shifted = {{3, 4}, {4, 4}, {5, 4}, {6, 4}};
  EXPECT_NEAR(displacement_metrics(shifted, gt).ade, 5.0, 1e-12);
  try {
    displacement_metrics(std::vector<Position>(3), gt);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::DimensionMismatch);
  }
}

TEST(Displacement, MatchesOracle) {
  testutil::Gen g(31);
  for (int i = 0; i < 1000; ++i) {
    const std::size_t n = 1 + g.index(20);
    const auto a = g.track(n, 5.0), b = g.track(n, 5.0);
    const Displacement d = displacement_metrics(a, b);
    ASSERT_NEAR(d.ade, testutil::oracle_ade(a, b), 1e-12);
    ASSERT_NEAR(d.fde, testutil::oracle_fde(a, b), 1e-12);
    ASSERT_LE(d.fde, n * d.ade + 1e-12);
  }
}

TEST(Displacement, RigidMotionInvariant) {
  testutil::Gen g(32);
  for (int i = 0; i < 200; ++i) {
    const auto a = g.track(12, 3.0), b = g.track(12, 3.0);
    const double angle = g.uniform(-3.14, 3.14);
    const Position shift = g.point(30.0);
    const Displacement d0 = displacement_metrics(a, b);
    const Displacement d1 = displacement_metrics(rigid(a, angle, shift), rigid(b, angle, shift));
    EXPECT_NEAR(d0.ade, d1.ade, 1e-9);
    EXPECT_NEAR(d0.fde, d1.fde, 1e-9);
  }
}

TEST(MinOverK, ExamplesAndIndependentArgmins) {
  const std::vector<Position> gt = {{0, 0}, {1, 0}};
  // Sample 0 is close early and far late; sample 1 the reverse.
  const std::vector<std::vector<Position>> s = {{{0, 0}, {1, 3}}, {{0, 1}, {1, 0.5}}};
  const MinOverK r = min_over_k(s, gt);
  EXPECT_NEAR(r.min_ade, 0.75, 1e-12);
  EXPECT_EQ(r.ade_index, 1u);
  EXPECT_NEAR(r.min_fde, 0.5, 1e-12);
  EXPECT_EQ(r.fde_index, 1u);
  const std::vector<std::vector<Position>> tie = {{{0, 1}, {1, 1}}, {{0, -1}, {1, -1}}};
  EXPECT_EQ(min_over_k(tie, gt).ade_index, 0u);
  try {
    min_over_k({}, gt);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::EmptySamples);
  }
}

TEST(MinOverK, MonotoneInK) {
  testutil::Gen g(33);
  for (int trial = 0; trial < 100; ++trial) {
    const auto gt = g.track(12, 3.0);
    std::vector<std::vector<Position>> s;
    double prev_ade = INFINITY, prev_fde = INFINITY;
    for (int k = 0; k < 20; ++k) {
      s.push_back(g.track(12, 3.0));
      const MinOverK r = min_over_k(s, gt);
      EXPECT_LE(r.min_ade, prev_ade);
      EXPECT_LE(r.min_fde, prev_fde);
      prev_ade = r.min_ade;
      prev_fde = r.min_fde;
    }
  }
}

TEST(CollisionRate, Examples) {
  WalkabilityMask m = WalkabilityMask::filled(10, 10, 1.0);
  m.set(5, 5, 0.0);
  const SceneContext ctx{"S", m, Homography::identity(), {}};
  std::vector<Position> a(4, {1.0, 1.0}), b(4, {1.0, 1.0});
  b[2] = {5.0, 5.0};
  EXPECT_EQ(collision_rate({a, a}, {&ctx, &ctx}), 0.0);
  EXPECT_NEAR(collision_rate({a, b}, {&ctx, &ctx}), 0.125, 1e-15);
  b[3] = {-5.0, 0.0};
  EXPECT_NEAR(collision_rate({b}, {&ctx}), 0.5, 1e-15);
}

TEST(CategoryReport, Examples) {
  std::vector<WindowResult> w = {result("A", 0.1, 0.2, Category::Straight), result("A", 0.3, 0.4, Category::Straight),
                                 result("A", 0.05, 0.1, Category::Turning), result("B", 0.05, 0.1, Category::Turning)};
  const CategoryTable t = category_report(w);
  ASSERT_EQ(t.rows.size(), 2u);
  EXPECT_EQ(t.rows[0].category, Category::Straight);
  EXPECT_EQ(t.rows[0].count, 2u);
  EXPECT_NEAR(t.rows[0].ade, 0.2, 1e-15);
  EXPECT_NEAR(t.rows[1].ade, 0.05, 1e-15);
  EXPECT_EQ(t.total, 4u);
  EXPECT_NEAR(t.overall_ade, 0.125, 1e-15);
  EXPECT_NEAR(t.overall_fde, 0.2, 1e-15);

  w.push_back(result("A", 1.0, 1.0, std::nullopt));
  try {
    category_report(w);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::UnlabeledWindow);
  }
}

TEST(CategoryReport, OverallEqualsWeightedMean) {
  testutil::Gen g(34);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<WindowResult> w;
    long double sum = 0;
    const std::size_t n = 1 + g.index(60);
    for (std::size_t i = 0; i < n; ++i) {
      w.push_back(result("S", g.uniform(0, 3), g.uniform(0, 5), kAllCategories[g.index(4)]));
      sum += w.back().ade;
    }
    const CategoryTable t = category_report(w);
    std::size_t counted = 0;
    for (const auto& row : t.rows) {
      counted += row.count;
      EXPECT_GT(row.count, 0u);
    }
    EXPECT_EQ(counted, n);
    EXPECT_NEAR(t.overall_ade, static_cast<double>(sum / n), 1e-12);
  }
}

TEST(BuildReport, AverageIsUnweightedOverScenes) {
  std::vector<WindowResult> w = {result("A", 1.0, 2.0, Category::Straight, 1, 12),
                                 result("B", 0.2, 0.4, Category::Straight, 0, 12),
                                 result("B", 0.4, 0.8, Category::HighVar, 2, 12),
                                 result("B", 0.6, 1.2, Category::HighVar, 0, 12)};
  const EvalReport r = build_report(Variant::Deterministic, 20, w, {"A", "B", "C"});
  ASSERT_EQ(r.scenes.size(), 2u);
  EXPECT_EQ(r.k, 1u);
  EXPECT_NEAR(r.scenes[1].ade, 0.4, 1e-15);
  EXPECT_NEAR(r.avg.ade, 0.7, 1e-15);
  EXPECT_NEAR(r.avg.fde, 1.4, 1e-15);
  EXPECT_NEAR(r.collision_rate, 3.0 / 48.0, 1e-15);
  EXPECT_NEAR(r.categories.overall_ade, 0.55, 1e-15);
  EXPECT_EQ(r.ade_label(), "ADE");
  EXPECT_EQ(build_report(Variant::Stochastic, 20, w, {"A"}).ade_label(), "minADE_20");
}

TEST(ReportFiles, CsvRoundTrip) {
  std::vector<WindowResult> w = {result("A", 1.0 / 3.0, 2.0, Category::Circling, 1, 12),
                                 result("B", 0.1, 0.7, Category::Turning, 0, 12)};
  const EvalReport r = build_report(Variant::Stochastic, 5, w, {"A", "B"});
  std::istringstream scenes(per_scene_csv(r));
  const CsvTable s = parse_csv(scenes);
  EXPECT_EQ(s.header, (std::vector<std::string>{"scene", "windows", "ade", "fde", "collision_rate"}));
  ASSERT_EQ(s.rows.size(), 3u);
  EXPECT_EQ(s.rows[2][0], "AVG");
  EXPECT_EQ(std::stod(s.rows[0][2]), 1.0 / 3.0);

  std::istringstream cats(per_category_csv(r));
  const CsvTable c = parse_csv(cats);
  EXPECT_EQ(c.header, (std::vector<std::string>{"category", "count", "ade", "fde"}));
  ASSERT_EQ(c.rows.size(), 3u);
  EXPECT_EQ(c.rows[0][0], "Turning");
  EXPECT_EQ(c.rows[1][0], "Circling");
  EXPECT_EQ(c.rows[2][0], "Overall");

  const nlohmann::json j = to_json(r);
  EXPECT_EQ(j.at("ade_label"), "minADE_5");
  EXPECT_EQ(j.at("scenes").size(), 2u);
  EXPECT_EQ(j.at("avg").at("ade").get<double>(), r.avg.ade);
}

TEST(EvaluateWindows, DeterministicAndStochastic) {
  const SceneContext ctx = testutil::banded_scene();
  const std::vector<Window> windows = {testutil::linear_window({1, 1}, {0.1, 0.0}),
                                       testutil::linear_window({2, 8}, {0.0, 0.1}, 8, 12, "BAND", 2)};
  const ModelParams det = ModelParams::create(testutil::tiny_dims(), Variant::Deterministic, 1);
  const ScenePredictions d = evaluate_windows(det, windows, ctx, 20, 0);
  ASSERT_EQ(d.results.size(), 2u);
  EXPECT_EQ(d.samples[0].size(), 1u);
  EXPECT_EQ(d.results[0].points, 12u);
  const Displacement ref = displacement_metrics(predict_deterministic(windows[0].observed, ctx, det), windows[0].future);
  EXPECT_EQ(d.results[0].ade, ref.ade);
  EXPECT_EQ(d.results[0].category, Category::Straight);

  const ModelParams sto = ModelParams::create(testutil::tiny_dims(), Variant::Stochastic, 1);
  const ScenePredictions s1 = evaluate_windows(sto, windows, ctx, 6, 3);
  const ScenePredictions s2 = evaluate_windows(sto, windows, ctx, 6, 3);
  EXPECT_EQ(s1.samples, s2.samples);
  EXPECT_EQ(s1.results[1].points, 72u);
  EXPECT_EQ(s1.results[0].ade, min_over_k(s1.samples[0], windows[0].future).min_ade);
}
