#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <sstream>

#include "sceneaware/core_types.hpp"
#include "sceneaware/data_ingest.hpp"
#include "test_util.hpp"

using namespace sceneaware;

namespace {

std::vector<FramePoint> segment(std::size_t n, std::int64_t step = 1) {
  std::vector<FramePoint> s;
  for (std::size_t i = 0; i < n; ++i)
    s.push_back({static_cast<std::int64_t>(i) * step, {0.5 * static_cast<double>(i), -0.25 * static_cast<double>(i)}});
  return s;
}

template <class F>
Errc code_of(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "expected an Error";
  return Errc::Io;
}

}  // namespace

TEST(SplitWindow, TwentyPointsSplitEightTwelve) {
  const auto seg = segment(20);
  const Window w = split_window(seg, {}, 3, "ETH");
  ASSERT_EQ(w.observed.size(), 8u);
  ASSERT_EQ(w.future.size(), 12u);
  EXPECT_EQ(w.start_frame, 0);
  EXPECT_EQ(w.id(), "ETH:3:0");
  const auto full = w.full();
  for (std::size_t i = 0; i < 20; ++i) EXPECT_EQ(full[i], seg[i].position);
}

TEST(SplitWindow, RejectsWrongLengthGapsAndNan) {
  EXPECT_EQ(code_of([] { split_window(segment(19), {}, 1, "s"); }), Errc::WrongLength);
  auto gap = segment(20);
  gap[10].frame += 1;
  EXPECT_EQ(code_of([&] { split_window(gap, {}, 1, "s"); }), Errc::GapDetected);
  auto bad = segment(20);
  bad[4].position.y = std::numeric_limits<double>::quiet_NaN();
  EXPECT_EQ(code_of([&] { split_window(bad, {}, 1, "s"); }), Errc::NonFinite);
}

TEST(SplitWindow, CustomHorizonAndFrameStep) {
  const Window w = split_window(segment(7, 10), {3, 4}, 1, "s", 10);
  EXPECT_EQ(w.observed.size(), 3u);
  EXPECT_EQ(w.future.size(), 4u);
  EXPECT_EQ(code_of([] { split_window(segment(7, 10), {3, 4}, 1, "s", 5); }), Errc::GapDetected);
}

TEST(Homography, WorldToPixelExamples) {
  const PixelCoord a = world_to_pixel({3.0, 4.0}, Homography::identity());
  EXPECT_DOUBLE_EQ(a.u, 3.0);
  EXPECT_DOUBLE_EQ(a.v, 4.0);
  const PixelCoord b = world_to_pixel({3.0, 4.0}, Homography::scaling(2.0, 2.0));
  EXPECT_DOUBLE_EQ(b.u, 6.0);
  EXPECT_DOUBLE_EQ(b.v, 8.0);
}

TEST(Homography, DegenerateAndSingular) {
  // Invertible, but w vanishes on the line x = 1.
  Eigen::Matrix3d m;
  m << 0, 0, 1, 0, 1, 0, 1, 0, -1;
  const Homography h(m);
  EXPECT_EQ(code_of([&] { world_to_pixel({1.0, 2.0}, h); }), Errc::DegenerateProjection);
  Eigen::Matrix3d zero_row = Eigen::Matrix3d::Identity();
  zero_row.row(2).setZero();
  EXPECT_EQ(code_of([&] { Homography{zero_row}; }), Errc::InvalidHomography);
}

TEST(Homography, RoundTripProperty) {
  testutil::Gen g(11);
  for (int trial = 0; trial < 1000; ++trial) {
    Eigen::Matrix3d m;
    m << g.uniform(5, 20), g.uniform(-2, 2), g.uniform(-50, 50), g.uniform(-2, 2), g.uniform(5, 20),
        g.uniform(-50, 50), g.uniform(-1e-3, 1e-3), g.uniform(-1e-3, 1e-3), 1.0;
    const Homography h(m);
    const Position p = g.point(30.0);
    const Position back = pixel_to_world(world_to_pixel(p, h), h);
    EXPECT_NEAR(back.x, p.x, 1e-9);
    EXPECT_NEAR(back.y, p.y, 1e-9);
  }
}

TEST(Homography, ParseFileFormat) {
  std::istringstream ok("1 0 2\n0 1 3\n0 0 1\n");
  const Homography h = Homography::parse(ok);
  EXPECT_DOUBLE_EQ(h.matrix()(0, 2), 2.0);
  std::istringstream bad("1 0 2\n0 x 3\n0 0 1\n");
  try {
    Homography::parse(bad);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::MalformedLine);
    EXPECT_EQ(e.line(), 2u);
  }
}

TEST(ParseDataset, FieldMapping) {
  std::istringstream in("780 1 8.46 3.59\n");
  const auto r = parse_dataset(in);
  ASSERT_EQ(r.size(), 1u);
  EXPECT_EQ(r[0].frame, 780);
  EXPECT_EQ(r[0].ped_id, 1);
  EXPECT_DOUBLE_EQ(r[0].position.x, 8.46);
  EXPECT_DOUBLE_EQ(r[0].position.y, 3.59);
}

TEST(ParseDataset, MalformedLineNumber) {
  std::istringstream in("780 1 abc 3.59\n");
  try {
    parse_dataset(in);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::MalformedLine);
    EXPECT_EQ(e.line(), 1u);
  }
  std::istringstream short_line("# header\n\n780 1 8.0 1.0\n790 1 2.0\n");
  try {
    parse_dataset(short_line);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.line(), 4u);
  }
}

TEST(ParseDataset, DuplicatesAndSorting) {
  std::istringstream dup("780 1 8.46 3.59\n780 1 8.0 3.0\n");
  EXPECT_EQ(code_of([&] { parse_dataset(dup); }), Errc::DuplicateObservation);
  std::istringstream mixed("20 2 0 0\n10 1 0 0\n0 2 0 0\n0 1 0 0\n");
  const auto r = parse_dataset(mixed);
  ASSERT_EQ(r.size(), 4u);
  EXPECT_EQ(r[0].ped_id, 1);
  EXPECT_EQ(r[0].frame, 0);
  EXPECT_EQ(r[1].frame, 10);
  EXPECT_EQ(r[2].ped_id, 2);
  EXPECT_EQ(r[3].frame, 20);
}

namespace {
std::vector<Record> run(std::int64_t ped, std::int64_t first, std::size_t n, std::int64_t step = 1) {
  std::vector<Record> r;
  for (std::size_t i = 0; i < n; ++i)
    r.push_back({first + static_cast<std::int64_t>(i) * step, ped, {static_cast<double>(i), 0.0}});
  return r;
}
}  // namespace

TEST(BuildWindows, CountsPerSpec) {
  EXPECT_EQ(build_windows(run(1, 0, 25), {}, 1, "s").size(), 6u);
  EXPECT_EQ(build_windows(run(1, 0, 10), {}, 1, "s").size(), 0u);
  auto gapped = run(1, 0, 12);
  for (auto r : run(1, 13, 12)) gapped.push_back(r);
  WindowSummary summary;
  EXPECT_EQ(build_windows(gapped, {}, 1, "s", 1, &summary).size(), 0u);
  EXPECT_EQ(summary.runs, 2u);
  EXPECT_EQ(summary.short_runs, 2u);
}

TEST(BuildWindows, StrideFormulaProperty) {
  testutil::Gen g(5);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t len = 1 + g.index(60);
    const std::size_t stride = 1 + g.index(5);
    const std::size_t t_o = 2 + g.index(6), t_p = 1 + g.index(8);
    const auto w = build_windows(run(1, 100, len, 10), {t_o, t_p}, stride, "s");
    const std::size_t need = t_o + t_p;
    const std::size_t expected = len < need ? 0 : (len - need) / stride + 1;
    ASSERT_EQ(w.size(), expected);
    for (const Window& win : w) {
      ASSERT_EQ(win.observed.size(), t_o);
      ASSERT_EQ(win.future.size(), t_p);
    }
  }
}

TEST(BuildWindows, InfersModalFrameStep) {
  auto records = run(1, 0, 22, 10);
  for (auto r : run(2, 5, 21, 10)) records.push_back(r);
  EXPECT_EQ(infer_frame_step(records), 10);
  const auto w = build_windows(records, {}, 1, "s");
  EXPECT_EQ(w.size(), 5u);
  EXPECT_EQ(w[0].ped_id, 1);
  EXPECT_EQ(w[3].ped_id, 2);
  EXPECT_EQ(w[3].start_frame, 5);
}

TEST(BuildWindows, DeterministicForSameBytes) {
  const std::string text = "0 1 1.0 2.0\n1 1 1.1 2.1\n2 1 1.2 2.2\n0 2 5 5\n1 2 5.5 5\n2 2 6 5\n";
  std::istringstream a(text), b(text);
  const auto wa = build_windows(parse_dataset(a), {2, 1}, 1, "s");
  const auto wb = build_windows(parse_dataset(b), {2, 1}, 1, "s");
  ASSERT_EQ(wa.size(), wb.size());
  for (std::size_t i = 0; i < wa.size(); ++i) {
    EXPECT_EQ(wa[i].id(), wb[i].id());
    EXPECT_EQ(wa[i].full(), wb[i].full());
  }
}

TEST(KFold, LeaveOneSceneOut) {
  const std::vector<std::string> scenes = {"ETH", "HOTEL", "UNIV", "ZARA1", "ZARA2"};
  const Fold f = kfold_split(scenes, "ETH");
  EXPECT_EQ(f.train_scenes, (std::vector<std::string>{"HOTEL", "UNIV", "ZARA1", "ZARA2"}));
  const Fold z = kfold_split(scenes, "ZARA2");
  EXPECT_EQ(z.train_scenes, (std::vector<std::string>{"ETH", "HOTEL", "UNIV", "ZARA1"}));
  EXPECT_EQ(code_of([&] { kfold_split(scenes, "MALL"); }), Errc::UnknownScene);

  const auto folds = all_folds(scenes);
  ASSERT_EQ(folds.size(), 5u);
  std::set<std::string> held;
  for (const Fold& fold : folds) {
    held.insert(fold.held_out_scene);
    EXPECT_EQ(fold.train_scenes.size(), 4u);
    EXPECT_EQ(std::count(fold.train_scenes.begin(), fold.train_scenes.end(), fold.held_out_scene), 0);
  }
  EXPECT_EQ(held.size(), 5u);
}
