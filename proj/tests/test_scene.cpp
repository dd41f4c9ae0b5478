#include <gtest/gtest.h>

#include <png.h>

#include <fstream>
#include <sstream>

#include "sceneaware/scene.hpp"
#include "test_util.hpp"

using namespace sceneaware;

namespace {

void write_bytes(const std::filesystem::path& p, const std::string& bytes) {
  std::ofstream out(p, std::ios::binary);
  out << bytes;
}

std::string pgm_p5(std::size_t w, std::size_t h, const std::vector<unsigned char>& px) {
  std::string s = "P5\n# comment\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
  s.append(px.begin(), px.end());
  return s;
}

void write_png(const std::filesystem::path& p, std::size_t w, std::size_t h, const std::vector<unsigned char>& px,
               bool color) {
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(w);
  img.height = static_cast<png_uint_32>(h);
  img.format = color ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  ASSERT_TRUE(png_image_write_to_file(&img, p.c_str(), 0, px.data(), 0, nullptr));
}

SceneContext context(WalkabilityMask m, Homography h = Homography::identity()) {
  return {"S", std::move(m), h, {}};
}

}  // namespace

TEST(LoadMask, PgmBinaryAndThreshold) {
  const auto dir = testutil::temp_dir("mask_pgm");
  write_bytes(dir / "white.pgm", pgm_p5(4, 4, std::vector<unsigned char>(16, 255)));
  const auto white = load_mask((dir / "white.pgm").string());
  EXPECT_EQ(white.width(), 4u);
  EXPECT_EQ(white.height(), 4u);
  for (double v : white.values()) EXPECT_EQ(v, 1.0);

  write_bytes(dir / "black.pgm", pgm_p5(3, 2, std::vector<unsigned char>(6, 0)));
  const auto black = load_mask((dir / "black.pgm").string());
  for (double v : black.values()) EXPECT_EQ(v, 0.0);

  write_bytes(dir / "edge.pgm", pgm_p5(2, 1, {127, 128}));
  const auto edge = load_mask((dir / "edge.pgm").string());
  EXPECT_EQ(edge.at(0, 0), 0.0);
  EXPECT_EQ(edge.at(0, 1), 1.0);
}

TEST(LoadMask, PgmAsciiWithMaxval) {
  const auto dir = testutil::temp_dir("mask_p2");
  write_bytes(dir / "a.pgm", "P2\n3 1\n15\n0 7 8\n");
  const auto m = load_mask((dir / "a.pgm").string());
  EXPECT_EQ(m.at(0, 0), 0.0);
  EXPECT_EQ(m.at(0, 1), 0.0);
  EXPECT_EQ(m.at(0, 2), 1.0);
}

TEST(LoadMask, Png) {
  const auto dir = testutil::temp_dir("mask_png");
  write_png(dir / "g.png", 2, 2, {0, 127, 128, 255}, false);
  const auto m = load_mask((dir / "g.png").string());
  EXPECT_EQ(m.values(), (std::vector<double>{0, 0, 1, 1}));
  write_png(dir / "c.png", 1, 1, {255, 0, 0}, true);
  try {
    load_mask((dir / "c.png").string());
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::UnsupportedFormat);
  }
}

TEST(LoadMask, RejectsUnknownAndCorrupt) {
  const auto dir = testutil::temp_dir("mask_bad");
  write_bytes(dir / "x.bmp", "BM....");
  try {
    load_mask((dir / "x.bmp").string());
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::UnsupportedFormat);
  }
  write_bytes(dir / "t.pgm", "P5\n4 4\n255\nabc");
  try {
    load_mask((dir / "t.pgm").string());
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::CorruptImage);
  }
  write_bytes(dir / "t.png", std::string("\x89PNG\r\n\x1a\n", 8) + "garbage");
  try {
    load_mask((dir / "t.png").string());
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::CorruptImage);
  }
}

TEST(LoadMask, SavePgmRoundTrip) {
  const auto dir = testutil::temp_dir("mask_rt");
  WalkabilityMask m = WalkabilityMask::filled(5, 3, 1.0);
  m.set(1, 2, 0.0);
  save_pgm((dir / "m.pgm").string(), m.raster());
  EXPECT_EQ(load_mask((dir / "m.pgm").string()).values(), m.values());
}

TEST(CollisionIndicator, Examples) {
  WalkabilityMask m = WalkabilityMask::filled(10, 10, 1.0);
  m.set(4, 6, 0.0);
  const SceneContext ctx = context(m);
  EXPECT_EQ(collision_indicator(ctx, {2.0, 2.0}), 0);
  EXPECT_EQ(collision_indicator(ctx, {6.0, 4.0}), 1);
  EXPECT_EQ(collision_indicator(ctx, {6.4, 3.6}), 1);
  EXPECT_EQ(collision_indicator(ctx, {-3.0, 2.0}), 1);
  EXPECT_EQ(collision_indicator(ctx, {2.0, 9.6}), 1);
  EXPECT_EQ(collision_indicator(ctx, {-0.4, 0.0}), 0);
}

TEST(CollisionIndicator, MatchesBruteForce) {
  const SceneContext ctx = testutil::banded_scene();
  testutil::Gen g(21);
  for (int i = 0; i < 10000; ++i) {
    const Position p{g.uniform(-10.0, 45.0), g.uniform(-10.0, 35.0)};
    ASSERT_EQ(collision_indicator(ctx, p), testutil::oracle_indicator(ctx, p)) << p.x << "," << p.y;
  }
}

TEST(SoftOccupancy, Examples) {
  WalkabilityMask m = WalkabilityMask::filled(6, 6, 1.0);
  m.set(2, 3, 0.0);
  const SceneContext ctx = context(m);
  EXPECT_EQ(soft_occupancy(ctx, {1.0, 1.0}), 0.0);
  EXPECT_EQ(soft_occupancy(ctx, {1.3, 1.7}), 0.0);
  EXPECT_NEAR(soft_occupancy(ctx, {2.5, 2.0}), 0.5, 1e-12);
  EXPECT_EQ(soft_occupancy(ctx, {3.0, 2.0}), 1.0);
  EXPECT_EQ(soft_occupancy(ctx, {100.0, -50.0}), 1.0);
  // Half a pixel beyond the last column blends with the padded border.
  EXPECT_NEAR(soft_occupancy(ctx, {5.5, 0.0}), 0.5, 1e-12);
}

TEST(SoftOccupancy, BoundsAndConsistencyProperties) {
  const SceneContext ctx = testutil::banded_scene();
  testutil::Gen g(22);
  for (int i = 0; i < 5000; ++i) {
    const Position p{g.uniform(-8.0, 42.0), g.uniform(-8.0, 32.0)};
    const double s = soft_occupancy(ctx, p);
    ASSERT_GE(s, 0.0);
    ASSERT_LE(s, 1.0);
    if (s == 1.0) {
      ASSERT_EQ(testutil::oracle_indicator(ctx, p), 1);
    }
  }
}

TEST(SoftOccupancy, GradientMatchesFiniteDifference) {
  Eigen::Matrix3d h;
  h << 0.9, 0.1, 5.0, -0.05, 1.1, 4.0, 0.001, 0.002, 1.0;
  SceneContext ctx = testutil::banded_scene();
  ctx.homography = Homography(h);
  testutil::Gen g(23);
  int checked = 0;
  while (checked < 300) {
    const Position p{g.uniform(5.0, 25.0), g.uniform(0.0, 20.0)};
    Position grad;
    soft_occupancy(ctx, p, grad);
    const double e = 1e-7;
    const double gx = (soft_occupancy(ctx, {p.x + e, p.y}) - soft_occupancy(ctx, {p.x - e, p.y})) / (2 * e);
    const double gy = (soft_occupancy(ctx, {p.x, p.y + e}) - soft_occupancy(ctx, {p.x, p.y - e})) / (2 * e);
    EXPECT_NEAR(grad.x, gx, 1e-5);
    EXPECT_NEAR(grad.y, gy, 1e-5);
    ++checked;
  }
}

TEST(FeatureProviders, FileProvider) {
  const auto dir = testutil::temp_dir("features");
  std::string line;
  for (int i = 0; i < 64; ++i) line += std::to_string(0.01 * i) + " ";
  write_bytes(dir / "f64.txt", line + "\n");
  std::string short_line;
  for (int i = 0; i < 63; ++i) short_line += "1.5 ";
  write_bytes(dir / "f63.txt", short_line + "\n");
  const FileFeatureProvider p(64, {{"A", (dir / "f64.txt").string()}, {"B", (dir / "f63.txt").string()}});
  const auto s = scene_feature(p, "A");
  ASSERT_EQ(s.size(), 64u);
  EXPECT_DOUBLE_EQ(s[10], 0.1);
  try {
    scene_feature(p, "B");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::DimensionMismatch);
  }
  try {
    scene_feature(p, "C");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::MissingFeature);
  }
}

TEST(FeatureProviders, PatchEncoder) {
  PatchEncoderProvider p(16, 3);
  p.add_scene("A", testutil::banded_scene().mask.raster());
  p.add_scene("B", WalkabilityMask::filled(100, 80, 1.0).raster());
  const auto a1 = scene_feature(p, "A");
  const auto a2 = scene_feature(p, "A");
  const auto b = scene_feature(p, "B");
  ASSERT_EQ(a1.size(), 16u);
  EXPECT_EQ(a1, a2);
  EXPECT_NE(a1, b);
  PatchEncoderProvider same(16, 3);
  same.add_scene("A", testutil::banded_scene().mask.raster());
  EXPECT_EQ(scene_feature(same, "A"), a1);

  p.encoder().zero_weights();
  for (double v : scene_feature(p, "A")) EXPECT_EQ(v, 0.0);
}
