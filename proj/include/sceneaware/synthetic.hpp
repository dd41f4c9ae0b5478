#pragma once

#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <string>
#include <vector>

#include "sceneaware/core_types.hpp"
#include "sceneaware/data_ingest.hpp"
#include "sceneaware/metrics.hpp"
#include "sceneaware/random.hpp"
#include "sceneaware/scene.hpp"

// Small synthetic scenes in the ETH/UCY text layout for tests and demos.
namespace sceneaware::synthetic {

inline const std::array<std::string, 5> kSceneIds = {"ETH", "HOTEL", "UNIV", "ZARA1", "ZARA2"};

inline constexpr std::size_t kWidth = 160;
inline constexpr std::size_t kHeight = 120;
inline constexpr double kPixelsPerMeter = 8.0;
inline constexpr std::int64_t kFrameStep = 10;

/// world (x, y) -> pixel (8x + 4, 8y + 4).
inline Homography fixture_homography() {
  Eigen::Matrix3d m = Eigen::Matrix3d::Identity();
  m(0, 0) = kPixelsPerMeter;
  m(1, 1) = kPixelsPerMeter;
  m(0, 2) = 4.0;
  m(1, 2) = 4.0;
  return Homography(m);
}

/// Open plaza with one blocked block in a corner no pedestrian visits.
inline Raster fixture_raster(std::size_t scene_index) {
  Raster r{kWidth, kHeight, std::vector<double>(kWidth * kHeight, 1.0)};
  const std::size_t u0 = 132 - 4 * scene_index;
  for (std::size_t v = 4; v < 20; ++v)
    for (std::size_t u = u0; u < u0 + 20; ++u) r.values[v * kWidth + u] = 0.0;
  return r;
}

namespace detail {

inline std::vector<Position> polyline(Position start, double heading, const std::vector<double>& turns, double speed) {
  std::vector<Position> pts{start};
  for (double turn : turns) {
    heading += turn;
    const Position& p = pts.back();
    pts.push_back({p.x + speed * std::cos(heading), p.y + speed * std::sin(heading)});
  }
  return pts;
}

}  // namespace detail

/// One track per movement pattern, shifted slightly per scene.
inline std::vector<std::vector<Position>> fixture_tracks(std::size_t scene_index, std::size_t length = 22) {
  const double pi = std::numbers::pi;
  const double off = 0.25 * static_cast<double>(scene_index);
  const std::size_t n = length - 1;
  std::vector<std::vector<Position>> tracks;

  tracks.push_back(detail::polyline({1.5, 2.5 + off}, 0.0, std::vector<double>(n, 0.0), 0.45));
  tracks.push_back(detail::polyline({2.0, 4.5 + off}, 0.1, std::vector<double>(n, 0.0), 0.35));

  std::vector<double> arc(n, 0.0);
  for (std::size_t i = 6; i < 18 && i < n; ++i) arc[i] = -(pi / 2.0) / 12.0;
  tracks.push_back(detail::polyline({2.0, 11.0 - off}, 0.0, arc, 0.4));

  std::vector<double> zig(n, 0.0);
  zig[0] = pi / 6.0;
  for (std::size_t i = 5; i < n; i += 5) zig[i] = (i / 5) % 2 == 1 ? -pi / 3.0 : pi / 3.0;
  tracks.push_back(detail::polyline({1.5, 6.5 + off}, 0.0, zig, 0.35));

  const double radius = 1.4;
  const Position center{13.5, 9.0 - off};
  std::vector<Position> loop;
  for (std::size_t i = 0; i < length; ++i) {
    const double a = 2.0 * pi * static_cast<double>(i) / static_cast<double>(n);
    loop.push_back({center.x + radius * std::cos(a), center.y + radius * std::sin(a)});
  }
  tracks.push_back(loop);
  return tracks;
}

/// Records in the four-column layout (frame, ped, x, y), with a little
/// seeded jitter.
inline std::vector<Record> fixture_records(std::size_t scene_index, std::uint64_t seed, std::size_t length = 22) {
  Rng rng(seed ^ splitmix64(scene_index + 1));
  std::vector<Record> records;
  const auto tracks = fixture_tracks(scene_index, length);
  for (std::size_t ped = 0; ped < tracks.size(); ++ped) {
    const std::int64_t start = static_cast<std::int64_t>(ped) * 20;
    for (std::size_t t = 0; t < tracks[ped].size(); ++t) {
      Position p = tracks[ped][t];
      p.x += rng.uniform(-0.005, 0.005);
      p.y += rng.uniform(-0.005, 0.005);
      records.push_back({start + static_cast<std::int64_t>(t) * kFrameStep, static_cast<std::int64_t>(ped + 1), p});
    }
  }
  return records;
}

inline std::string records_text(const std::vector<Record>& records) {
  std::string out;
  for (const Record& r : records)
    out += std::to_string(r.frame) + "\t" + std::to_string(r.ped_id) + "\t" + format_real(r.position.x) + "\t" +
           format_real(r.position.y) + "\n";
  return out;
}

inline std::string homography_text(const Homography& h) {
  std::string out;
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) out += (c ? " " : "") + format_real(h.matrix()(r, c));
    out += "\n";
  }
  return out;
}

struct FixtureOptions {
  std::uint64_t seed = 1;
  std::size_t track_length = 22;
  std::size_t d_model = 16;
  std::size_t layers = 1;
  std::size_t heads = 2;
  std::size_t max_steps = 20;
  std::size_t batch_size = 16;
  std::string mode = "deterministic";
  std::string out = "out";
};

/// Writes <dir>/<SCENE>/{obsmat.txt, mask.pgm, H.txt} for the five scenes
/// plus <dir>/config.toml referencing them. Returns the config path.
inline std::filesystem::path write_benchmark_fixture(const std::filesystem::path& dir, const FixtureOptions& o = {}) {
  std::filesystem::create_directories(dir);
  std::string cfg = "# synthetic five-scene fixture\n[run]\nscenes = [";
  for (std::size_t i = 0; i < kSceneIds.size(); ++i) cfg += (i ? ", \"" : "\"") + kSceneIds[i] + "\"";
  cfg += "]\nout = \"" + o.out + "\"\n\n";
  for (std::size_t i = 0; i < kSceneIds.size(); ++i) {
    const std::string& id = kSceneIds[i];
    std::filesystem::create_directories(dir / id);
    write_text((dir / id / "obsmat.txt").string(), records_text(fixture_records(i, o.seed, o.track_length)));
    write_text((dir / id / "H.txt").string(), homography_text(fixture_homography()));
    save_pgm((dir / id / "mask.pgm").string(), fixture_raster(i));
    cfg += "[scene." + id + "]\ndataset = \"" + id + "/obsmat.txt\"\nmask = \"" + id + "/mask.pgm\"\nhomography = \"" +
           id + "/H.txt\"\n\n";
  }
  const std::string d = std::to_string(o.d_model);
  const std::string layers = std::to_string(o.layers);
  cfg += "[model]\nmode = \"" + o.mode + "\"\nd_model = " + d + "\nd_scene = " + d + "\nd_latent = " + d +
         "\nencoder_layers = " + layers + "\ndecoder_layers = " + layers + "\nheads = " + std::to_string(o.heads) +
         "\nff_width = " + std::to_string(2 * o.d_model) + "\n\n";
  cfg += "[train]\nlr = 0.001\nlambda_c = 30.0\nlambda_kl = 0.1\nk = 4\nepochs = 100\nbatch_size = " +
         std::to_string(o.batch_size) + "\nmax_steps = " + std::to_string(o.max_steps) + "\nseed = " +
         std::to_string(o.seed) + "\n\n[eval]\nk = 20\nseed = 7\n";
  write_text((dir / "config.toml").string(), cfg);
  return dir / "config.toml";
}

}  // namespace sceneaware::synthetic
