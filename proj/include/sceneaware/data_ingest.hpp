#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <istream>
#include <map>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "sceneaware/core_types.hpp"
#include "sceneaware/error.hpp"

namespace sceneaware {

/// One row of an ETH/UCY annotation file.
struct Record {
  std::int64_t frame = 0;
  std::int64_t ped_id = 0;
  Position position;
};

struct Fold {
  std::string held_out_scene;
  std::vector<std::string> train_scenes;
};

namespace detail {

inline bool parse_real(std::string_view token, double& out) {
  const char* first = token.data();
  const char* last = token.data() + token.size();
  if (first != last && *first == '+') ++first;
  const auto [ptr, ec] = std::from_chars(first, last, out);
  return ec == std::errc() && ptr == last;
}

inline bool parse_integral(std::string_view token, std::int64_t& out) {
  double value = 0.0;
  if (!parse_real(token, value) || !std::isfinite(value) || value != std::floor(value)) return false;
  if (std::abs(value) > 9.0e15) return false;
  out = static_cast<std::int64_t>(value);
  return true;
}

inline std::vector<std::string_view> split_ws(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && (line[i] == ' ' || line[i] == '\t' || line[i] == '\r' || line[i] == ',')) ++i;
    const std::size_t start = i;
    while (i < line.size() && !(line[i] == ' ' || line[i] == '\t' || line[i] == '\r' || line[i] == ',')) ++i;
    if (i > start) out.push_back(line.substr(start, i - start));
  }
  return out;
}

}  // namespace detail

/// Parses `frame ped_id x y` lines (extra trailing columns are ignored).
/// Output is sorted by (ped_id, frame).
inline std::vector<Record> parse_dataset(std::istream& in) {
  std::vector<Record> records;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    const auto fields = detail::split_ws(line);
    if (fields.size() < 4) throw Error(Errc::MalformedLine, "expected at least 4 fields", line_no);
    Record r;
    if (!detail::parse_integral(fields[0], r.frame) || r.frame < 0)
      throw Error(Errc::MalformedLine, "bad frame index '" + std::string(fields[0]) + "'", line_no);
    if (!detail::parse_integral(fields[1], r.ped_id))
      throw Error(Errc::MalformedLine, "bad pedestrian id '" + std::string(fields[1]) + "'", line_no);
    if (!detail::parse_real(fields[2], r.position.x) || !detail::parse_real(fields[3], r.position.y) ||
        !r.position.finite())
      throw Error(Errc::MalformedLine, "bad coordinate", line_no);
    records.push_back(r);
  }
  std::stable_sort(records.begin(), records.end(), [](const Record& a, const Record& b) {
    return a.ped_id != b.ped_id ? a.ped_id < b.ped_id : a.frame < b.frame;
  });
  for (std::size_t i = 1; i < records.size(); ++i) {
    if (records[i].ped_id == records[i - 1].ped_id && records[i].frame == records[i - 1].frame)
      throw Error(Errc::DuplicateObservation, "pedestrian " + std::to_string(records[i].ped_id) + " frame " +
                                                   std::to_string(records[i].frame));
  }
  return records;
}

inline std::vector<Record> load_dataset(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::Io, "cannot open dataset " + path);
  return parse_dataset(in);
}

/// Modal difference between consecutive frames of the same pedestrian; ties
/// resolve to the smaller step, and 1 is returned when no pair exists.
inline std::int64_t infer_frame_step(const std::vector<Record>& records) {
  std::map<std::int64_t, std::size_t> counts;
  for (std::size_t i = 1; i < records.size(); ++i) {
    if (records[i].ped_id == records[i - 1].ped_id) ++counts[records[i].frame - records[i - 1].frame];
  }
  std::int64_t best = 1;
  std::size_t best_count = 0;
  for (const auto& [step, count] : counts) {
    if (count > best_count) {
      best = step;
      best_count = count;
    }
  }
  return best;
}

struct WindowSummary {
  std::size_t pedestrians = 0;
  std::size_t runs = 0;
  std::size_t short_runs = 0;
  std::size_t windows = 0;
  std::int64_t frame_step = 1;
};

/// Cuts every contiguous per-pedestrian run into overlapping windows of
/// `horizon.total()` frames, advancing by `stride`. Runs never bridge a
/// missing frame. Input must be sorted as `parse_dataset` returns it.
inline std::vector<Window> build_windows(const std::vector<Record>& records, const Horizon& horizon,
                                         std::size_t stride, const std::string& scene_id,
                                         std::int64_t frame_step = 0, WindowSummary* summary = nullptr) {
  if (stride < 1) throw Error(Errc::InvalidArgument, "stride must be >= 1");
  const std::int64_t step = frame_step > 0 ? frame_step : infer_frame_step(records);
  const std::size_t need = horizon.total();
  WindowSummary local;
  local.frame_step = step;
  std::vector<Window> windows;
  std::vector<FramePoint> run;
  std::set<std::int64_t> peds;

  auto flush = [&](std::int64_t ped) {
    if (run.empty()) return;
    ++local.runs;
    if (run.size() < need) {
      ++local.short_runs;
    } else {
      for (std::size_t start = 0; start + need <= run.size(); start += stride) {
        windows.push_back(split_window(std::span<const FramePoint>(run).subspan(start, need), horizon, ped,
                                       scene_id, step));
      }
    }
    run.clear();
  };

  for (std::size_t i = 0; i < records.size(); ++i) {
    const Record& r = records[i];
    peds.insert(r.ped_id);
    if (i > 0) {
      const Record& prev = records[i - 1];
      if (prev.ped_id != r.ped_id || r.frame - prev.frame != step) flush(prev.ped_id);
    }
    run.push_back({r.frame, r.position});
  }
  if (!records.empty()) flush(records.back().ped_id);

  local.pedestrians = peds.size();
  local.windows = windows.size();
  if (summary) *summary = local;
  return windows;
}

/// Groups records into per-pedestrian trajectories (ordered by ped_id).
inline std::vector<Trajectory> group_trajectories(const std::vector<Record>& records, const std::string& scene_id) {
  std::vector<Trajectory> out;
  for (const Record& r : records) {
    if (out.empty() || out.back().ped_id != r.ped_id) out.push_back({r.ped_id, scene_id, {}});
    out.back().frames.push_back({r.frame, r.position});
  }
  return out;
}

/// Leave-one-scene-out fold: `held_out` is tested, the rest train.
inline Fold kfold_split(const std::vector<std::string>& scenes, const std::string& held_out) {
  const std::set<std::string> unique(scenes.begin(), scenes.end());
  if (unique.size() != scenes.size()) throw Error(Errc::InvalidArgument, "scene list contains duplicates");
  if (!unique.contains(held_out)) throw Error(Errc::UnknownScene, "scene '" + held_out + "' is not listed");
  Fold fold{held_out, {}};
  for (const auto& s : scenes)
    if (s != held_out) fold.train_scenes.push_back(s);
  return fold;
}

inline std::vector<Fold> all_folds(const std::vector<std::string>& scenes) {
  std::vector<Fold> folds;
  folds.reserve(scenes.size());
  for (const auto& s : scenes) folds.push_back(kfold_split(scenes, s));
  return folds;
}

}  // namespace sceneaware
