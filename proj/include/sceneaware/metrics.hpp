#pragma once

#include <cstdio>
#include <fstream>
#include <map>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "sceneaware/categorize.hpp"
#include "sceneaware/core_types.hpp"
#include "sceneaware/error.hpp"
#include "sceneaware/model.hpp"
#include "sceneaware/scene.hpp"

namespace sceneaware {

struct Displacement {
  double ade = 0.0;
  double fde = 0.0;
};

/// Mean and final Euclidean error, in meters.
inline Displacement displacement_metrics(std::span<const Position> pred, std::span<const Position> gt) {
  if (pred.size() != gt.size() || pred.empty())
    throw Error(Errc::DimensionMismatch, "prediction has " + std::to_string(pred.size()) + " points, ground truth " +
                                             std::to_string(gt.size()));
  Displacement d;
  for (std::size_t t = 0; t < pred.size(); ++t) {
    require_finite(pred[t], "non-finite prediction");
    require_finite(gt[t], "non-finite ground truth");
    d.ade += distance(pred[t], gt[t]);
  }
  d.ade /= static_cast<double>(pred.size());
  d.fde = distance(pred.back(), gt.back());
  return d;
}

struct MinOverK {
  double min_ade = 0.0;
  double min_fde = 0.0;
  std::size_t ade_index = 0;
  std::size_t fde_index = 0;
};

/// ADE and FDE minimized independently over samples; ties keep the lowest index.
inline MinOverK min_over_k(const std::vector<std::vector<Position>>& samples, std::span<const Position> gt) {
  if (samples.empty()) throw Error(Errc::EmptySamples, "min_over_k needs at least one sample");
  const Displacement first = displacement_metrics(samples[0], gt);
  MinOverK r{first.ade, first.fde, 0, 0};
  for (std::size_t k = 1; k < samples.size(); ++k) {
    const Displacement d = displacement_metrics(samples[k], gt);
    if (d.ade < r.min_ade) r.min_ade = d.ade, r.ade_index = k;
    if (d.fde < r.min_fde) r.min_fde = d.fde, r.fde_index = k;
  }
  return r;
}

/// Fraction of predicted points whose collision indicator is 1.
inline double collision_rate(const std::vector<std::vector<Position>>& preds,
                             const std::vector<const SceneContext*>& ctxs) {
  if (preds.size() != ctxs.size()) throw Error(Errc::DimensionMismatch, "each prediction needs a scene context");
  std::size_t hits = 0;
  std::size_t total = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    if (ctxs[i] == nullptr) throw Error(Errc::UnregisteredScene, "missing scene context");
    for (const Position& p : preds[i]) hits += static_cast<std::size_t>(collision_indicator(*ctxs[i], p));
    total += preds[i].size();
  }
  return total == 0 ? 0.0 : static_cast<double>(hits) / static_cast<double>(total);
}

/// Evaluation of one window. For stochastic models ade/fde hold minADE_K and
/// minFDE_K, and the collision counts cover every sample.
struct WindowResult {
  std::string window_id;
  std::string scene_id;
  double ade = 0.0;
  double fde = 0.0;
  std::optional<Category> category;
  std::size_t collisions = 0;
  std::size_t points = 0;
};

struct CategoryRow {
  Category category = Category::Straight;
  std::size_t count = 0;
  double ade = 0.0;
  double fde = 0.0;
};

struct CategoryTable {
  std::vector<CategoryRow> rows;  // categories with no windows are left out
  std::size_t total = 0;
  double overall_ade = 0.0;  // count-weighted mean of the rows
  double overall_fde = 0.0;
};

inline CategoryTable category_report(std::span<const WindowResult> windows) {
  std::map<Category, CategoryRow> acc;
  for (const WindowResult& w : windows) {
    if (!w.category) throw Error(Errc::UnlabeledWindow, "window " + w.window_id + " has no category");
    CategoryRow& row = acc[*w.category];
    row.category = *w.category;
    ++row.count;
    row.ade += w.ade;
    row.fde += w.fde;
  }
  CategoryTable t;
  for (Category c : kAllCategories) {
    auto it = acc.find(c);
    if (it == acc.end()) continue;
    CategoryRow row = it->second;
    row.ade /= static_cast<double>(row.count);
    row.fde /= static_cast<double>(row.count);
    t.rows.push_back(row);
  }
  for (const CategoryRow& row : t.rows) {
    t.total += row.count;
    t.overall_ade += static_cast<double>(row.count) * row.ade;
    t.overall_fde += static_cast<double>(row.count) * row.fde;
  }
  if (t.total > 0) {
    t.overall_ade /= static_cast<double>(t.total);
    t.overall_fde /= static_cast<double>(t.total);
  }
  return t;
}

struct SceneRow {
  std::string scene_id;
  std::size_t windows = 0;
  double ade = 0.0;
  double fde = 0.0;
  double collision_rate = 0.0;
};

struct EvalReport {
  Variant mode = Variant::Deterministic;
  std::size_t k = 1;
  std::vector<SceneRow> scenes;
  SceneRow avg;  // unweighted mean over scene rows
  double collision_rate = 0.0;  // pooled over every predicted point
  CategoryTable categories;
  std::vector<WindowResult> windows;

  std::string ade_label() const { return mode == Variant::Stochastic ? "minADE_" + std::to_string(k) : "ADE"; }
  std::string fde_label() const { return mode == Variant::Stochastic ? "minFDE_" + std::to_string(k) : "FDE"; }
};

/// Groups window results into scene rows, in `scene_order`, and builds the
/// AVG row and category table.
inline EvalReport build_report(Variant mode, std::size_t k, std::vector<WindowResult> windows,
                               const std::vector<std::string>& scene_order) {
  EvalReport r;
  r.mode = mode;
  r.k = mode == Variant::Stochastic ? k : 1;
  std::size_t hits = 0;
  std::size_t points = 0;
  for (const std::string& id : scene_order) {
    SceneRow row;
    row.scene_id = id;
    std::size_t scene_hits = 0;
    std::size_t scene_points = 0;
    for (const WindowResult& w : windows) {
      if (w.scene_id != id) continue;
      ++row.windows;
      row.ade += w.ade;
      row.fde += w.fde;
      scene_hits += w.collisions;
      scene_points += w.points;
    }
    if (row.windows == 0) continue;
    row.ade /= static_cast<double>(row.windows);
    row.fde /= static_cast<double>(row.windows);
    row.collision_rate = scene_points == 0 ? 0.0 : static_cast<double>(scene_hits) / static_cast<double>(scene_points);
    hits += scene_hits;
    points += scene_points;
    r.scenes.push_back(row);
  }
  r.avg.scene_id = "AVG";
  for (const SceneRow& row : r.scenes) {
    r.avg.windows += row.windows;
    r.avg.ade += row.ade;
    r.avg.fde += row.fde;
    r.avg.collision_rate += row.collision_rate;
  }
  if (!r.scenes.empty()) {
    const double n = static_cast<double>(r.scenes.size());
    r.avg.ade /= n;
    r.avg.fde /= n;
    r.avg.collision_rate /= n;
  }
  r.collision_rate = points == 0 ? 0.0 : static_cast<double>(hits) / static_cast<double>(points);
  r.categories = category_report(windows);
  r.windows = std::move(windows);
  return r;
}

/// Predictions plus metrics for each window of one scene. Stochastic sample
/// noise for window i is seeded from (seed, i).
struct ScenePredictions {
  std::vector<WindowResult> results;
  std::vector<std::vector<std::vector<Position>>> samples;  // [window][sample][t]
};

inline ScenePredictions evaluate_windows(const ModelParams& m, const std::vector<Window>& windows,
                                         const SceneContext& ctx, std::size_t k, std::uint64_t seed,
                                         const CategoryThresholds& thresholds = {}) {
  ScenePredictions out;
  for (std::size_t i = 0; i < windows.size(); ++i) {
    const Window& w = windows[i];
    std::vector<std::vector<Position>> samples;
    if (m.variant() == Variant::Deterministic)
      samples.push_back(predict_deterministic(w.observed, ctx, m));
    else
      samples = predict_stochastic_samples(w.observed, ctx, m, k, splitmix64(seed + i));
    WindowResult r;
    r.window_id = w.id();
    r.scene_id = w.scene_id;
    const MinOverK best = min_over_k(samples, w.future);
    r.ade = best.min_ade;
    r.fde = best.min_fde;
    const std::vector<Position> full = w.full();
    r.category = categorize(full, thresholds);
    for (const auto& s : samples) {
      for (const Position& p : s) r.collisions += static_cast<std::size_t>(collision_indicator(ctx, p));
      r.points += s.size();
    }
    out.results.push_back(std::move(r));
    out.samples.push_back(std::move(samples));
  }
  return out;
}

// Serialization. Numbers use 17 significant digits so files re-read exactly.

inline std::string format_real(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline nlohmann::json to_json(const EvalReport& r) {
  auto scene_json = [](const SceneRow& row) {
    return nlohmann::json{{"scene", row.scene_id},
                          {"windows", row.windows},
                          {"ade", row.ade},
                          {"fde", row.fde},
                          {"collision_rate", row.collision_rate}};
  };
  nlohmann::json j;
  j["mode"] = to_string(r.mode);
  j["k"] = r.k;
  j["ade_label"] = r.ade_label();
  j["fde_label"] = r.fde_label();
  j["units"] = "meters";
  j["scenes"] = nlohmann::json::array();
  for (const SceneRow& row : r.scenes) j["scenes"].push_back(scene_json(row));
  j["avg"] = scene_json(r.avg);
  j["collision_rate"] = r.collision_rate;
  nlohmann::json cats = nlohmann::json::array();
  for (const CategoryRow& row : r.categories.rows)
    cats.push_back({{"category", to_string(row.category)}, {"count", row.count}, {"ade", row.ade}, {"fde", row.fde}});
  j["categories"] = {{"rows", cats},
                     {"total", r.categories.total},
                     {"overall_ade", r.categories.overall_ade},
                     {"overall_fde", r.categories.overall_fde}};
  return j;
}

inline void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(Errc::Io, "cannot write " + path);
  out << text;
  if (!out) throw Error(Errc::Io, "write failed for " + path);
}

inline std::string per_scene_csv(const EvalReport& r) {
  std::ostringstream o;
  o << "scene,windows,ade,fde,collision_rate\n";
  auto line = [&o](const SceneRow& row) {
    o << row.scene_id << ',' << row.windows << ',' << format_real(row.ade) << ',' << format_real(row.fde) << ','
      << format_real(row.collision_rate) << '\n';
  };
  for (const SceneRow& row : r.scenes) line(row);
  line(r.avg);
  return o.str();
}

inline std::string per_category_csv(const EvalReport& r) {
  std::ostringstream o;
  o << "category,count,ade,fde\n";
  for (const CategoryRow& row : r.categories.rows)
    o << to_string(row.category) << ',' << row.count << ',' << format_real(row.ade) << ',' << format_real(row.fde)
      << '\n';
  o << "Overall," << r.categories.total << ',' << format_real(r.categories.overall_ade) << ','
    << format_real(r.categories.overall_fde) << '\n';
  return o.str();
}

inline std::string per_window_csv(const EvalReport& r) {
  std::ostringstream o;
  o << "window_id,ade,fde,category\n";
  for (const WindowResult& w : r.windows)
    o << w.window_id << ',' << format_real(w.ade) << ',' << format_real(w.fde) << ','
      << (w.category ? std::string(to_string(*w.category)) : std::string()) << '\n';
  return o.str();
}

/// Header plus rows of comma-separated cells.
struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
};

inline CsvTable parse_csv(std::istream& in) {
  CsvTable t;
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::size_t start = 0;
    for (;;) {
      const std::size_t comma = line.find(',', start);
      cells.push_back(line.substr(start, comma == std::string::npos ? std::string::npos : comma - start));
      if (comma == std::string::npos) break;
      start = comma + 1;
    }
    if (first) {
      t.header = std::move(cells);
      first = false;
    } else {
      if (cells.size() != t.header.size())
        throw Error(Errc::MalformedLine, "expected " + std::to_string(t.header.size()) + " cells",
                    t.rows.size() + 2);
      t.rows.push_back(std::move(cells));
    }
  }
  return t;
}

inline CsvTable load_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::Io, "cannot open " + path);
  return parse_csv(in);
}

}  // namespace sceneaware
