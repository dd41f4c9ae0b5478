#pragma once

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "sceneaware/categorize.hpp"
#include "sceneaware/config.hpp"
#include "sceneaware/data_ingest.hpp"
#include "sceneaware/error.hpp"
#include "sceneaware/metrics.hpp"
#include "sceneaware/model.hpp"
#include "sceneaware/scene.hpp"
#include "sceneaware/training.hpp"

namespace sceneaware::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitRuntime = 1;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitMaskAlarm = 3;
inline constexpr double kMaskAlarmFraction = 0.90;

/// Exclusive ownership of an output directory for the lifetime of a command.
class OutputLock {
 public:
  explicit OutputLock(const std::filesystem::path& dir) : path_(dir / ".sceneaware.lock") {
    std::filesystem::create_directories(dir);
    const int fd = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
    if (fd < 0) {
      if (errno == EEXIST) throw Error(Errc::Io, "output directory is locked by another run: " + path_.string());
      throw Error(Errc::Io, "cannot create lock file " + path_.string() + ": " + std::strerror(errno));
    }
    const std::string pid = std::to_string(::getpid()) + "\n";
    [[maybe_unused]] const auto n = ::write(fd, pid.data(), pid.size());
    ::close(fd);
  }
  OutputLock(const OutputLock&) = delete;
  OutputLock& operator=(const OutputLock&) = delete;
  ~OutputLock() {
    std::error_code ec;
    std::filesystem::remove(path_, ec);
  }

 private:
  std::filesystem::path path_;
};

/// Everything loaded from a validated config.
struct Workspace {
  RunConfig config;
  SceneRegistry scenes;
  std::map<std::string, std::vector<Record>> records;
  std::map<std::string, std::vector<Window>> windows;
};

inline Workspace load_workspace(RunConfig config) {
  Workspace ws;
  std::unique_ptr<SceneFeatureProvider> provider;
  std::map<std::string, std::string> feature_paths;
  for (const SceneEntry& s : config.scenes) feature_paths[s.id] = s.feature.string();
  PatchEncoderProvider* patch = nullptr;
  if (config.feature_provider == FeatureProviderKind::File) {
    provider = std::make_unique<FileFeatureProvider>(config.dims.d_scene, feature_paths);
  } else {
    auto p = std::make_unique<PatchEncoderProvider>(config.dims.d_scene, config.feature_seed);
    patch = p.get();
    provider = std::move(p);
  }
  for (const SceneEntry& s : config.scenes) {
    Raster raster = load_raster(s.mask.string());
    SceneContext ctx{s.id, WalkabilityMask::from_raster(raster), Homography::load(s.homography.string()), {}};
    if (patch) patch->add_scene(s.id, std::move(raster));
    ctx.feature = scene_feature(*provider, s.id);
    ws.scenes.emplace(s.id, std::move(ctx));
    std::vector<Record> records = load_dataset(s.dataset.string());
    ws.windows[s.id] = build_windows(records, config.dims.horizon(), config.stride, s.id);
    ws.records[s.id] = std::move(records);
  }
  ws.config = std::move(config);
  return ws;
}

inline std::vector<std::string> selected_folds(const RunConfig& c, const std::string& fold) {
  const std::vector<std::string> ids = c.scene_ids();
  if (!fold.empty()) {
    if (std::find(ids.begin(), ids.end(), fold) == ids.end())
      throw Error(Errc::Config, "--fold: scene '" + fold + "' is not in run.scenes");
    return {fold};
  }
  return c.folds.empty() ? ids : c.folds;
}

inline std::filesystem::path checkpoint_path(const std::filesystem::path& out, const std::string& fold) {
  return out / "checkpoints" / (fold + ".json");
}

inline void train_fold(const Workspace& ws, const std::string& held_out, const std::filesystem::path& out,
                       std::ostream& log) {
  const RunConfig& c = ws.config;
  const Fold fold = kfold_split(c.scene_ids(), held_out);
  std::vector<Window> train;
  for (const std::string& id : fold.train_scenes) {
    const auto& w = ws.windows.at(id);
    train.insert(train.end(), w.begin(), w.end());
  }
  std::filesystem::create_directories(out / "checkpoints");
  std::filesystem::create_directories(out / "logs");
  const std::filesystem::path log_path = out / "logs" / (held_out + ".jsonl");
  std::ofstream steps(log_path, std::ios::binary | std::ios::trunc);
  if (!steps) throw Error(Errc::Io, "cannot write " + log_path.string());
  const auto hook = [&](std::size_t step, const ModelParams& m, const LossBreakdown& b) {
    nlohmann::json j = b.to_json(step);
    j["total_exact"] = b.total_exact;
    steps << j.dump() << '\n';
    if (c.checkpoint_every > 0 && step % c.checkpoint_every == 0)
      save_checkpoint((out / "checkpoints" / (held_out + ".step" + std::to_string(step) + ".json")).string(), m);
  };
  FitResult r = fit(train, ws.scenes, c.dims, c.train, hook);
  if (!steps) throw Error(Errc::Io, "write failed for " + log_path.string());
  save_checkpoint(checkpoint_path(out, held_out).string(), r.params);
  log << "fold " << held_out << ": " << train.size() << " training windows, " << r.log.size() << " steps";
  if (!r.log.empty()) log << ", final loss " << format_real(r.log.back().total);
  log << "\n";
}

inline ModelParams load_fold_model(const Workspace& ws, const std::filesystem::path& out, const std::string& fold) {
  const auto path = checkpoint_path(out, fold);
  if (!std::filesystem::exists(path))
    throw Error(Errc::Io, "no checkpoint for fold " + fold + " at " + path.string() + " (run train first)");
  ModelParams m = load_checkpoint(path.string());
  if (m.dims() != ws.config.dims) throw Error(Errc::CheckpointMismatch, "checkpoint dims differ from the config");
  return m;
}

inline std::uint64_t fold_seed(std::uint64_t seed, const std::vector<std::string>& ids, const std::string& fold) {
  const auto it = std::find(ids.begin(), ids.end(), fold);
  return splitmix64(seed + static_cast<std::uint64_t>(it - ids.begin()));
}

inline EvalReport evaluate(const Workspace& ws, const std::vector<std::string>& folds, const std::filesystem::path& out,
                           std::size_t k) {
  const RunConfig& c = ws.config;
  std::vector<WindowResult> results;
  Variant mode = c.train.mode;
  for (const std::string& fold : folds) {
    const ModelParams m = load_fold_model(ws, out, fold);
    mode = m.variant();
    ScenePredictions p = evaluate_windows(m, ws.windows.at(fold), ws.scenes.at(fold), k,
                                          fold_seed(c.eval_seed, c.scene_ids(), fold), c.thresholds);
    for (auto& r : p.results) results.push_back(std::move(r));
  }
  return build_report(mode, k, std::move(results), folds);
}

inline void write_report(const EvalReport& r, const std::filesystem::path& out) {
  std::filesystem::create_directories(out);
  write_text((out / "metrics.json").string(), to_json(r).dump(2) + "\n");
  write_text((out / "per_scene.csv").string(), per_scene_csv(r));
  write_text((out / "per_category.csv").string(), per_category_csv(r));
  write_text((out / "per_window.csv").string(), per_window_csv(r));
}

inline std::string predictions_csv(const Workspace& ws, const std::vector<std::string>& folds,
                                   const std::filesystem::path& out, std::size_t k) {
  const RunConfig& c = ws.config;
  std::ostringstream o;
  o << "window_id,t,x,y,sample_k\n";
  for (const std::string& fold : folds) {
    const ModelParams m = load_fold_model(ws, out, fold);
    const auto& windows = ws.windows.at(fold);
    const ScenePredictions p = evaluate_windows(m, windows, ws.scenes.at(fold), k,
                                                fold_seed(c.eval_seed, c.scene_ids(), fold), c.thresholds);
    for (std::size_t w = 0; w < windows.size(); ++w)
      for (std::size_t s = 0; s < p.samples[w].size(); ++s)
        for (std::size_t t = 0; t < p.samples[w][s].size(); ++t)
          o << p.results[w].window_id << ',' << t + 1 << ',' << format_real(p.samples[w][s][t].x) << ','
            << format_real(p.samples[w][s][t].y) << ',' << s << '\n';
  }
  return o.str();
}

inline std::string categories_csv(const Workspace& ws) {
  std::ostringstream o;
  o << "window_id,category,efficiency,cum_turning,heading_variance\n";
  for (const SceneEntry& s : ws.config.scenes) {
    for (const Window& w : ws.windows.at(s.id)) {
      const std::vector<Position> full = w.full();
      const TrajectoryFeatures f = trajectory_features(full, ws.config.thresholds.min_segment);
      o << w.id() << ',' << to_string(classify(f, ws.config.thresholds)) << ',' << format_real(f.efficiency) << ','
        << format_real(f.cum_turning) << ',' << format_real(f.heading_variance) << '\n';
    }
  }
  return o.str();
}

struct MaskCheckRow {
  std::string scene_id;
  std::size_t walkable = 0;
  std::size_t total = 0;
  double fraction() const { return total == 0 ? 1.0 : static_cast<double>(walkable) / static_cast<double>(total); }
};

inline MaskCheckRow mask_check(const SceneContext& ctx, const std::vector<Record>& records) {
  MaskCheckRow row{ctx.scene_id, 0, records.size()};
  for (const Record& r : records) row.walkable += collision_indicator(ctx, r.position) == 0 ? 1 : 0;
  return row;
}

inline int report_mask_check(const std::vector<MaskCheckRow>& rows, std::ostream& out) {
  bool alarm = false;
  for (const MaskCheckRow& r : rows) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.2f", r.fraction());
    const bool low = r.fraction() < kMaskAlarmFraction;
    out << r.scene_id << " " << buf << " (" << r.walkable << "/" << r.total << " ground-truth points walkable)"
        << (low ? " ALARM" : "") << "\n";
    alarm = alarm || low;
  }
  return alarm ? kExitMaskAlarm : kExitOk;
}

/// Runs one command. `args` excludes the program name. Errors are reported
/// on `err` and mapped to exit codes; nothing escapes as an exception.
inline int run_command(const std::vector<std::string>& args, std::ostream& out = std::cout,
                       std::ostream& err = std::cerr) {
  CLI::App app{"Scene-aware pedestrian trajectory forecasting", "sceneaware"};
  app.require_subcommand(1);
  std::string config_path;
  std::string fold;
  std::string out_dir;
  std::size_t k = 0;
  std::string mask_path, homography_path, dataset_path, scene_id = "scene";

  auto add_common = [&](CLI::App* sub, bool with_fold) {
    sub->add_option("--config", config_path, "Run config file")->required();
    sub->add_option("--out", out_dir, "Output directory (overrides run.out)");
    if (with_fold) sub->add_option("--fold", fold, "Only this held-out scene");
  };
  CLI::App* train = app.add_subcommand("train", "Train one model per leave-one-scene-out fold");
  add_common(train, true);
  CLI::App* eval = app.add_subcommand("eval", "Evaluate trained folds and write metrics");
  add_common(eval, true);
  eval->add_option("--k", k, "Samples per window for stochastic models (default: eval.k)");
  CLI::App* predict = app.add_subcommand("predict", "Write predicted futures for held-out windows");
  add_common(predict, true);
  predict->add_option("--k", k, "Samples per window for stochastic models (default: eval.k)");
  CLI::App* categorize_cmd = app.add_subcommand("categorize", "Label every window with a movement category");
  add_common(categorize_cmd, false);
  CLI::App* mask = app.add_subcommand("mask-check", "Fraction of ground-truth points on walkable pixels");
  mask->add_option("--config", config_path, "Run config file");
  mask->add_option("--mask", mask_path, "Mask image (without --config)");
  mask->add_option("--homography", homography_path, "Homography file (without --config)");
  mask->add_option("--dataset", dataset_path, "Dataset file (without --config)");
  mask->add_option("--scene", scene_id, "Scene label for the report");

  std::vector<std::string> argv_store{"sceneaware"};
  argv_store.insert(argv_store.end(), args.begin(), args.end());
  std::vector<char*> argv;
  for (auto& a : argv_store) argv.push_back(a.data());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (mask->parsed() && config_path.empty()) {
      if (mask_path.empty() || homography_path.empty() || dataset_path.empty())
        throw Error(Errc::Config, "mask-check needs --config or all of --mask, --homography, --dataset");
      for (const auto& p : {mask_path, homography_path, dataset_path})
        if (!std::filesystem::exists(p)) throw Error(Errc::Config, "file not found: " + p);
      const SceneContext ctx{scene_id, load_mask(mask_path), Homography::load(homography_path), {}};
      return report_mask_check({mask_check(ctx, load_dataset(dataset_path))}, out);
    }

    RunConfig config = load_run_config(config_path);
    if (!out_dir.empty()) config.out_dir = out_dir;
    const std::vector<std::string> folds = selected_folds(config, fold);
    const std::filesystem::path out_path = config.out_dir;
    const std::size_t eval_k = k > 0 ? k : config.eval_k;

    if (mask->parsed()) {
      Workspace ws = load_workspace(std::move(config));
      std::vector<MaskCheckRow> rows;
      for (const SceneEntry& s : ws.config.scenes) rows.push_back(mask_check(ws.scenes.at(s.id), ws.records.at(s.id)));
      return report_mask_check(rows, out);
    }

    OutputLock lock(out_path);
    Workspace ws = load_workspace(std::move(config));
    if (train->parsed()) {
      for (const std::string& f : folds) train_fold(ws, f, out_path, out);
    } else if (eval->parsed()) {
      const EvalReport report = evaluate(ws, folds, out_path, eval_k);
      write_report(report, out_path);
      out << report.ade_label() << "/" << report.fde_label() << " AVG " << format_real(report.avg.ade) << "/"
          << format_real(report.avg.fde) << ", collision rate " << format_real(report.collision_rate) << "\n";
    } else if (predict->parsed()) {
      write_text((out_path / "predictions.csv").string(), predictions_csv(ws, folds, out_path, eval_k));
    } else if (categorize_cmd->parsed()) {
      write_text((out_path / "categories.csv").string(), categories_csv(ws));
    }
    return kExitOk;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return e.code() == Errc::Config ? kExitConfig : kExitRuntime;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
}

}  // namespace sceneaware::cli
