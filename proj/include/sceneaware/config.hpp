#pragma once

#include <cctype>
#include <cerrno>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "sceneaware/categorize.hpp"
#include "sceneaware/error.hpp"
#include "sceneaware/model.hpp"
#include "sceneaware/training.hpp"

namespace sceneaware {

/// Flat view of a config file: "section.key" -> value and the line it came from.
///
/// Accepted syntax is a subset of TOML: `[section]` or `[a.b]` headers,
/// `key = value` lines with optional dotted keys, `#` comments, and values
/// that are double-quoted strings, integers, floats, booleans, or
/// single-line arrays of those.
class ConfigDocument {
 public:
  struct Entry {
    nlohmann::json value;
    std::size_t line = 0;
  };

  static ConfigDocument parse(std::istream& in) {
    ConfigDocument doc;
    std::string raw;
    std::string section;
    std::size_t line_no = 0;
    while (std::getline(in, raw)) {
      ++line_no;
      const std::string line = trim(strip_comment(raw));
      if (line.empty()) continue;
      if (line.front() == '[') {
        if (line.back() != ']') fail("unterminated section header", line_no);
        section = trim(line.substr(1, line.size() - 2));
        if (!valid_key(section)) fail("invalid section name '" + section + "'", line_no);
        continue;
      }
      const std::size_t eq = line.find('=');
      if (eq == std::string::npos) fail("expected 'key = value'", line_no);
      const std::string key = trim(line.substr(0, eq));
      if (!valid_key(key)) fail("invalid key '" + key + "'", line_no);
      const std::string full = section.empty() ? key : section + "." + key;
      if (doc.entries_.count(full)) fail("duplicate key '" + full + "'", line_no);
      std::size_t pos = 0;
      const std::string rest = trim(line.substr(eq + 1));
      nlohmann::json value = parse_value(rest, pos, line_no);
      if (pos != rest.size()) fail("trailing characters after value", line_no);
      doc.entries_[full] = {std::move(value), line_no};
    }
    return doc;
  }

  static ConfigDocument load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error(Errc::Config, "cannot open config file " + path);
    return parse(in);
  }

  bool has(const std::string& key) const { return entries_.count(key) != 0; }
  const Entry* find(const std::string& key) const {
    auto it = entries_.find(key);
    return it == entries_.end() ? nullptr : &it->second;
  }
  const std::map<std::string, Entry>& entries() const { return entries_; }

 private:
  [[noreturn]] static void fail(const std::string& msg, std::size_t line) {
    throw Error(Errc::Config, "line " + std::to_string(line) + ": " + msg, line);
  }

  static std::string strip_comment(const std::string& s) {
    bool quoted = false;
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (s[i] == '"' && (i == 0 || s[i - 1] != '\\')) quoted = !quoted;
      if (s[i] == '#' && !quoted) return s.substr(0, i);
    }
    return s;
  }

  static std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
  }

  static bool valid_key(const std::string& k) {
    if (k.empty() || k.front() == '.' || k.back() == '.') return false;
    for (char c : k)
      if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-' || c == '.')) return false;
    return k.find("..") == std::string::npos;
  }

  static void skip_space(const std::string& s, std::size_t& pos) {
    while (pos < s.size() && (s[pos] == ' ' || s[pos] == '\t')) ++pos;
  }

  static nlohmann::json parse_value(const std::string& s, std::size_t& pos, std::size_t line) {
    skip_space(s, pos);
    if (pos >= s.size()) fail("missing value", line);
    if (s[pos] == '"') {
      std::string out;
      for (++pos; pos < s.size() && s[pos] != '"'; ++pos) {
        if (s[pos] == '\\' && pos + 1 < s.size()) {
          const char e = s[++pos];
          out += e == 'n' ? '\n' : (e == 't' ? '\t' : e);
        } else {
          out += s[pos];
        }
      }
      if (pos >= s.size()) fail("unterminated string", line);
      ++pos;
      return out;
    }
    if (s[pos] == '[') {
      nlohmann::json arr = nlohmann::json::array();
      ++pos;
      skip_space(s, pos);
      if (pos < s.size() && s[pos] == ']') return ++pos, arr;
      for (;;) {
        nlohmann::json v = parse_value(s, pos, line);
        if (v.is_array()) fail("nested arrays are not supported", line);
        arr.push_back(std::move(v));
        skip_space(s, pos);
        if (pos >= s.size()) fail("unterminated array", line);
        if (s[pos] == ']') return ++pos, arr;
        if (s[pos] != ',') fail("expected ',' or ']' in array", line);
        ++pos;
        skip_space(s, pos);
        if (pos < s.size() && s[pos] == ']') return ++pos, arr;
      }
    }
    std::size_t end = pos;
    while (end < s.size() && s[end] != ',' && s[end] != ']' && s[end] != ' ' && s[end] != '\t') ++end;
    const std::string token = s.substr(pos, end - pos);
    pos = end;
    if (token == "true") return true;
    if (token == "false") return false;
    std::string digits;
    for (char c : token)
      if (c != '_') digits += c;
    if (digits.empty()) fail("missing value", line);
    const bool integral = digits.find_first_of(".eE") == std::string::npos && digits != "inf" && digits != "nan";
    char* stop = nullptr;
    if (integral) {
      errno = 0;
      const long long v = std::strtoll(digits.c_str(), &stop, 10);
      if (*stop == '\0' && errno == 0) return v;
    } else {
      const double v = std::strtod(digits.c_str(), &stop);
      if (*stop == '\0' && std::isfinite(v)) return v;
    }
    fail("cannot parse value '" + token + "'", line);
  }

  std::map<std::string, Entry> entries_;
};

struct SceneEntry {
  std::string id;
  std::filesystem::path dataset;
  std::filesystem::path mask;
  std::filesystem::path homography;
  std::filesystem::path feature;  // empty unless the file provider is used
};

enum class FeatureProviderKind { Patch, File };

struct RunConfig {
  std::filesystem::path config_path;
  std::vector<SceneEntry> scenes;  // in run.scenes order
  bool adhoc = false;
  std::filesystem::path out_dir;
  std::vector<std::string> folds;  // held-out scenes to run; empty means all
  std::size_t stride = 1;
  ModelDims dims;
  TrainConfig train;
  std::size_t checkpoint_every = 0;
  std::size_t eval_k = 20;
  std::uint64_t eval_seed = 0;
  FeatureProviderKind feature_provider = FeatureProviderKind::Patch;
  std::uint64_t feature_seed = 0;
  CategoryThresholds thresholds;

  std::vector<std::string> scene_ids() const {
    std::vector<std::string> ids;
    for (const SceneEntry& s : scenes) ids.push_back(s.id);
    return ids;
  }
};

inline constexpr std::size_t kBenchmarkScenes = 5;

namespace detail {

/// Typed access to a ConfigDocument that remembers which keys were read so
/// leftovers can be reported as unknown.
class ConfigReader {
 public:
  explicit ConfigReader(const ConfigDocument& doc) : doc_(doc) {}

  [[noreturn]] void fail(const std::string& key, const std::string& msg) const {
    const auto* e = doc_.find(key);
    const std::size_t line = e ? e->line : 0;
    const std::string where = line ? "line " + std::to_string(line) + ": " : std::string();
    throw Error(Errc::Config, where + key + ": " + msg, line);
  }

  const nlohmann::json* get(const std::string& key) {
    const auto* e = doc_.find(key);
    if (!e) return nullptr;
    used_.insert(key);
    return &e->value;
  }

  std::string string(const std::string& key, const std::string& fallback) {
    const auto* v = get(key);
    if (!v) return fallback;
    if (!v->is_string()) fail(key, "expected a string");
    return v->get<std::string>();
  }

  double real(const std::string& key, double fallback) {
    const auto* v = get(key);
    if (!v) return fallback;
    if (!v->is_number()) fail(key, "expected a number");
    return v->get<double>();
  }

  std::size_t count(const std::string& key, std::size_t fallback, std::size_t min = 0) {
    const auto* v = get(key);
    if (!v) return fallback;
    if (!v->is_number_integer() || v->get<long long>() < 0) fail(key, "expected a non-negative integer");
    const auto n = v->get<std::size_t>();
    if (n < min) fail(key, "must be >= " + std::to_string(min));
    return n;
  }

  std::uint64_t seed(const std::string& key, std::uint64_t fallback) {
    return static_cast<std::uint64_t>(count(key, static_cast<std::size_t>(fallback)));
  }

  bool boolean(const std::string& key, bool fallback) {
    const auto* v = get(key);
    if (!v) return fallback;
    if (!v->is_boolean()) fail(key, "expected true or false");
    return v->get<bool>();
  }

  std::vector<std::string> strings(const std::string& key) {
    const auto* v = get(key);
    if (!v) return {};
    if (!v->is_array()) fail(key, "expected an array of strings");
    std::vector<std::string> out;
    for (const auto& s : *v) {
      if (!s.is_string()) fail(key, "expected an array of strings");
      out.push_back(s.get<std::string>());
    }
    return out;
  }

  void reject_unused() const {
    for (const auto& [key, entry] : doc_.entries())
      if (!used_.count(key)) throw Error(Errc::Config, "line " + std::to_string(entry.line) + ": unknown key " + key, entry.line);
  }

 private:
  const ConfigDocument& doc_;
  std::set<std::string> used_;
};

inline std::uint64_t parse_seed_env(const char* s) {
  char* end = nullptr;
  errno = 0;
  const unsigned long long v = std::strtoull(s, &end, 10);
  if (*s == '\0' || *end != '\0' || errno != 0 || *s == '-')
    throw Error(Errc::Config, std::string("SCENEAWARE_SEED is not a non-negative integer: '") + s + "'");
  return v;
}

}  // namespace detail

/// Validates a parsed document. Relative paths resolve against `base_dir`.
/// With `check_paths`, every referenced file must exist.
inline RunConfig run_config_from(const ConfigDocument& doc, const std::filesystem::path& base_dir,
                                 bool check_paths = true) {
  detail::ConfigReader r(doc);
  RunConfig c;
  auto resolve = [&](const std::string& key, bool required) -> std::filesystem::path {
    const std::string raw = r.string(key, "");
    if (raw.empty()) {
      if (required) r.fail(key, "required path is missing");
      return {};
    }
    std::filesystem::path p(raw);
    if (p.is_relative()) p = base_dir / p;
    if (check_paths && !std::filesystem::exists(p)) r.fail(key, "file not found: " + p.string());
    return p;
  };

  c.adhoc = r.boolean("run.adhoc", false);
  const std::vector<std::string> ids = r.strings("run.scenes");
  if (ids.empty()) r.fail("run.scenes", "at least one scene is required");
  if (!c.adhoc && ids.size() != kBenchmarkScenes)
    r.fail("run.scenes", "benchmark mode needs exactly 5 scenes (set run.adhoc = true for fewer)");
  std::set<std::string> seen;
  for (const std::string& id : ids)
    if (!seen.insert(id).second) r.fail("run.scenes", "duplicate scene '" + id + "'");

  const std::string provider = r.string("scene_features.provider", "patch");
  if (provider == "patch")
    c.feature_provider = FeatureProviderKind::Patch;
  else if (provider == "file")
    c.feature_provider = FeatureProviderKind::File;
  else
    r.fail("scene_features.provider", "expected \"patch\" or \"file\"");
  c.feature_seed = r.seed("scene_features.seed", 0);

  for (const std::string& id : ids) {
    SceneEntry s;
    s.id = id;
    const std::string prefix = "scene." + id + ".";
    s.dataset = resolve(prefix + "dataset", true);
    s.mask = resolve(prefix + "mask", true);
    s.homography = resolve(prefix + "homography", true);
    s.feature = resolve(prefix + "feature", c.feature_provider == FeatureProviderKind::File);
    c.scenes.push_back(std::move(s));
  }

  const std::string out = r.string("run.out", "out");
  c.out_dir = std::filesystem::path(out).is_relative() ? base_dir / out : std::filesystem::path(out);
  c.folds = r.strings("run.folds");
  for (const std::string& f : c.folds)
    if (!seen.count(f)) r.fail("run.folds", "unknown scene '" + f + "'");

  c.dims.t_obs = r.count("data.t_obs", c.dims.t_obs, 2);
  c.dims.t_pred = r.count("data.t_pred", c.dims.t_pred, 1);
  c.stride = r.count("data.stride", 1, 1);

  c.dims.d_model = r.count("model.d_model", c.dims.d_model, 1);
  c.dims.d_scene = r.count("model.d_scene", c.dims.d_scene, 1);
  c.dims.d_latent = r.count("model.d_latent", c.dims.d_latent, 1);
  c.dims.encoder_layers = r.count("model.encoder_layers", c.dims.encoder_layers);
  c.dims.decoder_layers = r.count("model.decoder_layers", c.dims.decoder_layers);
  c.dims.heads = r.count("model.heads", c.dims.heads, 1);
  c.dims.ff_width = r.count("model.ff_width", c.dims.ff_width, 1);
  if (c.dims.d_model % c.dims.heads != 0) r.fail("model.heads", "must divide model.d_model");
  const std::string mode = r.string("model.mode", "deterministic");
  if (mode == "deterministic")
    c.train.mode = Variant::Deterministic;
  else if (mode == "stochastic")
    c.train.mode = Variant::Stochastic;
  else
    r.fail("model.mode", "expected \"deterministic\" or \"stochastic\"");

  TrainConfig& t = c.train;
  t.lr = r.real("train.lr", t.lr);
  if (!(t.lr > 0.0)) r.fail("train.lr", "must be > 0");
  t.lambda_c = r.real("train.lambda_c", t.lambda_c);
  if (!(t.lambda_c >= 0.0)) r.fail("train.lambda_c", "must be >= 0");
  t.lambda_kl = r.real("train.lambda_kl", t.lambda_kl);
  if (!(t.lambda_kl >= 0.0)) r.fail("train.lambda_kl", "must be >= 0");
  t.k = r.count("train.k", t.k, 1);
  t.epochs = r.count("train.epochs", t.epochs);
  t.batch_size = r.count("train.batch_size", t.batch_size, 1);
  t.max_steps = r.count("train.max_steps", t.max_steps);
  t.seed = r.seed("train.seed", t.seed);
  t.clip_norm = r.real("train.clip_norm", t.clip_norm);
  if (!(t.clip_norm >= 0.0)) r.fail("train.clip_norm", "must be >= 0");
  t.shuffle = r.boolean("train.shuffle", t.shuffle);
  c.checkpoint_every = r.count("train.checkpoint_every", 0);

  c.eval_k = r.count("eval.k", c.eval_k, 1);
  c.eval_seed = r.seed("eval.seed", c.eval_seed);

  CategoryThresholds& th = c.thresholds;
  th.circling_efficiency = r.real("categorize.circling_efficiency", th.circling_efficiency);
  th.circling_turning = r.real("categorize.circling_turning", th.circling_turning);
  th.turning_min = r.real("categorize.turning_min", th.turning_min);
  th.turning_concentration = r.real("categorize.turning_concentration", th.turning_concentration);
  th.highvar_heading_variance = r.real("categorize.highvar_heading_variance", th.highvar_heading_variance);
  th.stationary_path = r.real("categorize.stationary_path", th.stationary_path);
  th.min_segment = r.real("categorize.min_segment", th.min_segment);

  r.reject_unused();

  if (const char* env = std::getenv("SCENEAWARE_SEED")) c.train.seed = detail::parse_seed_env(env);
  return c;
}

inline RunConfig load_run_config(const std::filesystem::path& path, bool check_paths = true) {
  if (!std::filesystem::exists(path)) throw Error(Errc::Config, "config file not found: " + path.string());
  RunConfig c = run_config_from(ConfigDocument::load(path.string()), path.parent_path(), check_paths);
  c.config_path = path;
  return c;
}

}  // namespace sceneaware
