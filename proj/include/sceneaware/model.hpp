#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "sceneaware/autodiff.hpp"
#include "sceneaware/core_types.hpp"
#include "sceneaware/nn.hpp"
#include "sceneaware/random.hpp"
#include "sceneaware/scene.hpp"

namespace sceneaware {

enum class Variant { Deterministic, Stochastic };

inline std::string to_string(Variant v) { return v == Variant::Deterministic ? "deterministic" : "stochastic"; }

inline Variant parse_variant(const std::string& s) {
  if (s == "deterministic") return Variant::Deterministic;
  if (s == "stochastic") return Variant::Stochastic;
  throw Error(Errc::InvalidArgument, "unknown model variant '" + s + "'");
}

struct ModelDims {
  std::size_t t_obs = 8;
  std::size_t t_pred = 12;
  std::size_t d_model = 64;  // trajectory embedding width d_e
  std::size_t d_scene = 64;  // scene feature width d_s
  std::size_t d_latent = 64;
  std::size_t encoder_layers = 2;
  std::size_t decoder_layers = 2;
  std::size_t heads = 4;
  std::size_t ff_width = 128;

  friend bool operator==(const ModelDims&, const ModelDims&) = default;

  Horizon horizon() const { return {t_obs, t_pred}; }

  void validate() const {
    if (t_obs < 1 || t_pred < 1 || d_model < 1 || d_scene < 1 || d_latent < 1 || heads < 1 || ff_width < 1)
      throw Error(Errc::InvalidArgument, "model dimensions must be positive");
    if (d_model % heads != 0) throw Error(Errc::InvalidArgument, "heads must divide d_model");
  }
};

inline nlohmann::json to_json(const ModelDims& d) {
  return {{"t_obs", d.t_obs},     {"t_pred", d.t_pred},
          {"d_model", d.d_model}, {"d_scene", d.d_scene},
          {"d_latent", d.d_latent}, {"encoder_layers", d.encoder_layers},
          {"decoder_layers", d.decoder_layers}, {"heads", d.heads},
          {"ff_width", d.ff_width}};
}

inline ModelDims dims_from_json(const nlohmann::json& j) {
  ModelDims d;
  d.t_obs = j.at("t_obs").get<std::size_t>();
  d.t_pred = j.at("t_pred").get<std::size_t>();
  d.d_model = j.at("d_model").get<std::size_t>();
  d.d_scene = j.at("d_scene").get<std::size_t>();
  d.d_latent = j.at("d_latent").get<std::size_t>();
  d.encoder_layers = j.at("encoder_layers").get<std::size_t>();
  d.decoder_layers = j.at("decoder_layers").get<std::size_t>();
  d.heads = j.at("heads").get<std::size_t>();
  d.ff_width = j.at("ff_width").get<std::size_t>();
  return d;
}

/// Indices of every tensor in the parameter store.
struct ModelLayout {
  nn::LinearIdx embed;
  std::vector<nn::BlockIdx> encoder;
  nn::LayerNormIdx encoder_norm;
  nn::LinearIdx latent_mu;       // stochastic only
  nn::LinearIdx latent_log_var;  // stochastic only
  nn::LinearIdx synth;
  std::size_t queries = 0;
  std::vector<nn::BlockIdx> decoder;
  nn::LayerNormIdx decoder_norm;
  nn::LinearIdx head;
};

/// All trainable weights plus the metadata that produced them. The same
/// (dims, variant, seed) always yields bit-identical initial weights.
class ModelParams {
 public:
  static ModelParams create(const ModelDims& dims, Variant variant, std::uint64_t seed) {
    dims.validate();
    ModelParams m;
    m.dims_ = dims;
    m.variant_ = variant;
    m.seed_ = seed;
    Rng rng(seed);
    const auto d = static_cast<Eigen::Index>(dims.d_model);
    const auto ff = static_cast<Eigen::Index>(dims.ff_width);
    ModelLayout& l = m.layout_;
    nn::ParamStore& s = m.store_;
    l.embed = nn::add_linear(s, "encoder.embed", 2, d, rng);
    for (std::size_t i = 0; i < dims.encoder_layers; ++i)
      l.encoder.push_back(nn::add_block(s, "encoder.layer" + std::to_string(i), d, ff, rng));
    l.encoder_norm = nn::add_layer_norm(s, "encoder.norm", d);
    Eigen::Index context_in = d;
    if (variant == Variant::Stochastic) {
      const auto dz = static_cast<Eigen::Index>(dims.d_latent);
      l.latent_mu = nn::add_linear(s, "latent.mu", d, dz, rng);
      l.latent_log_var = nn::add_linear(s, "latent.log_var", d, dz, rng, 0.1);
      context_in = dz;
    }
    l.synth = nn::add_linear(s, "fusion.synth", context_in + static_cast<Eigen::Index>(dims.d_scene), d, rng);
    nn::Matrix q(static_cast<Eigen::Index>(dims.t_pred), d);
    for (Eigen::Index r = 0; r < q.rows(); ++r)
      for (Eigen::Index c = 0; c < q.cols(); ++c) q(r, c) = 0.1 * rng.normal();
    l.queries = s.add("decoder.queries", std::move(q));
    for (std::size_t i = 0; i < dims.decoder_layers; ++i)
      l.decoder.push_back(nn::add_block(s, "decoder.layer" + std::to_string(i), d, ff, rng));
    l.decoder_norm = nn::add_layer_norm(s, "decoder.norm", d);
    l.head = nn::add_linear(s, "decoder.head", d, 2, rng, 0.1);
    m.encoder_positions_ = nn::sinusoidal_positions(static_cast<Eigen::Index>(dims.t_obs), d);
    m.decoder_positions_ = nn::sinusoidal_positions(static_cast<Eigen::Index>(dims.t_pred), d);
    return m;
  }

  const ModelDims& dims() const noexcept { return dims_; }
  Variant variant() const noexcept { return variant_; }
  std::uint64_t seed() const noexcept { return seed_; }
  const ModelLayout& layout() const noexcept { return layout_; }
  nn::ParamStore& store() noexcept { return store_; }
  const nn::ParamStore& store() const noexcept { return store_; }
  const nn::Matrix& encoder_positions() const noexcept { return encoder_positions_; }
  const nn::Matrix& decoder_positions() const noexcept { return decoder_positions_; }

  nn::Matrix& tensor(const std::string& name) {
    nn::Tensor* t = store_.find(name);
    if (!t) throw Error(Errc::InvalidArgument, "no tensor named '" + name + "'");
    return t->value;
  }

  bool all_finite() const {
    for (const auto& t : store_.tensors())
      if (!t.value.allFinite()) return false;
    return true;
  }

 private:
  ModelParams() = default;

  ModelDims dims_;
  Variant variant_ = Variant::Deterministic;
  std::uint64_t seed_ = 0;
  ModelLayout layout_;
  nn::ParamStore store_;
  nn::Matrix encoder_positions_;
  nn::Matrix decoder_positions_;
};

inline constexpr double kLogVarMin = -10.0;
inline constexpr double kLogVarMax = 10.0;

/// Observed track shifted so its last point is the origin (T_O x 2) and the
/// shift that was removed.
struct NormalizedObservation {
  nn::Matrix points;
  Position origin;
};

inline NormalizedObservation normalize_observed(std::span<const Position> observed, std::size_t t_obs) {
  if (observed.size() != t_obs)
    throw Error(Errc::DimensionMismatch,
                "observed track has " + std::to_string(observed.size()) + " points, expected " + std::to_string(t_obs));
  for (const Position& p : observed) require_finite(p, "observed position is not finite");
  NormalizedObservation n;
  n.origin = observed.back();
  n.points.resize(static_cast<Eigen::Index>(t_obs), 2);
  for (std::size_t i = 0; i < t_obs; ++i) {
    n.points(static_cast<Eigen::Index>(i), 0) = observed[i].x - n.origin.x;
    n.points(static_cast<Eigen::Index>(i), 1) = observed[i].y - n.origin.y;
  }
  return n;
}

/// Forward graph builders shared by inference and training. `p` is the
/// parameter store bound on the caller's tape.
namespace graph {

using ad::Tape;
using ad::Var;

/// e_{T_O}: embed (affine + GELU), add positions, encoder layers, final
/// norm, take the last token. Returns 1 x d_model.
inline Var encode(Tape& tape, const std::vector<Var>& p, const ModelParams& m, const nn::Matrix& normalized) {
  const ModelLayout& l = m.layout();
  Var x = ad::gelu(nn::apply(p, l.embed, tape.constant(normalized)));
  x = ad::add(x, tape.leaf(m.encoder_positions(), nullptr));
  const int heads = static_cast<int>(m.dims().heads);
  for (const auto& block : l.encoder) x = nn::apply(p, block, x, heads);
  x = nn::apply(p, l.encoder_norm, x);
  return ad::slice_rows(x, x.rows() - 1, 1);
}

/// c = f_synth([context; s]) conditioning T_P learned query tokens; the
/// decoder emits per-step offsets that are accumulated from the origin.
/// Returns world positions, T_P x 2.
inline Var decode(Tape& tape, const std::vector<Var>& p, const ModelParams& m, Var context, Var scene,
                  Position origin) {
  const ModelLayout& l = m.layout();
  const Var c = nn::apply(p, l.synth, ad::concat_cols(context, scene));
  Var x = ad::add_row(ad::add(p[l.queries], tape.leaf(m.decoder_positions(), nullptr)), c);
  const int heads = static_cast<int>(m.dims().heads);
  for (const auto& block : l.decoder) x = nn::apply(p, block, x, heads);
  x = nn::apply(p, l.decoder_norm, x);
  const Var offsets = nn::apply(p, l.head, x);
  nn::Matrix shift(1, 2);
  shift << origin.x, origin.y;
  return ad::add_row(ad::cumsum_rows(offsets), tape.constant(std::move(shift)));
}

inline Var scene_row(Tape& tape, const ModelParams& m, const std::vector<double>& feature) {
  if (feature.size() != m.dims().d_scene)
    throw Error(Errc::DimensionMismatch, "scene feature has " + std::to_string(feature.size()) +
                                             " values, model expects " + std::to_string(m.dims().d_scene));
  nn::Matrix s(1, static_cast<Eigen::Index>(feature.size()));
  for (std::size_t i = 0; i < feature.size(); ++i) s(0, static_cast<Eigen::Index>(i)) = feature[i];
  return tape.constant(std::move(s));
}

struct Latent {
  Var mu;
  Var log_var;  // clamped to [kLogVarMin, kLogVarMax]
};

inline Latent latent(const std::vector<Var>& p, const ModelParams& m, Var encoded) {
  if (m.variant() != Variant::Stochastic) throw Error(Errc::InvalidArgument, "model has no latent heads");
  const ModelLayout& l = m.layout();
  return {nn::apply(p, l.latent_mu, encoded),
          ad::clamp(nn::apply(p, l.latent_log_var, encoded), kLogVarMin, kLogVarMax)};
}

}  // namespace graph

inline std::vector<Position> to_positions(const nn::Matrix& m) {
  std::vector<Position> out(static_cast<std::size_t>(m.rows()));
  for (Eigen::Index r = 0; r < m.rows(); ++r) out[static_cast<std::size_t>(r)] = {m(r, 0), m(r, 1)};
  return out;
}

/// e_{T_O} for an already origin-normalized observed track.
inline std::vector<double> encode_trajectory(std::span<const Position> observed_normalized, const ModelParams& m) {
  if (observed_normalized.size() != m.dims().t_obs)
    throw Error(Errc::DimensionMismatch, "encode_trajectory expects " + std::to_string(m.dims().t_obs) + " points");
  nn::Matrix pts(static_cast<Eigen::Index>(observed_normalized.size()), 2);
  for (std::size_t i = 0; i < observed_normalized.size(); ++i) {
    require_finite(observed_normalized[i], "observed position is not finite");
    pts(static_cast<Eigen::Index>(i), 0) = observed_normalized[i].x;
    pts(static_cast<Eigen::Index>(i), 1) = observed_normalized[i].y;
  }
  ad::Tape tape;
  const auto p = nn::bind(tape, m.store(), nullptr);
  const ad::Var e = graph::encode(tape, p, m, pts);
  return std::vector<double>(e.value().data(), e.value().data() + e.value().size());
}

inline std::vector<Position> predict_deterministic(std::span<const Position> observed, const SceneContext& ctx,
                                                   const ModelParams& m) {
  if (m.variant() != Variant::Deterministic) throw Error(Errc::InvalidArgument, "model is not deterministic");
  const NormalizedObservation n = normalize_observed(observed, m.dims().t_obs);
  ad::Tape tape;
  const auto p = nn::bind(tape, m.store(), nullptr);
  const ad::Var e = graph::encode(tape, p, m, n.points);
  const ad::Var out = graph::decode(tape, p, m, e, graph::scene_row(tape, m, ctx.feature), n.origin);
  return to_positions(out.value());
}

/// Standard-normal noise for sample k, dimension i under `seed`.
inline nn::Matrix sample_noise(const CounterRng& rng, std::uint64_t stream, std::uint64_t item, std::uint64_t k,
                               std::size_t dim) {
  nn::Matrix eps(1, static_cast<Eigen::Index>(dim));
  for (std::size_t i = 0; i < dim; ++i) eps(0, static_cast<Eigen::Index>(i)) = rng.normal(stream, item, k, i);
  return eps;
}

/// K futures: z = mu + sigma * eps, c_z = f_synth([z; s]), then decode.
inline std::vector<std::vector<Position>> predict_stochastic_samples(std::span<const Position> observed,
                                                                     const SceneContext& ctx, const ModelParams& m,
                                                                     std::size_t k, std::uint64_t seed) {
  if (m.variant() != Variant::Stochastic) throw Error(Errc::InvalidArgument, "model is not stochastic");
  if (k < 1) throw Error(Errc::InvalidK, "K must be >= 1");
  const NormalizedObservation n = normalize_observed(observed, m.dims().t_obs);
  ad::Tape tape;
  const auto p = nn::bind(tape, m.store(), nullptr);
  const ad::Var e = graph::encode(tape, p, m, n.points);
  const graph::Latent lat = graph::latent(p, m, e);
  const ad::Var s = graph::scene_row(tape, m, ctx.feature);
  const CounterRng rng(seed);
  std::vector<std::vector<Position>> samples;
  samples.reserve(k);
  for (std::size_t i = 0; i < k; ++i) {
    const ad::Var z = ad::reparameterize(lat.mu, lat.log_var, sample_noise(rng, 0, 0, i, m.dims().d_latent));
    samples.push_back(to_positions(graph::decode(tape, p, m, z, s, n.origin).value()));
  }
  return samples;
}

// Checkpoints: a JSON document with dims, variant, seed and every tensor in
// store order. Loading rebuilds the architecture from the stored dims and
// accepts weights only if every name and shape matches.

inline nlohmann::json checkpoint_json(const ModelParams& m) {
  nlohmann::json tensors = nlohmann::json::array();
  for (const auto& t : m.store().tensors()) {
    std::vector<double> data(static_cast<std::size_t>(t.value.size()));
    for (Eigen::Index r = 0; r < t.value.rows(); ++r)
      for (Eigen::Index c = 0; c < t.value.cols(); ++c)
        data[static_cast<std::size_t>(r * t.value.cols() + c)] = t.value(r, c);
    tensors.push_back({{"name", t.name}, {"rows", t.value.rows()}, {"cols", t.value.cols()}, {"data", data}});
  }
  return {{"format", "sceneaware-checkpoint"},
          {"version", 1},
          {"variant", to_string(m.variant())},
          {"seed", m.seed()},
          {"dims", to_json(m.dims())},
          {"tensors", tensors}};
}

inline ModelParams params_from_checkpoint(const nlohmann::json& j) {
  try {
    if (j.at("format").get<std::string>() != "sceneaware-checkpoint" || j.at("version").get<int>() != 1)
      throw Error(Errc::CheckpointMismatch, "unrecognized checkpoint format");
    const ModelDims dims = dims_from_json(j.at("dims"));
    ModelParams m = ModelParams::create(dims, parse_variant(j.at("variant").get<std::string>()),
                                        j.at("seed").get<std::uint64_t>());
    const auto& tensors = j.at("tensors");
    if (tensors.size() != m.store().size()) throw Error(Errc::CheckpointMismatch, "tensor count differs");
    for (std::size_t i = 0; i < tensors.size(); ++i) {
      nn::Tensor& t = m.store()[i];
      const auto& jt = tensors[i];
      if (jt.at("name").get<std::string>() != t.name || jt.at("rows").get<Eigen::Index>() != t.value.rows() ||
          jt.at("cols").get<Eigen::Index>() != t.value.cols())
        throw Error(Errc::CheckpointMismatch, "tensor '" + t.name + "' does not match the architecture");
      const auto data = jt.at("data").get<std::vector<double>>();
      if (data.size() != static_cast<std::size_t>(t.value.size()))
        throw Error(Errc::CheckpointMismatch, "tensor '" + t.name + "' has wrong element count");
      for (Eigen::Index r = 0; r < t.value.rows(); ++r)
        for (Eigen::Index c = 0; c < t.value.cols(); ++c)
          t.value(r, c) = data[static_cast<std::size_t>(r * t.value.cols() + c)];
    }
    if (!m.all_finite()) throw Error(Errc::NonFinite, "checkpoint contains non-finite weights");
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::CheckpointMismatch, std::string("malformed checkpoint: ") + e.what());
  }
}

inline void save_checkpoint(const std::string& path, const ModelParams& m) {
  std::ofstream out(path);
  if (!out) throw Error(Errc::Io, "cannot write checkpoint " + path);
  out << checkpoint_json(m).dump() << "\n";
}

inline ModelParams load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::Io, "cannot open checkpoint " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::CheckpointMismatch, std::string("malformed checkpoint: ") + e.what());
  }
  return params_from_checkpoint(j);
}

}  // namespace sceneaware
