#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <set>
#include <span>
#include <vector>

#include "sceneaware/autodiff.hpp"
#include "sceneaware/losses.hpp"
#include "sceneaware/model.hpp"
#include "sceneaware/nn.hpp"
#include "sceneaware/random.hpp"
#include "sceneaware/scene.hpp"

namespace sceneaware {

struct TrainConfig {
  Variant mode = Variant::Deterministic;
  double lr = 0.001;
  double lambda_c = 30.0;
  double lambda_kl = 0.1;
  std::size_t k = 20;
  std::size_t epochs = 100;
  std::size_t batch_size = 32;
  std::size_t max_steps = 0;  // 0: no cap beyond epochs
  std::uint64_t seed = 13;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double clip_norm = 0.0;  // 0 disables global-norm clipping
  bool shuffle = true;

  void validate() const {
    if (!(lr > 0.0)) throw Error(Errc::InvalidArgument, "learning rate must be > 0");
    if (!(lambda_c >= 0.0) || !(lambda_kl >= 0.0)) throw Error(Errc::NegativeWeight, "loss weights must be >= 0");
    if (k < 1) throw Error(Errc::InvalidK, "K must be >= 1");
    if (batch_size < 1) throw Error(Errc::InvalidArgument, "batch size must be >= 1");
    if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0 && epsilon > 0.0))
      throw Error(Errc::InvalidArgument, "invalid Adam hyperparameters");
    if (!(clip_norm >= 0.0)) throw Error(Errc::InvalidArgument, "clip norm must be >= 0");
  }
};

struct OptimizerState {
  std::vector<nn::Matrix> first_moment;
  std::vector<nn::Matrix> second_moment;
  std::size_t step = 0;

  static OptimizerState for_store(const nn::ParamStore& store) {
    return {store.zeros_like(), store.zeros_like(), 0};
  }
};

/// One bias-corrected Adam update, in place.
inline void adam_step(nn::ParamStore& params, const nn::Gradients& grads, OptimizerState& state, double lr,
                      double beta1, double beta2, double epsilon) {
  if (grads.size() != params.size() || state.first_moment.size() != params.size() ||
      state.second_moment.size() != params.size())
    throw Error(Errc::ShapeMismatch, "adam_step: tensor counts differ");
  for (std::size_t i = 0; i < params.size(); ++i) {
    const nn::Matrix& p = params[i].value;
    if (grads[i].rows() != p.rows() || grads[i].cols() != p.cols() || state.first_moment[i].rows() != p.rows() ||
        state.first_moment[i].cols() != p.cols() || state.second_moment[i].rows() != p.rows() ||
        state.second_moment[i].cols() != p.cols())
      throw Error(Errc::ShapeMismatch, "adam_step: shape of '" + params[i].name + "'");
    if (!grads[i].allFinite()) throw Error(Errc::NonFiniteGradient, "gradient of '" + params[i].name + "'");
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double correction1 = 1.0 - std::pow(beta1, t);
  const double correction2 = 1.0 - std::pow(beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto m = state.first_moment[i].array();
    auto v = state.second_moment[i].array();
    const auto g = grads[i].array();
    m = beta1 * m + (1.0 - beta1) * g;
    v = beta2 * v + (1.0 - beta2) * g.square();
    params[i].value.array() -= lr * (m / correction1) / ((v / correction2).sqrt() + epsilon);
  }
}

/// Graph of one window's training objective plus its logged components.
struct WindowObjective {
  ad::Var total;
  LossComponents components;
  std::size_t best_index = 0;
};

/// Builds the objective for one window on `tape`. Stochastic mode needs
/// `noise` to hold K rows of shape 1 x d_latent (the reparameterization eps).
inline WindowObjective window_objective(ad::Tape& tape, const std::vector<ad::Var>& p, const ModelParams& m,
                                        const Window& w, const SceneContext& ctx, double lambda_c, double lambda_kl,
                                        std::span<const nn::Matrix> noise = {}) {
  const NormalizedObservation n = normalize_observed(w.observed, m.dims().t_obs);
  if (w.future.size() != m.dims().t_pred) throw Error(Errc::DimensionMismatch, "window future length");
  const nn::Matrix gt = graph::positions_matrix(w.future);
  const ad::Var e = graph::encode(tape, p, m, n.points);
  const ad::Var s = graph::scene_row(tape, m, ctx.feature);
  WindowObjective out;

  if (m.variant() == Variant::Deterministic) {
    const ad::Var pred = graph::decode(tape, p, m, e, s, n.origin);
    const ad::Var mse = ad::mean_squared_row_error(pred, gt);
    const auto positions = to_positions(pred.value());
    out.components.mse_or_best = mse.scalar();
    out.components.collision_exact = collision_loss(positions, ctx, lambda_c, CollisionMode::Exact);
    if (lambda_c > 0.0) {
      const ad::Var coll = graph::collision_surrogate(pred, ctx, lambda_c);
      out.components.collision_surrogate = coll.scalar();
      out.total = ad::add(mse, coll);
    } else {
      out.total = mse;
    }
    return out;
  }

  if (noise.empty()) throw Error(Errc::InvalidK, "stochastic objective needs at least one noise sample");
  const graph::Latent lat = graph::latent(p, m, e);
  std::vector<ad::Var> sample_mse;
  std::vector<ad::Var> sample_coll;
  double exact = 0.0;
  for (const nn::Matrix& eps : noise) {
    const ad::Var z = ad::reparameterize(lat.mu, lat.log_var, eps);
    const ad::Var pred = graph::decode(tape, p, m, z, s, n.origin);
    sample_mse.push_back(ad::mean_squared_row_error(pred, gt));
    exact += collision_loss(to_positions(pred.value()), ctx, lambda_c, CollisionMode::Exact);
    if (lambda_c > 0.0) sample_coll.push_back(graph::collision_surrogate(pred, ctx, lambda_c));
  }
  std::size_t best = 0;
  for (std::size_t k = 1; k < sample_mse.size(); ++k)
    if (sample_mse[k].scalar() < sample_mse[best].scalar()) best = k;
  const double inv_k = 1.0 / static_cast<double>(noise.size());
  const ad::Var kl = ad::gaussian_kl(lat.mu, lat.log_var);
  std::vector<ad::Var> terms{sample_mse[best], kl};
  std::vector<double> weights{1.0, lambda_kl};
  double surrogate = 0.0;
  for (const ad::Var& c : sample_coll) {
    terms.push_back(c);
    weights.push_back(inv_k);
    surrogate += c.scalar() * inv_k;
  }
  out.total = ad::weighted_sum(terms, weights);
  out.best_index = best;
  out.components.mse_or_best = sample_mse[best].scalar();
  out.components.kl = kl.scalar();
  out.components.collision_exact = exact * inv_k;
  out.components.collision_surrogate = surrogate;
  return out;
}

/// eps for window `item` at training step `step`, one 1 x d_latent row per sample.
inline std::vector<nn::Matrix> training_noise(std::uint64_t seed, std::uint64_t step, std::uint64_t item,
                                              std::size_t k, std::size_t d_latent) {
  const CounterRng rng(seed ^ 0x7a11ab1e5eedULL);
  std::vector<nn::Matrix> eps;
  eps.reserve(k);
  for (std::size_t i = 0; i < k; ++i) eps.push_back(sample_noise(rng, step + 1, item, i, d_latent));
  return eps;
}

/// A scalar objective over model parameters with optional analytic gradient.
struct LossFunction {
  bool smooth = true;
  std::function<double(const ModelParams&, nn::Gradients*)> eval;
};

/// Training objective of one window with fixed noise.
inline LossFunction window_loss(const Window& w, const SceneContext& ctx, double lambda_c, double lambda_kl,
                                std::vector<nn::Matrix> noise = {}) {
  return {true, [w, &ctx, lambda_c, lambda_kl, noise = std::move(noise)](const ModelParams& m, nn::Gradients* g) {
            ad::Tape tape;
            const auto p = nn::bind(tape, m.store(), g);
            const WindowObjective obj = window_objective(tape, p, m, w, ctx, lambda_c, lambda_kl, noise);
            if (g) tape.backward(obj.total);
            return obj.total.scalar();
          }};
}

/// The exact indicator penalty; piecewise constant, so never differentiable.
inline LossFunction exact_collision_objective(const Window& w, const SceneContext& ctx, double lambda_c) {
  return {false, [w, &ctx, lambda_c](const ModelParams& m, nn::Gradients*) {
            return collision_loss(predict_deterministic(w.observed, ctx, m), ctx, lambda_c, CollisionMode::Exact);
          }};
}

/// Central-difference gradient check on `probe_count` randomly chosen
/// scalars: max |g_analytic - g_numeric| / max(1e-8, |g_numeric|).
inline double finite_diff_check(const LossFunction& loss, ModelParams params, std::size_t probe_count,
                                double h = 1e-4, std::uint64_t seed = 0) {
  if (!loss.smooth) throw Error(Errc::NonSmoothLoss, "loss is not differentiable");
  nn::ParamStore& store = params.store();
  nn::Gradients analytic = store.zeros_like();
  const double base = loss.eval(params, &analytic);
  if (!std::isfinite(base)) throw Error(Errc::NonFinite, "loss is not finite at the probe point");

  std::vector<std::pair<std::size_t, Eigen::Index>> flat;
  for (std::size_t t = 0; t < store.size(); ++t)
    for (Eigen::Index i = 0; i < store[t].value.size(); ++i) flat.emplace_back(t, i);
  Rng rng(seed);
  std::set<std::size_t> chosen;
  const std::size_t n = std::min(probe_count, flat.size());
  while (chosen.size() < n) chosen.insert(rng.index(flat.size()));

  double worst = 0.0;
  for (const std::size_t c : chosen) {
    const auto [t, i] = flat[c];
    double& x = store[t].value.data()[i];
    const double saved = x;
    x = saved + h;
    const double up = loss.eval(params, nullptr);
    x = saved - h;
    const double down = loss.eval(params, nullptr);
    x = saved;
    if (!std::isfinite(up) || !std::isfinite(down)) throw Error(Errc::NonFinite, "loss is not finite near probe");
    const double numeric = (up - down) / (2.0 * h);
    const double err = std::abs(analytic[t].data()[i] - numeric) / std::max(1e-8, std::abs(numeric));
    worst = std::max(worst, err);
  }
  return worst;
}

inline double global_norm(const nn::Gradients& g) {
  double acc = 0.0;
  for (const auto& m : g) acc += m.squaredNorm();
  return std::sqrt(acc);
}

struct FitResult {
  ModelParams params;
  std::vector<LossBreakdown> log;
};

/// Called after every optimizer step with the 1-based step number.
using StepHook = std::function<void(std::size_t, const ModelParams&, const LossBreakdown&)>;

/// Mini-batch training from `init`. Windows in a batch are reduced in index
/// order, so identical inputs give bit-identical parameters.
inline FitResult fit(ModelParams init, const std::vector<Window>& windows, const SceneRegistry& scenes,
                     const TrainConfig& cfg, const StepHook& on_step = {}) {
  cfg.validate();
  if (windows.empty()) throw Error(Errc::EmptyDataset, "no training windows");
  if (init.variant() != cfg.mode) throw Error(Errc::InvalidArgument, "model variant differs from training mode");
  std::vector<const SceneContext*> ctx(windows.size());
  for (std::size_t i = 0; i < windows.size(); ++i) {
    const auto it = scenes.find(windows[i].scene_id);
    if (it == scenes.end()) throw Error(Errc::UnregisteredScene, "scene '" + windows[i].scene_id + "'");
    ctx[i] = &it->second;
  }

  FitResult result{std::move(init), {}};
  ModelParams& m = result.params;
  OptimizerState opt = OptimizerState::for_store(m.store());
  std::vector<std::size_t> order(windows.size());
  std::size_t step = 0;
  const std::size_t k = cfg.mode == Variant::Stochastic ? cfg.k : 0;

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    if (cfg.shuffle) {
      Rng rng(cfg.seed ^ splitmix64(epoch + 0x5f0f5f0fULL));
      for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.index(i)]);
    }
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      if (cfg.max_steps > 0 && step >= cfg.max_steps) return result;
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      const double inv_b = 1.0 / static_cast<double>(end - start);
      nn::Gradients grads = m.store().zeros_like();
      LossComponents mean;
      for (std::size_t b = start; b < end; ++b) {
        const std::size_t wi = order[b];
        const auto noise = k > 0 ? training_noise(cfg.seed, step, wi, k, m.dims().d_latent) : std::vector<nn::Matrix>{};
        ad::Tape tape;
        const auto p = nn::bind(tape, m.store(), &grads);
        const WindowObjective obj = window_objective(tape, p, m, windows[wi], *ctx[wi], cfg.lambda_c, cfg.lambda_kl, noise);
        tape.backward(ad::scale(obj.total, inv_b));
        mean.mse_or_best += obj.components.mse_or_best * inv_b;
        mean.kl += obj.components.kl * inv_b;
        mean.collision_exact += obj.components.collision_exact * inv_b;
        mean.collision_surrogate += obj.components.collision_surrogate * inv_b;
      }
      if (cfg.clip_norm > 0.0) {
        const double norm = global_norm(grads);
        if (norm > cfg.clip_norm)
          for (auto& g : grads) g *= cfg.clip_norm / norm;
      }
      adam_step(m.store(), grads, opt, cfg.lr, cfg.beta1, cfg.beta2, cfg.epsilon);
      ++step;
      result.log.push_back(total_loss(cfg.mode, mean, cfg.lambda_c, cfg.lambda_kl));
      if (on_step) on_step(step, m, result.log.back());
    }
  }
  return result;
}

inline FitResult fit(const std::vector<Window>& windows, const SceneRegistry& scenes, const ModelDims& dims,
                     const TrainConfig& cfg, const StepHook& on_step = {}) {
  return fit(ModelParams::create(dims, cfg.mode, cfg.seed), windows, scenes, cfg, on_step);
}

}  // namespace sceneaware
