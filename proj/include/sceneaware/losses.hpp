#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "sceneaware/autodiff.hpp"
#include "sceneaware/core_types.hpp"
#include "sceneaware/model.hpp"
#include "sceneaware/scene.hpp"

namespace sceneaware {

enum class CollisionMode { Exact, Surrogate };

/// (1 / T) * sum_t ||pred_t - gt_t||^2
inline double mse_loss(std::span<const Position> pred, std::span<const Position> gt) {
  if (pred.size() != gt.size() || pred.empty()) throw Error(Errc::DimensionMismatch, "mse_loss: length mismatch");
  double acc = 0.0;
  for (std::size_t t = 0; t < pred.size(); ++t) {
    require_finite(pred[t], "mse_loss: non-finite prediction");
    require_finite(gt[t], "mse_loss: non-finite ground truth");
    acc += (pred[t] - gt[t]).squared_norm();
  }
  return acc / static_cast<double>(pred.size());
}

/// lambda * sum_t C(pred_t): the exact mode counts blocked or off-raster
/// points, the surrogate mode sums bilinear occupancy.
inline double collision_loss(std::span<const Position> pred, const SceneContext& ctx, double lambda,
                             CollisionMode mode) {
  if (!(lambda >= 0.0)) throw Error(Errc::NegativeWeight, "collision weight must be >= 0");
  double acc = 0.0;
  for (const Position& p : pred)
    acc += mode == CollisionMode::Exact ? static_cast<double>(collision_indicator(ctx, p)) : soft_occupancy(ctx, p);
  return lambda * acc;
}

struct BestOfK {
  double loss = 0.0;
  std::size_t index = 0;
};

/// Minimum per-sample MSE; ties resolve to the lowest index.
inline BestOfK best_of_k_loss(const std::vector<std::vector<Position>>& samples, std::span<const Position> gt) {
  if (samples.empty()) throw Error(Errc::EmptySamples, "best_of_k_loss needs at least one sample");
  BestOfK best{mse_loss(samples[0], gt), 0};
  for (std::size_t k = 1; k < samples.size(); ++k) {
    const double l = mse_loss(samples[k], gt);
    if (l < best.loss) best = {l, k};
  }
  return best;
}

/// KL(N(mu, exp(log_var)) || N(0, I)) = 0.5 * sum(mu^2 + exp(lv) - lv - 1).
inline double kl_loss(std::span<const double> mu, std::span<const double> log_var) {
  if (mu.size() != log_var.size()) throw Error(Errc::DimensionMismatch, "kl_loss: length mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < mu.size(); ++i) {
    if (!std::isfinite(mu[i]) || !std::isfinite(log_var[i])) throw Error(Errc::NonFinite, "kl_loss: non-finite input");
    acc += mu[i] * mu[i] + std::exp(log_var[i]) - log_var[i] - 1.0;
  }
  return 0.5 * acc;
}

/// Already-weighted loss terms for one window (or a batch mean of them).
struct LossComponents {
  double mse_or_best = 0.0;
  double kl = 0.0;
  double collision_exact = 0.0;      // lambda_C * indicator count
  double collision_surrogate = 0.0;  // lambda_C * occupancy sum
};

struct LossBreakdown {
  Variant mode = Variant::Deterministic;
  double total = 0.0;        // differentiable objective (surrogate collision term)
  double total_exact = 0.0;  // same combination with the exact collision term
  double mse_or_best = 0.0;
  double kl = 0.0;
  double collision_exact = 0.0;
  double collision_surrogate = 0.0;
  double lambda_c = 0.0;
  double lambda_kl = 0.0;

  nlohmann::json to_json(std::size_t step) const {
    return {{"step", step},
            {"total", total},
            {"mse_or_best", mse_or_best},
            {"kl", kl},
            {"collision_exact", collision_exact},
            {"collision_surrogate", collision_surrogate}};
  }
};

/// deterministic: L_D + L_C; stochastic: L_best + lambda_KL * L_KL + L_C.
inline LossBreakdown total_loss(Variant mode, const LossComponents& c, double lambda_c, double lambda_kl) {
  if (!(lambda_c >= 0.0) || !(lambda_kl >= 0.0)) throw Error(Errc::NegativeWeight, "loss weights must be >= 0");
  LossBreakdown b;
  b.mode = mode;
  b.mse_or_best = c.mse_or_best;
  b.kl = mode == Variant::Stochastic ? c.kl : 0.0;
  b.collision_exact = c.collision_exact;
  b.collision_surrogate = c.collision_surrogate;
  b.lambda_c = lambda_c;
  b.lambda_kl = lambda_kl;
  const double base = mode == Variant::Stochastic ? c.mse_or_best + lambda_kl * c.kl : c.mse_or_best;
  b.total = base + c.collision_surrogate;
  b.total_exact = base + c.collision_exact;
  return b;
}

namespace graph {

/// lambda * sum_t soft_occupancy(row t) over a T x 2 world-position Var.
inline ad::Var collision_surrogate(ad::Var positions, const SceneContext& ctx, double lambda) {
  if (!(lambda >= 0.0)) throw Error(Errc::NegativeWeight, "collision weight must be >= 0");
  const ad::Var occ = ad::row_field(positions, [&ctx](const Eigen::RowVectorXd& row, Eigen::RowVectorXd& grad) {
    Position g;
    const double v = soft_occupancy(ctx, {row(0), row(1)}, g);
    grad(0) = g.x;
    grad(1) = g.y;
    return v;
  });
  return ad::scale(ad::sum(occ), lambda);
}

inline nn::Matrix positions_matrix(std::span<const Position> pts) {
  nn::Matrix m(static_cast<Eigen::Index>(pts.size()), 2);
  for (std::size_t i = 0; i < pts.size(); ++i) {
    m(static_cast<Eigen::Index>(i), 0) = pts[i].x;
    m(static_cast<Eigen::Index>(i), 1) = pts[i].y;
  }
  return m;
}

}  // namespace graph

}  // namespace sceneaware
