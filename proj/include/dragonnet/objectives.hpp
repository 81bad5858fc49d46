#pragma once

// Training objectives.
//
//   R(theta)   = mean (Q(t_i, x_i) - y_i)^2 + alpha * mean CE(g(x_i), t_i)
//   Qtilde     = Q(t, x) + eps * H(t, g(x)),  H(1, g) = 1/g,  H(0, g) = -1/(1 - g)
//   gamma_i    = (y_i - Qtilde(t_i, x_i))^2
//   objective  = R(theta) + beta * mean gamma_i
//
// LossBreakdown::total is always computed as
//   (outcome_sq_error + alpha * propensity_xent) + beta * treg_penalty.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>

#include "dragonnet/nn.hpp"

namespace dragonnet {

/// Model outputs per row: both conditional outcomes and the propensity.
struct Predictions {
  Vector q0;
  Vector q1;
  Vector g;

  Eigen::Index size() const { return q0.size(); }
};

struct LossBreakdown {
  double outcome_sq_error = 0.0;
  double propensity_xent = 0.0;
  double treg_penalty = 0.0;
  double total = 0.0;
  double alpha = 0.0;
  double beta = 0.0;
};

inline double combine_loss(double sq, double xent, double penalty, double alpha, double beta) {
  return (sq + alpha * xent) + beta * penalty;
}

/// Propensity clamp used inside training objectives.
inline constexpr double kPropensityClamp = 1e-12;

inline void require_interior(double g, const char* term) {
  if (!(g > 0.0 && g < 1.0))
    throw NumericError(term, "propensity " + std::to_string(g) + " outside the open interval (0, 1)");
}

inline void require_binary(double t, const char* term) {
  if (t != 0.0 && t != 1.0) throw NumericError(term, "treatment must be 0 or 1");
}

/// H(t, g): 1/g for treated rows, -1/(1-g) for controls.
inline double clever_covariate(double t, double g) {
  require_binary(t, "clever_covariate");
  require_interior(g, "clever_covariate");
  return t == 1.0 ? 1.0 / g : -1.0 / (1.0 - g);
}

inline double perturbed_outcome(double q, double t, double g, double epsilon) {
  require_binary(t, "perturbed_outcome");
  require_interior(g, "perturbed_outcome");
  return q + epsilon * clever_covariate(t, g);
}

namespace detail {

inline void check_lengths(std::size_t n, std::initializer_list<std::size_t> others, const char* where) {
  if (n == 0) throw ShapeError(std::string(where) + ": empty input");
  for (auto m : others)
    if (m != n) throw ShapeError(std::string(where) + ": length mismatch");
}

inline std::span<const double> as_span(const Vector& v) {
  return {v.data(), static_cast<std::size_t>(v.size())};
}

}  // namespace detail

/// Selects Q(t_i, x_i): head 1 where t_i = 1, head 0 otherwise.
inline Vector outcome_at_treatment(const Predictions& p, const Vector& t) {
  Vector out(t.size());
  for (Eigen::Index i = 0; i < t.size(); ++i) out[i] = t[i] == 1.0 ? p.q1[i] : p.q0[i];
  return out;
}

/// Eq. 3 risk with exact (unclamped) cross-entropy; g must lie strictly inside (0, 1).
inline LossBreakdown base_objective(std::span<const double> q_at_t, std::span<const double> g,
                                    std::span<const double> y, std::span<const double> t, double alpha) {
  const std::size_t n = q_at_t.size();
  detail::check_lengths(n, {g.size(), y.size(), t.size()}, "base_objective");
  double sq = 0.0;
  double xent = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    require_binary(t[i], "cross_entropy");
    require_interior(g[i], "cross_entropy");
    const double r = q_at_t[i] - y[i];
    sq += r * r;
    xent += t[i] == 1.0 ? -std::log(g[i]) : -std::log1p(-g[i]);
  }
  LossBreakdown out;
  out.outcome_sq_error = sq / static_cast<double>(n);
  out.propensity_xent = xent / static_cast<double>(n);
  out.alpha = alpha;
  out.total = combine_loss(out.outcome_sq_error, out.propensity_xent, 0.0, alpha, 0.0);
  return out;
}

/// Mean of gamma_i = (y_i - Qtilde_i)^2, with q the outcome at the observed treatment.
inline double treg_penalty(std::span<const double> y, std::span<const double> q, std::span<const double> t,
                           std::span<const double> g, double epsilon) {
  const std::size_t n = y.size();
  detail::check_lengths(n, {q.size(), t.size(), g.size()}, "treg_penalty");
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double r = y[i] - perturbed_outcome(q[i], t[i], g[i], epsilon);
    acc += r * r;
  }
  return acc / static_cast<double>(n);
}

/// Minimizer over eps of sum_i (y_i - q_i - eps * H_i)^2 for fixed outputs.
inline double optimal_epsilon(std::span<const double> q_at_t, std::span<const double> t,
                              std::span<const double> g, std::span<const double> y) {
  const std::size_t n = q_at_t.size();
  detail::check_lengths(n, {t.size(), g.size(), y.size()}, "optimal_epsilon");
  double num = 0.0;
  double den = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double h = clever_covariate(t[i], g[i]);
    num += h * (y[i] - q_at_t[i]);
    den += h * h;
  }
  return num / den;
}

/// dLoss/d(outputs) for one evaluation of full_objective.
struct OutputGradients {
  Vector d_q0;
  Vector d_q1;
  Vector d_g;
  double d_epsilon = 0.0;
};

/// Training objective (Eq. 3 plus beta times the mean targeted penalty).
///
/// g is clamped to [1e-12, 1 - 1e-12] in the cross-entropy and in H; the
/// derivative w.r.t. g is zero where the clamp is active. When `grad` is
/// non-null it receives the gradient of `total` w.r.t. q0, q1, g and eps.
inline LossBreakdown full_objective(const Predictions& pred, const Vector& y, const Vector& t, double alpha,
                                    double beta, double epsilon, OutputGradients* grad = nullptr) {
  const auto n_idx = y.size();
  const auto n = static_cast<std::size_t>(n_idx);
  detail::check_lengths(n,
                        {static_cast<std::size_t>(t.size()), static_cast<std::size_t>(pred.q0.size()),
                         static_cast<std::size_t>(pred.q1.size()), static_cast<std::size_t>(pred.g.size())},
                        "full_objective");
  const double inv_n = 1.0 / static_cast<double>(n);
  if (grad) {
    grad->d_q0 = Vector::Zero(n_idx);
    grad->d_q1 = Vector::Zero(n_idx);
    grad->d_g = Vector::Zero(n_idx);
    grad->d_epsilon = 0.0;
  }
  double sq = 0.0;
  double xent = 0.0;
  double pen = 0.0;
  for (Eigen::Index i = 0; i < n_idx; ++i) {
    const double ti = t[i];
    require_binary(ti, "full_objective");
    const bool treated = ti == 1.0;
    const double q = treated ? pred.q1[i] : pred.q0[i];
    const double graw = pred.g[i];
    const bool clamped = !(graw > kPropensityClamp && graw < 1.0 - kPropensityClamp);
    const double gc = std::clamp(graw, kPropensityClamp, 1.0 - kPropensityClamp);

    const double r = q - y[i];
    sq += r * r;
    xent += treated ? -std::log(gc) : -std::log1p(-gc);

    const double h = treated ? 1.0 / gc : -1.0 / (1.0 - gc);
    const double resid = y[i] - (q + epsilon * h);
    pen += resid * resid;

    if (grad) {
      // d/dq of the outcome terms
      const double dq = 2.0 * r * inv_n + beta * (-2.0 * resid * inv_n);
      (treated ? grad->d_q1[i] : grad->d_q0[i]) = dq;
      if (!clamped) {
        const double dxent = treated ? -1.0 / gc : 1.0 / (1.0 - gc);
        const double dh = treated ? -1.0 / (gc * gc) : -1.0 / ((1.0 - gc) * (1.0 - gc));
        grad->d_g[i] = alpha * dxent * inv_n + beta * (-2.0 * resid * epsilon * dh * inv_n);
      }
      grad->d_epsilon += beta * (-2.0 * resid * h * inv_n);
    }
  }
  LossBreakdown out;
  out.outcome_sq_error = sq * inv_n;
  out.propensity_xent = xent * inv_n;
  out.treg_penalty = pen * inv_n;
  out.alpha = alpha;
  out.beta = beta;
  out.total = combine_loss(out.outcome_sq_error, out.propensity_xent, out.treg_penalty, alpha, beta);
  if (!std::isfinite(out.total)) {
    const char* term = !std::isfinite(out.outcome_sq_error)  ? "outcome_sq_error"
                       : !std::isfinite(out.propensity_xent) ? "propensity_xent"
                                                             : "treg_penalty";
    throw NumericError(term, "objective evaluated to a non-finite value");
  }
  return out;
}

}  // namespace dragonnet
