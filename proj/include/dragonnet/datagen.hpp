#pragma once

// Synthetic data-generating processes with known ground truth.
//
// Each DGP is a small value type holding its documented coefficients, with
// propensity()/outcome surfaces that tests can probe directly, and a
// generate() that draws a Dataset. Draw order inside generate() is fixed:
// covariates row-major, then all treatments, then all outcome noise.

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "dragonnet/dataset.hpp"
#include "dragonnet/rng.hpp"

namespace dragonnet {

/// Linear outcome, logistic selection, constant effect tau.
///
///   x ~ N(0, I_p)
///   g(x) = sigmoid(confounding_strength * w.x),   w_j = 1/sqrt(p)
///   f(x) = sum_j b_j x_j,                         b_j = 1 for even j, 0.5 for odd j
///   y = f(x) + tau * t + noise_sd * N(0, 1)
struct LinearDgp {
  std::size_t p = 10;
  double tau = 1.0;
  double confounding_strength = 1.0;
  double noise_sd = 1.0;

  static double outcome_coefficient(std::size_t j) { return j % 2 == 0 ? 1.0 : 0.5; }

  template <class Row>
  double selection_index(const Row& x) const {
    double s = 0.0;
    for (Eigen::Index j = 0; j < x.size(); ++j) s += x[j];
    return s / std::sqrt(static_cast<double>(p));
  }
  template <class Row>
  double propensity(const Row& x) const {
    return sigmoid(confounding_strength * selection_index(x));
  }
  template <class Row>
  double baseline(const Row& x) const {
    double f = 0.0;
    for (Eigen::Index j = 0; j < x.size(); ++j) f += outcome_coefficient(static_cast<std::size_t>(j)) * x[j];
    return f;
  }

  Dataset generate(std::size_t n, Rng& rng) const {
    if (n < 10) throw ConfigError("gen_dgp_lin: n must be >= 10");
    if (p < 1) throw ConfigError("gen_dgp_lin: p must be >= 1");
    if (!(noise_sd >= 0.0)) throw ConfigError("gen_dgp_lin: noise_sd must be >= 0");
    const auto rows = static_cast<Eigen::Index>(n);
    Dataset d;
    d.x.resize(rows, static_cast<Eigen::Index>(p));
    for (Eigen::Index i = 0; i < d.x.size(); ++i) d.x.data()[i] = rng.normal();
    d.t.resize(rows);
    d.propensity = Vector(rows);
    for (Eigen::Index i = 0; i < rows; ++i) {
      const double g = propensity(d.x.row(i));
      (*d.propensity)[i] = g;
      d.t[i] = rng.bernoulli(g) ? 1.0 : 0.0;
    }
    d.mu0 = Vector(rows);
    d.mu1 = Vector(rows);
    d.y.resize(rows);
    for (Eigen::Index i = 0; i < rows; ++i) {
      const double f = baseline(d.x.row(i));
      (*d.mu0)[i] = f;
      (*d.mu1)[i] = f + tau;
      d.y[i] = (d.t[i] == 1.0 ? (*d.mu1)[i] : (*d.mu0)[i]) + noise_sd * rng.normal();
    }
    d.true_ate = tau;
    return d;
  }
};

inline Dataset gen_dgp_lin(std::size_t n, std::size_t p, double tau, double confounding_strength, double noise_sd,
                           Rng& rng) {
  return LinearDgp{p, tau, confounding_strength, noise_sd}.generate(n, rng);
}

/// Confounders plus covariates that only move the outcome.
///
/// Columns [0, p_confound) drive both treatment and outcome; columns
/// [p_confound, p_confound + p_outcome_only) drive the outcome only.
///
///   c(x) = sum_{j < p_confound} x_j / sqrt(p_confound)
///   o(x) = sum_{outcome-only j} x_j / sqrt(p_outcome_only)   (0 when none)
///   g(x) = sigmoid(c(x))
///   f(x) = 2 c(x) + 0.5 c(x)^2 + o(x)
///   y = f(x) + tau * t + N(0, 1)
struct IrrelevantCovariateDgp {
  std::size_t p_confound = 5;
  std::size_t p_outcome_only = 0;
  double tau = 1.0;
  double noise_sd = 1.0;

  std::size_t p() const { return p_confound + p_outcome_only; }

  template <class Row>
  double confounder_index(const Row& x) const {
    if (p_confound == 0) return 0.0;
    double s = 0.0;
    for (std::size_t j = 0; j < p_confound; ++j) s += x[static_cast<Eigen::Index>(j)];
    return s / std::sqrt(static_cast<double>(p_confound));
  }
  template <class Row>
  double outcome_only_index(const Row& x) const {
    if (p_outcome_only == 0) return 0.0;
    double s = 0.0;
    for (std::size_t j = p_confound; j < p(); ++j) s += x[static_cast<Eigen::Index>(j)];
    return s / std::sqrt(static_cast<double>(p_outcome_only));
  }
  template <class Row>
  double propensity(const Row& x) const {
    return sigmoid(confounder_index(x));
  }
  template <class Row>
  double baseline(const Row& x) const {
    const double c = confounder_index(x);
    return 2.0 * c + 0.5 * c * c + outcome_only_index(x);
  }

  Dataset generate(std::size_t n, Rng& rng) const {
    if (n < 10) throw ConfigError("gen_dgp_irrelevant: n must be >= 10");
    if (p() < 1) throw ConfigError("gen_dgp_irrelevant: need at least one covariate");
    const auto rows = static_cast<Eigen::Index>(n);
    Dataset d;
    d.x.resize(rows, static_cast<Eigen::Index>(p()));
    for (Eigen::Index i = 0; i < d.x.size(); ++i) d.x.data()[i] = rng.normal();
    d.t.resize(rows);
    d.propensity = Vector(rows);
    for (Eigen::Index i = 0; i < rows; ++i) {
      const double g = propensity(d.x.row(i));
      (*d.propensity)[i] = g;
      d.t[i] = rng.bernoulli(g) ? 1.0 : 0.0;
    }
    d.mu0 = Vector(rows);
    d.mu1 = Vector(rows);
    d.y.resize(rows);
    for (Eigen::Index i = 0; i < rows; ++i) {
      const double f = baseline(d.x.row(i));
      (*d.mu0)[i] = f;
      (*d.mu1)[i] = f + tau;
      d.y[i] = (d.t[i] == 1.0 ? (*d.mu1)[i] : (*d.mu0)[i]) + noise_sd * rng.normal();
    }
    d.true_ate = tau;
    return d;
  }
};

inline Dataset gen_dgp_irrelevant(std::size_t n, std::size_t p_confound, std::size_t p_outcome_only, double tau,
                                  Rng& rng) {
  return IrrelevantCovariateDgp{p_confound, p_outcome_only, tau, 1.0}.generate(n, rng);
}

/// Nonlinear response surfaces in the style of the IHDP "setting B" simulation.
///
/// Covariates: the first min(6, p) are N(0, 1), the rest Bernoulli(0.5).
/// Per draw, coefficients beta_j are sampled from {0, .1, .2, .3, .4} with
/// probabilities {.6, .1, .1, .1, .1}.
///
///   mu0(x) = exp((x + 0.5) . beta)
///   mu1(x) = x . beta - omega,   omega = mean(x.beta - mu0) - target_ate
///   g(x)   = sigmoid(-1.2 + 0.8 x0 - 0.6 x1 + 0.5 x2 + 0.7 (x6 - 0.5))
///            (terms whose column does not exist are dropped)
///   y      = mu_t(x) + noise_sd * N(0, 1)
///
/// omega makes the sample ATE equal target_ate for every draw; effects are
/// heterogeneous across rows.
struct IhdpLikeDgp {
  std::size_t p = 25;
  double target_ate = 4.0;
  double noise_sd = 1.0;

  static constexpr std::size_t kContinuous = 6;
  static constexpr double kOffset = 0.5;

  template <class Row>
  double propensity(const Row& x) const {
    double z = -1.2;
    const auto has = [&](std::size_t j) { return static_cast<Eigen::Index>(j) < x.size(); };
    if (has(0)) z += 0.8 * x[0];
    if (has(1)) z -= 0.6 * x[1];
    if (has(2)) z += 0.5 * x[2];
    if (has(6)) z += 0.7 * (x[6] - 0.5);
    return sigmoid(z);
  }

  Dataset generate(std::size_t n, Rng& rng) const {
    if (n < 10) throw ConfigError("gen_dgp_ihdp_like: n must be >= 10");
    if (p < 1) throw ConfigError("gen_dgp_ihdp_like: p must be >= 1");
    const auto rows = static_cast<Eigen::Index>(n);
    const auto cols = static_cast<Eigen::Index>(p);
    Dataset d;
    d.x.resize(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i)
      for (Eigen::Index j = 0; j < cols; ++j)
        d.x(i, j) = static_cast<std::size_t>(j) < kContinuous ? rng.normal() : (rng.bernoulli(0.5) ? 1.0 : 0.0);

    static constexpr double levels[] = {0.0, 0.1, 0.2, 0.3, 0.4};
    static constexpr double cumulative[] = {0.6, 0.7, 0.8, 0.9, 1.0};
    Vector beta(cols);
    for (Eigen::Index j = 0; j < cols; ++j) {
      const double u = rng.uniform();
      std::size_t k = 0;
      while (k < 4 && u >= cumulative[k]) ++k;
      beta[j] = levels[k];
    }

    d.t.resize(rows);
    d.propensity = Vector(rows);
    for (Eigen::Index i = 0; i < rows; ++i) {
      const double g = propensity(d.x.row(i));
      (*d.propensity)[i] = g;
      d.t[i] = rng.bernoulli(g) ? 1.0 : 0.0;
    }

    Vector linear = d.x * beta;
    Vector mu0 = ((d.x.array() + kOffset).matrix() * beta).array().exp();
    double gap = 0.0;
    for (Eigen::Index i = 0; i < rows; ++i) gap += linear[i] - mu0[i];
    const double omega = gap / static_cast<double>(rows) - target_ate;
    Vector mu1 = linear.array() - omega;

    d.y.resize(rows);
    for (Eigen::Index i = 0; i < rows; ++i)
      d.y[i] = (d.t[i] == 1.0 ? mu1[i] : mu0[i]) + noise_sd * rng.normal();
    d.mu0 = std::move(mu0);
    d.mu1 = std::move(mu1);
    return d;
  }
};

inline Dataset gen_dgp_ihdp_like(std::size_t n, std::size_t p, Rng& rng) {
  return IhdpLikeDgp{p, 4.0, 1.0}.generate(n, rng);
}

}  // namespace dragonnet
