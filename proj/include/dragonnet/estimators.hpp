#pragma once

// ATE estimators built on fitted Q and g, the efficient influence curve, and
// propensity trimming.
//
//   phi(y, t, x; Q, g, psi) = Q(1,x) - Q(0,x) + H(t, g(x)) (y - Q(t,x)) - psi
//
// All means are plain left-to-right sums over the retained rows divided by
// their count.

#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "dragonnet/arch.hpp"
#include "dragonnet/objectives.hpp"

namespace dragonnet {

enum class EstimatorTag { Q, AIPTW, TMLE, TREG };

inline const char* to_string(EstimatorTag tag) {
  switch (tag) {
    case EstimatorTag::Q: return "Q";
    case EstimatorTag::AIPTW: return "AIPTW";
    case EstimatorTag::TMLE: return "TMLE";
    case EstimatorTag::TREG: return "TREG";
  }
  return "?";
}

inline EstimatorTag estimator_from_string(const std::string& s) {
  if (s == "Q") return EstimatorTag::Q;
  if (s == "AIPTW") return EstimatorTag::AIPTW;
  if (s == "TMLE") return EstimatorTag::TMLE;
  if (s == "TREG") return EstimatorTag::TREG;
  throw ConfigError("unknown estimator '" + s + "'");
}

struct TrimBounds {
  double low = 0.01;
  double high = 0.99;

  void validate() const {
    if (!(low >= 0.0 && low < high && high <= 1.0))
      throw ConfigError("trim bounds must satisfy 0 <= low < high <= 1");
  }
  friend bool operator==(const TrimBounds&, const TrimBounds&) = default;
};

struct Estimate {
  double psi_hat = 0.0;
  EstimatorTag estimator_tag = EstimatorTag::Q;
  std::size_t n_used = 0;
  TrimBounds trim_bounds{0.0, 1.0};
};

struct InfluenceValues {
  Vector phi;
  double mean_phi = 0.0;
};

namespace detail {

inline double mean_of(const Vector& v) {
  double acc = 0.0;
  for (Eigen::Index i = 0; i < v.size(); ++i) acc += v[i];
  return acc / static_cast<double>(v.size());
}

inline void check_prediction_inputs(const Predictions& p, const Vector& t, const Vector& y, const char* where) {
  if (p.size() == 0) throw EstimationError(std::string(where) + ": no rows to estimate on");
  if (p.q1.size() != p.size() || p.g.size() != p.size() || t.size() != p.size() || y.size() != p.size())
    throw ShapeError(std::string(where) + ": length mismatch");
}

}  // namespace detail

inline InfluenceValues influence_curve(const Vector& q0, const Vector& q1, const Vector& g, const Vector& t,
                                       const Vector& y, double psi) {
  const auto n = q0.size();
  if (n == 0) throw EstimationError("influence_curve: no rows");
  if (q1.size() != n || g.size() != n || t.size() != n || y.size() != n)
    throw ShapeError("influence_curve: length mismatch");
  InfluenceValues out;
  out.phi.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double h = clever_covariate(t[i], g[i]);
    const double q_t = t[i] == 1.0 ? q1[i] : q0[i];
    out.phi[i] = q1[i] - q0[i] + h * (y[i] - q_t) - psi;
  }
  out.mean_phi = detail::mean_of(out.phi);
  return out;
}

inline InfluenceValues influence_curve(const Predictions& p, const Vector& t, const Vector& y, double psi) {
  return influence_curve(p.q0, p.q1, p.g, t, y, psi);
}

/// Plug-in: mean of Q(1, x_i) - Q(0, x_i).
inline Estimate psi_q(const Predictions& p) {
  if (p.size() == 0) throw EstimationError("psi_q: no rows to estimate on");
  return {detail::mean_of(p.q1 - p.q0), EstimatorTag::Q, static_cast<std::size_t>(p.size())};
}

inline Estimate psi_q(const FittedModel& model, const Matrix& x) {
  if (x.rows() == 0) throw EstimationError("psi_q: no rows to estimate on");
  return psi_q(model.predict(x));
}

struct EstimateWithInfluence {
  Estimate estimate;
  InfluenceValues influence;
};

/// A-IPTW: psi solves the estimating equation for the given Q and g.
inline EstimateWithInfluence psi_aiptw(const Predictions& p, const Vector& t, const Vector& y) {
  detail::check_prediction_inputs(p, t, y, "psi_aiptw");
  Vector terms(p.size());
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    const double h = clever_covariate(t[i], p.g[i]);
    const double q_t = t[i] == 1.0 ? p.q1[i] : p.q0[i];
    terms[i] = p.q1[i] - p.q0[i] + h * (y[i] - q_t);
  }
  const double psi = detail::mean_of(terms);
  return {{psi, EstimatorTag::AIPTW, static_cast<std::size_t>(p.size())}, influence_curve(p, t, y, psi)};
}

struct TmleResult {
  Estimate estimate;
  InfluenceValues influence;
  double epsilon = 0.0;
  Predictions updated;  // Qtilde(0, x), Qtilde(1, x), g
};

/// Closed-form least-squares fluctuation along H, then plug-in on the
/// updated outcomes. `epsilon_override` fixes eps instead of fitting it.
inline TmleResult psi_tmle(const Predictions& p, const Vector& t, const Vector& y,
                           std::optional<double> epsilon_override = std::nullopt) {
  detail::check_prediction_inputs(p, t, y, "psi_tmle");
  double eps = 0.0;
  if (epsilon_override) {
    eps = *epsilon_override;
  } else {
    double num = 0.0, den = 0.0;
    for (Eigen::Index i = 0; i < p.size(); ++i) {
      const double h = clever_covariate(t[i], p.g[i]);
      const double q_t = t[i] == 1.0 ? p.q1[i] : p.q0[i];
      num += h * (y[i] - q_t);
      den += h * h;
    }
    eps = num / den;
  }
  TmleResult out;
  out.epsilon = eps;
  out.updated.g = p.g;
  out.updated.q0.resize(p.size());
  out.updated.q1.resize(p.size());
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    out.updated.q1[i] = p.q1[i] + eps * clever_covariate(1.0, p.g[i]);
    out.updated.q0[i] = p.q0[i] + eps * clever_covariate(0.0, p.g[i]);
  }
  out.estimate = psi_q(out.updated);
  out.estimate.estimator_tag = EstimatorTag::TMLE;
  out.influence = influence_curve(out.updated, t, y, out.estimate.psi_hat);
  return out;
}

/// Plug-in over Qtilde = Q + eps_hat * H with the jointly trained eps_hat.
inline EstimateWithInfluence psi_treg(const Predictions& p, double epsilon_hat, const Vector& t, const Vector& y) {
  auto r = psi_tmle(p, t, y, epsilon_hat);
  r.estimate.estimator_tag = EstimatorTag::TREG;
  return {r.estimate, r.influence};
}

inline EstimateWithInfluence psi_treg(const FittedModel& model, const Matrix& x, const Vector& t, const Vector& y) {
  if (!model.targeted())
    throw MisuseError("psi_treg: model was trained without targeted regularization (beta = 0)");
  return psi_treg(model.predict(x), model.epsilon_hat(), t, y);
}

// --- trimming -------------------------------------------------------------------

struct TrimResult {
  std::vector<std::size_t> retained;
  std::size_t dropped_low = 0;
  std::size_t dropped_high = 0;
};

/// Keeps rows with low <= g_i <= high.
inline TrimResult trim(std::span<const double> g, const TrimBounds& bounds) {
  bounds.validate();
  TrimResult out;
  for (std::size_t i = 0; i < g.size(); ++i) {
    if (g[i] < bounds.low)
      ++out.dropped_low;
    else if (g[i] > bounds.high)
      ++out.dropped_high;
    else
      out.retained.push_back(i);
  }
  if (out.retained.empty())
    throw EstimationError("trim: every row has a propensity outside [" + std::to_string(bounds.low) + ", " +
                          std::to_string(bounds.high) + "]");
  return out;
}

inline TrimResult trim(const Dataset& data, const Vector& g, const TrimBounds& bounds) {
  if (static_cast<std::size_t>(g.size()) != data.size()) throw ShapeError("trim: propensity length mismatch");
  return trim(std::span<const double>(g.data(), static_cast<std::size_t>(g.size())), bounds);
}

/// True when heldout treatment accuracy exceeds 90%, i.e. the dataset should
/// be excluded for lack of overlap.
inline bool overlap_flag(double heldout_treatment_accuracy, double threshold = 0.90) {
  return heldout_treatment_accuracy > threshold;
}

// --- reports --------------------------------------------------------------------

inline Predictions select_rows(const Predictions& p, std::span<const std::size_t> rows) {
  return {detail::gather(p.q0, rows), detail::gather(p.q1, rows), detail::gather(p.g, rows)};
}

struct EstimateRecord {
  Estimate estimate;
  double mean_phi = 0.0;
  std::size_t dropped_low = 0;
  std::size_t dropped_high = 0;
};

struct EstimateReport {
  std::vector<EstimateRecord> records;
  TrimResult trim;

  const EstimateRecord* find(EstimatorTag tag) const {
    for (const auto& r : records)
      if (r.estimate.estimator_tag == tag) return &r;
    return nullptr;
  }
};

/// Trims once and evaluates every requested estimator on the same retained rows.
/// TREG is skipped for models trained without targeted regularization.
inline EstimateReport estimate_all(const Predictions& pred, const Vector& t, const Vector& y,
                                   std::span<const EstimatorTag> which, const TrimBounds& bounds,
                                   std::optional<double> epsilon_hat = std::nullopt) {
  EstimateReport report;
  report.trim = trim(std::span<const double>(pred.g.data(), static_cast<std::size_t>(pred.g.size())), bounds);
  const auto& rows = report.trim.retained;
  const Predictions p = select_rows(pred, rows);
  const Vector tt = detail::gather(t, rows);
  const Vector yy = detail::gather(y, rows);
  for (auto tag : which) {
    EstimateRecord rec;
    switch (tag) {
      case EstimatorTag::Q:
        rec.estimate = psi_q(p);
        rec.mean_phi = influence_curve(p, tt, yy, rec.estimate.psi_hat).mean_phi;
        break;
      case EstimatorTag::AIPTW: {
        auto r = psi_aiptw(p, tt, yy);
        rec.estimate = r.estimate;
        rec.mean_phi = r.influence.mean_phi;
        break;
      }
      case EstimatorTag::TMLE: {
        auto r = psi_tmle(p, tt, yy);
        rec.estimate = r.estimate;
        rec.mean_phi = r.influence.mean_phi;
        break;
      }
      case EstimatorTag::TREG: {
        if (!epsilon_hat) continue;
        auto r = psi_treg(p, *epsilon_hat, tt, yy);
        rec.estimate = r.estimate;
        rec.mean_phi = r.influence.mean_phi;
        break;
      }
    }
    rec.estimate.trim_bounds = bounds;
    rec.dropped_low = report.trim.dropped_low;
    rec.dropped_high = report.trim.dropped_high;
    report.records.push_back(rec);
  }
  return report;
}

inline EstimateReport estimate_all(const FittedModel& model, const Dataset& data, std::span<const EstimatorTag> which,
                                   const TrimBounds& bounds) {
  const auto pred = model.predict(data.x);
  return estimate_all(pred, data.t, data.y, which, bounds,
                      model.targeted() ? std::optional<double>(model.epsilon_hat()) : std::nullopt);
}

inline nlohmann::json to_json(const EstimateRecord& r) {
  return {{"estimator_tag", to_string(r.estimate.estimator_tag)},
          {"psi_hat", r.estimate.psi_hat},
          {"n_used", r.estimate.n_used},
          {"trim_bounds", {r.estimate.trim_bounds.low, r.estimate.trim_bounds.high}},
          {"mean_phi", r.mean_phi},
          {"dropped_low", r.dropped_low},
          {"dropped_high", r.dropped_high}};
}

inline nlohmann::json to_json(const EstimateReport& report) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& r : report.records) arr.push_back(to_json(r));
  return arr;
}

}  // namespace dragonnet
