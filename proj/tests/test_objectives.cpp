#include <cmath>
#include <numeric>
#include <vector>

#include <gtest/gtest.h>

#include "dragonnet/estimators.hpp"
#include "dragonnet/objectives.hpp"

namespace dragonnet {
namespace {

using detail::as_span;

Vector vec(std::initializer_list<double> v) {
  Vector out(static_cast<Eigen::Index>(v.size()));
  std::copy(v.begin(), v.end(), out.data());
  return out;
}

struct RandomProblem {
  Predictions pred;
  Vector y, t;
};

RandomProblem random_problem(std::uint64_t seed, Eigen::Index n) {
  Rng rng(seed);
  RandomProblem p;
  p.pred.q0.resize(n);
  p.pred.q1.resize(n);
  p.pred.g.resize(n);
  p.y.resize(n);
  p.t.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    p.pred.q0[i] = rng.normal();
    p.pred.q1[i] = rng.normal() + 1.0;
    p.pred.g[i] = 0.05 + 0.9 * rng.uniform();
    p.t[i] = rng.bernoulli(0.5) ? 1.0 : 0.0;
    p.y[i] = rng.normal(p.t[i], 1.5);
  }
  return p;
}

// Golden-section search; independent of the closed form it checks.
template <class F>
double golden_minimize(F f, double lo, double hi) {
  const double r = (std::sqrt(5.0) - 1.0) / 2.0;
  double a = lo, b = hi;
  double c = b - r * (b - a), d = a + r * (b - a);
  for (int i = 0; i < 200; ++i) {
    if (f(c) < f(d))
      b = d;
    else
      a = c;
    c = b - r * (b - a);
    d = a + r * (b - a);
  }
  return 0.5 * (a + b);
}

TEST(BaseObjective, PerfectOutcomesAndUninformativePropensity) {
  const Vector q = vec({1.0, -2.0, 3.5, 0.0});
  const Vector g = Vector::Constant(4, 0.5);
  const Vector t = vec({0, 1, 1, 0});
  const auto loss = base_objective(as_span(q), as_span(g), as_span(q), as_span(t), 1.0);
  EXPECT_NEAR(loss.total, std::log(2.0), 1e-15);
  EXPECT_NEAR(loss.total, 0.6931, 1e-4);
}

TEST(BaseObjective, AlphaZeroIsMeanSquaredError) {
  const Vector q = vec({1.0, 2.0}), y = vec({0.0, 4.0}), g = vec({0.3, 0.9}), t = vec({1, 0});
  const auto loss = base_objective(as_span(q), as_span(g), as_span(y), as_span(t), 0.0);
  EXPECT_EQ(loss.total, (1.0 + 4.0) / 2.0);
}

TEST(BaseObjective, SinglePointHandEvaluation) {
  const Vector q = vec({0.0}), y = vec({2.0}), g = vec({0.8}), t = vec({1.0});
  const auto loss = base_objective(as_span(q), as_span(g), as_span(y), as_span(t), 1.0);
  EXPECT_NEAR(loss.total, 4.0 - std::log(0.8), 1e-15);
  EXPECT_NEAR(loss.total, 4.2231, 1e-4);
}

TEST(BaseObjective, BoundaryPropensityIsNumericError) {
  const Vector q = vec({0.0}), y = vec({0.0}), t = vec({1.0});
  for (double g : {0.0, 1.0}) {
    const Vector gv = vec({g});
    EXPECT_THROW(base_objective(as_span(q), as_span(gv), as_span(y), as_span(t), 1.0), NumericError);
  }
}

TEST(PerturbedOutcome, Examples) {
  EXPECT_EQ(perturbed_outcome(1.7, 1.0, 0.3, 0.0), 1.7);
  EXPECT_EQ(perturbed_outcome(1.7, 0.0, 0.3, 0.0), 1.7);
  EXPECT_DOUBLE_EQ(perturbed_outcome(1.0, 1.0, 0.5, 0.2), 1.4);
  EXPECT_DOUBLE_EQ(perturbed_outcome(1.0, 0.0, 0.5, 0.2), 0.6);
  EXPECT_THROW(perturbed_outcome(1.0, 1.0, 0.0, 0.2), NumericError);
  EXPECT_THROW(perturbed_outcome(1.0, 1.0, 1.0, 0.2), NumericError);
  EXPECT_THROW(perturbed_outcome(1.0, 1.0, 1.5, 0.2), NumericError);
}

TEST(TregPenalty, Examples) {
  const Vector y = vec({1.0, -1.0, 2.5}), t = vec({1, 0, 1}), g = vec({0.2, 0.5, 0.7});
  EXPECT_EQ(treg_penalty(as_span(y), as_span(y), as_span(t), as_span(g), 0.0), 0.0);

  const Vector y1 = vec({2.0}), q1 = vec({1.0}), t1 = vec({1.0}), g1 = vec({0.5});
  EXPECT_EQ(treg_penalty(as_span(y1), as_span(q1), as_span(t1), as_span(g1), 0.5), 0.0);

  const Vector y2 = vec({0.0}), q2 = vec({1.0}), t2 = vec({0.0});
  EXPECT_EQ(treg_penalty(as_span(y2), as_span(q2), as_span(t2), as_span(g1), 0.0), 1.0);
}

TEST(CleverCovariate, Examples) {
  EXPECT_EQ(clever_covariate(1.0, 0.5), 2.0);
  EXPECT_EQ(clever_covariate(0.0, 0.5), -2.0);
  EXPECT_EQ(clever_covariate(1.0, 0.25), 4.0);
  EXPECT_THROW(clever_covariate(1.0, 0.0), NumericError);
  EXPECT_THROW(clever_covariate(0.0, 1.0), NumericError);
}

TEST(FullObjective, BetaZeroMatchesBaseObjective) {
  const auto p = random_problem(1, 50);
  const Vector qt = outcome_at_treatment(p.pred, p.t);
  const auto base = base_objective(as_span(qt), as_span(p.pred.g), as_span(p.y), as_span(p.t), 1.0);
  const auto full = full_objective(p.pred, p.y, p.t, 1.0, 0.0, 0.37);
  EXPECT_EQ(full.total, base.total);
}

TEST(FullObjective, TotalIsDocumentedCombination) {
  const auto p = random_problem(2, 40);
  const auto l = full_objective(p.pred, p.y, p.t, 0.7, 1.3, -0.2);
  EXPECT_EQ(l.total, (l.outcome_sq_error + 0.7 * l.propensity_xent) + 1.3 * l.treg_penalty);
  EXPECT_EQ(l.alpha, 0.7);
  EXPECT_EQ(l.beta, 1.3);
}

TEST(FullObjective, GradientMatchesFiniteDifferences) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    auto p = random_problem(100 + seed, 12);
    const double alpha = 0.5 + seed % 3, beta = 0.25 * (seed % 5), eps = 0.1 * (static_cast<double>(seed) - 10.0);
    OutputGradients grad;
    full_objective(p.pred, p.y, p.t, alpha, beta, eps, &grad);
    const double h = 1e-6;
    auto total = [&](const Predictions& pr, double e) { return full_objective(pr, p.y, p.t, alpha, beta, e).total; };
    for (Eigen::Index i = 0; i < p.pred.size(); ++i) {
      for (Vector Predictions::*field : {&Predictions::q0, &Predictions::q1, &Predictions::g}) {
        Predictions up = p.pred, down = p.pred;
        (up.*field)[i] += h;
        (down.*field)[i] -= h;
        const double numeric = (total(up, eps) - total(down, eps)) / (2 * h);
        const double analytic = field == &Predictions::q0   ? grad.d_q0[i]
                                : field == &Predictions::q1 ? grad.d_q1[i]
                                                            : grad.d_g[i];
        EXPECT_NEAR(analytic, numeric, 1e-6 + 1e-5 * std::abs(numeric));
      }
    }
    const double numeric_eps = (total(p.pred, eps + h) - total(p.pred, eps - h)) / (2 * h);
    EXPECT_NEAR(grad.d_epsilon, numeric_eps, 1e-6 + 1e-5 * std::abs(numeric_eps));
  }
}

TEST(FullObjective, ClampKeepsBoundaryPropensityFinite) {
  Predictions pred{vec({0.0, 0.0}), vec({0.0, 0.0}), vec({0.0, 1.0})};
  OutputGradients grad;
  const auto l = full_objective(pred, vec({0.0, 0.0}), vec({0.0, 1.0}), 1.0, 0.0, 0.0, &grad);
  EXPECT_TRUE(std::isfinite(l.total));
  EXPECT_EQ(grad.d_g[0], 0.0);
  EXPECT_EQ(grad.d_g[1], 0.0);
}

TEST(FullObjective, NonFiniteTermIsNamed) {
  Predictions pred{vec({std::numeric_limits<double>::infinity()}), vec({0.0}), vec({0.5})};
  try {
    full_objective(pred, vec({0.0}), vec({0.0}), 1.0, 0.0, 0.0);
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    EXPECT_EQ(e.term(), "outcome_sq_error");
  }
}

TEST(OptimalEpsilon, ClosedFormAgreesWithNumericMinimizer) {
  for (std::uint64_t seed = 0; seed < 25; ++seed) {
    const auto p = random_problem(200 + seed, 30);
    const Vector qt = outcome_at_treatment(p.pred, p.t);
    const double closed = optimal_epsilon(as_span(qt), as_span(p.t), as_span(p.pred.g), as_span(p.y));
    const double numeric = golden_minimize(
        [&](double e) { return treg_penalty(as_span(p.y), as_span(qt), as_span(p.t), as_span(p.pred.g), e); }, -10.0,
        10.0);
    EXPECT_NEAR(closed, numeric, 1e-6);
  }
}

TEST(OptimalEpsilon, ObjectiveIsStationaryThere) {
  for (std::uint64_t seed = 0; seed < 25; ++seed) {
    const auto p = random_problem(300 + seed, 40);
    const Vector qt = outcome_at_treatment(p.pred, p.t);
    const double eps = optimal_epsilon(as_span(qt), as_span(p.t), as_span(p.pred.g), as_span(p.y));
    OutputGradients grad;
    full_objective(p.pred, p.y, p.t, 1.0, 1.0, eps, &grad);
    EXPECT_NEAR(grad.d_epsilon, 0.0, 1e-10);
  }
}

TEST(OptimalEpsilon, PenaltyIsConvexWithUniqueMinimizer) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto p = random_problem(400 + seed, 25);
    const Vector qt = outcome_at_treatment(p.pred, p.t);
    auto pen = [&](double e) { return treg_penalty(as_span(p.y), as_span(qt), as_span(p.t), as_span(p.pred.g), e); };
    const double star = optimal_epsilon(as_span(qt), as_span(p.t), as_span(p.pred.g), as_span(p.y));
    Rng rng(seed);
    for (int k = 0; k < 50; ++k) {
      const double a = rng.normal(0.0, 3.0), b = rng.normal(0.0, 3.0), lam = rng.uniform();
      EXPECT_LE(pen(lam * a + (1 - lam) * b), lam * pen(a) + (1 - lam) * pen(b) + 1e-12);
      if (std::abs(a - star) > 1e-6) {
        EXPECT_GT(pen(a), pen(star));
      }
    }
  }
}

TEST(Stationarity, MeanInfluenceVanishesAtTargetedEstimate) {
  for (std::uint64_t seed = 0; seed < 25; ++seed) {
    const auto p = random_problem(500 + seed, 60);
    const Vector qt = outcome_at_treatment(p.pred, p.t);
    const double eps = optimal_epsilon(as_span(qt), as_span(p.t), as_span(p.pred.g), as_span(p.y));
    const auto r = psi_treg(p.pred, eps, p.t, p.y);
    EXPECT_NEAR(r.influence.mean_phi, 0.0, 1e-8);
  }
}

TEST(Consistency, EpsilonZeroLeavesModelUnperturbed) {
  const auto p = random_problem(7, 30);
  const Vector qt = outcome_at_treatment(p.pred, p.t);
  const auto base = base_objective(as_span(qt), as_span(p.pred.g), as_span(p.y), as_span(p.t), 1.0);
  const auto full = full_objective(p.pred, p.y, p.t, 1.0, 1.0, 0.0);
  EXPECT_DOUBLE_EQ(full.treg_penalty, base.outcome_sq_error);
  for (Eigen::Index i = 0; i < qt.size(); ++i) EXPECT_EQ(perturbed_outcome(qt[i], p.t[i], p.pred.g[i], 0.0), qt[i]);
}

TEST(PermutationInvariance, AllLossComponents) {
  const auto p = random_problem(8, 64);
  std::vector<std::size_t> perm = all_rows(64);
  Rng rng(9);
  rng.shuffle(std::span<std::size_t>(perm));
  const Predictions pp = select_rows(p.pred, perm);
  const Vector yp = detail::gather(p.y, perm), tp = detail::gather(p.t, perm);
  const auto a = full_objective(p.pred, p.y, p.t, 1.0, 1.0, 0.3);
  const auto b = full_objective(pp, yp, tp, 1.0, 1.0, 0.3);
  EXPECT_NEAR(a.outcome_sq_error, b.outcome_sq_error, 1e-13);
  EXPECT_NEAR(a.propensity_xent, b.propensity_xent, 1e-13);
  EXPECT_NEAR(a.treg_penalty, b.treg_penalty, 1e-13);
  EXPECT_NEAR(a.total, b.total, 1e-13);
}

TEST(Shapes, MismatchedLengthsAreRejected) {
  const Vector a = vec({1.0, 2.0}), b = vec({1.0});
  EXPECT_THROW(treg_penalty(as_span(a), as_span(b), as_span(a), as_span(a), 0.0), ShapeError);
  EXPECT_THROW(optimal_epsilon(as_span(a), as_span(a), as_span(b), as_span(a)), ShapeError);
}

}  // namespace
}  // namespace dragonnet
