#pragma once

// Random small network configurations for gradient checks.

#include <cstdint>

#include "dragonnet/arch.hpp"
#include "support/finite_difference.hpp"

namespace dragonnet::testing {

struct GradientCase {
  TrainConfig cfg;
  std::size_t p = 0;
  Matrix x;
  Vector t;
  Vector y;
  double epsilon = 0.0;
};

/// `targeted` selects between the base objective (beta = 0) and the
/// targeted-regularization objective (beta > 0, eps != 0).
inline GradientCase random_gradient_case(std::uint64_t seed, bool targeted) {
  Rng rng(seed);
  GradientCase c;
  c.p = 1 + rng.below(4);
  c.cfg.shared_depth = 1 + rng.below(3);
  c.cfg.shared_width = 2 + rng.below(4);
  c.cfg.representation_width = 2 + rng.below(4);
  c.cfg.head_depth = 1 + rng.below(2);
  c.cfg.head_width = 2 + rng.below(4);
  c.cfg.alpha = 0.1 + 2.0 * rng.uniform();
  c.cfg.beta = targeted ? 0.1 + 2.0 * rng.uniform() : 0.0;
  c.epsilon = targeted ? rng.normal(0.0, 0.5) : 0.0;
  const auto n = static_cast<Eigen::Index>(3 + rng.below(6));
  c.x.resize(n, static_cast<Eigen::Index>(c.p));
  c.t.resize(n);
  c.y.resize(n);
  for (Eigen::Index i = 0; i < c.x.size(); ++i) c.x.data()[i] = rng.normal();
  for (Eigen::Index i = 0; i < n; ++i) {
    c.t[i] = i < 2 ? static_cast<double>(i) : (rng.bernoulli(0.5) ? 1.0 : 0.0);
    c.y[i] = rng.normal(c.t[i], 1.0);
  }
  return c;
}

template <class P>
void perturb_biases(P& params, Rng& rng) {
  for (auto t : params.tensors())
    for (auto& v : t) v += 0.05 * rng.normal();
}

inline std::vector<GradientMismatch> check_dragonnet_case(const GradientCase& c, std::uint64_t seed) {
  Rng rng(seed);
  auto params = init_dragonnet_params(c.p, c.cfg, rng);
  perturb_biases(params, rng);
  params.epsilon = c.epsilon;
  DragonnetParams grad = params;
  dragonnet_loss(params, c.x, c.t, c.y, c.cfg.alpha, c.cfg.beta, &grad);
  return check_gradient(params, grad, [&](const DragonnetParams& q) {
    return dragonnet_loss(q, c.x, c.t, c.y, c.cfg.alpha, c.cfg.beta).total;
  });
}

inline std::vector<GradientMismatch> check_tarnet_case(const GradientCase& c, std::uint64_t seed) {
  Rng rng(seed);
  auto params = init_tarnet_params(c.p, c.cfg, rng);
  perturb_biases(params, rng);
  params.epsilon = c.epsilon;
  TarnetParams grad = params;
  tarnet_loss(params, c.x, c.t, c.y, c.cfg.alpha, c.cfg.beta, &grad);
  return check_gradient(params, grad, [&](const TarnetParams& q) {
    return tarnet_loss(q, c.x, c.t, c.y, c.cfg.alpha, c.cfg.beta).total;
  });
}

/// Both NEDnet phases; the phase-2 representation is the phase-1 stack's output.
inline std::vector<GradientMismatch> check_nednet_case(const GradientCase& c, std::uint64_t seed) {
  Rng rng(seed);
  const auto full = init_dragonnet_params(c.p, c.cfg, rng);
  PropensityNetParams p1{full.shared, full.propensity};
  OutcomeHeadParams p2{full.head0, full.head1};
  perturb_biases(p1, rng);
  perturb_biases(p2, rng);

  PropensityNetParams g1 = p1;
  propensity_net_loss(p1, c.x, c.t, &g1);
  auto bad = check_gradient(p1, g1, [&](const PropensityNetParams& q) { return propensity_net_loss(q, c.x, c.t).total; });

  const Matrix z = forward(p1.shared, c.x);
  OutcomeHeadParams g2 = p2;
  outcome_heads_loss(p2, z, c.t, c.y, &g2);
  auto bad2 = check_gradient(p2, g2, [&](const OutcomeHeadParams& q) { return outcome_heads_loss(q, z, c.t, c.y).total; });
  bad.insert(bad.end(), bad2.begin(), bad2.end());
  return bad;
}

}  // namespace dragonnet::testing
