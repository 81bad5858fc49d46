#pragma once

// Central finite-difference oracle for parameter sets. Independent of the
// backward passes it is used to check: it only calls the loss value.

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "dragonnet/nn.hpp"

namespace dragonnet::testing {

struct GradientMismatch {
  std::size_t tensor = 0;
  std::size_t index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
};

inline bool gradients_agree(double analytic, double numeric, double rel_tol = 1e-4, double abs_floor = 1e-7) {
  const double diff = std::abs(analytic - numeric);
  if (diff <= abs_floor) return true;
  return diff / std::max(std::abs(analytic), std::abs(numeric)) <= rel_tol;
}

/// Compares `analytic` against central differences of `loss` around `params`
/// with step h. Returns every coordinate that disagrees.
template <ParameterSet P, class LossFn>
std::vector<GradientMismatch> check_gradient(const P& params, const P& analytic, LossFn&& loss, double h = 1e-5,
                                             double rel_tol = 1e-4, double abs_floor = 1e-7) {
  std::vector<GradientMismatch> bad;
  P probe = params;
  auto pt = probe.tensors();
  const auto at = analytic.tensors();
  for (std::size_t k = 0; k < pt.size(); ++k) {
    for (std::size_t i = 0; i < pt[k].size(); ++i) {
      const double orig = pt[k][i];
      pt[k][i] = orig + h;
      const double up = loss(probe);
      pt[k][i] = orig - h;
      const double down = loss(probe);
      pt[k][i] = orig;
      const double numeric = (up - down) / (2.0 * h);
      if (!gradients_agree(at[k][i], numeric, rel_tol, abs_floor)) bad.push_back({k, i, at[k][i], numeric});
    }
  }
  return bad;
}

}  // namespace dragonnet::testing
