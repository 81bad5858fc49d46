#pragma once

// Dense feed-forward networks with exact reverse-mode gradients and an
// SGD-with-momentum optimizer. Everything runs in double precision.

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstddef>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "dragonnet/errors.hpp"
#include "dragonnet/rng.hpp"

namespace dragonnet {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

template <class Derived>
bool all_finite(const Eigen::DenseBase<Derived>& m) {
  return m.allFinite();
}

enum class Activation { elu, identity, sigmoid };

inline const char* to_string(Activation a) {
  switch (a) {
    case Activation::elu: return "elu";
    case Activation::identity: return "identity";
    case Activation::sigmoid: return "sigmoid";
  }
  return "?";
}

inline Activation activation_from_string(const std::string& s) {
  if (s == "elu") return Activation::elu;
  if (s == "identity") return Activation::identity;
  if (s == "sigmoid") return Activation::sigmoid;
  throw ConfigError("unknown activation '" + s + "'");
}

inline double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

struct DenseLayer {
  Matrix weights;  // out x in
  Vector bias;     // out
  Activation activation = Activation::identity;

  std::size_t in_dim() const { return static_cast<std::size_t>(weights.cols()); }
  std::size_t out_dim() const { return static_cast<std::size_t>(weights.rows()); }
};

/// A stack of dense layers. Also used as the gradient container for itself.
struct Mlp {
  std::vector<DenseLayer> layers;

  bool empty() const { return layers.empty(); }
  std::size_t in_dim() const { return layers.front().in_dim(); }
  std::size_t out_dim() const { return layers.back().out_dim(); }

  std::vector<std::span<double>> tensors() {
    std::vector<std::span<double>> out;
    out.reserve(2 * layers.size());
    for (auto& l : layers) {
      out.emplace_back(l.weights.data(), static_cast<std::size_t>(l.weights.size()));
      out.emplace_back(l.bias.data(), static_cast<std::size_t>(l.bias.size()));
    }
    return out;
  }
  std::vector<std::span<const double>> tensors() const {
    std::vector<std::span<const double>> out;
    out.reserve(2 * layers.size());
    for (const auto& l : layers) {
      out.emplace_back(l.weights.data(), static_cast<std::size_t>(l.weights.size()));
      out.emplace_back(l.bias.data(), static_cast<std::size_t>(l.bias.size()));
    }
    return out;
  }
};

/// Weights ~ Normal(0, 1/fan_in), biases zero.
///
/// `sizes` lists the input width followed by each layer's output width;
/// `activations` has one entry per layer.
inline Mlp init_mlp(Rng& rng, std::span<const std::size_t> sizes,
                    std::span<const Activation> activations) {
  if (sizes.size() < 2) throw ConfigError("init_mlp: need an input size and at least one layer size");
  if (activations.size() != sizes.size() - 1)
    throw ConfigError("init_mlp: expected one activation per layer");
  for (auto s : sizes)
    if (s < 1) throw ConfigError("init_mlp: layer sizes must be >= 1");

  Mlp net;
  net.layers.reserve(sizes.size() - 1);
  for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
    const auto fan_in = static_cast<Eigen::Index>(sizes[l]);
    const auto fan_out = static_cast<Eigen::Index>(sizes[l + 1]);
    const double sd = 1.0 / std::sqrt(static_cast<double>(fan_in));
    DenseLayer layer;
    layer.weights.resize(fan_out, fan_in);
    for (Eigen::Index i = 0; i < layer.weights.size(); ++i) layer.weights.data()[i] = sd * rng.normal();
    layer.bias = Vector::Zero(fan_out);
    layer.activation = activations[l];
    net.layers.push_back(std::move(layer));
  }
  return net;
}

inline Mlp init_mlp(Rng& rng, std::initializer_list<std::size_t> sizes,
                    std::initializer_list<Activation> activations) {
  return init_mlp(rng, std::span<const std::size_t>(sizes.begin(), sizes.size()),
                  std::span<const Activation>(activations.begin(), activations.size()));
}

/// Standard deviation used by init_mlp for a layer with this fan-in.
inline double init_weight_sd(std::size_t fan_in) { return 1.0 / std::sqrt(static_cast<double>(fan_in)); }

namespace detail {

inline void apply_activation(Matrix& z, Activation a) {
  switch (a) {
    case Activation::identity: break;
    case Activation::elu:
      z = z.unaryExpr([](double v) { return v > 0.0 ? v : std::expm1(v); });
      break;
    case Activation::sigmoid:
      z = z.unaryExpr([](double v) { return sigmoid(v); });
      break;
  }
}

// d(activation)/d(pre-activation), expressed through the activation output.
inline void scale_by_derivative(Matrix& grad, const Matrix& out, Activation a) {
  switch (a) {
    case Activation::identity: break;
    case Activation::elu:
      grad.array() *= out.array().unaryExpr([](double v) { return v > 0.0 ? 1.0 : v + 1.0; });
      break;
    case Activation::sigmoid:
      grad.array() *= out.array() * (1.0 - out.array());
      break;
  }
}

}  // namespace detail

/// Intermediate activations kept by forward() for backward().
struct MlpCache {
  std::vector<Matrix> activations;  // activations[0] = input, activations[l+1] = output of layer l
};

inline Matrix forward(const Mlp& net, const Matrix& x, MlpCache* cache = nullptr) {
  if (net.empty()) throw ShapeError("forward: network has no layers");
  if (static_cast<std::size_t>(x.cols()) != net.in_dim())
    throw ShapeError("forward: input has " + std::to_string(x.cols()) + " columns, network expects " +
                     std::to_string(net.in_dim()));
  if (cache) {
    cache->activations.clear();
    cache->activations.reserve(net.layers.size() + 1);
    cache->activations.push_back(x);
  }
  Matrix a = x;
  for (const auto& layer : net.layers) {
    Matrix z = a * layer.weights.transpose();
    z.rowwise() += layer.bias.transpose();
    detail::apply_activation(z, layer.activation);
    a = std::move(z);
    if (cache) cache->activations.push_back(a);
  }
  return a;
}

/// Backpropagates `d_out` (dLoss/dOutput) through the cached forward pass.
///
/// Writes parameter gradients into `grad` (resized to match `net`) and
/// returns dLoss/dInput.
inline Matrix backward(const Mlp& net, const MlpCache& cache, const Matrix& d_out, Mlp& grad) {
  if (cache.activations.size() != net.layers.size() + 1)
    throw ShapeError("backward: cache does not match network");
  if (d_out.rows() != cache.activations.back().rows() || d_out.cols() != cache.activations.back().cols())
    throw ShapeError("backward: output gradient shape mismatch");
  grad.layers.resize(net.layers.size());
  Matrix delta = d_out;
  for (std::size_t k = net.layers.size(); k-- > 0;) {
    const auto& layer = net.layers[k];
    detail::scale_by_derivative(delta, cache.activations[k + 1], layer.activation);
    auto& g = grad.layers[k];
    g.activation = layer.activation;
    g.weights.noalias() = delta.transpose() * cache.activations[k];
    g.bias = delta.colwise().sum().transpose();
    if (k == 0) {
      Matrix d_in = delta * layer.weights;
      return d_in;
    }
    delta = delta * layer.weights;
  }
  return delta;  // unreachable
}

/// Value and exact gradient of `loss(forward(net, x))` w.r.t. every parameter.
///
/// `loss` maps the network output to {value, dValue/dOutput}.
template <class LossFn>
std::pair<double, Mlp> gradients(const Mlp& net, const Matrix& x, LossFn&& loss) {
  MlpCache cache;
  const Matrix out = forward(net, x, &cache);
  auto [value, d_out] = loss(out);
  if (!std::isfinite(value)) throw NumericError("loss", "evaluated to a non-finite value");
  Mlp grad;
  backward(net, cache, d_out, grad);
  return {value, std::move(grad)};
}

// --- parameter sets ---------------------------------------------------------
//
// A parameter set is any type exposing tensors() as spans over its storage,
// in a fixed order. The gradient of a parameter set has the same type.

template <class P>
concept ParameterSet = requires(P p, const P cp) {
  { p.tensors() } -> std::same_as<std::vector<std::span<double>>>;
  { cp.tensors() } -> std::same_as<std::vector<std::span<const double>>>;
};

template <ParameterSet P>
void check_same_shape(const P& a, const P& b, const char* where) {
  const auto ta = a.tensors();
  const auto tb = b.tensors();
  if (ta.size() != tb.size()) throw ShapeError(std::string(where) + ": tensor count mismatch");
  for (std::size_t i = 0; i < ta.size(); ++i)
    if (ta[i].size() != tb[i].size())
      throw ShapeError(std::string(where) + ": tensor " + std::to_string(i) + " size mismatch");
}

template <ParameterSet P>
P zeros_like(const P& p) {
  P z = p;
  for (auto t : z.tensors()) std::fill(t.begin(), t.end(), 0.0);
  return z;
}

template <ParameterSet P>
std::size_t parameter_count(const P& p) {
  std::size_t n = 0;
  for (auto t : p.tensors()) n += t.size();
  return n;
}

template <ParameterSet P>
bool all_finite_params(const P& p) {
  for (auto t : p.tensors())
    for (double v : t)
      if (!std::isfinite(v)) return false;
  return true;
}

/// Heavy-ball momentum:
///   v <- momentum * v + g
///   p <- p - learning_rate * v
template <ParameterSet P>
struct OptimizerState {
  P velocity;
  double learning_rate = 1e-3;
  double momentum = 0.9;
};

template <ParameterSet P>
OptimizerState<P> make_optimizer(const P& params, double learning_rate, double momentum) {
  if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must lie in [0, 1)");
  return {zeros_like(params), learning_rate, momentum};
}

template <ParameterSet P>
void sgd_momentum_step(P& params, const P& grads, OptimizerState<P>& state) {
  check_same_shape(params, grads, "sgd_momentum_step");
  check_same_shape(params, state.velocity, "sgd_momentum_step");
  auto p = params.tensors();
  auto g = grads.tensors();
  auto v = state.velocity.tensors();
  for (std::size_t k = 0; k < p.size(); ++k) {
    for (std::size_t i = 0; i < p[k].size(); ++i) {
      v[k][i] = state.momentum * v[k][i] + g[k][i];
      p[k][i] -= state.learning_rate * v[k][i];
    }
  }
}

}  // namespace dragonnet
