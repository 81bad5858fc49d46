#pragma once

// Dragonnet, TARNET and NEDnet: parameters, forward passes, exact gradients of
// the training objectives, and the training loops producing a FittedModel.
//
//   Dragonnet  shared stack -> Z;  Z -> outcome head 0, outcome head 1, propensity head
//   TARNET     shared stack -> Z;  Z -> outcome heads; logistic regression on raw x
//              supplies g (trained by its cross-entropy, and by the targeted
//              penalty when beta > 0)
//   NEDnet     phase 1: shared stack + propensity head on cross-entropy only;
//              phase 2: shared stack frozen, fresh outcome heads on squared error only
//
// Outcomes are standardized on the training rows before fitting; FittedModel
// maps predictions and eps back to the original outcome units.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "dragonnet/dataset.hpp"
#include "dragonnet/nn.hpp"
#include "dragonnet/objectives.hpp"
#include "dragonnet/rng.hpp"

namespace dragonnet {

enum class Architecture { dragonnet, tarnet, nednet };

inline const char* to_string(Architecture a) {
  switch (a) {
    case Architecture::dragonnet: return "dragonnet";
    case Architecture::tarnet: return "tarnet";
    case Architecture::nednet: return "nednet";
  }
  return "?";
}

inline Architecture architecture_from_string(const std::string& s) {
  if (s == "dragonnet") return Architecture::dragonnet;
  if (s == "tarnet") return Architecture::tarnet;
  if (s == "nednet") return Architecture::nednet;
  throw ConfigError("unknown architecture '" + s + "'");
}

struct TrainConfig {
  // objective weights; beta > 0 enables targeted regularization
  double alpha = 1.0;
  double beta = 0.0;

  // architecture sizes
  std::size_t shared_depth = 3;
  std::size_t shared_width = 200;
  std::size_t representation_width = 200;
  std::size_t head_depth = 2;
  std::size_t head_width = 100;

  // optimizer
  double learning_rate = 1e-3;
  double momentum = 0.9;
  std::size_t batch_size = 64;
  std::size_t epochs = 100;
  std::size_t patience = 10;  // epochs without validation improvement; 0 disables early stopping

  double validation_fraction = 0.2;  // used when no explicit validation rows are given
  bool standardize_outcome = true;
  // After training, set eps to its exact minimizer over all training rows
  // with the network held fixed (only meaningful when beta > 0).
  bool polish_epsilon = true;

  void validate() const {
    if (!(alpha >= 0.0)) throw ConfigError("alpha must be >= 0");
    if (!(beta >= 0.0)) throw ConfigError("beta must be >= 0");
    if (shared_depth < 1 || shared_width < 1 || representation_width < 1 || head_width < 1)
      throw ConfigError("layer sizes must be >= 1");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (!(validation_fraction >= 0.0 && validation_fraction < 1.0))
      throw ConfigError("validation_fraction must lie in [0, 1)");
  }

  bool targeted() const { return beta > 0.0; }

  std::string canonical() const {
    std::ostringstream s;
    s.precision(17);
    s << "alpha=" << alpha << ";beta=" << beta << ";shared_depth=" << shared_depth
      << ";shared_width=" << shared_width << ";representation_width=" << representation_width
      << ";head_depth=" << head_depth << ";head_width=" << head_width << ";learning_rate=" << learning_rate
      << ";momentum=" << momentum << ";batch_size=" << batch_size << ";epochs=" << epochs
      << ";patience=" << patience << ";validation_fraction=" << validation_fraction
      << ";standardize_outcome=" << standardize_outcome << ";polish_epsilon=" << polish_epsilon;
    return s.str();
  }

  /// FNV-1a 64 over canonical(), as 16 hex digits.
  std::string digest() const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : canonical()) {
      h ^= c;
      h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
  }
};

// --- parameter sets --------------------------------------------------------

namespace detail {

inline void append(std::vector<std::span<double>>& out, Mlp& m) {
  for (auto t : m.tensors()) out.push_back(t);
}
inline void append(std::vector<std::span<const double>>& out, const Mlp& m) {
  for (auto t : m.tensors()) out.push_back(t);
}

inline Mlp init_stack(Rng& rng, std::size_t in, std::size_t depth, std::size_t width, std::size_t out,
                      Activation hidden, Activation last) {
  std::vector<std::size_t> sizes{in};
  std::vector<Activation> acts;
  for (std::size_t k = 0; k + 1 < depth; ++k) {
    sizes.push_back(width);
    acts.push_back(hidden);
  }
  sizes.push_back(out);
  acts.push_back(last);
  return init_mlp(rng, sizes, acts);
}

inline Mlp init_shared(Rng& rng, std::size_t p, const TrainConfig& cfg) {
  return init_stack(rng, p, cfg.shared_depth, cfg.shared_width, cfg.representation_width, Activation::elu,
                    Activation::elu);
}

// head_depth hidden elu layers followed by a linear output
inline Mlp init_head(Rng& rng, const TrainConfig& cfg) {
  return init_stack(rng, cfg.representation_width, cfg.head_depth + 1, cfg.head_width, 1, Activation::elu,
                    Activation::identity);
}

inline Vector column(const Matrix& m) { return Eigen::Map<const Vector>(m.data(), m.rows()); }
inline Matrix as_column(const Vector& v) { return Eigen::Map<const Matrix>(v.data(), v.size(), 1); }

}  // namespace detail

/// Shared representation, two outcome heads, propensity head on Z, and eps.
struct DragonnetParams {
  Mlp shared;
  Mlp head0;
  Mlp head1;
  Mlp propensity;
  double epsilon = 0.0;

  std::vector<std::span<double>> tensors() {
    std::vector<std::span<double>> out;
    detail::append(out, shared);
    detail::append(out, head0);
    detail::append(out, head1);
    detail::append(out, propensity);
    out.emplace_back(&epsilon, 1);
    return out;
  }
  std::vector<std::span<const double>> tensors() const {
    std::vector<std::span<const double>> out;
    detail::append(out, shared);
    detail::append(out, head0);
    detail::append(out, head1);
    detail::append(out, propensity);
    out.emplace_back(&epsilon, 1);
    return out;
  }
};

/// TARNET outcome model plus an auxiliary logistic regression on raw covariates.
struct TarnetParams {
  Mlp shared;
  Mlp head0;
  Mlp head1;
  Mlp propensity;  // single sigmoid layer reading x, never Z
  double epsilon = 0.0;

  std::vector<std::span<double>> tensors() {
    std::vector<std::span<double>> out;
    detail::append(out, shared);
    detail::append(out, head0);
    detail::append(out, head1);
    detail::append(out, propensity);
    out.emplace_back(&epsilon, 1);
    return out;
  }
  std::vector<std::span<const double>> tensors() const {
    std::vector<std::span<const double>> out;
    detail::append(out, shared);
    detail::append(out, head0);
    detail::append(out, head1);
    detail::append(out, propensity);
    out.emplace_back(&epsilon, 1);
    return out;
  }
};

// Draw order: shared, head0, head1, propensity. Dragonnet and TARNET built
// from the same Rng state therefore share their shared/outcome weights.
inline DragonnetParams init_dragonnet_params(std::size_t p, const TrainConfig& cfg, Rng& rng) {
  DragonnetParams params;
  params.shared = detail::init_shared(rng, p, cfg);
  params.head0 = detail::init_head(rng, cfg);
  params.head1 = detail::init_head(rng, cfg);
  params.propensity = init_mlp(rng, {cfg.representation_width, std::size_t{1}}, {Activation::sigmoid});
  return params;
}

inline TarnetParams init_tarnet_params(std::size_t p, const TrainConfig& cfg, Rng& rng) {
  TarnetParams params;
  params.shared = detail::init_shared(rng, p, cfg);
  params.head0 = detail::init_head(rng, cfg);
  params.head1 = detail::init_head(rng, cfg);
  params.propensity = init_mlp(rng, {p, std::size_t{1}}, {Activation::sigmoid});
  return params;
}

inline Predictions dragonnet_forward(const DragonnetParams& params, const Matrix& x) {
  const Matrix z = forward(params.shared, x);
  return {detail::column(forward(params.head0, z)), detail::column(forward(params.head1, z)),
          detail::column(forward(params.propensity, z))};
}

inline Predictions tarnet_forward(const TarnetParams& params, const Matrix& x) {
  const Matrix z = forward(params.shared, x);
  return {detail::column(forward(params.head0, z)), detail::column(forward(params.head1, z)),
          detail::column(forward(params.propensity, x))};
}

/// Training objective on a batch and, when `grad` is set, its exact gradient
/// w.r.t. every Dragonnet parameter including eps.
inline LossBreakdown dragonnet_loss(const DragonnetParams& params, const Matrix& x, const Vector& t,
                                    const Vector& y, double alpha, double beta, DragonnetParams* grad = nullptr) {
  if (!grad) return full_objective(dragonnet_forward(params, x), y, t, alpha, beta, params.epsilon);
  MlpCache cs, c0, c1, cg;
  const Matrix z = forward(params.shared, x, &cs);
  Predictions pred{detail::column(forward(params.head0, z, &c0)), detail::column(forward(params.head1, z, &c1)),
                   detail::column(forward(params.propensity, z, &cg))};
  OutputGradients og;
  const auto loss = full_objective(pred, y, t, alpha, beta, params.epsilon, &og);
  Matrix dz = backward(params.head0, c0, detail::as_column(og.d_q0), grad->head0);
  dz += backward(params.head1, c1, detail::as_column(og.d_q1), grad->head1);
  dz += backward(params.propensity, cg, detail::as_column(og.d_g), grad->propensity);
  backward(params.shared, cs, dz, grad->shared);
  grad->epsilon = og.d_epsilon;
  return loss;
}

inline LossBreakdown tarnet_loss(const TarnetParams& params, const Matrix& x, const Vector& t, const Vector& y,
                                 double alpha, double beta, TarnetParams* grad = nullptr) {
  if (!grad) return full_objective(tarnet_forward(params, x), y, t, alpha, beta, params.epsilon);
  MlpCache cs, c0, c1, cg;
  const Matrix z = forward(params.shared, x, &cs);
  Predictions pred{detail::column(forward(params.head0, z, &c0)), detail::column(forward(params.head1, z, &c1)),
                   detail::column(forward(params.propensity, x, &cg))};
  OutputGradients og;
  const auto loss = full_objective(pred, y, t, alpha, beta, params.epsilon, &og);
  Matrix dz = backward(params.head0, c0, detail::as_column(og.d_q0), grad->head0);
  dz += backward(params.head1, c1, detail::as_column(og.d_q1), grad->head1);
  backward(params.propensity, cg, detail::as_column(og.d_g), grad->propensity);
  backward(params.shared, cs, dz, grad->shared);
  grad->epsilon = og.d_epsilon;
  return loss;
}

// --- training loop -----------------------------------------------------------

struct TrainRows {
  std::vector<std::size_t> train;
  std::vector<std::size_t> validation;
};

struct TrainingTrace {
  std::vector<double> validation_loss;  // full validation set, per epoch
  std::vector<double> train_loss;       // mean of batch losses, per epoch
  std::vector<double> pretrain_validation_loss;  // NEDnet phase 1
  std::size_t epochs_run = 0;
  std::size_t best_epoch = 0;
  LossBreakdown final_train;  // full training rows, after restoring the best epoch
  std::vector<std::size_t> validation_rows;
};

namespace detail {

inline Matrix gather_rows(const Matrix& m, std::span<const std::size_t> rows) {
  Matrix out(static_cast<Eigen::Index>(rows.size()), m.cols());
  for (std::size_t k = 0; k < rows.size(); ++k) out.row(static_cast<Eigen::Index>(k)) = m.row(static_cast<Eigen::Index>(rows[k]));
  return out;
}

inline Vector gather(const Vector& v, std::span<const std::size_t> rows) {
  Vector out(static_cast<Eigen::Index>(rows.size()));
  for (std::size_t k = 0; k < rows.size(); ++k) out[static_cast<Eigen::Index>(k)] = v[static_cast<Eigen::Index>(rows[k])];
  return out;
}

struct Batch {
  Matrix x;
  Vector t;
  Vector y;
};

inline Batch gather_batch(const Matrix& x, const Vector& t, const Vector& y, std::span<const std::size_t> rows) {
  return {gather_rows(x, rows), gather(t, rows), gather(y, rows)};
}

/// Mini-batch SGD with momentum, per-epoch reshuffling and early stopping on
/// the validation objective. Restores the parameters of the best epoch.
template <ParameterSet P, class LossFn>
P fit(P params, LossFn&& loss, const Matrix& x, const Vector& t, const Vector& y, const TrainRows& rows,
      const TrainConfig& cfg, Rng shuffle_rng, TrainingTrace& trace, std::vector<double>* val_trace = nullptr) {
  if (!val_trace) val_trace = &trace.validation_loss;
  auto state = make_optimizer(params, cfg.learning_rate, cfg.momentum);
  std::vector<std::size_t> order = rows.train;
  const bool has_val = !rows.validation.empty();
  const Batch val = has_val ? gather_batch(x, t, y, rows.validation) : Batch{};

  P best = params;
  double best_val = std::numeric_limits<double>::infinity();
  std::size_t since_best = 0;
  P grad = params;

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    shuffle_rng.shuffle(std::span<std::size_t>(order));
    double batch_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const auto len = std::min(cfg.batch_size, order.size() - start);
      const auto b = gather_batch(x, t, y, std::span<const std::size_t>(order).subspan(start, len));
      LossBreakdown lb;
      try {
        lb = loss(params, b.x, b.t, b.y, &grad);
      } catch (const NumericError& e) {
        throw TrainingDiverged(static_cast<int>(epoch), e.what());
      }
      if (!all_finite_params(grad)) throw TrainingDiverged(static_cast<int>(epoch), "non-finite gradient");
      sgd_momentum_step(params, grad, state);
      batch_sum += lb.total;
      ++batches;
    }
    trace.train_loss.push_back(batches ? batch_sum / static_cast<double>(batches) : 0.0);
    ++trace.epochs_run;
    if (!has_val) continue;
    double v = 0.0;
    try {
      v = loss(params, val.x, val.t, val.y, nullptr).total;
    } catch (const NumericError& e) {
      throw TrainingDiverged(static_cast<int>(epoch), e.what());
    }
    val_trace->push_back(v);
    if (v < best_val) {
      best_val = v;
      best = params;
      trace.best_epoch = epoch;
      since_best = 0;
    } else if (cfg.patience > 0 && ++since_best >= cfg.patience) {
      break;
    }
  }
  if (has_val && cfg.epochs > 0) params = std::move(best);
  return params;
}

inline TrainRows default_rows(std::size_t n, const TrainConfig& cfg, Rng& rng) {
  TrainRows rows;
  if (cfg.validation_fraction <= 0.0 || cfg.patience == 0) {
    rows.train = all_rows(n);
    return rows;
  }
  SplitSpec spec;
  spec.proportions = {1.0 - cfg.validation_fraction, cfg.validation_fraction, 0.0};
  spec.seed = rng.fork(2).seed();
  auto s = split(n, spec);
  rows.train = std::move(s.train);
  rows.validation = std::move(s.validation);
  return rows;
}

}  // namespace detail

// --- fitted model ------------------------------------------------------------

/// Frozen outcome and propensity functions in original outcome units.
class FittedModel {
 public:
  using Params = std::variant<DragonnetParams, TarnetParams>;

  FittedModel(Architecture arch, Params params, double y_mean, double y_scale, bool targeted, std::string digest,
              TrainingTrace trace = {})
      : arch_(arch),
        params_(std::move(params)),
        y_mean_(y_mean),
        y_scale_(y_scale),
        targeted_(targeted),
        digest_(std::move(digest)),
        trace_(std::move(trace)) {}

  Architecture architecture() const { return arch_; }
  const Params& params() const { return params_; }
  double outcome_mean() const { return y_mean_; }
  double outcome_scale() const { return y_scale_; }
  bool targeted() const { return targeted_; }
  const std::string& config_digest() const { return digest_; }
  const TrainingTrace& trace() const { return trace_; }

  /// Fluctuation parameter in outcome units: Qtilde = Q + epsilon_hat * H.
  double epsilon_hat() const {
    return y_scale_ * std::visit([](const auto& p) { return p.epsilon; }, params_);
  }

  Predictions predict(const Matrix& x) const {
    Predictions p = std::visit(
        [&](const auto& prm) {
          if constexpr (std::is_same_v<std::decay_t<decltype(prm)>, DragonnetParams>)
            return dragonnet_forward(prm, x);
          else
            return tarnet_forward(prm, x);
        },
        params_);
    p.q0 = (p.q0.array() * y_scale_ + y_mean_).matrix();
    p.q1 = (p.q1.array() * y_scale_ + y_mean_).matrix();
    return p;
  }

  double q0(const Eigen::RowVectorXd& row) const { return predict(Matrix(row)).q0[0]; }
  double q1(const Eigen::RowVectorXd& row) const { return predict(Matrix(row)).q1[0]; }
  double g(const Eigen::RowVectorXd& row) const { return predict(Matrix(row)).g[0]; }

 private:
  Architecture arch_;
  Params params_;
  double y_mean_;
  double y_scale_;
  bool targeted_;
  std::string digest_;
  TrainingTrace trace_;
};

namespace detail {

struct Standardized {
  Vector y;
  double mean = 0.0;
  double scale = 1.0;
};

inline Standardized standardize(const Vector& y, std::span<const std::size_t> rows, bool enabled) {
  Standardized s{y, 0.0, 1.0};
  if (!enabled || rows.empty()) return s;
  double mean = 0.0;
  for (auto i : rows) mean += y[static_cast<Eigen::Index>(i)];
  mean /= static_cast<double>(rows.size());
  double ss = 0.0;
  for (auto i : rows) {
    const double d = y[static_cast<Eigen::Index>(i)] - mean;
    ss += d * d;
  }
  double sd = rows.size() > 1 ? std::sqrt(ss / static_cast<double>(rows.size() - 1)) : 0.0;
  if (!(sd > 0.0)) sd = 1.0;
  s.mean = mean;
  s.scale = sd;
  s.y = ((y.array() - mean) / sd).matrix();
  return s;
}

inline void check_training_data(const Dataset& data, const TrainConfig& cfg, const TrainRows& rows) {
  data.validate();
  cfg.validate();
  if (data.size() == 0) throw ConfigError("training data is empty");
  if (rows.train.empty()) throw ConfigError("no training rows");
  for (auto i : rows.train)
    if (i >= data.size()) throw ShapeError("training row index out of range");
  for (auto i : rows.validation)
    if (i >= data.size()) throw ShapeError("validation row index out of range");
}

inline std::vector<std::size_t> union_rows(const TrainRows& rows) {
  std::vector<std::size_t> all = rows.train;
  all.insert(all.end(), rows.validation.begin(), rows.validation.end());
  std::sort(all.begin(), all.end());
  return all;
}

// Closed-form eps over `rows` with the network held fixed.
template <class P, class Forward>
void polish_epsilon(P& params, Forward&& fwd, const Matrix& x, const Vector& t, const Vector& y,
                    std::span<const std::size_t> rows) {
  const auto pred = fwd(params, gather_rows(x, rows));
  const Vector tt = gather(t, rows);
  const Vector yy = gather(y, rows);
  const Vector q = outcome_at_treatment(pred, tt);
  Vector g = pred.g.unaryExpr([](double v) { return std::clamp(v, kPropensityClamp, 1.0 - kPropensityClamp); });
  params.epsilon = optimal_epsilon(detail::as_span(q), detail::as_span(tt), detail::as_span(g), detail::as_span(yy));
}

template <class P, class Forward, class Loss>
FittedModel train_two_headed(Architecture arch, P params, Forward&& fwd, Loss&& loss, const Dataset& data,
                             const TrainRows& rows, const TrainConfig& cfg, const Rng& rng) {
  const auto st = standardize(data.y, rows.train, cfg.standardize_outcome);
  TrainingTrace trace;
  trace.validation_rows = rows.validation;
  auto objective = [&](const P& prm, const Matrix& x, const Vector& t, const Vector& y, P* grad) {
    return loss(prm, x, t, y, cfg.alpha, cfg.beta, grad);
  };
  params = fit(std::move(params), objective, data.x, data.t, st.y, rows, cfg, rng.fork(1), trace);
  if (cfg.targeted() && cfg.polish_epsilon && cfg.epochs > 0)
    polish_epsilon(params, fwd, data.x, data.t, st.y, union_rows(rows));
  {
    const auto b = gather_batch(data.x, data.t, st.y, rows.train);
    trace.final_train = loss(params, b.x, b.t, b.y, cfg.alpha, cfg.beta, nullptr);
  }
  return FittedModel(arch, std::move(params), st.mean, st.scale, cfg.targeted(), cfg.digest(), std::move(trace));
}

}  // namespace detail

inline FittedModel train_dragonnet(const Dataset& data, const TrainRows& rows, const TrainConfig& cfg, Rng& rng) {
  detail::check_training_data(data, cfg, rows);
  Rng init = rng.fork(0);
  auto params = init_dragonnet_params(data.dim(), cfg, init);
  return detail::train_two_headed(
      Architecture::dragonnet, std::move(params), dragonnet_forward,
      [](const DragonnetParams& p, const Matrix& x, const Vector& t, const Vector& y, double a, double b,
         DragonnetParams* g) { return dragonnet_loss(p, x, t, y, a, b, g); },
      data, rows, cfg, rng);
}

inline FittedModel train_dragonnet(const Dataset& data, const TrainConfig& cfg, Rng& rng) {
  return train_dragonnet(data, detail::default_rows(data.size(), cfg, rng), cfg, rng);
}

inline FittedModel train_tarnet(const Dataset& data, const TrainRows& rows, const TrainConfig& cfg, Rng& rng) {
  detail::check_training_data(data, cfg, rows);
  Rng init = rng.fork(0);
  auto params = init_tarnet_params(data.dim(), cfg, init);
  return detail::train_two_headed(
      Architecture::tarnet, std::move(params), tarnet_forward,
      [](const TarnetParams& p, const Matrix& x, const Vector& t, const Vector& y, double a, double b,
         TarnetParams* g) { return tarnet_loss(p, x, t, y, a, b, g); },
      data, rows, cfg, rng);
}

inline FittedModel train_tarnet(const Dataset& data, const TrainConfig& cfg, Rng& rng) {
  return train_tarnet(data, detail::default_rows(data.size(), cfg, rng), cfg, rng);
}

// --- NEDnet ------------------------------------------------------------------

/// Phase-1 parameters: representation and propensity head.
struct PropensityNetParams {
  Mlp shared;
  Mlp propensity;

  std::vector<std::span<double>> tensors() {
    std::vector<std::span<double>> out;
    detail::append(out, shared);
    detail::append(out, propensity);
    return out;
  }
  std::vector<std::span<const double>> tensors() const {
    std::vector<std::span<const double>> out;
    detail::append(out, shared);
    detail::append(out, propensity);
    return out;
  }
};

/// Phase-2 parameters: outcome heads over a frozen representation.
struct OutcomeHeadParams {
  Mlp head0;
  Mlp head1;

  std::vector<std::span<double>> tensors() {
    std::vector<std::span<double>> out;
    detail::append(out, head0);
    detail::append(out, head1);
    return out;
  }
  std::vector<std::span<const double>> tensors() const {
    std::vector<std::span<const double>> out;
    detail::append(out, head0);
    detail::append(out, head1);
    return out;
  }
};

/// Cross-entropy of the propensity head alone (phase 1 objective).
inline LossBreakdown propensity_net_loss(const PropensityNetParams& params, const Matrix& x, const Vector& t,
                                         PropensityNetParams* grad = nullptr) {
  MlpCache cs, cg;
  const Matrix z = forward(params.shared, x, grad ? &cs : nullptr);
  const Vector zeros = Vector::Zero(t.size());
  Predictions pred{zeros, zeros, detail::column(forward(params.propensity, z, grad ? &cg : nullptr))};
  OutputGradients og;
  auto lb = full_objective(pred, zeros, t, 1.0, 0.0, 0.0, grad ? &og : nullptr);
  LossBreakdown out;
  out.propensity_xent = lb.propensity_xent;
  out.alpha = 1.0;
  out.total = lb.propensity_xent;
  if (grad) {
    const Matrix dz = backward(params.propensity, cg, detail::as_column(og.d_g), grad->propensity);
    backward(params.shared, cs, dz, grad->shared);
  }
  return out;
}

/// Squared outcome error of the heads on a fixed representation (phase 2 objective).
inline LossBreakdown outcome_heads_loss(const OutcomeHeadParams& params, const Matrix& z, const Vector& t,
                                        const Vector& y, OutcomeHeadParams* grad = nullptr) {
  MlpCache c0, c1;
  Predictions pred{detail::column(forward(params.head0, z, grad ? &c0 : nullptr)),
                   detail::column(forward(params.head1, z, grad ? &c1 : nullptr)), Vector::Constant(t.size(), 0.5)};
  OutputGradients og;
  auto lb = full_objective(pred, y, t, 0.0, 0.0, 0.0, grad ? &og : nullptr);
  if (grad) {
    backward(params.head0, c0, detail::as_column(og.d_q0), grad->head0);
    backward(params.head1, c1, detail::as_column(og.d_q1), grad->head1);
  }
  return lb;
}

/// Two-phase NEDnet fit. The phase-2 optimizer starts from fresh state.
///
/// If `phase1_out` is set it receives the phase-1 parameters as they were at
/// the end of phase 1.
inline FittedModel train_nednet(const Dataset& data, const TrainRows& rows, const TrainConfig& cfg, Rng& rng,
                                PropensityNetParams* phase1_out = nullptr) {
  detail::check_training_data(data, cfg, rows);
  Rng init = rng.fork(0);
  PropensityNetParams phase1;
  phase1.shared = detail::init_shared(init, data.dim(), cfg);
  OutcomeHeadParams phase2;
  phase2.head0 = detail::init_head(init, cfg);
  phase2.head1 = detail::init_head(init, cfg);
  phase1.propensity = init_mlp(init, {cfg.representation_width, std::size_t{1}}, {Activation::sigmoid});

  const auto st = detail::standardize(data.y, rows.train, cfg.standardize_outcome);
  TrainingTrace trace;
  trace.validation_rows = rows.validation;

  auto xent = [](const PropensityNetParams& p, const Matrix& x, const Vector& t, const Vector&,
                 PropensityNetParams* g) { return propensity_net_loss(p, x, t, g); };
  phase1 = detail::fit(std::move(phase1), xent, data.x, data.t, st.y, rows, cfg, rng.fork(1), trace,
                       &trace.pretrain_validation_loss);
  if (phase1_out) *phase1_out = phase1;

  const Matrix z = forward(phase1.shared, data.x);
  auto sq = [](const OutcomeHeadParams& p, const Matrix& zb, const Vector& t, const Vector& y, OutcomeHeadParams* g) {
    return outcome_heads_loss(p, zb, t, y, g);
  };
  trace.epochs_run = 0;
  trace.train_loss.clear();
  phase2 = detail::fit(std::move(phase2), sq, z, data.t, st.y, rows, cfg, rng.fork(3), trace);
  {
    const auto b = detail::gather_batch(z, data.t, st.y, rows.train);
    trace.final_train = outcome_heads_loss(phase2, b.x, b.t, b.y);
  }

  DragonnetParams assembled;
  assembled.shared = std::move(phase1.shared);
  assembled.head0 = std::move(phase2.head0);
  assembled.head1 = std::move(phase2.head1);
  assembled.propensity = std::move(phase1.propensity);
  return FittedModel(Architecture::nednet, std::move(assembled), st.mean, st.scale, false, cfg.digest(),
                     std::move(trace));
}

inline FittedModel train_nednet(const Dataset& data, const TrainConfig& cfg, Rng& rng) {
  return train_nednet(data, detail::default_rows(data.size(), cfg, rng), cfg, rng);
}

inline FittedModel train(Architecture arch, const Dataset& data, const TrainRows& rows, const TrainConfig& cfg,
                         Rng& rng) {
  switch (arch) {
    case Architecture::dragonnet: return train_dragonnet(data, rows, cfg, rng);
    case Architecture::tarnet: return train_tarnet(data, rows, cfg, rng);
    case Architecture::nednet: return train_nednet(data, rows, cfg, rng);
  }
  throw ConfigError("unknown architecture");
}

inline FittedModel train(Architecture arch, const Dataset& data, const TrainConfig& cfg, Rng& rng) {
  return train(arch, data, detail::default_rows(data.size(), cfg, rng), cfg, rng);
}

// --- heldout diagnostics -------------------------------------------------------

/// Mean squared error of Q(t_i, x_i) against y_i over `rows`.
inline double outcome_mse(const FittedModel& model, const Dataset& data, std::span<const std::size_t> rows) {
  if (rows.empty()) throw EstimationError("outcome_mse: no rows");
  const auto pred = model.predict(detail::gather_rows(data.x, rows));
  double acc = 0.0;
  for (std::size_t k = 0; k < rows.size(); ++k) {
    const auto i = static_cast<Eigen::Index>(rows[k]);
    const auto kk = static_cast<Eigen::Index>(k);
    const double r = (data.t[i] == 1.0 ? pred.q1[kk] : pred.q0[kk]) - data.y[i];
    acc += r * r;
  }
  return acc / static_cast<double>(rows.size());
}

/// Fraction of rows where 1{g(x_i) > 0.5} equals t_i.
inline double treatment_accuracy(const FittedModel& model, const Dataset& data, std::span<const std::size_t> rows) {
  if (rows.empty()) throw EstimationError("treatment_accuracy: no rows");
  const auto pred = model.predict(detail::gather_rows(data.x, rows));
  std::size_t hits = 0;
  for (std::size_t k = 0; k < rows.size(); ++k) {
    const bool predicted = pred.g[static_cast<Eigen::Index>(k)] > 0.5;
    if (predicted == (data.t[static_cast<Eigen::Index>(rows[k])] == 1.0)) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(rows.size());
}

}  // namespace dragonnet
