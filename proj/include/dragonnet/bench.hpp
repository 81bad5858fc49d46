#pragma once

// Replication harness: (architecture x regularization x estimator) grids over
// replicated datasets, summary tables, method comparisons, the subsample and
// truncation sweeps, and report files.
//
// Seeding. Replication r uses rep_seed = split_seed(base_seed, r) and derives
//   data      split_seed(rep_seed, 0)
//   models    split_seed(rep_seed, 1)   (same for every method of the replication)
//   split     split_seed(rep_seed, 2)
//   subsample split_seed(rep_seed, 3)
// so results do not depend on the order or thread that replications run on.
//
// Scopes. With split proportions (1, 0, 0) every model trains and estimates on
// all rows (scope "all"). Otherwise the model trains on train rows with early
// stopping on validation rows, and estimates are reported on train+validation
// rows (scope "in") and on test rows (scope "out").

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "dragonnet/arch.hpp"
#include "dragonnet/datagen.hpp"
#include "dragonnet/estimators.hpp"

namespace dragonnet {

struct DgpSpec {
  std::string kind = "lin";  // lin | irrelevant | ihdp_like | csv
  std::size_t n = 2000;
  std::size_t p = 10;
  double tau = 1.0;
  double confounding_strength = 1.0;
  double noise_sd = 1.0;
  std::size_t p_confound = 5;
  std::size_t p_outcome_only = 0;
  double target_ate = 4.0;
  std::vector<std::string> csv_paths;

  void validate() const {
    if (kind == "csv") {
      if (csv_paths.empty()) throw ConfigError("dgp kind 'csv' needs csv_paths");
    } else if (kind != "lin" && kind != "irrelevant" && kind != "ihdp_like") {
      throw ConfigError("unknown dgp kind '" + kind + "'");
    }
  }

  Dataset make(std::size_t replication, std::uint64_t seed) const {
    Rng rng(seed);
    if (kind == "lin") return LinearDgp{p, tau, confounding_strength, noise_sd}.generate(n, rng);
    if (kind == "irrelevant") return IrrelevantCovariateDgp{p_confound, p_outcome_only, tau, noise_sd}.generate(n, rng);
    if (kind == "ihdp_like") return IhdpLikeDgp{p, target_ate, noise_sd}.generate(n, rng);
    if (kind == "csv") return load_csv(csv_paths[replication % csv_paths.size()]);
    throw ConfigError("unknown dgp kind '" + kind + "'");
  }
};

struct MethodSpec {
  Architecture arch = Architecture::dragonnet;
  bool treg = false;

  std::string name() const { return std::string(to_string(arch)) + (treg ? "+treg" : ""); }
  /// Estimator reported by default: TREG for targeted models, Q otherwise.
  std::string headline_estimator() const { return treg ? "TREG" : "Q"; }
  friend bool operator==(const MethodSpec&, const MethodSpec&) = default;
};

inline std::vector<MethodSpec> default_methods() {
  return {{Architecture::tarnet, false},
          {Architecture::tarnet, true},
          {Architecture::dragonnet, false},
          {Architecture::dragonnet, true}};
}

struct ExperimentConfig {
  DgpSpec dgp;
  std::vector<MethodSpec> methods = default_methods();
  double alpha = 1.0;
  double beta = 1.0;
  TrimBounds trim{0.01, 0.99};
  std::array<double, 3> split{1.0, 0.0, 0.0};
  std::size_t replications = 25;
  std::uint64_t seed = 0;
  TrainConfig train;  // alpha/beta here are overridden per method
  std::vector<std::string> estimators{"Q", "TMLE"};
  bool naive = true;   // also report difference in means (method "naive", estimator "DIM")
  bool oracle = false; // also report the true mu0/mu1 and propensity as a model (method "oracle")
  bool exclude_overlap = true;
  double overlap_threshold = 0.90;
  std::size_t threads = 1;

  bool all_data_mode() const { return split[0] == 1.0; }

  void validate() const {
    dgp.validate();
    if (methods.empty() && !oracle) throw ConfigError("no methods configured");
    if (replications < 1) throw ConfigError("replications must be >= 1");
    if (!(alpha >= 0.0) || !(beta >= 0.0)) throw ConfigError("alpha and beta must be >= 0");
    trim.validate();
    for (const auto& m : methods)
      if (m.arch == Architecture::nednet && m.treg)
        throw ConfigError("nednet does not support targeted regularization");
    for (const auto& e : estimators) estimator_from_string(e);
    if (!all_data_mode() && split[2] <= 0.0) throw ConfigError("split mode needs a nonempty test split");
    train.validate();
  }

  TrainConfig train_config_for(const MethodSpec& m) const {
    TrainConfig cfg = train;
    cfg.alpha = alpha;
    cfg.beta = m.treg ? beta : 0.0;
    return cfg;
  }
};

// --- results -----------------------------------------------------------------

struct EstimatorOutcome {
  std::string estimator;  // Q | TREG | AIPTW | TMLE | DIM
  std::string scope;      // all | in | out
  double psi_hat = 0.0;
  double reference = 0.0;
  double abs_error = 0.0;
  double mean_phi = 0.0;
  std::size_t n_used = 0;
  std::size_t dropped_low = 0;
  std::size_t dropped_high = 0;
};

struct RunResult {
  std::size_t replication = 0;
  std::string method;
  std::vector<EstimatorOutcome> estimates;
  double heldout_outcome_mse = std::numeric_limits<double>::quiet_NaN();
  double heldout_treatment_accuracy = std::numeric_limits<double>::quiet_NaN();
  bool overlap_flag = false;
  double wall_time_s = 0.0;
  std::string error;  // empty on success

  bool ok() const { return error.empty(); }
};

struct ImprovementStats {
  double percent_improved = 0.0;
  double mean_improvement = 0.0;   // mean (B - A) over rows where A < B
  double mean_degradation = 0.0;   // mean (A - B) over rows where A > B
  std::size_t n = 0;
};

/// Per-dataset comparison of method A against baseline B (lower error is better).
inline ImprovementStats compare_methods(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ConfigError("compare_methods: misaligned result sets");
  ImprovementStats s;
  s.n = a.size();
  if (a.empty()) return s;
  std::size_t improved = 0, degraded = 0;
  double up = 0.0, down = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i] < b[i]) {
      ++improved;
      up += b[i] - a[i];
    } else if (a[i] > b[i]) {
      ++degraded;
      down += a[i] - b[i];
    }
  }
  s.percent_improved = 100.0 * static_cast<double>(improved) / static_cast<double>(a.size());
  s.mean_improvement = improved ? up / static_cast<double>(improved) : 0.0;
  s.mean_degradation = degraded ? down / static_cast<double>(degraded) : 0.0;
  return s;
}

struct StratifiedImprovement {
  ImprovementStats good;  // baseline error below the threshold
  ImprovementStats bad;
};

/// compare_methods split by whether the baseline estimate was already good.
inline StratifiedImprovement compare_methods_stratified(std::span<const double> a, std::span<const double> b,
                                                        double threshold = 1.0) {
  if (a.size() != b.size()) throw ConfigError("compare_methods: misaligned result sets");
  std::vector<double> ga, gb, ba, bb;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (b[i] < threshold) {
      ga.push_back(a[i]);
      gb.push_back(b[i]);
    } else {
      ba.push_back(a[i]);
      bb.push_back(b[i]);
    }
  }
  return {compare_methods(ga, gb), compare_methods(ba, bb)};
}

struct SummaryRow {
  std::string method;
  std::string estimator;
  double mean_abs_err = 0.0;
  double std_err = 0.0;
  std::size_t n_runs = 0;
  friend bool operator==(const SummaryRow&, const SummaryRow&) = default;
};

struct ComparisonRow {
  std::string method;
  std::string baseline;
  std::string estimator;  // estimator of `method`; the baseline uses its headline estimator
  ImprovementStats stats;
};

struct SummaryTable {
  std::vector<SummaryRow> rows;
  std::vector<ComparisonRow> comparisons;

  const SummaryRow* find(const std::string& method, const std::string& estimator) const {
    for (const auto& r : rows)
      if (r.method == method && r.estimator == estimator) return &r;
    return nullptr;
  }
};

inline bool operator==(const ImprovementStats& a, const ImprovementStats& b) {
  return a.percent_improved == b.percent_improved && a.mean_improvement == b.mean_improvement &&
         a.mean_degradation == b.mean_degradation && a.n == b.n;
}
inline bool operator==(const ComparisonRow& a, const ComparisonRow& b) {
  return a.method == b.method && a.baseline == b.baseline && a.estimator == b.estimator && a.stats == b.stats;
}
inline bool operator==(const SummaryTable& a, const SummaryTable& b) {
  return a.rows == b.rows && a.comparisons == b.comparisons;
}

namespace detail {

inline std::string scoped(const std::string& method, const std::string& scope) {
  return scope == "all" ? method : method + "@" + scope;
}

struct MeanSe {
  double mean = 0.0;
  double se = 0.0;
};

inline MeanSe mean_and_se(const std::vector<double>& v) {
  MeanSe out;
  if (v.empty()) return out;
  double acc = 0.0;
  for (double x : v) acc += x;
  out.mean = acc / static_cast<double>(v.size());
  if (v.size() > 1) {
    double ss = 0.0;
    for (double x : v) ss += (x - out.mean) * (x - out.mean);
    out.se = std::sqrt(ss / static_cast<double>(v.size() - 1)) / std::sqrt(static_cast<double>(v.size()));
  }
  return out;
}

}  // namespace detail

/// Aggregates raw results. Errored and overlap-flagged runs are excluded.
/// Rows appear in first-seen (method, estimator) order; means sum over
/// replications in ascending index order.
inline SummaryTable summarize(const std::vector<RunResult>& results, const std::vector<MethodSpec>& methods) {
  std::vector<std::pair<std::string, std::string>> keys;
  std::map<std::pair<std::string, std::string>, std::map<std::size_t, double>> errors;
  for (const auto& r : results) {
    if (!r.ok() || r.overlap_flag) continue;
    for (const auto& e : r.estimates) {
      std::pair<std::string, std::string> key{detail::scoped(r.method, e.scope), e.estimator};
      if (!errors.contains(key)) keys.push_back(key);
      errors[key][r.replication] = e.abs_error;
    }
  }
  SummaryTable table;
  for (const auto& key : keys) {
    std::vector<double> v;
    for (const auto& [rep, err] : errors[key]) v.push_back(err);
    const auto ms = detail::mean_and_se(v);
    table.rows.push_back({key.first, key.second, ms.mean, ms.se, v.size()});
  }

  if (methods.size() >= 2) {
    std::vector<std::string> scopes;
    for (const auto& key : keys) {
      const auto at = key.first.find('@');
      const std::string scope = at == std::string::npos ? "all" : key.first.substr(at + 1);
      if (std::find(scopes.begin(), scopes.end(), scope) == scopes.end()) scopes.push_back(scope);
    }
    const auto& base = methods.front();
    for (const auto& scope : scopes) {
      const auto base_key = std::make_pair(detail::scoped(base.name(), scope), base.headline_estimator());
      if (!errors.contains(base_key)) continue;
      for (const auto& m : methods) {
        const auto key = std::make_pair(detail::scoped(m.name(), scope), m.headline_estimator());
        if (!errors.contains(key)) continue;
        std::vector<double> a, b;
        for (const auto& [rep, err] : errors[key]) {
          auto it = errors[base_key].find(rep);
          if (it == errors[base_key].end()) continue;
          a.push_back(err);
          b.push_back(it->second);
        }
        table.comparisons.push_back({key.first, base_key.first, key.second, compare_methods(a, b)});
      }
    }
  }
  return table;
}

// --- running -------------------------------------------------------------------

/// Models of one replication, trained once and re-evaluable under any trim bounds.
struct ReplicationFit {
  struct Run {
    MethodSpec method;
    std::string name;
    Predictions predictions;  // over all rows of `data`
    std::optional<double> epsilon_hat;
    double heldout_outcome_mse = std::numeric_limits<double>::quiet_NaN();
    double heldout_treatment_accuracy = std::numeric_limits<double>::quiet_NaN();
    double wall_time_s = 0.0;
    std::string error;
  };

  std::size_t replication = 0;
  Dataset data;
  std::vector<std::pair<std::string, std::vector<std::size_t>>> scopes;
  std::vector<Run> runs;
  bool overlap_flag = false;
};

inline std::uint64_t replication_seed(std::uint64_t base, std::size_t r) { return split_seed(base, r); }

inline std::vector<std::size_t> subsample_rows(std::size_t n, double rate, std::uint64_t seed) {
  if (!(rate > 0.0 && rate <= 1.0)) throw ConfigError("subsample rate must lie in (0, 1]");
  const auto m = static_cast<std::size_t>(std::llround(rate * static_cast<double>(n)));
  if (m < 50) throw ConfigError("subsample rate " + std::to_string(rate) + " leaves fewer than 50 rows");
  auto perm = all_rows(n);
  if (m == n) return perm;
  Rng rng(seed);
  rng.shuffle(std::span<std::size_t>(perm));
  perm.resize(m);
  std::sort(perm.begin(), perm.end());
  return perm;
}

inline ReplicationFit fit_replication(const ExperimentConfig& cfg, std::size_t r, double subsample_rate = 1.0) {
  const auto rep_seed = replication_seed(cfg.seed, r);
  ReplicationFit fit;
  fit.replication = r;
  fit.data = cfg.dgp.make(r, split_seed(rep_seed, 0));
  if (subsample_rate != 1.0)
    fit.data = fit.data.subset(subsample_rows(fit.data.size(), subsample_rate, split_seed(rep_seed, 3)));
  fit.data.validate();

  TrainRows rows;
  std::vector<std::size_t> heldout;
  const bool all_mode = cfg.all_data_mode();
  if (all_mode) {
    fit.scopes.emplace_back("all", all_rows(fit.data.size()));
  } else {
    auto s = split(fit.data, SplitSpec{cfg.split, split_seed(rep_seed, 2)});
    rows.train = s.train;
    rows.validation = s.validation;
    std::vector<std::size_t> in = s.train;
    in.insert(in.end(), s.validation.begin(), s.validation.end());
    std::sort(in.begin(), in.end());
    fit.scopes.emplace_back("in", std::move(in));
    fit.scopes.emplace_back("out", s.test);
    heldout = s.test;
  }

  for (const auto& m : cfg.methods) {
    ReplicationFit::Run run;
    run.method = m;
    run.name = m.name();
    const auto start = std::chrono::steady_clock::now();
    try {
      const auto tc = cfg.train_config_for(m);
      Rng model_rng(split_seed(rep_seed, 1));
      const auto model = all_mode ? train(m.arch, fit.data, tc, model_rng) : train(m.arch, fit.data, rows, tc, model_rng);
      run.predictions = model.predict(fit.data.x);
      if (model.targeted()) run.epsilon_hat = model.epsilon_hat();
      const auto& held = all_mode ? model.trace().validation_rows : heldout;
      if (!held.empty()) {
        run.heldout_outcome_mse = outcome_mse(model, fit.data, held);
        run.heldout_treatment_accuracy = treatment_accuracy(model, fit.data, held);
      }
    } catch (const std::exception& e) {
      run.error = e.what();
    }
    run.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    fit.runs.push_back(std::move(run));
  }

  // Overlap is judged from the first Dragonnet model, else the first model.
  const ReplicationFit::Run* judge = nullptr;
  for (const auto& run : fit.runs)
    if (run.method.arch == Architecture::dragonnet && run.error.empty()) {
      judge = &run;
      break;
    }
  if (!judge && !fit.runs.empty() && fit.runs.front().error.empty()) judge = &fit.runs.front();
  if (cfg.exclude_overlap && judge && std::isfinite(judge->heldout_treatment_accuracy))
    fit.overlap_flag = overlap_flag(judge->heldout_treatment_accuracy, cfg.overlap_threshold);
  return fit;
}

inline std::vector<RunResult> evaluate_replication(const ExperimentConfig& cfg, const ReplicationFit& fit,
                                                   const TrimBounds& bounds) {
  std::vector<RunResult> out;
  auto reference_for = [&](const std::vector<std::size_t>& rows) {
    const auto sub = fit.data.subset(rows);
    auto ref = sub.reference_ate();
    if (!ref) throw ConfigError("dataset has no ground-truth effect (need mu0/mu1 or a true ATE)");
    return *ref;
  };
  std::vector<double> references;
  for (const auto& [name, rows] : fit.scopes) references.push_back(reference_for(rows));

  auto estimate_model = [&](RunResult& result, const Predictions& pred, std::optional<double> eps, bool treg) {
    std::vector<EstimatorTag> tags;
    for (const auto& e : cfg.estimators) {
      const auto tag = estimator_from_string(e);
      if (tag == EstimatorTag::TREG && !treg) continue;
      tags.push_back(tag);
      if (tag == EstimatorTag::Q && treg) tags.push_back(EstimatorTag::TREG);
    }
    std::sort(tags.begin(), tags.end());
    tags.erase(std::unique(tags.begin(), tags.end()), tags.end());
    for (std::size_t s = 0; s < fit.scopes.size(); ++s) {
      const auto& [scope, rows] = fit.scopes[s];
      const auto sub = select_rows(pred, rows);
      const Vector t = detail::gather(fit.data.t, rows);
      const Vector y = detail::gather(fit.data.y, rows);
      const auto report = estimate_all(sub, t, y, tags, bounds, eps);
      for (const auto& rec : report.records) {
        EstimatorOutcome o;
        o.estimator = to_string(rec.estimate.estimator_tag);
        o.scope = scope;
        o.psi_hat = rec.estimate.psi_hat;
        o.reference = references[s];
        o.abs_error = std::abs(o.psi_hat - o.reference);
        o.mean_phi = rec.mean_phi;
        o.n_used = rec.estimate.n_used;
        o.dropped_low = rec.dropped_low;
        o.dropped_high = rec.dropped_high;
        result.estimates.push_back(o);
      }
    }
  };

  for (const auto& run : fit.runs) {
    RunResult r;
    r.replication = fit.replication;
    r.method = run.name;
    r.heldout_outcome_mse = run.heldout_outcome_mse;
    r.heldout_treatment_accuracy = run.heldout_treatment_accuracy;
    r.overlap_flag = fit.overlap_flag;
    r.wall_time_s = run.wall_time_s;
    r.error = run.error;
    if (r.ok()) {
      try {
        estimate_model(r, run.predictions, run.epsilon_hat, run.method.treg);
      } catch (const EstimationError& e) {
        r.error = e.what();
        r.estimates.clear();
      }
    }
    out.push_back(std::move(r));
  }

  if (cfg.oracle) {
    RunResult r;
    r.replication = fit.replication;
    r.method = "oracle";
    r.overlap_flag = fit.overlap_flag;
    if (!fit.data.has_potential_outcomes()) {
      r.error = "oracle mode needs mu0/mu1";
    } else {
      Predictions truth{*fit.data.mu0, *fit.data.mu1,
                        fit.data.propensity ? *fit.data.propensity : Vector::Constant(fit.data.y.size(), 0.5)};
      try {
        estimate_model(r, truth, std::nullopt, false);
      } catch (const EstimationError& e) {
        r.error = e.what();
        r.estimates.clear();
      }
    }
    out.push_back(std::move(r));
  }

  if (cfg.naive) {
    RunResult r;
    r.replication = fit.replication;
    r.method = "naive";
    r.overlap_flag = fit.overlap_flag;
    try {
      for (std::size_t s = 0; s < fit.scopes.size(); ++s) {
        const auto& [scope, rows] = fit.scopes[s];
        EstimatorOutcome o;
        o.estimator = "DIM";
        o.scope = scope;
        o.psi_hat = difference_in_means(fit.data.subset(rows));
        o.reference = references[s];
        o.abs_error = std::abs(o.psi_hat - o.reference);
        o.n_used = rows.size();
        r.estimates.push_back(o);
      }
    } catch (const EstimationError& e) {
      r.error = e.what();
      r.estimates.clear();
    }
    out.push_back(std::move(r));
  }
  return out;
}

namespace detail {

/// Runs work(r) for r in [0, count) on `threads` workers; out[r] receives the result.
template <class T, class Work>
std::vector<T> parallel_map(std::size_t count, std::size_t threads, Work&& work) {
  std::vector<T> out(count);
  threads = std::max<std::size_t>(1, std::min(threads, count));
  if (threads == 1) {
    for (std::size_t r = 0; r < count; ++r) out[r] = work(r);
    return out;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> failures(count);
  std::vector<std::thread> pool;
  for (std::size_t k = 0; k < threads; ++k)
    pool.emplace_back([&] {
      for (std::size_t r = next++; r < count; r = next++) {
        try {
          out[r] = work(r);
        } catch (...) {
          failures[r] = std::current_exception();
        }
      }
    });
  for (auto& th : pool) th.join();
  for (auto& f : failures)
    if (f) std::rethrow_exception(f);
  return out;
}

inline std::vector<RunResult> flatten(std::vector<std::vector<RunResult>>&& nested) {
  std::vector<RunResult> out;
  for (auto& v : nested)
    for (auto& r : v) out.push_back(std::move(r));
  return out;
}

}  // namespace detail

struct ExperimentResult {
  std::vector<RunResult> results;
  SummaryTable summary;
};

inline ExperimentResult run_experiment(const ExperimentConfig& cfg, double subsample_rate = 1.0) {
  cfg.validate();
  auto nested = detail::parallel_map<std::vector<RunResult>>(cfg.replications, cfg.threads, [&](std::size_t r) {
    return evaluate_replication(cfg, fit_replication(cfg, r, subsample_rate), cfg.trim);
  });
  ExperimentResult out;
  out.results = detail::flatten(std::move(nested));
  out.summary = summarize(out.results, cfg.methods);
  return out;
}

struct SubsampleSweepEntry {
  double rate = 1.0;
  ExperimentResult result;
};

/// Reruns the experiment on nested subsamples: for each replication one
/// permutation is drawn and rate r keeps its first round(r * n) rows.
inline std::vector<SubsampleSweepEntry> subsample_sweep(const ExperimentConfig& cfg, const std::vector<double>& rates) {
  cfg.validate();
  if (rates.empty()) throw ConfigError("subsample_sweep: no rates given");
  for (double rate : rates)
    if (!(rate > 0.0 && rate <= 1.0)) throw ConfigError("subsample rate must lie in (0, 1]");
  std::vector<SubsampleSweepEntry> out;
  for (double rate : rates) out.push_back({rate, run_experiment(cfg, rate)});
  return out;
}

struct TruncationSweepEntry {
  TrimBounds bounds;
  ExperimentResult result;
};

inline std::vector<TrimBounds> default_truncation_levels() { return {{0.01, 0.99}, {0.03, 0.97}, {0.1, 0.9}}; }

/// Trains once per replication and method, then re-trims and re-estimates at each bound.
inline std::vector<TruncationSweepEntry> truncation_sweep(const ExperimentConfig& cfg,
                                                          const std::vector<TrimBounds>& bounds) {
  cfg.validate();
  if (bounds.empty()) throw ConfigError("truncation_sweep: no bounds given");
  for (const auto& b : bounds) b.validate();
  auto fits = detail::parallel_map<ReplicationFit>(cfg.replications, cfg.threads,
                                                   [&](std::size_t r) { return fit_replication(cfg, r); });
  std::vector<TruncationSweepEntry> out;
  for (const auto& b : bounds) {
    TruncationSweepEntry entry;
    entry.bounds = b;
    for (const auto& f : fits)
      for (auto& r : evaluate_replication(cfg, f, b)) entry.result.results.push_back(std::move(r));
    entry.result.summary = summarize(entry.result.results, cfg.methods);
    out.push_back(std::move(entry));
  }
  return out;
}

// --- JSON ------------------------------------------------------------------------

inline nlohmann::json to_json(const TrainConfig& c) {
  return {{"shared_depth", c.shared_depth},
          {"shared_width", c.shared_width},
          {"representation_width", c.representation_width},
          {"head_depth", c.head_depth},
          {"head_width", c.head_width},
          {"learning_rate", c.learning_rate},
          {"momentum", c.momentum},
          {"batch_size", c.batch_size},
          {"epochs", c.epochs},
          {"patience", c.patience},
          {"validation_fraction", c.validation_fraction},
          {"standardize_outcome", c.standardize_outcome},
          {"polish_epsilon", c.polish_epsilon}};
}

inline TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig c = {}) {
  c.shared_depth = j.value("shared_depth", c.shared_depth);
  c.shared_width = j.value("shared_width", c.shared_width);
  c.representation_width = j.value("representation_width", c.representation_width);
  c.head_depth = j.value("head_depth", c.head_depth);
  c.head_width = j.value("head_width", c.head_width);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.momentum = j.value("momentum", c.momentum);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.epochs = j.value("epochs", c.epochs);
  c.patience = j.value("patience", c.patience);
  c.validation_fraction = j.value("validation_fraction", c.validation_fraction);
  c.standardize_outcome = j.value("standardize_outcome", c.standardize_outcome);
  c.polish_epsilon = j.value("polish_epsilon", c.polish_epsilon);
  c.alpha = j.value("alpha", c.alpha);
  c.beta = j.value("beta", c.beta);
  return c;
}

inline nlohmann::json to_json(const ExperimentConfig& c) {
  nlohmann::json methods = nlohmann::json::array();
  for (const auto& m : c.methods) methods.push_back({{"arch", to_string(m.arch)}, {"treg", m.treg}});
  return {{"dgp",
           {{"kind", c.dgp.kind},
            {"n", c.dgp.n},
            {"p", c.dgp.p},
            {"tau", c.dgp.tau},
            {"confounding_strength", c.dgp.confounding_strength},
            {"noise_sd", c.dgp.noise_sd},
            {"p_confound", c.dgp.p_confound},
            {"p_outcome_only", c.dgp.p_outcome_only},
            {"target_ate", c.dgp.target_ate},
            {"csv_paths", c.dgp.csv_paths}}},
          {"methods", methods},
          {"alpha", c.alpha},
          {"beta", c.beta},
          {"trim", {c.trim.low, c.trim.high}},
          {"split", c.split},
          {"replications", c.replications},
          {"seed", c.seed},
          {"train", to_json(c.train)},
          {"estimators", c.estimators},
          {"naive", c.naive},
          {"oracle", c.oracle},
          {"exclude_overlap", c.exclude_overlap},
          {"overlap_threshold", c.overlap_threshold},
          {"threads", c.threads}};
}

/// Missing keys keep their defaults.
inline ExperimentConfig experiment_config_from_json(const nlohmann::json& j) {
  ExperimentConfig c;
  if (j.contains("dgp")) {
    const auto& d = j.at("dgp");
    c.dgp.kind = d.value("kind", c.dgp.kind);
    c.dgp.n = d.value("n", c.dgp.n);
    c.dgp.p = d.value("p", c.dgp.p);
    c.dgp.tau = d.value("tau", c.dgp.tau);
    c.dgp.confounding_strength = d.value("confounding_strength", c.dgp.confounding_strength);
    c.dgp.noise_sd = d.value("noise_sd", c.dgp.noise_sd);
    c.dgp.p_confound = d.value("p_confound", c.dgp.p_confound);
    c.dgp.p_outcome_only = d.value("p_outcome_only", c.dgp.p_outcome_only);
    c.dgp.target_ate = d.value("target_ate", c.dgp.target_ate);
    c.dgp.csv_paths = d.value("csv_paths", c.dgp.csv_paths);
  }
  if (j.contains("methods")) {
    c.methods.clear();
    for (const auto& m : j.at("methods"))
      c.methods.push_back({architecture_from_string(m.at("arch").get<std::string>()), m.value("treg", false)});
  }
  c.alpha = j.value("alpha", c.alpha);
  c.beta = j.value("beta", c.beta);
  if (j.contains("trim")) c.trim = {j.at("trim").at(0).get<double>(), j.at("trim").at(1).get<double>()};
  if (j.contains("split")) c.split = j.at("split").get<std::array<double, 3>>();
  c.replications = j.value("replications", c.replications);
  c.seed = j.value("seed", c.seed);
  if (j.contains("train")) c.train = train_config_from_json(j.at("train"), c.train);
  c.estimators = j.value("estimators", c.estimators);
  c.naive = j.value("naive", c.naive);
  c.oracle = j.value("oracle", c.oracle);
  c.exclude_overlap = j.value("exclude_overlap", c.exclude_overlap);
  c.overlap_threshold = j.value("overlap_threshold", c.overlap_threshold);
  c.threads = j.value("threads", c.threads);
  return c;
}

inline nlohmann::json to_json(const RunResult& r) {
  nlohmann::json est = nlohmann::json::array();
  for (const auto& e : r.estimates)
    est.push_back({{"estimator", e.estimator},
                   {"scope", e.scope},
                   {"psi_hat", e.psi_hat},
                   {"reference", e.reference},
                   {"abs_error", e.abs_error},
                   {"mean_phi", e.mean_phi},
                   {"n_used", e.n_used},
                   {"dropped_low", e.dropped_low},
                   {"dropped_high", e.dropped_high}});
  auto num = [](double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); };
  return {{"replication", r.replication},
          {"method", r.method},
          {"estimates", est},
          {"heldout_outcome_mse", num(r.heldout_outcome_mse)},
          {"heldout_treatment_accuracy", num(r.heldout_treatment_accuracy)},
          {"overlap_flag", r.overlap_flag},
          {"error", r.error}};
}

inline RunResult run_result_from_json(const nlohmann::json& j) {
  RunResult r;
  r.replication = j.at("replication").get<std::size_t>();
  r.method = j.at("method").get<std::string>();
  for (const auto& e : j.at("estimates")) {
    EstimatorOutcome o;
    o.estimator = e.at("estimator").get<std::string>();
    o.scope = e.at("scope").get<std::string>();
    o.psi_hat = e.at("psi_hat").get<double>();
    o.reference = e.at("reference").get<double>();
    o.abs_error = e.at("abs_error").get<double>();
    o.mean_phi = e.at("mean_phi").get<double>();
    o.n_used = e.at("n_used").get<std::size_t>();
    o.dropped_low = e.at("dropped_low").get<std::size_t>();
    o.dropped_high = e.at("dropped_high").get<std::size_t>();
    r.estimates.push_back(o);
  }
  auto num = [](const nlohmann::json& v) {
    return v.is_null() ? std::numeric_limits<double>::quiet_NaN() : v.get<double>();
  };
  r.heldout_outcome_mse = num(j.at("heldout_outcome_mse"));
  r.heldout_treatment_accuracy = num(j.at("heldout_treatment_accuracy"));
  r.overlap_flag = j.at("overlap_flag").get<bool>();
  r.error = j.at("error").get<std::string>();
  return r;
}

// --- report files ------------------------------------------------------------------
//
//   summary.csv      method,estimator,mean_abs_err,std_err,n_runs
//   comparison.csv   method,baseline,estimator,percent_improved,mean_improvement,mean_degradation,n_pairs
//   results.json     {"config": ..., "results": [RunResult...]}
//   timing.csv       replication,method,wall_time_s
//   sweep_subsample.csv  rate,method,estimator,mean_abs_err,std_err,n_runs
//   sweep_trim.csv       trim_low,trim_high,method,estimator,mean_abs_err,std_err,n_runs
//   sweep_trim_table.csv estimator,method,<one column per truncation level>
//
// Wall times only go to timing.csv so every other file is a pure function of
// the configuration.

namespace detail {

inline std::string fmt(double v) { return format_double(v); }

inline void write_text(const std::filesystem::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ReportError("cannot write " + path.string());
  out << content;
  if (!out) throw ReportError("error while writing " + path.string());
}

inline void prepare_dir(const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec || !std::filesystem::is_directory(dir)) throw ReportError("cannot create output directory " + dir.string());
  const auto probe = dir / ".write_probe";
  {
    std::ofstream out(probe);
    if (!out) throw ReportError("output directory " + dir.string() + " is not writable");
  }
  std::filesystem::remove(probe, ec);
}

inline std::string summary_rows_csv(const SummaryTable& s, const std::string& prefix_header,
                                    const std::string& prefix_value) {
  std::ostringstream out;
  out << prefix_header << "method,estimator,mean_abs_err,std_err,n_runs\n";
  for (const auto& r : s.rows)
    out << prefix_value << r.method << ',' << r.estimator << ',' << fmt(r.mean_abs_err) << ',' << fmt(r.std_err) << ','
        << r.n_runs << '\n';
  return out.str();
}

}  // namespace detail

inline std::string summary_csv(const SummaryTable& s) { return detail::summary_rows_csv(s, "", ""); }

inline std::string comparison_csv(const SummaryTable& s) {
  std::ostringstream out;
  out << "method,baseline,estimator,percent_improved,mean_improvement,mean_degradation,n_pairs\n";
  for (const auto& c : s.comparisons)
    out << c.method << ',' << c.baseline << ',' << c.estimator << ',' << detail::fmt(c.stats.percent_improved) << ','
        << detail::fmt(c.stats.mean_improvement) << ',' << detail::fmt(c.stats.mean_degradation) << ',' << c.stats.n
        << '\n';
  return out.str();
}

inline nlohmann::json results_bundle(const ExperimentConfig& cfg, const std::vector<RunResult>& results) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& r : results) arr.push_back(to_json(r));
  return {{"config", to_json(cfg)}, {"results", arr}};
}

struct LoadedBundle {
  ExperimentConfig config;
  std::vector<RunResult> results;
  SummaryTable summary() const { return summarize(results, config.methods); }
};

inline LoadedBundle load_bundle(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + path);
  const auto j = nlohmann::json::parse(in);
  LoadedBundle b;
  b.config = experiment_config_from_json(j.at("config"));
  for (const auto& r : j.at("results")) b.results.push_back(run_result_from_json(r));
  return b;
}

inline void emit_report(const ExperimentConfig& cfg, const ExperimentResult& result, const std::string& out_dir) {
  if (cfg.methods.empty() && !cfg.oracle) throw ReportError("emit_report: empty method list");
  if (result.results.empty()) throw ReportError("emit_report: no results");
  const std::filesystem::path dir(out_dir);
  detail::prepare_dir(dir);
  std::ostringstream timing;
  timing << "replication,method,wall_time_s\n";
  for (const auto& r : result.results)
    timing << r.replication << ',' << r.method << ',' << detail::fmt(r.wall_time_s) << '\n';
  detail::write_text(dir / "summary.csv", summary_csv(result.summary));
  detail::write_text(dir / "comparison.csv", comparison_csv(result.summary));
  detail::write_text(dir / "results.json", results_bundle(cfg, result.results).dump(2) + "\n");
  detail::write_text(dir / "timing.csv", timing.str());
}

inline void emit_subsample_report(const ExperimentConfig& cfg, const std::vector<SubsampleSweepEntry>& sweep,
                                  const std::string& out_dir) {
  if (cfg.methods.empty() && !cfg.oracle) throw ReportError("emit_report: empty method list");
  if (sweep.empty()) throw ReportError("emit_report: no results");
  const std::filesystem::path dir(out_dir);
  detail::prepare_dir(dir);
  std::string csv = "rate,method,estimator,mean_abs_err,std_err,n_runs\n";
  nlohmann::json bundle = nlohmann::json::array();
  for (const auto& e : sweep) {
    const auto block = detail::summary_rows_csv(e.result.summary, "", detail::fmt(e.rate) + ",");
    csv += block.substr(block.find('\n') + 1);
    bundle.push_back({{"rate", e.rate}, {"bundle", results_bundle(cfg, e.result.results)}});
  }
  detail::write_text(dir / "sweep_subsample.csv", csv);
  detail::write_text(dir / "sweep_subsample.json", bundle.dump(2) + "\n");
}

inline std::string bounds_label(const TrimBounds& b) {
  return "[" + detail::fmt(b.low) + " " + detail::fmt(b.high) + "]";
}

/// Table-5 layout: one row per (estimator, method), one column per truncation level.
inline std::string truncation_table_csv(const std::vector<TruncationSweepEntry>& sweep) {
  std::vector<std::pair<std::string, std::string>> keys;  // (estimator, method)
  for (const auto& e : sweep)
    for (const auto& r : e.result.summary.rows) {
      std::pair<std::string, std::string> k{r.estimator, r.method};
      if (std::find(keys.begin(), keys.end(), k) == keys.end()) keys.push_back(k);
    }
  std::stable_sort(keys.begin(), keys.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  std::ostringstream out;
  out << "estimator,method";
  for (const auto& e : sweep) out << ',' << bounds_label(e.bounds);
  out << '\n';
  for (const auto& [est, method] : keys) {
    out << est << ',' << method;
    for (const auto& e : sweep) {
      const auto* row = e.result.summary.find(method, est);
      out << ',' << (row ? detail::fmt(row->mean_abs_err) : std::string());
    }
    out << '\n';
  }
  return out.str();
}

inline void emit_truncation_report(const ExperimentConfig& cfg, const std::vector<TruncationSweepEntry>& sweep,
                                   const std::string& out_dir) {
  if (cfg.methods.empty() && !cfg.oracle) throw ReportError("emit_report: empty method list");
  if (sweep.empty()) throw ReportError("emit_report: no results");
  const std::filesystem::path dir(out_dir);
  detail::prepare_dir(dir);
  std::string csv = "trim_low,trim_high,method,estimator,mean_abs_err,std_err,n_runs\n";
  for (const auto& e : sweep) {
    const auto block = detail::summary_rows_csv(e.result.summary, "",
                                                detail::fmt(e.bounds.low) + "," + detail::fmt(e.bounds.high) + ",");
    csv += block.substr(block.find('\n') + 1);
  }
  detail::write_text(dir / "sweep_trim.csv", csv);
  detail::write_text(dir / "sweep_trim_table.csv", truncation_table_csv(sweep));
}

}  // namespace dragonnet
