// Command-line front end for the dragonnet library.
//
//   dragonnet generate        write the configured datasets as CSV
//   dragonnet train           fit one model and save a checkpoint
//   dragonnet estimate        apply the estimators to a checkpoint and a dataset
//   dragonnet bench           run the full replication grid
//   dragonnet sweep-subsample rerun the grid on nested subsamples
//   dragonnet sweep-trim      re-estimate the grid at several truncation levels

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include <CLI11.hpp>

#include "dragonnet/dragonnet.hpp"

namespace {

using namespace dragonnet;
namespace fs = std::filesystem;

struct CommonOptions {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out_dir = "out";
  std::optional<std::string> arch;
  bool treg = false;
  std::optional<double> alpha;
  std::optional<double> beta;
  std::optional<std::string> trim;
  std::optional<std::size_t> replications;
};

void add_common(CLI::App& cmd, CommonOptions& o) {
  cmd.add_option("--config", o.config_path, "JSON experiment configuration")->check(CLI::ExistingFile);
  cmd.add_option("--seed", o.seed, "base seed");
  cmd.add_option("--out-dir", o.out_dir, "output directory")->capture_default_str();
  cmd.add_option("--arch", o.arch, "architecture")->check(CLI::IsMember({"dragonnet", "tarnet", "nednet"}));
  cmd.add_flag("--treg", o.treg, "enable targeted regularization");
  cmd.add_option("--alpha", o.alpha, "propensity loss weight");
  cmd.add_option("--beta", o.beta, "targeted regularization weight");
  cmd.add_option("--trim", o.trim, "truncation bounds as lo,hi");
  cmd.add_option("--replications", o.replications, "number of replications");
}

TrimBounds parse_trim(const std::string& s) {
  const auto comma = s.find(',');
  if (comma == std::string::npos) throw ConfigError("--trim expects lo,hi");
  const auto lo = detail::parse_double(std::string_view(s).substr(0, comma));
  const auto hi = detail::parse_double(std::string_view(s).substr(comma + 1));
  if (!lo || !hi) throw ConfigError("--trim expects two numbers, got '" + s + "'");
  TrimBounds b{*lo, *hi};
  b.validate();
  return b;
}

ExperimentConfig resolve_config(const CommonOptions& o) {
  ExperimentConfig cfg;
  if (!o.config_path.empty()) {
    std::ifstream in(o.config_path);
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(o.config_path + ": " + e.what());
    }
    cfg = experiment_config_from_json(j);
  }
  if (o.seed) cfg.seed = *o.seed;
  if (o.alpha) cfg.alpha = *o.alpha;
  if (o.beta) cfg.beta = *o.beta;
  if (o.trim) cfg.trim = parse_trim(*o.trim);
  if (o.replications) cfg.replications = *o.replications;
  if (o.arch) cfg.methods = {{architecture_from_string(*o.arch), o.treg}};
  cfg.validate();
  return cfg;
}

/// The method a single-model command works on: --arch/--treg, else the first configured method.
MethodSpec single_method(const ExperimentConfig& cfg, const CommonOptions& o) {
  if (o.arch) return {architecture_from_string(*o.arch), o.treg};
  if (cfg.methods.empty()) throw ConfigError("no method configured; pass --arch");
  return cfg.methods.front();
}

Dataset dataset_for(const ExperimentConfig& cfg, const std::string& csv_path) {
  if (!csv_path.empty()) return load_csv(csv_path);
  return cfg.dgp.make(0, split_seed(replication_seed(cfg.seed, 0), 0));
}

void write_config(const ExperimentConfig& cfg, const fs::path& dir) {
  std::ofstream(dir / "config.json") << to_json(cfg).dump(2) << '\n';
}

int run_generate(const CommonOptions& o) {
  const auto cfg = resolve_config(o);
  if (cfg.dgp.kind == "csv") throw ConfigError("generate needs a synthetic dgp kind");
  fs::create_directories(o.out_dir);
  for (std::size_t r = 0; r < cfg.replications; ++r) {
    const auto path = fs::path(o.out_dir) / ("replication_" + std::to_string(r) + ".csv");
    write_csv(path.string(), cfg.dgp.make(r, split_seed(replication_seed(cfg.seed, r), 0)));
    std::cout << path.string() << '\n';
  }
  return 0;
}

int run_train(const CommonOptions& o, const std::string& data_path) {
  const auto cfg = resolve_config(o);
  const auto method = single_method(cfg, o);
  if (method.arch == Architecture::nednet && method.treg)
    throw ConfigError("nednet does not support targeted regularization");
  const auto data = dataset_for(cfg, data_path);
  Rng rng(split_seed(replication_seed(cfg.seed, 0), 1));
  const auto model = train(method.arch, data, cfg.train_config_for(method), rng);
  fs::create_directories(o.out_dir);
  const auto path = fs::path(o.out_dir) / "model.json";
  save_checkpoint(model, path.string());
  const auto& trace = model.trace();
  std::cout << "trained " << method.name() << " for " << trace.epochs_run << " epochs (best epoch "
            << trace.best_epoch << ")\n"
            << path.string() << '\n';
  return 0;
}

int run_estimate(const CommonOptions& o, const std::string& model_path, const std::string& data_path) {
  const auto cfg = resolve_config(o);
  const auto model = load_checkpoint(model_path);
  const auto data = dataset_for(cfg, data_path);
  std::vector<EstimatorTag> tags;
  for (const auto& e : cfg.estimators) tags.push_back(estimator_from_string(e));
  if (model.targeted() && std::find(tags.begin(), tags.end(), EstimatorTag::TREG) == tags.end())
    tags.push_back(EstimatorTag::TREG);
  const auto report = estimate_all(model, data, tags, cfg.trim);
  nlohmann::json j{{"architecture", to_string(model.architecture())},
                   {"config_digest", model.config_digest()},
                   {"estimates", to_json(report)}};
  if (model.targeted()) j["epsilon_hat"] = model.epsilon_hat();
  if (const auto ref = data.reference_ate()) j["reference_ate"] = *ref;
  fs::create_directories(o.out_dir);
  std::ofstream(fs::path(o.out_dir) / "estimates.json") << j.dump(2) << '\n';
  std::cout << j.dump(2) << '\n';
  return 0;
}

int run_bench(const CommonOptions& o) {
  const auto cfg = resolve_config(o);
  const auto res = run_experiment(cfg);
  emit_report(cfg, res, o.out_dir);
  write_config(cfg, o.out_dir);
  std::cout << summary_csv(res.summary);
  return 0;
}

int run_sweep_subsample(const CommonOptions& o, const std::vector<double>& rates) {
  const auto cfg = resolve_config(o);
  const auto sweep = subsample_sweep(cfg, rates);
  emit_subsample_report(cfg, sweep, o.out_dir);
  write_config(cfg, o.out_dir);
  for (const auto& e : sweep) std::cout << "rate " << e.rate << '\n' << summary_csv(e.result.summary);
  return 0;
}

int run_sweep_trim(const CommonOptions& o, const std::vector<std::string>& levels) {
  const auto cfg = resolve_config(o);
  std::vector<TrimBounds> bounds;
  for (const auto& l : levels) bounds.push_back(parse_trim(l));
  if (bounds.empty()) bounds = default_truncation_levels();
  const auto sweep = truncation_sweep(cfg, bounds);
  emit_truncation_report(cfg, sweep, o.out_dir);
  write_config(cfg, o.out_dir);
  std::cout << truncation_table_csv(sweep);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Treatment-effect estimation with Dragonnet, TARNET and NEDnet"};
  app.require_subcommand(1);

  CommonOptions opts;
  std::string data_path, model_path;
  std::vector<double> rates{1.0, 0.5, 0.25, 0.1};
  std::vector<std::string> levels;

  auto* generate = app.add_subcommand("generate", "write the configured datasets as CSV");
  add_common(*generate, opts);

  auto* train_cmd = app.add_subcommand("train", "fit one model and save a checkpoint");
  add_common(*train_cmd, opts);
  train_cmd->add_option("--data", data_path, "CSV dataset (default: replication 0 of the configured generator)");

  auto* estimate = app.add_subcommand("estimate", "apply the estimators to a checkpoint and a dataset");
  add_common(*estimate, opts);
  estimate->add_option("--model", model_path, "checkpoint written by 'train'")->required()->check(CLI::ExistingFile);
  estimate->add_option("--data", data_path, "CSV dataset (default: replication 0 of the configured generator)");

  auto* bench = app.add_subcommand("bench", "run the full replication grid");
  add_common(*bench, opts);

  auto* sweep_sub = app.add_subcommand("sweep-subsample", "rerun the grid on nested subsamples");
  add_common(*sweep_sub, opts);
  sweep_sub->add_option("--rates", rates, "subsample rates in (0, 1]")->delimiter(',')->capture_default_str();

  auto* sweep_trim = app.add_subcommand("sweep-trim", "re-estimate the grid at several truncation levels");
  add_common(*sweep_trim, opts);
  sweep_trim->add_option("--levels", levels, "truncation levels lo,hi (repeatable; default: three standard levels)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (generate->parsed()) return run_generate(opts);
    if (train_cmd->parsed()) return run_train(opts, data_path);
    if (estimate->parsed()) return run_estimate(opts, model_path, data_path);
    if (bench->parsed()) return run_bench(opts);
    if (sweep_sub->parsed()) return run_sweep_subsample(opts, rates);
    if (sweep_trim->parsed()) return run_sweep_trim(opts, levels);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
