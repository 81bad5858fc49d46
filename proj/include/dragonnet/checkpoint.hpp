#pragma once

// Model checkpoints as JSON:
//
//   {
//     "format": "dragonnet-checkpoint", "version": 1,
//     "architecture": "dragonnet" | "tarnet" | "nednet",
//     "config_digest": "<16 hex digits>",
//     "targeted": bool,
//     "outcome_mean": number, "outcome_scale": number,
//     "epsilon": number,                       // standardized units
//     "networks": {
//       "shared" | "head0" | "head1" | "propensity": [
//         {"in": n, "out": m, "activation": "elu" | "identity" | "sigmoid",
//          "weights": [out*in numbers, row-major], "bias": [out numbers]}, ...
//       ]
//     }
//   }
//
// Numbers are written in shortest round-trip form, so save/load is lossless.

#include <fstream>
#include <string>

#include <json.hpp>

#include "dragonnet/arch.hpp"

namespace dragonnet {

namespace detail {

inline nlohmann::json mlp_to_json(const Mlp& net) {
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& l : net.layers) {
    layers.push_back({{"in", l.in_dim()},
                      {"out", l.out_dim()},
                      {"activation", to_string(l.activation)},
                      {"weights", std::vector<double>(l.weights.data(), l.weights.data() + l.weights.size())},
                      {"bias", std::vector<double>(l.bias.data(), l.bias.data() + l.bias.size())}});
  }
  return layers;
}

inline Mlp mlp_from_json(const nlohmann::json& j) {
  Mlp net;
  for (const auto& lj : j) {
    const auto in = lj.at("in").get<Eigen::Index>();
    const auto out = lj.at("out").get<Eigen::Index>();
    const auto w = lj.at("weights").get<std::vector<double>>();
    const auto b = lj.at("bias").get<std::vector<double>>();
    if (static_cast<Eigen::Index>(w.size()) != in * out || static_cast<Eigen::Index>(b.size()) != out)
      throw ShapeError("checkpoint: layer weight count does not match its shape");
    DenseLayer l;
    l.weights = Eigen::Map<const Matrix>(w.data(), out, in);
    l.bias = Eigen::Map<const Vector>(b.data(), out);
    l.activation = activation_from_string(lj.at("activation").get<std::string>());
    if (!net.layers.empty() && net.layers.back().out_dim() != static_cast<std::size_t>(in))
      throw ShapeError("checkpoint: consecutive layers do not chain");
    net.layers.push_back(std::move(l));
  }
  if (net.layers.empty()) throw ShapeError("checkpoint: empty network");
  return net;
}

}  // namespace detail

inline nlohmann::json checkpoint_to_json(const FittedModel& model) {
  nlohmann::json j;
  j["format"] = "dragonnet-checkpoint";
  j["version"] = 1;
  j["architecture"] = to_string(model.architecture());
  j["config_digest"] = model.config_digest();
  j["targeted"] = model.targeted();
  j["outcome_mean"] = model.outcome_mean();
  j["outcome_scale"] = model.outcome_scale();
  std::visit(
      [&](const auto& p) {
        j["epsilon"] = p.epsilon;
        j["networks"] = {{"shared", detail::mlp_to_json(p.shared)},
                         {"head0", detail::mlp_to_json(p.head0)},
                         {"head1", detail::mlp_to_json(p.head1)},
                         {"propensity", detail::mlp_to_json(p.propensity)}};
      },
      model.params());
  return j;
}

inline FittedModel checkpoint_from_json(const nlohmann::json& j) {
  if (j.value("format", "") != "dragonnet-checkpoint") throw ConfigError("not a dragonnet checkpoint");
  if (j.value("version", 0) != 1) throw ConfigError("unsupported checkpoint version");
  const auto arch = architecture_from_string(j.at("architecture").get<std::string>());
  const auto& nets = j.at("networks");
  auto fill = [&](auto& p) {
    p.shared = detail::mlp_from_json(nets.at("shared"));
    p.head0 = detail::mlp_from_json(nets.at("head0"));
    p.head1 = detail::mlp_from_json(nets.at("head1"));
    p.propensity = detail::mlp_from_json(nets.at("propensity"));
    p.epsilon = j.at("epsilon").get<double>();
  };
  FittedModel::Params params;
  if (arch == Architecture::tarnet) {
    TarnetParams p;
    fill(p);
    params = std::move(p);
  } else {
    DragonnetParams p;
    fill(p);
    params = std::move(p);
  }
  return FittedModel(arch, std::move(params), j.at("outcome_mean").get<double>(), j.at("outcome_scale").get<double>(),
                     j.at("targeted").get<bool>(), j.at("config_digest").get<std::string>());
}

inline void save_checkpoint(const FittedModel& model, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ReportError("cannot write checkpoint " + path);
  out << checkpoint_to_json(model).dump() << '\n';
  if (!out) throw ReportError("error while writing checkpoint " + path);
}

inline FittedModel load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open checkpoint " + path);
  return checkpoint_from_json(nlohmann::json::parse(in));
}

}  // namespace dragonnet
