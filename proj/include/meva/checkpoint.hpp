#pragma once

#include <cmath>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"
#include "meva/common.hpp"
#include "meva/net.hpp"

namespace meva {

inline constexpr int kCheckpointVersion = 1;

// Shared container for every trained artifact (value nets, COLA models,
// learned initializations). Floating-point values round-trip exactly
// through the JSON serializer's shortest-representation doubles.
struct CheckpointMeta {
  std::string game;
  std::string formulation;  // "V", "U", "cola", "mmaml"
  std::map<std::string, double> hyper;
  std::map<std::string, std::string> tags;
  std::uint64_t seed = 0;
  int outer_loops = 0;
};

inline nlohmann::json params_to_json(const Params& params,
                                     const CheckpointMeta& meta) {
  nlohmann::json j;
  j["format_version"] = kCheckpointVersion;
  j["game"] = meta.game;
  j["formulation"] = meta.formulation;
  j["seed"] = meta.seed;
  j["outer_loops"] = meta.outer_loops;
  j["hyperparameters"] = meta.hyper;
  j["tags"] = meta.tags;
  j["layout"] = {{"n_in", params.layout.n_in},
                 {"hidden", params.layout.hidden},
                 {"head_dim", params.layout.head_dim},
                 {"shared_players", params.layout.shared_players},
                 {"final_tanh", params.layout.final_tanh}};
  nlohmann::json arrays = nlohmann::json::array();
  Params& mut = const_cast<Params&>(params);
  for (const TensorRef& t : tensor_refs(mut)) {
    nlohmann::json a;
    a["name"] = t.name;
    a["shape"] = {t.rows, t.cols};
    a["values"] = std::vector<double>(t.data, t.data + t.size());
    arrays.push_back(std::move(a));
  }
  j["arrays"] = std::move(arrays);
  return j;
}

inline void save_checkpoint(const Params& params, const CheckpointMeta& meta,
                            const std::string& path) {
  std::ofstream out(path);
  if (!out) throw CheckpointError("cannot write checkpoint: " + path);
  out << params_to_json(params, meta) << "\n";
}

struct LoadedCheckpoint {
  Params params;
  CheckpointMeta meta;
};

inline LoadedCheckpoint params_from_json(const nlohmann::json& j) try {
  if (!j.contains("format_version") ||
      j.at("format_version").get<int>() != kCheckpointVersion)
    throw CheckpointError("checkpoint format version mismatch");

  NetLayout layout;
  const auto& jl = j.at("layout");
  layout.n_in = jl.at("n_in").get<int>();
  layout.hidden = jl.at("hidden").get<int>();
  layout.head_dim = jl.at("head_dim").get<int>();
  layout.shared_players = jl.at("shared_players").get<bool>();
  layout.final_tanh = jl.at("final_tanh").get<bool>();

  LoadedCheckpoint out;
  out.params = init_params(layout, 0);
  out.meta.game = j.at("game").get<std::string>();
  out.meta.formulation = j.at("formulation").get<std::string>();
  out.meta.seed = j.at("seed").get<std::uint64_t>();
  out.meta.outer_loops = j.at("outer_loops").get<int>();
  out.meta.hyper = j.at("hyperparameters").get<std::map<std::string, double>>();
  if (j.contains("tags"))
    out.meta.tags = j.at("tags").get<std::map<std::string, std::string>>();

  std::map<std::string, const nlohmann::json*> by_name;
  for (const auto& a : j.at("arrays")) by_name[a.at("name")] = &a;

  for (const TensorRef& t : tensor_refs(out.params)) {
    auto it = by_name.find(t.name);
    if (it == by_name.end())
      throw CheckpointError("checkpoint missing array: " + t.name);
    const auto& a = *it->second;
    long rows = a.at("shape")[0].get<long>();
    long cols = a.at("shape")[1].get<long>();
    if (rows != t.rows || cols != t.cols)
      throw CheckpointError("checkpoint shape mismatch for " + t.name);
    const auto& vals = a.at("values");
    if (static_cast<long>(vals.size()) != t.size())
      throw CheckpointError("checkpoint size mismatch for " + t.name);
    for (long i = 0; i < t.size(); ++i) {
      double v = vals[i].get<double>();
      if (!std::isfinite(v))
        throw CheckpointError("checkpoint has non-finite value in " + t.name);
      t.data[i] = v;
    }
  }
  return out;
} catch (const nlohmann::json::exception& e) {
  throw CheckpointError(std::string("malformed checkpoint: ") + e.what());
}

inline LoadedCheckpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw MissingCheckpoint("missing checkpoint: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError("cannot parse checkpoint " + path + ": " + e.what());
  }
  return params_from_json(j);
}

}  // namespace meva
