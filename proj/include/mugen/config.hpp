#pragma once

#include <array>
#include <cstdint>
#include <fstream>
#include <string>

#include <json.hpp>

#include "mugen/data.hpp"
#include "mugen/errors.hpp"
#include "mugen/losses.hpp"
#include "mugen/model.hpp"

namespace mugen {

/// Where training samples come from. An empty `path` means an in-memory synthetic set of
/// `synthetic_samples` images drawn with `synthetic_seed`.
struct DataSource {
  std::string path;
  std::size_t synthetic_samples = 200;
  std::uint64_t synthetic_seed = 1;
};

/// Everything a training run needs. Fields left out of a JSON config take the preset's
/// value.
struct RunConfig {
  std::string preset = "desk";
  Resolution resolution{64, 48};
  std::size_t patch_size = 4;
  std::array<std::size_t, 3> widths{64, 64, 64};
  std::size_t decoder_width = 32;
  Ablation ablation;
  LossConfig loss;
  double lr = 1e-4;
  std::size_t batch_size = 16;
  std::size_t epochs = 30;
  std::uint64_t seed = 0;
  std::string checkpoint = "mugen.ckpt";
  DataSource data;

  static RunConfig desk() { return {}; }

  static RunConfig paper() {
    RunConfig c;
    const auto m = ModelConfig::paper();
    c.preset = "paper";
    c.resolution = {m.width, m.height};
    c.patch_size = m.vit.patch_size;
    c.widths = m.pyramid;
    c.decoder_width = m.decoder_width;
    c.loss = LossConfig::paper();
    return c;
  }

  static RunConfig from_preset(const std::string& name) {
    if (name == "desk") return desk();
    if (name == "paper") return paper();
    throw ConfigError("unknown preset '" + name + "' (expected desk or paper)");
  }

  ModelConfig model() const {
    ModelConfig m = preset == "paper" ? ModelConfig::paper() : ModelConfig::desk();
    m.width = resolution.width;
    m.height = resolution.height;
    m.vit.patch_size = patch_size;
    m.pyramid = widths;
    m.decoder_width = decoder_width;
    m.ablation = ablation;
    m.seed = seed;
    return m;
  }

  void validate() const {
    if (preset != "desk" && preset != "paper") throw ConfigError("unknown preset '" + preset + "'");
    if (!(lr > 0.0)) throw ConfigError("lr must be positive");
    if (batch_size == 0) throw ConfigError("batch_size must be at least 1");
    if (epochs == 0) throw ConfigError("epochs must be at least 1");
    if (data.path.empty() && data.synthetic_samples == 0) throw ConfigError("synthetic_samples must be positive");
    loss.validate();
    model().validate();
  }

  /// Applies a command-line ablation switch: "tb" drops the transformer branch, "cb" the
  /// CNN branch and "mm" the attention inside the fusion modules.
  void ablate(const std::string& which) {
    if (which == "tb") {
      ablation.transformer_branch = false;
    } else if (which == "cb") {
      ablation.cnn_branch = false;
    } else if (which == "mm") {
      ablation.mugen_module = false;
    } else {
      throw ConfigError("unknown ablation '" + which + "' (expected tb, cb or mm)");
    }
  }
};

inline nlohmann::json to_json(const RunConfig& c) {
  return {
      {"preset", c.preset},
      {"resolution", c.resolution.str()},
      {"patch_size", c.patch_size},
      {"widths", c.widths},
      {"decoder_width", c.decoder_width},
      {"ablation",
       {{"transformer_branch", c.ablation.transformer_branch},
        {"cnn_branch", c.ablation.cnn_branch},
        {"mugen_module", c.ablation.mugen_module}}},
      {"loss",
       {{"n", c.loss.n},
        {"alpha", c.loss.alpha},
        {"beta", c.loss.beta},
        {"gamma", c.loss.gamma},
        {"weight_kernel", c.loss.weight_kernel}}},
      {"lr", c.lr},
      {"batch_size", c.batch_size},
      {"epochs", c.epochs},
      {"seed", c.seed},
      {"checkpoint", c.checkpoint},
      {"data",
       {{"path", c.data.path},
        {"synthetic_samples", c.data.synthetic_samples},
        {"synthetic_seed", c.data.synthetic_seed}}},
  };
}

namespace detail {

template <typename V>
void read_field(const nlohmann::json& obj, const char* key, V& out) {
  if (!obj.contains(key)) return;
  try {
    out = obj.at(key).get<V>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config field '") + key + "': " + e.what());
  }
}

inline void reject_unknown(const nlohmann::json& obj, std::initializer_list<const char*> known, const std::string& where) {
  for (const auto& [key, value] : obj.items()) {
    bool ok = false;
    for (const char* k : known) ok = ok || key == k;
    if (!ok) throw ConfigError("unknown config field '" + where + key + "'");
  }
}

inline const nlohmann::json& object_field(const nlohmann::json& obj, const char* key) {
  static const nlohmann::json empty = nlohmann::json::object();
  if (!obj.contains(key)) return empty;
  if (!obj.at(key).is_object()) throw ConfigError(std::string("config field '") + key + "' must be an object");
  return obj.at(key);
}

}  // namespace detail

/// Parses and validates a config. Unknown keys are errors so typos do not silently fall
/// back to defaults.
inline RunConfig run_config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  detail::reject_unknown(j,
                         {"preset", "resolution", "patch_size", "widths", "decoder_width", "ablation", "loss", "lr",
                          "batch_size", "epochs", "seed", "checkpoint", "data"},
                         "");
  std::string preset = "desk";
  detail::read_field(j, "preset", preset);
  RunConfig c = RunConfig::from_preset(preset);
  if (j.contains("resolution")) {
    std::string res;
    detail::read_field(j, "resolution", res);
    c.resolution = Resolution::parse(res);
  }
  detail::read_field(j, "patch_size", c.patch_size);
  detail::read_field(j, "widths", c.widths);
  detail::read_field(j, "decoder_width", c.decoder_width);
  const auto& ab = detail::object_field(j, "ablation");
  detail::reject_unknown(ab, {"transformer_branch", "cnn_branch", "mugen_module"}, "ablation.");
  detail::read_field(ab, "transformer_branch", c.ablation.transformer_branch);
  detail::read_field(ab, "cnn_branch", c.ablation.cnn_branch);
  detail::read_field(ab, "mugen_module", c.ablation.mugen_module);
  const auto& loss = detail::object_field(j, "loss");
  detail::reject_unknown(loss, {"n", "alpha", "beta", "gamma", "weight_kernel"}, "loss.");
  detail::read_field(loss, "n", c.loss.n);
  detail::read_field(loss, "alpha", c.loss.alpha);
  detail::read_field(loss, "beta", c.loss.beta);
  detail::read_field(loss, "gamma", c.loss.gamma);
  detail::read_field(loss, "weight_kernel", c.loss.weight_kernel);
  detail::read_field(j, "lr", c.lr);
  detail::read_field(j, "batch_size", c.batch_size);
  detail::read_field(j, "epochs", c.epochs);
  detail::read_field(j, "seed", c.seed);
  detail::read_field(j, "checkpoint", c.checkpoint);
  const auto& data = detail::object_field(j, "data");
  detail::reject_unknown(data, {"path", "synthetic_samples", "synthetic_seed"}, "data.");
  detail::read_field(data, "path", c.data.path);
  detail::read_field(data, "synthetic_samples", c.data.synthetic_samples);
  detail::read_field(data, "synthetic_seed", c.data.synthetic_seed);
  c.validate();
  return c;
}

inline RunConfig load_run_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open config '" + path + "'");
  nlohmann::json j;
  try {
    f >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config '" + path + "' is not valid JSON: " + e.what());
  }
  return run_config_from_json(j);
}

inline void save_run_config(const std::string& path, const RunConfig& c) {
  std::ofstream f(path);
  if (!f) throw ConfigError("cannot write config '" + path + "'");
  f << to_json(c).dump(2) << "\n";
}

}  // namespace mugen
