#include <functional>
#include <map>
#include <string>

#include <nlohmann/json.hpp>

#include "zpressor/error.hpp"
#include "zpressor/pipeline.hpp"

namespace zp {

std::string to_string(OptimizerKind k) { return k == OptimizerKind::kSgd ? "sgd" : "adam"; }

OptimizerKind parse_optimizer(const std::string& name) {
  if (name == "sgd") return OptimizerKind::kSgd;
  if (name == "adam") return OptimizerKind::kAdam;
  throw ConfigError("unknown optimizer '" + name + "'");
}

namespace {

void require(bool ok, const std::string& field, const std::string& rule) {
  if (!ok) throw ConfigError("config field '" + field + "': " + rule);
}

}  // namespace

void PipelineConfig::validate() const {
  require(k_views >= 1, "k_views", "must be >= 1");
  require(n_anchors >= 1 && n_anchors <= k_views, "n_anchors", "must lie in [1, k_views]");
  require(blocks >= 1, "blocks", "must be >= 1");
  require(heads >= 1, "heads", "must be >= 1");
  require(channels >= 4, "channels", "must be >= 4");
  require(channels % heads == 0, "heads", "must divide channels");
  require(patch >= 1, "patch", "must be >= 1");
  require(image_size >= 1 && image_size % patch == 0, "image_size",
          "must be a positive multiple of patch");
  require(beta >= 0, "beta", "must be >= 0");
  require(learning_rate > 0, "learning_rate", "must be > 0");
  require(momentum >= 0 && momentum < 1, "momentum", "must lie in [0, 1)");
  require(steps >= 0, "steps", "must be >= 0");
  require(batch_scenes >= 1, "batch_scenes", "must be >= 1");
  require(baseline > 0, "baseline", "must be > 0");
  require(camera_radius > 0, "camera_radius", "must be > 0");
  require(camera_elevation >= 0, "camera_elevation", "must be >= 0");
  require(n_blobs >= 1, "n_blobs", "must be >= 1");
  require(input_noise >= 0, "input_noise", "must be >= 0");
  require(noise_grain >= 1, "noise_grain", "must be >= 1");
  require(input_dropout >= 0 && input_dropout < 1, "input_dropout", "must lie in [0, 1)");
  require(train_targets >= 1, "train_targets", "must be >= 1");
  require(target_views >= 1, "target_views", "must be >= 1");
  require(eval_scenes >= 1, "eval_scenes", "must be >= 1");
}

CameraRig PipelineConfig::rig() const {
  CameraRig r;
  r.radius = camera_radius;
  r.elevation = camera_elevation;
  r.image_size = image_size;
  return r;
}

nlohmann::json to_json(const PipelineConfig& c) {
  return {
      {"k_views", c.k_views},
      {"n_anchors", c.n_anchors},
      {"strategy", to_string(c.strategy)},
      {"fusion", to_string(c.fusion)},
      {"ablation",
       {{"single_block", c.ablation.single_block},
        {"no_self_attention", c.ablation.no_self_attention}}},
      {"blocks", c.blocks},
      {"heads", c.heads},
      {"channels", c.channels},
      {"patch", c.patch},
      {"image_size", c.image_size},
      {"beta", c.beta},
      {"optimizer", to_string(c.optimizer)},
      {"learning_rate", c.learning_rate},
      {"momentum", c.momentum},
      {"steps", c.steps},
      {"batch_scenes", c.batch_scenes},
      {"seed", c.seed},
      {"eval_seed", c.eval_seed},
      {"encoder_seed", c.encoder_seed},
      {"trajectory", to_string(c.trajectory)},
      {"baseline", c.baseline},
      {"camera_radius", c.camera_radius},
      {"camera_elevation", c.camera_elevation},
      {"n_blobs", c.n_blobs},
      {"input_noise", c.input_noise},
      {"noise_grain", c.noise_grain},
      {"input_dropout", c.input_dropout},
      {"positional_scale", c.positional_scale},
      {"train_targets", c.train_targets},
      {"target_views", c.target_views},
      {"eval_scenes", c.eval_scenes},
  };
}

namespace {

using Json = nlohmann::json;

template <class T>
T as(const Json& j, const std::string& field) {
  try {
    if constexpr (std::is_same_v<T, bool>) {
      if (!j.is_boolean()) throw ConfigError("expected a boolean");
    } else if constexpr (std::is_integral_v<T>) {
      if (!j.is_number_integer()) throw ConfigError("expected an integer");
      if constexpr (std::is_unsigned_v<T>) {
        if (j.is_number_integer() && !j.is_number_unsigned() && j.get<long long>() < 0) {
          throw ConfigError("expected a non-negative integer");
        }
      }
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!j.is_number()) throw ConfigError("expected a number");
    } else {
      if (!j.is_string()) throw ConfigError("expected a string");
    }
    return j.get<T>();
  } catch (const ConfigError& e) {
    throw ConfigError("config field '" + field + "': " + e.what());
  }
}

}  // namespace

PipelineConfig pipeline_config_from_json(const Json& j) {
  if (!j.is_object()) throw ConfigError("config: expected a JSON object");
  PipelineConfig c;
  using Setter = std::function<void(const Json&, const std::string&)>;
  auto num = [](auto& dst) {
    return Setter([&dst](const Json& v, const std::string& f) {
      dst = as<std::remove_reference_t<decltype(dst)>>(v, f);
    });
  };
  auto named = [](auto& dst, auto parse) {
    return Setter([&dst, parse](const Json& v, const std::string& f) {
      try {
        dst = parse(as<std::string>(v, f));
      } catch (const ConfigError& e) {
        throw ConfigError("config field '" + f + "': " + e.what());
      }
    });
  };
  const std::map<std::string, Setter> fields = {
      {"k_views", num(c.k_views)},
      {"n_anchors", num(c.n_anchors)},
      {"strategy", named(c.strategy, parse_strategy)},
      {"fusion", named(c.fusion, parse_fusion_mode)},
      {"ablation",
       [&c](const Json& v, const std::string& f) {
         if (!v.is_object()) throw ConfigError("config field '" + f + "': expected an object");
         for (const auto& [key, value] : v.items()) {
           if (key == "single_block") {
             c.ablation.single_block = as<bool>(value, f + "." + key);
           } else if (key == "no_self_attention") {
             c.ablation.no_self_attention = as<bool>(value, f + "." + key);
           } else {
             throw ConfigError("config: unknown field '" + f + "." + key + "'");
           }
         }
       }},
      {"blocks", num(c.blocks)},
      {"heads", num(c.heads)},
      {"channels", num(c.channels)},
      {"patch", num(c.patch)},
      {"image_size", num(c.image_size)},
      {"beta", num(c.beta)},
      {"optimizer", named(c.optimizer, parse_optimizer)},
      {"learning_rate", num(c.learning_rate)},
      {"momentum", num(c.momentum)},
      {"steps", num(c.steps)},
      {"batch_scenes", num(c.batch_scenes)},
      {"seed", num(c.seed)},
      {"eval_seed", num(c.eval_seed)},
      {"encoder_seed", num(c.encoder_seed)},
      {"trajectory", named(c.trajectory, parse_trajectory_kind)},
      {"baseline", num(c.baseline)},
      {"camera_radius", num(c.camera_radius)},
      {"camera_elevation", num(c.camera_elevation)},
      {"n_blobs", num(c.n_blobs)},
      {"input_noise", num(c.input_noise)},
      {"noise_grain", num(c.noise_grain)},
      {"input_dropout", num(c.input_dropout)},
      {"positional_scale", num(c.positional_scale)},
      {"train_targets", num(c.train_targets)},
      {"target_views", num(c.target_views)},
      {"eval_scenes", num(c.eval_scenes)},
  };
  for (const auto& [key, value] : j.items()) {
    const auto it = fields.find(key);
    if (it == fields.end()) throw ConfigError("config: unknown field '" + key + "'");
    it->second(value, key);
  }
  c.validate();
  return c;
}

}  // namespace zp
