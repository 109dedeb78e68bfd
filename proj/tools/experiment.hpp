#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "zpressor/pipeline.hpp"

namespace zp::cli {

enum class SweepAxis { kKViews, kNAnchors, kStrategy, kFusionMode, kBeta, kAblation };

std::string to_string(SweepAxis axis);
SweepAxis parse_sweep_axis(const std::string& name);

struct ExperimentSpec {
  std::string name;
  PipelineConfig base;
  SweepAxis axis = SweepAxis::kKViews;
  std::vector<nlohmann::json> values;
  std::vector<std::uint64_t> seeds{0};
  // Trajectory extents compared by the anchor sweep, narrow first.
  std::vector<double> baselines{1.2, 5.76};

  // Throws ConfigError; every value is checked against the base config.
  void validate() const;
};

nlohmann::json to_json(const ExperimentSpec& spec);
ExperimentSpec experiment_from_json(const nlohmann::json& j);

// Applies one sweep value to a copy of `cfg`. Errors name the axis and value.
PipelineConfig apply_axis(PipelineConfig cfg, SweepAxis axis, const nlohmann::json& value);
std::string value_label(const nlohmann::json& value);

inline constexpr int kTrailingWindow = 100;

struct RunResult {
  Checkpoint checkpoint;
  std::vector<MetricsRow> metrics;
  EvalMetrics eval;
  double first_task = 0;
  // Means over the last kTrailingWindow training steps.
  double final_task = 0;
  double final_kl = 0;
};

// Trains cfg from scratch, then evaluates on cfg's held-out scenes.
RunResult train_and_evaluate(const PipelineConfig& cfg);

double median(std::vector<double> v);

struct Table {
  std::string header;
  std::vector<std::string> rows;

  std::string str() const;
};

struct ExperimentOutput {
  Table rows;
  Table summary;
};

// One rows-table line per (sweep value, seed); the anchor sweep adds a
// baseline dimension and the strategy comparison a no_fusion reference.
ExperimentOutput run_scaling(const ExperimentSpec& spec);
ExperimentOutput run_anchor_sweep(const ExperimentSpec& spec);
ExperimentOutput run_ablate(const ExperimentSpec& spec);
ExperimentOutput run_strategies(const ExperimentSpec& spec);

}  // namespace zp::cli
