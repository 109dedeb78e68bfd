#include "experiment.hpp"

#include <algorithm>
#include <cstdio>
#include <map>

#include "zpressor/error.hpp"
#include "zpressor/tensor.hpp"

namespace zp::cli {

namespace {

struct AxisName {
  SweepAxis axis;
  const char* name;
};

constexpr AxisName kAxes[] = {
    {SweepAxis::kKViews, "k_views"},   {SweepAxis::kNAnchors, "n_anchors"},
    {SweepAxis::kStrategy, "strategy"}, {SweepAxis::kFusionMode, "fusion_mode"},
    {SweepAxis::kBeta, "beta"},        {SweepAxis::kAblation, "ablation"},
};

std::string fmt(const char* spec, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, spec, v);
  return buf;
}

std::string num(double v) { return fmt("%.6f", v); }

bool filesystem_safe(const std::string& s) {
  if (s.empty() || s == "." || s == "..") return false;
  return std::all_of(s.begin(), s.end(), [](char c) {
    return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') ||
           c == '_' || c == '-' || c == '.';
  });
}

PipelineConfig with_seed(PipelineConfig cfg, std::uint64_t seed) {
  cfg.seed = seed;
  return cfg;
}

void require_axis(const ExperimentSpec& spec, std::initializer_list<SweepAxis> allowed,
                  const char* command) {
  if (std::find(allowed.begin(), allowed.end(), spec.axis) == allowed.end()) {
    throw ConfigError(std::string(command) + ": axis '" + to_string(spec.axis) +
                      "' is not supported");
  }
}

}  // namespace

std::string to_string(SweepAxis axis) {
  for (const auto& a : kAxes) {
    if (a.axis == axis) return a.name;
  }
  throw InvalidInput("unknown sweep axis");
}

SweepAxis parse_sweep_axis(const std::string& name) {
  for (const auto& a : kAxes) {
    if (name == a.name) return a.axis;
  }
  throw ConfigError("unknown sweep axis '" + name + "'");
}

std::string value_label(const nlohmann::json& value) {
  if (value.is_string()) return value.get<std::string>();
  if (value.is_number_integer()) return std::to_string(value.get<long long>());
  if (value.is_number()) return fmt("%g", value.get<double>());
  return value.dump();
}

PipelineConfig apply_axis(PipelineConfig cfg, SweepAxis axis, const nlohmann::json& value) {
  const std::string where = "axis " + to_string(axis) + " value " + value.dump();
  try {
    switch (axis) {
      case SweepAxis::kKViews:
        if (!value.is_number_integer()) throw ConfigError("expected an integer");
        cfg.k_views = value.get<int>();
        break;
      case SweepAxis::kNAnchors:
        if (!value.is_number_integer()) throw ConfigError("expected an integer");
        cfg.n_anchors = value.get<int>();
        break;
      case SweepAxis::kStrategy:
        if (!value.is_string()) throw ConfigError("expected a string");
        cfg.strategy = parse_strategy(value.get<std::string>());
        break;
      case SweepAxis::kFusionMode:
        if (!value.is_string()) throw ConfigError("expected a string");
        cfg.fusion = parse_fusion_mode(value.get<std::string>());
        break;
      case SweepAxis::kBeta:
        if (!value.is_number()) throw ConfigError("expected a number");
        cfg.beta = value.get<double>();
        break;
      case SweepAxis::kAblation: {
        if (!value.is_string()) throw ConfigError("expected a string");
        const auto name = value.get<std::string>();
        if (name == "full") {
          cfg.ablation = {};
        } else if (name == "single_block") {
          cfg.ablation = {.single_block = true};
        } else if (name == "no_self_attention") {
          cfg.ablation = {.no_self_attention = true};
        } else {
          throw ConfigError("expected full, single_block or no_self_attention");
        }
        break;
      }
    }
    cfg.validate();
  } catch (const Error& e) {
    throw ConfigError(where + ": " + e.what());
  }
  return cfg;
}

void ExperimentSpec::validate() const {
  if (!filesystem_safe(name)) {
    throw ConfigError("experiment field 'name': must be non-empty and use only [A-Za-z0-9_.-]");
  }
  if (values.empty()) throw ConfigError("experiment field 'values': must be non-empty");
  if (seeds.empty()) throw ConfigError("experiment field 'seeds': must be non-empty");
  base.validate();
  for (const auto& v : values) apply_axis(base, axis, v);
  for (double b : baselines) {
    if (!(b > 0)) throw ConfigError("experiment field 'baselines': values must be > 0");
  }
}

nlohmann::json to_json(const ExperimentSpec& spec) {
  return {{"name", spec.name},           {"pipeline", to_json(spec.base)},
          {"axis", to_string(spec.axis)}, {"values", spec.values},
          {"seeds", spec.seeds},         {"baselines", spec.baselines}};
}

ExperimentSpec experiment_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("experiment: expected a JSON object");
  static const char* known[] = {"name", "pipeline", "axis", "values", "seeds", "baselines"};
  for (const auto& [key, _] : j.items()) {
    if (std::find_if(std::begin(known), std::end(known),
                     [&](const char* k) { return key == k; }) == std::end(known)) {
      throw ConfigError("experiment: unknown field '" + key + "'");
    }
  }
  ExperimentSpec spec;
  try {
    spec.name = j.at("name").get<std::string>();
    if (j.contains("pipeline")) spec.base = pipeline_config_from_json(j.at("pipeline"));
    spec.axis = parse_sweep_axis(j.at("axis").get<std::string>());
    spec.values = j.at("values").get<std::vector<nlohmann::json>>();
    if (j.contains("seeds")) spec.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
    if (j.contains("baselines")) spec.baselines = j.at("baselines").get<std::vector<double>>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("experiment: " + std::string(e.what()));
  }
  spec.validate();
  return spec;
}

double median(std::vector<double> v) {
  if (v.empty()) throw InvalidInput("median of an empty list");
  std::sort(v.begin(), v.end());
  const std::size_t m = v.size() / 2;
  return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

RunResult train_and_evaluate(const PipelineConfig& cfg) {
  TrainResult trained = train(cfg);
  RunResult r{std::move(trained.checkpoint), std::move(trained.metrics), {}, 0, 0, 0};
  if (!r.metrics.empty()) {
    r.first_task = r.metrics.front().task;
    const std::size_t n = std::min<std::size_t>(kTrailingWindow, r.metrics.size());
    for (std::size_t i = r.metrics.size() - n; i < r.metrics.size(); ++i) {
      r.final_task += r.metrics[i].task / static_cast<double>(n);
      r.final_kl += r.metrics[i].kl / static_cast<double>(n);
    }
  }
  r.eval = evaluate(r.checkpoint.model, cfg);
  return r;
}

std::string Table::str() const {
  std::string out = header + '\n';
  for (const auto& r : rows) out += r + '\n';
  return out;
}

ExperimentOutput run_scaling(const ExperimentSpec& spec) {
  spec.validate();
  require_axis(spec, {SweepAxis::kKViews}, "scaling");
  ExperimentOutput out;
  out.rows.header =
      "k_views,seed,n_anchors,compressed_primitives,compressed_ms,compressed_peak_bytes,"
      "compressed_psnr,baseline_primitives,baseline_ms,baseline_peak_bytes,baseline_psnr";
  out.summary.header = "k_views,compressed_primitives,compressed_ms,baseline_primitives,baseline_ms";
  std::map<int, std::vector<EvalMetrics>> compressed, baseline;
  for (std::uint64_t seed : spec.seeds) {
    const Checkpoint ck = train(with_seed(spec.base, seed)).checkpoint;
    for (const auto& v : spec.values) {
      const PipelineConfig c = apply_axis(with_seed(spec.base, seed), spec.axis, v);
      PipelineConfig b = c;
      b.n_anchors = b.k_views;
      b.fusion = FusionMode::kNoFusion;
      memory::reset_peak();
      const EvalMetrics ec = evaluate(ck.model, c);
      const std::size_t pc = memory::peak_bytes();
      memory::reset_peak();
      const EvalMetrics eb = evaluate(ck.model, b);
      const std::size_t pb = memory::peak_bytes();
      out.rows.rows.push_back(std::to_string(c.k_views) + ',' + std::to_string(seed) + ',' +
                              std::to_string(c.n_anchors) + ',' +
                              std::to_string(ec.n_primitives) + ',' +
                              fmt("%.3f", ec.median_wallclock_ms) + ',' + std::to_string(pc) +
                              ',' + num(ec.mean_psnr) + ',' + std::to_string(eb.n_primitives) +
                              ',' + fmt("%.3f", eb.median_wallclock_ms) + ',' +
                              std::to_string(pb) + ',' + num(eb.mean_psnr));
      compressed[c.k_views].push_back(ec);
      baseline[c.k_views].push_back(eb);
    }
  }
  for (const auto& [k, runs] : compressed) {
    std::vector<double> tc, tb;
    for (const auto& e : runs) tc.push_back(e.median_wallclock_ms);
    for (const auto& e : baseline[k]) tb.push_back(e.median_wallclock_ms);
    out.summary.rows.push_back(std::to_string(k) + ',' + std::to_string(runs.front().n_primitives) +
                               ',' + fmt("%.3f", median(tc)) + ',' +
                               std::to_string(baseline[k].front().n_primitives) + ',' +
                               fmt("%.3f", median(tb)));
  }
  return out;
}

ExperimentOutput run_anchor_sweep(const ExperimentSpec& spec) {
  spec.validate();
  require_axis(spec, {SweepAxis::kNAnchors}, "sweep");
  if (spec.baselines.empty()) throw ConfigError("sweep: 'baselines' must be non-empty");
  ExperimentOutput out;
  out.rows.header = "baseline,n_anchors,seed,median_psnr,mean_psnr,final_task,final_kl";
  out.summary.header = "baseline,n_anchors,median_psnr,best";
  for (double bl : spec.baselines) {
    std::vector<std::pair<int, double>> curve;
    for (const auto& v : spec.values) {
      std::vector<double> scores;
      int n = 0;
      for (std::uint64_t seed : spec.seeds) {
        PipelineConfig cfg = with_seed(spec.base, seed);
        cfg.baseline = bl;
        cfg = apply_axis(cfg, spec.axis, v);
        n = cfg.n_anchors;
        const RunResult r = train_and_evaluate(cfg);
        scores.push_back(r.eval.mean_psnr);
        out.rows.rows.push_back(num(bl) + ',' + std::to_string(n) + ',' +
                                std::to_string(seed) + ',' + num(r.eval.median_psnr) + ',' +
                                num(r.eval.mean_psnr) + ',' + fmt("%.9g", r.final_task) + ',' +
                                fmt("%.9g", r.final_kl));
      }
      curve.emplace_back(n, median(scores));
    }
    const auto best = std::max_element(curve.begin(), curve.end(), [](auto a, auto b) {
      return a.second < b.second;
    });
    for (const auto& [n, score] : curve) {
      out.summary.rows.push_back(num(bl) + ',' + std::to_string(n) + ',' + num(score) + ',' +
                                 (n == best->first ? "1" : "0"));
    }
  }
  return out;
}

namespace {

struct Variant {
  std::string label;
  PipelineConfig cfg;
};

ExperimentOutput run_variants(const ExperimentSpec& spec, const std::vector<Variant>& variants,
                              const std::string& key) {
  ExperimentOutput out;
  out.rows.header = key + ",seed,median_psnr,mean_psnr,first_task,final_task,final_kl";
  out.summary.header = "rank," + key + ",median_psnr,median_final_task,median_final_kl";
  struct Agg {
    std::string label;
    double psnr, task, kl;
  };
  std::vector<Agg> agg;
  for (const auto& variant : variants) {
    std::vector<double> psnrs, tasks, kls;
    for (std::uint64_t seed : spec.seeds) {
      const RunResult r = train_and_evaluate(with_seed(variant.cfg, seed));
      psnrs.push_back(r.eval.mean_psnr);
      tasks.push_back(r.final_task);
      kls.push_back(r.final_kl);
      out.rows.rows.push_back(variant.label + ',' + std::to_string(seed) + ',' +
                              num(r.eval.median_psnr) + ',' + num(r.eval.mean_psnr) + ',' +
                              fmt("%.9g", r.first_task) + ',' + fmt("%.9g", r.final_task) + ',' +
                              fmt("%.9g", r.final_kl));
    }
    agg.push_back({variant.label, median(psnrs), median(tasks), median(kls)});
  }
  std::stable_sort(agg.begin(), agg.end(), [](const Agg& a, const Agg& b) {
    return a.psnr > b.psnr;
  });
  for (std::size_t i = 0; i < agg.size(); ++i) {
    out.summary.rows.push_back(std::to_string(i + 1) + ',' + agg[i].label + ',' +
                               num(agg[i].psnr) + ',' + fmt("%.9g", agg[i].task) + ',' +
                               fmt("%.9g", agg[i].kl));
  }
  return out;
}

}  // namespace

ExperimentOutput run_ablate(const ExperimentSpec& spec) {
  spec.validate();
  require_axis(spec, {SweepAxis::kFusionMode, SweepAxis::kAblation, SweepAxis::kBeta}, "ablate");
  std::vector<Variant> variants;
  for (const auto& v : spec.values) {
    variants.push_back({value_label(v), apply_axis(spec.base, spec.axis, v)});
  }
  return run_variants(spec, variants, to_string(spec.axis));
}

ExperimentOutput run_strategies(const ExperimentSpec& spec) {
  spec.validate();
  require_axis(spec, {SweepAxis::kStrategy}, "strategies");
  std::vector<Variant> variants;
  for (const auto& v : spec.values) {
    variants.push_back({value_label(v), apply_axis(spec.base, spec.axis, v)});
  }
  PipelineConfig reference = spec.base;
  reference.fusion = FusionMode::kNoFusion;
  variants.push_back({"no_fusion", reference});
  return run_variants(spec, variants, "strategy");
}

}  // namespace zp::cli
