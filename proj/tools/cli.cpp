#include "cli.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <openssl/evp.h>

#include "experiment.hpp"
#include "zpressor/error.hpp"
#include "zpressor/pipeline.hpp"

namespace zp::cli {

namespace fs = std::filesystem;

std::string config_hash(const nlohmann::json& j) {
  const std::string text = j.dump();
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(text.data(), text.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
    throw Error(ErrorKind::kInvalidInput, "config_hash: SHA-256 failed");
  }
  std::string hex;
  char buf[3];
  for (unsigned int i = 0; i < len; ++i) {
    std::snprintf(buf, sizeof buf, "%02x", digest[i]);
    hex += buf;
  }
  return hex;
}

namespace {

struct Options {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::string checkpoint;
};

nlohmann::json read_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file '" + path + "'");
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config file '" + path + "' is not valid JSON: " + e.what());
  }
}

// Collects produced files and writes the manifest last.
class OutputDir {
 public:
  explicit OutputDir(const std::string& root) : root_(root) { fs::create_directories(root_); }

  fs::path path(const std::string& name) {
    files_.push_back(name);
    return root_ / name;
  }

  void write(const std::string& name, const std::string& text) {
    std::ofstream f(path(name), std::ios::binary);
    if (!f) throw Error(ErrorKind::kInvalidInput, "cannot write " + (root_ / name).string());
    f << text;
  }

  void manifest(const std::string& command, const nlohmann::json& config) {
    std::sort(files_.begin(), files_.end());
    files_.erase(std::unique(files_.begin(), files_.end()), files_.end());
    const nlohmann::json m = {{"command", command},
                              {"config", config},
                              {"config_hash", config_hash(config)},
                              {"files", files_}};
    std::ofstream f(root_ / "manifest.json", std::ios::binary);
    f << m.dump(2) << '\n';
  }

 private:
  fs::path root_;
  std::vector<std::string> files_;
};

PipelineConfig load_pipeline(const Options& o) {
  PipelineConfig cfg = pipeline_config_from_json(read_json(o.config));
  if (o.seed) cfg.seed = *o.seed;
  cfg.validate();
  return cfg;
}

ExperimentSpec load_experiment(const Options& o) {
  ExperimentSpec spec = experiment_from_json(read_json(o.config));
  if (o.seed) spec.seeds = {*o.seed};
  return spec;
}

int cmd_train(const Options& o, std::ostream& out) {
  const PipelineConfig cfg = load_pipeline(o);
  OutputDir dir(o.out);
  std::string csv = metrics_header() + '\n';
  const TrainResult r = train(cfg, std::nullopt, [&](const MetricsRow& row) {
    csv += format_row(row) + '\n';
    if ((row.step + 1) % 100 == 0) {
      out << "step " << row.step + 1 << " task " << row.task << " kl " << row.kl << '\n';
    }
  });
  r.checkpoint.save(dir.path("checkpoint.zptn"));
  dir.path("checkpoint.zptn.json");
  dir.write("metrics.csv", csv);
  dir.manifest("train", to_json(cfg));
  return kExitOk;
}

Checkpoint checkpoint_or_init(const Options& o, const PipelineConfig& cfg) {
  if (o.checkpoint.empty()) return init_checkpoint(cfg);
  return Checkpoint::load(o.checkpoint);
}

int cmd_eval(const Options& o, std::ostream& out) {
  const PipelineConfig cfg = load_pipeline(o);
  const Checkpoint ck = checkpoint_or_init(o, cfg);
  const EvalMetrics m = evaluate(ck.model, cfg);
  OutputDir dir(o.out);
  std::string csv = "scene,psnr\n";
  char buf[128];
  for (std::size_t i = 0; i < m.scene_psnr.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%zu,%.6f\n", i, m.scene_psnr[i]);
    csv += buf;
  }
  dir.write("eval.csv", csv);
  std::snprintf(buf, sizeof buf, "%.6f,%.6f,%.9g,%.9g,%.3f,%zu\n", m.mean_psnr, m.median_psnr,
                m.mean_task, m.mean_kl, m.median_wallclock_ms, m.n_primitives);
  dir.write("eval_summary.csv",
            std::string("mean_psnr,median_psnr,mean_task,mean_kl,wallclock_ms,n_primitives\n") +
                buf);
  out << "median psnr " << m.median_psnr << " dB over " << m.scene_psnr.size() << " scenes\n";
  nlohmann::json manifest_cfg = to_json(cfg);
  if (!o.checkpoint.empty()) manifest_cfg = {{"pipeline", manifest_cfg}, {"checkpoint", o.checkpoint}};
  dir.manifest("eval", manifest_cfg);
  return kExitOk;
}

int cmd_render(const Options& o, std::ostream& out) {
  const PipelineConfig cfg = load_pipeline(o);
  const Checkpoint ck = checkpoint_or_init(o, cfg);
  const Episode ep = make_episode(cfg, stream_seed(cfg.eval_seed, 0), cfg.target_views);
  const ForwardResult r =
      forward(ep.inputs, ep.targets, cfg, ck.model, false, stream_seed(cfg.eval_seed, 0));
  OutputDir dir(o.out);
  auto name = [](const char* kind, std::size_t i) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%s_%02zu.ppm", kind, i);
    return std::string(buf);
  };
  for (std::size_t i = 0; i < ep.inputs.size(); ++i) {
    write_ppm(dir.path(name("input", i)), ep.inputs[i].image);
  }
  for (std::size_t i = 0; i < ep.targets.size(); ++i) {
    write_ppm(dir.path(name("target", i)), ep.targets[i].image);
    write_ppm(dir.path(name("render", i)), r.renders[i]);
  }
  out << "rendered " << ep.targets.size() << " target views, task loss " << r.loss.task << '\n';
  nlohmann::json manifest_cfg = to_json(cfg);
  if (!o.checkpoint.empty()) manifest_cfg = {{"pipeline", manifest_cfg}, {"checkpoint", o.checkpoint}};
  dir.manifest("render", manifest_cfg);
  return kExitOk;
}

int cmd_experiment(const std::string& command, const Options& o, std::ostream& out) {
  const ExperimentSpec spec = load_experiment(o);
  ExperimentOutput result;
  if (command == "scaling") {
    result = run_scaling(spec);
  } else if (command == "sweep") {
    result = run_anchor_sweep(spec);
  } else if (command == "ablate") {
    result = run_ablate(spec);
  } else {
    result = run_strategies(spec);
  }
  OutputDir dir(o.out);
  dir.write(spec.name + ".csv", result.rows.str());
  dir.write(spec.name + "_summary.csv", result.summary.str());
  out << result.summary.str();
  dir.manifest(command, to_json(spec));
  return kExitOk;
}

}  // namespace

int cli_main(int argc, char** argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Multi-view compression testbed for feed-forward Gaussian splatting", "zpressor"};
  app.require_subcommand(1, 1);
  Options o;

  struct Command {
    const char* name;
    const char* help;
    bool checkpoint;
  };
  const Command commands[] = {
      {"scaling", "primitive count, wall-clock and peak memory against K", false},
      {"sweep", "held-out PSNR against the number of anchors", false},
      {"ablate", "train fusion, block or beta variants with shared seeds", false},
      {"strategies", "compare anchor selection strategies", false},
      {"train", "train one model and write checkpoint and metrics", false},
      {"eval", "evaluate a checkpoint on held-out scenes", true},
      {"render", "write input, target and rendered views as PPM", true},
  };
  for (const auto& c : commands) {
    CLI::App* sub = app.add_subcommand(c.name, c.help);
    sub->add_option("--config", o.config, "JSON config file")->required();
    sub->add_option("--out", o.out, "output directory")->required();
    sub->add_option("--seed", o.seed, "override the run seed");
    if (c.checkpoint) sub->add_option("--checkpoint", o.checkpoint, "checkpoint.zptn to load");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    err << app.help();
    return kExitConfig;
  }

  const std::string command = app.get_subcommands().front()->get_name();
  try {
    if (!fs::exists(o.config)) {
      err << "error: config file '" << o.config << "' does not exist\n";
      return kExitConfig;
    }
    if (command == "train") return cmd_train(o, out);
    if (command == "eval") return cmd_eval(o, out);
    if (command == "render") return cmd_render(o, out);
    return cmd_experiment(command, o, out);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
}

int cli_main(int argc, char** argv) { return cli_main(argc, argv, std::cout, std::cerr); }

}  // namespace zp::cli
