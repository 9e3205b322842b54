// Command-line front end: train / eval / sweep / augment-preview / grad-check.
// Exit codes: 0 success, 1 usage error, 2 runtime failure.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "fixmatch/harness.hpp"

namespace fs = std::filesystem;
using namespace fixmatch;

namespace {

std::vector<std::string> split_commas(const std::string& csv) {
  std::vector<std::string> out;
  std::stringstream ss(csv);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.push_back(item);
  return out;
}

ExperimentConfig load_experiment_config(const std::string& config_path,
                                        const std::vector<std::string>& overrides) {
  ConfigMap map;
  if (!config_path.empty()) map = parse_config_file(config_path);
  for (const auto& assignment : overrides) apply_override(map, assignment);
  return bind_config(map);
}

/// Inline dataset spec, e.g.
///   synth:classes=10,size=24,per_class=200,seed=8
///   idx:images=train-images.idx,labels=train-labels.idx
Dataset parse_dataset_spec(const std::string& spec) {
  const auto colon = spec.find(':');
  const std::string kind = spec.substr(0, colon);
  ConfigMap fields;
  if (colon != std::string::npos)
    for (const auto& kv : split_commas(spec.substr(colon + 1)))
      apply_override(fields, kv);

  auto field = [&](const std::string& key, const std::string& fallback) {
    auto it = fields.find(key);
    if (it != fields.end()) {
      fields.erase(it->first);
      return it->second;
    }
    return fallback;
  };

  Dataset ds;
  if (kind == "synth") {
    const int classes = std::stoi(field("classes", "10"));
    const int size = std::stoi(field("size", "24"));
    const int per_class = std::stoi(field("per_class", "200"));
    const std::uint64_t seed = std::stoull(field("seed", "8"));
    ds = synth_glyphs(per_class, classes, size, seed);
  } else if (kind == "idx") {
    const std::string images = field("images", "");
    const std::string labels = field("labels", "");
    if (images.empty() || labels.empty())
      throw std::runtime_error("idx dataset spec needs images= and labels=");
    ds = load_idx(images, labels);
    if (fs::exists(images + ".meta")) read_dataset_metadata(ds, images + ".meta");
  } else {
    throw std::runtime_error("dataset spec must start with synth: or idx:");
  }
  if (!fields.empty())
    throw std::runtime_error("dataset spec: unknown field '" +
                             fields.begin()->first + "'");
  ds.validate();
  return ds;
}

int cmd_train(const std::string& config_path,
              const std::vector<std::string>& overrides,
              const std::string& resume, long halt_at) {
  ExperimentConfig cfg = load_experiment_config(config_path, overrides);
  std::cout << "training " << algorithm_name(cfg.algorithm) << " for "
            << cfg.steps << " steps -> " << cfg.output_dir << "\n";
  RunResult result = run_experiment(cfg, resume, halt_at);
  if (!result.record.rows.empty()) {
    const RunRow& last = result.record.rows.back();
    std::cout << "final: step " << last.step << "  err " << last.err
              << "  err_ema " << last.err_ema << "  mask " << last.mask_rate
              << "\n";
  }
  std::cout << "metrics: " << result.metrics_path << "\n"
            << "checkpoint: " << result.checkpoint_path << "\n";
  return 0;
}

int cmd_eval(const std::string& checkpoint_path, const std::string& dataset_spec,
             const std::string& config_path) {
  std::string cfg_path = config_path;
  if (cfg_path.empty()) {
    const fs::path sibling = fs::path(checkpoint_path).parent_path() / "config.cfg";
    if (!fs::exists(sibling))
      throw std::runtime_error(
          "no config next to the checkpoint; pass --config explicitly");
    cfg_path = sibling.string();
  }
  ExperimentConfig cfg = bind_config(parse_config_file(cfg_path));
  TrainerState state = checkpoint_load(cfg, checkpoint_path);
  Dataset ds = parse_dataset_spec(dataset_spec);

  const double raw = evaluate_error(state.model, ds);
  const double ema = evaluate_ema_error(state.model, state.ema, ds);
  std::cout << "examples: " << ds.size() << "\n"
            << "err: " << raw << "\n"
            << "err_ema: " << ema << "\n";
  return 0;
}

int cmd_sweep(const std::string& config_path,
              const std::vector<std::string>& overrides, const std::string& knob,
              const std::string& values_csv) {
  const std::vector<std::string> values = split_commas(values_csv);
  if (values.empty()) throw std::runtime_error("sweep: --values is empty");
  ConfigMap map;
  if (!config_path.empty()) map = parse_config_file(config_path);
  for (const auto& assignment : overrides) apply_override(map, assignment);

  ExperimentConfig base = bind_config(map);
  const auto points = run_sweep(map, knob, values);

  fs::create_directories(base.output_dir);
  const std::string csv = (fs::path(base.output_dir) / ("sweep_" + knob + ".csv")).string();
  const std::string svg = (fs::path(base.output_dir) / ("sweep_" + knob + ".svg")).string();
  emit_sweep_csv(points, knob, csv);
  emit_sweep_svg(points, knob, svg);
  for (const auto& p : points)
    std::cout << knob << "=" << p.knob_value << "  err_ema " << p.final_err_ema
              << "  mask " << p.final_mask_rate << "\n";
  std::cout << "sweep table: " << csv << "\nsweep chart: " << svg << "\n";
  return 0;
}

int cmd_augment_preview(const std::string& in_path, const std::string& out_path,
                        const std::string& transform, double magnitude,
                        const std::string& method, const std::string& policy,
                        std::uint64_t seed) {
  ImageU8 img = read_pnm(in_path);
  RngStream rng(seed, {StreamPurpose::kStrongAug, 0, 0});
  ImageU8 out = img;
  if (!transform.empty()) {
    TransformSpec spec;
    spec.kind = transform_kind_from_name(transform);
    spec.magnitude = magnitude;
    if (!method.empty()) spec.method = rescale_method_from_name(method);
    out = apply_transform(img, spec, &rng);
  } else if (policy == "weak") {
    out = weak_augment(img, WeakAugConfig{}, rng);
  } else if (policy == "randaugment") {
    out = strong_augment(img, StrongPolicy::kRandAugment, nullptr, rng);
  } else if (policy == "cta") {
    CtaState state = CtaState::fresh();
    out = strong_augment(img, StrongPolicy::kCta, &state, rng);
  } else {
    throw std::runtime_error("pass --transform NAME or --policy weak|randaugment|cta");
  }
  write_pnm(out, out_path);
  std::cout << "wrote " << out_path << " (" << out.width << "x" << out.height
            << "x" << out.channels << ")\n";
  return 0;
}

int cmd_grad_check(int archs, double eps, double tolerance, std::uint64_t seed) {
  const auto start = std::chrono::steady_clock::now();
  double worst = 0.0;
  std::uint64_t worst_seed = 0;
  for (int i = 0; i < archs; ++i) {
    GradCheckProbe probe = make_grad_check_probe(seed + static_cast<std::uint64_t>(i));
    const double err = grad_check(probe.model, probe.batch, eps);
    if (err > worst) {
      worst = err;
      worst_seed = seed + static_cast<std::uint64_t>(i);
    }
  }
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  std::printf("max relative error %.3e over %d architectures (%.1f s, worst seed %llu)\n",
              worst, archs, secs,
              static_cast<unsigned long long>(worst_seed));
  if (worst > tolerance) {
    std::printf("FAIL: above tolerance %.3e\n", tolerance);
    return 2;
  }
  std::printf("OK: within tolerance %.3e\n", tolerance);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"FixMatch-style semi-supervised training engine"};
  app.require_subcommand(1);

  // train
  auto* train = app.add_subcommand("train", "run one training experiment");
  std::string train_config, train_resume;
  std::vector<std::string> train_overrides;
  long halt_at = 0;
  train->add_option("--config", train_config, "key = value config file");
  train->add_option("--override", train_overrides, "key=value (repeatable)");
  train->add_option("--resume", train_resume, "checkpoint to resume from");
  train->add_option("--halt-at", halt_at, "stop after this step with a resumable checkpoint");

  // eval
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on a dataset");
  std::string eval_checkpoint, eval_dataset, eval_config;
  eval->add_option("--checkpoint", eval_checkpoint)->required();
  eval->add_option("--dataset", eval_dataset,
                   "synth:classes=..,size=..,per_class=..,seed=.. or idx:images=..,labels=..")
      ->required();
  eval->add_option("--config", eval_config, "config used for the run (default: sibling config.cfg)");

  // sweep
  auto* sweep = app.add_subcommand("sweep", "run one experiment per knob value");
  std::string sweep_config, sweep_knob, sweep_values;
  std::vector<std::string> sweep_overrides;
  sweep->add_option("--config", sweep_config);
  sweep->add_option("--override", sweep_overrides, "key=value (repeatable)");
  sweep->add_option("--knob", sweep_knob, "config key to sweep")->required();
  sweep->add_option("--values", sweep_values, "comma-separated values")->required();

  // augment-preview
  auto* preview = app.add_subcommand("augment-preview",
                                     "apply a transform or policy to a PGM/PPM image");
  std::string pv_in, pv_out, pv_transform, pv_method, pv_policy;
  double pv_magnitude = 0.0;
  std::uint64_t pv_seed = 1;
  preview->add_option("--in", pv_in, "input .pgm (P5) or .ppm (P6)")->required();
  preview->add_option("--out", pv_out, "output image path")->required();
  preview->add_option("--transform", pv_transform, "transform name (see README)");
  preview->add_option("--magnitude", pv_magnitude, "transform magnitude");
  preview->add_option("--method", pv_method, "rescale method");
  preview->add_option("--policy", pv_policy, "weak | randaugment | cta");
  preview->add_option("--seed", pv_seed, "stream seed");

  // grad-check
  auto* gradcheck = app.add_subcommand("grad-check",
                                       "finite-difference check over random architectures");
  int gc_archs = 100;
  double gc_eps = 1e-5, gc_tolerance = 1e-4;
  std::uint64_t gc_seed = 1000;
  gradcheck->add_option("--archs", gc_archs, "number of architectures (default 100)");
  gradcheck->add_option("--eps", gc_eps, "finite-difference step (default 1e-5)");
  gradcheck->add_option("--tolerance", gc_tolerance, "max relative error allowed");
  gradcheck->add_option("--seed", gc_seed, "base seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);  // prints help, exit 0
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\nrun with --help for usage\n";
    return 1;
  }

  try {
    if (train->parsed())
      return cmd_train(train_config, train_overrides, train_resume, halt_at);
    if (eval->parsed()) return cmd_eval(eval_checkpoint, eval_dataset, eval_config);
    if (sweep->parsed())
      return cmd_sweep(sweep_config, sweep_overrides, sweep_knob, sweep_values);
    if (preview->parsed())
      return cmd_augment_preview(pv_in, pv_out, pv_transform, pv_magnitude,
                                 pv_method, pv_policy, pv_seed);
    if (gradcheck->parsed())
      return cmd_grad_check(gc_archs, gc_eps, gc_tolerance, gc_seed);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
