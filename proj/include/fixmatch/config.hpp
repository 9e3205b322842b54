#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "fixmatch/augment.hpp"
#include "fixmatch/data.hpp"
#include "fixmatch/optim.hpp"
#include "fixmatch/ssl.hpp"
#include "fixmatch/trainer.hpp"

namespace fixmatch {

// Line-oriented `key = value` configuration with dotted sections and `#`
// comments. Every experiment knob is one key, so CLI overrides of the form
// key=value are total.

using ConfigMap = std::map<std::string, std::string>;

namespace detail {

inline std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r");
  const auto b = s.find_last_not_of(" \t\r");
  return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
}

}  // namespace detail

inline ConfigMap parse_config_text(std::istream& in) {
  ConfigMap out;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    line_no++;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw std::runtime_error("config: line " + std::to_string(line_no) +
                               " is not key = value");
    const std::string key = detail::trim(line.substr(0, eq));
    const std::string value = detail::trim(line.substr(eq + 1));
    if (key.empty())
      throw std::runtime_error("config: empty key at line " + std::to_string(line_no));
    out[key] = value;
  }
  return out;
}

inline ConfigMap parse_config_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("config: cannot open " + path);
  return parse_config_text(f);
}

inline void apply_override(ConfigMap& map, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos)
    throw std::runtime_error("override must be key=value: " + assignment);
  map[detail::trim(assignment.substr(0, eq))] = detail::trim(assignment.substr(eq + 1));
}

// ---------------------------------------------------------------------------
// Experiment configuration
// ---------------------------------------------------------------------------

struct DatasetConfig {
  std::string kind = "synth";  // synth | idx
  // synth
  int classes = 10;
  int size = 24;
  int train_per_class = 500;
  int test_per_class = 200;
  std::uint64_t seed = 7;
  std::uint64_t test_seed = 8;
  // idx
  std::string images, labels, test_images, test_labels;
};

struct ExperimentConfig {
  Algorithm algorithm = Algorithm::kFixMatch;
  std::uint64_t seed = 1;
  long steps = 8192;
  long eval_every = 256;
  std::string output_dir = "runs/out";
  int workers = 0;  // 0 = hardware concurrency; never affects results

  DatasetConfig dataset;
  SplitSpec split;

  FixMatchConfig fixmatch;
  WeakAugConfig weak;
  OptimConfig optim;
  Schedule::Kind schedule_kind = Schedule::Kind::kCosine;
  double schedule_end_frac = 1.0 / 3.0;
  double lr = 0.03;
  double ema_decay = 0.999;

  Schedule schedule() const {
    return Schedule{schedule_kind, lr, schedule_end_frac, steps};
  }

  TrainSetup setup(bool dataset_flip_ok) const {
    TrainSetup s;
    s.algorithm = algorithm;
    s.fixmatch = fixmatch;
    s.weak = weak;
    s.weak.flip_enabled = weak.flip_enabled && dataset_flip_ok;
    s.optim = optim;
    s.schedule = schedule();
    return s;
  }
};

namespace detail {

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "on") return true;
  if (v == "false" || v == "0" || v == "off") return false;
  throw std::runtime_error("config: key '" + key + "' wants a bool, got '" + v + "'");
}

inline double parse_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (...) {
    throw std::runtime_error("config: key '" + key + "' wants a number, got '" + v + "'");
  }
}

inline long parse_long(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const long d = std::stol(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (...) {
    throw std::runtime_error("config: key '" + key + "' wants an integer, got '" + v + "'");
  }
}

inline std::uint64_t parse_u64(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const unsigned long long d = std::stoull(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (...) {
    throw std::runtime_error("config: key '" + key + "' wants an integer, got '" + v + "'");
  }
}

inline StrongPolicy parse_policy(const std::string& v) {
  for (int i = 0; i < 4; ++i)
    if (v == strong_policy_name(static_cast<StrongPolicy>(i)))
      return static_cast<StrongPolicy>(i);
  throw std::runtime_error("config: unknown policy '" + v + "'");
}

inline Schedule::Kind parse_schedule(const std::string& v) {
  if (v == "cosine") return Schedule::Kind::kCosine;
  if (v == "linear") return Schedule::Kind::kLinear;
  if (v == "constant") return Schedule::Kind::kConstant;
  throw std::runtime_error("config: unknown schedule '" + v + "'");
}

}  // namespace detail

/// Binds a key/value map onto an ExperimentConfig. Unknown keys are errors
/// so typos in overrides fail loudly.
inline ExperimentConfig bind_config(const ConfigMap& map) {
  ExperimentConfig cfg;
  for (const auto& [key, v] : map) {
    using namespace detail;
    if (key == "algorithm") cfg.algorithm = algorithm_from_name(v);
    else if (key == "seed") cfg.seed = parse_u64(key, v);
    else if (key == "steps") cfg.steps = parse_long(key, v);
    else if (key == "eval_every") cfg.eval_every = parse_long(key, v);
    else if (key == "output_dir") cfg.output_dir = v;
    else if (key == "workers") cfg.workers = static_cast<int>(parse_long(key, v));

    else if (key == "tau") cfg.fixmatch.tau = parse_double(key, v);
    else if (key == "lambda_u") cfg.fixmatch.lambda_u = parse_double(key, v);
    else if (key == "mu") cfg.fixmatch.mu = static_cast<int>(parse_long(key, v));
    else if (key == "batch") cfg.fixmatch.batch = static_cast<int>(parse_long(key, v));
    else if (key == "temperature") cfg.fixmatch.temperature = parse_double(key, v);
    else if (key == "anchors") cfg.fixmatch.anchors = static_cast<int>(parse_long(key, v));
    else if (key == "da") cfg.fixmatch.da_enabled = parse_bool(key, v);
    else if (key == "policy") cfg.fixmatch.policy = parse_policy(v);
    else if (key == "mixup_alpha") cfg.fixmatch.mixup_alpha = parse_double(key, v);

    else if (key == "weak.flip") cfg.weak.flip_enabled = parse_bool(key, v);
    else if (key == "weak.translate") cfg.weak.max_translate_frac = parse_double(key, v);

    else if (key == "optim.kind") {
      if (v == "sgd") cfg.optim.kind = OptimizerKind::kSgd;
      else if (v == "adam") cfg.optim.kind = OptimizerKind::kAdam;
      else throw std::runtime_error("config: unknown optimizer '" + v + "'");
    } else if (key == "optim.lr") cfg.lr = parse_double(key, v);
    else if (key == "optim.beta") cfg.optim.momentum = parse_double(key, v);
    else if (key == "optim.nesterov") cfg.optim.nesterov = parse_bool(key, v);
    else if (key == "optim.beta1") cfg.optim.beta1 = parse_double(key, v);
    else if (key == "optim.beta2") cfg.optim.beta2 = parse_double(key, v);
    else if (key == "optim.eps") cfg.optim.eps = parse_double(key, v);
    else if (key == "optim.weight_decay") cfg.optim.weight_decay = parse_double(key, v);

    else if (key == "schedule.kind") cfg.schedule_kind = parse_schedule(v);
    else if (key == "schedule.end_frac") cfg.schedule_end_frac = parse_double(key, v);
    else if (key == "ema.decay") cfg.ema_decay = parse_double(key, v);

    else if (key == "dataset.kind") cfg.dataset.kind = v;
    else if (key == "dataset.classes") cfg.dataset.classes = static_cast<int>(parse_long(key, v));
    else if (key == "dataset.size") cfg.dataset.size = static_cast<int>(parse_long(key, v));
    else if (key == "dataset.train_per_class") cfg.dataset.train_per_class = static_cast<int>(parse_long(key, v));
    else if (key == "dataset.test_per_class") cfg.dataset.test_per_class = static_cast<int>(parse_long(key, v));
    else if (key == "dataset.seed") cfg.dataset.seed = parse_u64(key, v);
    else if (key == "dataset.test_seed") cfg.dataset.test_seed = parse_u64(key, v);
    else if (key == "dataset.images") cfg.dataset.images = v;
    else if (key == "dataset.labels") cfg.dataset.labels = v;
    else if (key == "dataset.test_images") cfg.dataset.test_images = v;
    else if (key == "dataset.test_labels") cfg.dataset.test_labels = v;

    else if (key == "split.per_class") cfg.split.labels_per_class = static_cast<int>(parse_long(key, v));
    else if (key == "split.seed") cfg.split.fold_seed = parse_u64(key, v);
    else if (key == "split.include_labeled") cfg.split.include_labeled_in_unlabeled = parse_bool(key, v);

    else throw std::runtime_error("config: unknown key '" + key + "'");
  }
  cfg.fixmatch.validate();
  if (cfg.steps < 1) throw std::runtime_error("config: steps must be >= 1");
  if (cfg.eval_every < 1) throw std::runtime_error("config: eval_every must be >= 1");
  if (cfg.lr <= 0.0) throw std::runtime_error("config: optim.lr must be > 0");
  return cfg;
}

/// Canonical rendering; the fingerprint of this string guards checkpoints
/// against resuming under a different configuration.
inline std::string render_config(const ExperimentConfig& cfg) {
  std::ostringstream out;
  out.precision(17);
  out << "algorithm = " << algorithm_name(cfg.algorithm) << "\n"
      << "seed = " << cfg.seed << "\n"
      << "steps = " << cfg.steps << "\n"
      << "eval_every = " << cfg.eval_every << "\n"
      << "output_dir = " << cfg.output_dir << "\n"
      << "workers = " << cfg.workers << "\n"
      << "\n"
      << "tau = " << cfg.fixmatch.tau << "\n"
      << "lambda_u = " << cfg.fixmatch.lambda_u << "\n"
      << "mu = " << cfg.fixmatch.mu << "\n"
      << "batch = " << cfg.fixmatch.batch << "\n"
      << "temperature = " << cfg.fixmatch.temperature << "\n"
      << "anchors = " << cfg.fixmatch.anchors << "\n"
      << "da = " << (cfg.fixmatch.da_enabled ? "true" : "false") << "\n"
      << "policy = " << strong_policy_name(cfg.fixmatch.policy) << "\n"
      << "mixup_alpha = " << cfg.fixmatch.mixup_alpha << "\n"
      << "\n"
      << "weak.flip = " << (cfg.weak.flip_enabled ? "true" : "false") << "\n"
      << "weak.translate = " << cfg.weak.max_translate_frac << "\n"
      << "\n"
      << "optim.kind = " << (cfg.optim.kind == OptimizerKind::kSgd ? "sgd" : "adam") << "\n"
      << "optim.lr = " << cfg.lr << "\n"
      << "optim.beta = " << cfg.optim.momentum << "\n"
      << "optim.nesterov = " << (cfg.optim.nesterov ? "true" : "false") << "\n"
      << "optim.beta1 = " << cfg.optim.beta1 << "\n"
      << "optim.beta2 = " << cfg.optim.beta2 << "\n"
      << "optim.eps = " << cfg.optim.eps << "\n"
      << "optim.weight_decay = " << cfg.optim.weight_decay << "\n"
      << "\n"
      << "schedule.kind = "
      << (cfg.schedule_kind == Schedule::Kind::kCosine     ? "cosine"
          : cfg.schedule_kind == Schedule::Kind::kLinear   ? "linear"
                                                           : "constant")
      << "\n"
      << "schedule.end_frac = " << cfg.schedule_end_frac << "\n"
      << "ema.decay = " << cfg.ema_decay << "\n"
      << "\n"
      << "dataset.kind = " << cfg.dataset.kind << "\n"
      << "dataset.classes = " << cfg.dataset.classes << "\n"
      << "dataset.size = " << cfg.dataset.size << "\n"
      << "dataset.train_per_class = " << cfg.dataset.train_per_class << "\n"
      << "dataset.test_per_class = " << cfg.dataset.test_per_class << "\n"
      << "dataset.seed = " << cfg.dataset.seed << "\n"
      << "dataset.test_seed = " << cfg.dataset.test_seed << "\n";
  if (!cfg.dataset.images.empty()) {
    out << "dataset.images = " << cfg.dataset.images << "\n"
        << "dataset.labels = " << cfg.dataset.labels << "\n"
        << "dataset.test_images = " << cfg.dataset.test_images << "\n"
        << "dataset.test_labels = " << cfg.dataset.test_labels << "\n";
  }
  out << "\n"
      << "split.per_class = " << cfg.split.labels_per_class << "\n"
      << "split.seed = " << cfg.split.fold_seed << "\n"
      << "split.include_labeled = "
      << (cfg.split.include_labeled_in_unlabeled ? "true" : "false") << "\n";
  return out.str();
}

/// Fingerprint over the run-defining keys (output_dir and workers excluded:
/// neither changes any computed byte).
inline std::uint64_t config_fingerprint(const ExperimentConfig& cfg) {
  ExperimentConfig canon = cfg;
  canon.output_dir = "";
  canon.workers = 0;
  const std::string s = render_config(canon);
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace fixmatch
