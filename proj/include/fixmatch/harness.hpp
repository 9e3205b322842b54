#pragma once

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "fixmatch/config.hpp"
#include "fixmatch/data.hpp"
#include "fixmatch/trainer.hpp"

namespace fixmatch {

// ---------------------------------------------------------------------------
// Run record and CSV emission
// ---------------------------------------------------------------------------

struct RunRow {
  long step = 0;
  double lr = 0.0;
  double loss_s = 0.0;
  double loss_u = 0.0;
  double mask_rate = 0.0;
  std::optional<double> impurity;
  double err = 0.0;
  double err_ema = 0.0;
  double secs = 0.0;  // wall time; excluded from reproducibility guarantees
};

struct RunRecord {
  std::vector<RunRow> rows;

  void append(RunRow row) {
    if (!rows.empty() && row.step <= rows.back().step)
      throw std::logic_error("RunRecord: rows must be strictly increasing in step");
    rows.push_back(std::move(row));
  }
};

inline constexpr const char* kMetricsHeader =
    "step,lr,loss_s,loss_u,mask_rate,impurity,err,err_ema,secs";

namespace detail {

inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

}  // namespace detail

inline std::string metrics_csv_text(const RunRecord& record) {
  std::ostringstream out;
  out << kMetricsHeader << "\n";
  for (const auto& r : record.rows) {
    out << r.step << ',' << detail::format_double(r.lr) << ','
        << detail::format_double(r.loss_s) << ','
        << detail::format_double(r.loss_u) << ','
        << detail::format_double(r.mask_rate) << ',';
    if (r.impurity) out << detail::format_double(*r.impurity);
    out << ',' << detail::format_double(r.err) << ','
        << detail::format_double(r.err_ema) << ','
        << detail::format_double(r.secs) << "\n";
  }
  return out.str();
}

inline void emit_metrics_csv(const RunRecord& record, const std::string& path) {
  if (record.rows.empty())
    throw std::invalid_argument("emit_metrics_csv: empty record");
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("emit_metrics_csv: cannot open " + path);
  f << metrics_csv_text(record);
  if (!f) throw std::runtime_error("emit_metrics_csv: short write to " + path);
}

inline RunRecord parse_metrics_csv(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("parse_metrics_csv: cannot open " + path);
  std::string line;
  if (!std::getline(f, line) || line != kMetricsHeader)
    throw std::runtime_error("parse_metrics_csv: bad header in " + path);
  RunRecord record;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (line.back() == ',') cells.push_back("");
    if (cells.size() != 9)
      throw std::runtime_error("parse_metrics_csv: bad row in " + path);
    RunRow r;
    r.step = std::stol(cells[0]);
    r.lr = std::stod(cells[1]);
    r.loss_s = std::stod(cells[2]);
    r.loss_u = std::stod(cells[3]);
    r.mask_rate = std::stod(cells[4]);
    if (!cells[5].empty()) r.impurity = std::stod(cells[5]);
    r.err = std::stod(cells[6]);
    r.err_ema = std::stod(cells[7]);
    r.secs = std::stod(cells[8]);
    record.append(std::move(r));
  }
  return record;
}

/// CSV text with the wall-time column removed; the unit of byte-level
/// reproducibility comparisons.
inline std::string metrics_csv_without_secs(const std::string& csv_text) {
  std::istringstream in(csv_text);
  std::ostringstream out;
  std::string line;
  while (std::getline(in, line)) {
    const auto cut = line.rfind(',');
    out << (cut == std::string::npos ? line : line.substr(0, cut)) << "\n";
  }
  return out.str();
}

// ---------------------------------------------------------------------------
// SVG line charts (metrics over steps, or error over a swept knob)
// ---------------------------------------------------------------------------

namespace detail {

struct SvgSeries {
  std::string label;
  std::string color;
  std::vector<std::pair<double, double>> points;
};

inline void write_svg_chart(const std::string& path, const std::string& x_label,
                            const std::string& y_label,
                            const std::vector<SvgSeries>& series) {
  bool any_points = false;
  for (const auto& s : series) any_points |= !s.points.empty();
  if (!any_points) throw std::invalid_argument("svg chart: no data points");

  double x_min = 1e300, x_max = -1e300, y_min = 1e300, y_max = -1e300;
  for (const auto& s : series)
    for (const auto& [x, y] : s.points) {
      x_min = std::min(x_min, x);
      x_max = std::max(x_max, x);
      y_min = std::min(y_min, y);
      y_max = std::max(y_max, y);
    }
  if (x_max == x_min) x_max = x_min + 1.0;
  if (y_max == y_min) y_max = y_min + 1.0;

  const double width = 640, height = 420, left = 70, right = 20, top = 30,
               bottom = 50;
  auto px = [&](double x) {
    return left + (x - x_min) / (x_max - x_min) * (width - left - right);
  };
  auto py = [&](double y) {
    return height - bottom -
           (y - y_min) / (y_max - y_min) * (height - top - bottom);
  };

  std::ofstream f(path);
  if (!f) throw std::runtime_error("svg chart: cannot open " + path);
  f << "<svg xmlns='http://www.w3.org/2000/svg' width='" << width
    << "' height='" << height << "'>\n"
    << "<rect width='100%' height='100%' fill='white'/>\n"
    << "<line x1='" << left << "' y1='" << height - bottom << "' x2='"
    << width - right << "' y2='" << height - bottom
    << "' stroke='black'/>\n"
    << "<line x1='" << left << "' y1='" << top << "' x2='" << left << "' y2='"
    << height - bottom << "' stroke='black'/>\n";
  for (int tick = 0; tick <= 4; ++tick) {
    const double xv = x_min + (x_max - x_min) * tick / 4.0;
    const double yv = y_min + (y_max - y_min) * tick / 4.0;
    f << "<text x='" << px(xv) << "' y='" << height - bottom + 18
      << "' font-size='11' text-anchor='middle'>" << format_double(xv)
      << "</text>\n"
      << "<text x='" << left - 6 << "' y='" << py(yv) + 4
      << "' font-size='11' text-anchor='end'>" << format_double(yv)
      << "</text>\n";
  }
  f << "<text x='" << (left + width - right) / 2 << "' y='" << height - 12
    << "' font-size='13' text-anchor='middle'>" << x_label << "</text>\n"
    << "<text x='16' y='" << (top + height - bottom) / 2
    << "' font-size='13' text-anchor='middle' transform='rotate(-90 16 "
    << (top + height - bottom) / 2 << ")'>" << y_label << "</text>\n";

  double legend_y = top;
  for (const auto& s : series) {
    if (s.points.empty()) continue;
    f << "<polyline fill='none' stroke='" << s.color << "' stroke-width='1.5' points='";
    for (const auto& [x, y] : s.points) f << px(x) << ',' << py(y) << ' ';
    f << "'/>\n"
      << "<text x='" << width - right - 6 << "' y='" << legend_y
      << "' font-size='12' text-anchor='end' fill='" << s.color << "'>"
      << s.label << "</text>\n";
    legend_y += 16;
  }
  f << "</svg>\n";
}

}  // namespace detail

inline void emit_plot_svg(const RunRecord& record, const std::string& path) {
  if (record.rows.empty()) throw std::invalid_argument("emit_plot_svg: empty record");
  detail::SvgSeries err{"err", "#c43b3b", {}};
  detail::SvgSeries ema{"err_ema", "#2b62c4", {}};
  detail::SvgSeries mask{"mask_rate", "#3a9441", {}};
  for (const auto& r : record.rows) {
    err.points.emplace_back(static_cast<double>(r.step), r.err);
    ema.points.emplace_back(static_cast<double>(r.step), r.err_ema);
    mask.points.emplace_back(static_cast<double>(r.step), r.mask_rate);
  }
  detail::write_svg_chart(path, "step", "error / mask rate", {err, ema, mask});
}

struct SweepPoint {
  double knob_value = 0.0;
  double final_err_ema = 0.0;
  double final_mask_rate = 0.0;
  std::optional<double> final_impurity;
};

inline void emit_sweep_svg(const std::vector<SweepPoint>& points,
                           const std::string& knob, const std::string& path) {
  if (points.empty()) throw std::invalid_argument("emit_sweep_svg: empty sweep");
  detail::SvgSeries err{"final err_ema", "#c43b3b", {}};
  for (const auto& p : points) err.points.emplace_back(p.knob_value, p.final_err_ema);
  detail::write_svg_chart(path, knob, "final error", {err});
}

inline void emit_sweep_csv(const std::vector<SweepPoint>& points,
                           const std::string& knob, const std::string& path) {
  if (points.empty()) throw std::invalid_argument("emit_sweep_csv: empty sweep");
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("emit_sweep_csv: cannot open " + path);
  f << knob << ",err_ema,mask_rate,impurity\n";
  for (const auto& p : points) {
    f << detail::format_double(p.knob_value) << ','
      << detail::format_double(p.final_err_ema) << ','
      << detail::format_double(p.final_mask_rate) << ',';
    if (p.final_impurity) f << detail::format_double(*p.final_impurity);
    f << "\n";
  }
}

// ---------------------------------------------------------------------------
// Dataset assembly
// ---------------------------------------------------------------------------

struct ExperimentData {
  Dataset train;
  Dataset test;
  Split split;
};

inline ExperimentData build_experiment_data(const ExperimentConfig& cfg) {
  ExperimentData data;
  const auto& d = cfg.dataset;
  if (d.kind == "synth") {
    data.train = synth_glyphs(d.train_per_class, d.classes, d.size, d.seed);
    data.test = synth_glyphs(d.test_per_class, d.classes, d.size, d.test_seed);
  } else if (d.kind == "idx") {
    data.train = load_idx(d.images, d.labels);
    data.test = load_idx(d.test_images, d.test_labels);
    // optional sidecar: <images>.meta carries name/classes/flip
    const std::string meta = d.images + ".meta";
    if (std::filesystem::exists(meta)) {
      read_dataset_metadata(data.train, meta);
      data.test.num_classes = data.train.num_classes;
      data.test.flip_ok = data.train.flip_ok;
    }
    data.test.num_classes =
        std::max(data.test.num_classes, data.train.num_classes);
    data.train.num_classes = data.test.num_classes;
  } else {
    throw std::runtime_error("dataset.kind must be synth or idx");
  }
  data.train.validate();
  data.test.validate();
  data.split = make_split(data.train, cfg.split);
  return data;
}

// ---------------------------------------------------------------------------
// Run checkpoints: config fingerprint + full trainer state
// ---------------------------------------------------------------------------

inline constexpr std::uint32_t kRunCheckpointMagic = 0x4b434846;  // "FHCK"
inline constexpr std::uint32_t kRunCheckpointVersion = 1;

inline void checkpoint_save(const TrainerState& state,
                            const ExperimentConfig& cfg,
                            const std::string& path) {
  ByteWriter w;
  w.u32(kRunCheckpointMagic);
  w.u32(kRunCheckpointVersion);
  w.u64(config_fingerprint(cfg));
  write_trainer_state(w, state);
  w.save(path);
}

inline TrainerState checkpoint_load(const ExperimentConfig& cfg,
                                    const std::string& path) {
  ByteReader r = ByteReader::load(path);
  if (r.u32() != kRunCheckpointMagic)
    throw std::runtime_error("checkpoint: bad magic in " + path);
  if (r.u32() != kRunCheckpointVersion)
    throw std::runtime_error("checkpoint: version mismatch in " + path);
  const std::uint64_t fp = r.u64();
  if (fp != config_fingerprint(cfg))
    throw std::runtime_error("checkpoint: config fingerprint mismatch in " + path);
  TrainerState state = read_trainer_state(r);
  if (!r.exhausted())
    throw std::runtime_error("checkpoint: trailing bytes in " + path);
  return state;
}

// ---------------------------------------------------------------------------
// run_experiment: the full training loop with periodic evaluation,
// checkpointing and metric emission
// ---------------------------------------------------------------------------

struct RunResult {
  RunRecord record;
  TrainerState state;
  std::string metrics_path;
  std::string checkpoint_path;
};

/// Executes cfg.steps training steps (resuming from resume_checkpoint when
/// given), evaluating raw and EMA parameters on the test split at the eval
/// cadence. Everything lands in cfg.output_dir; on a non-finite loss the
/// last periodic checkpoint is retained and diagnostics are written.
/// halt_at_step > 0 stops early with a resumable checkpoint under the same
/// schedule, so an interrupted-and-resumed run replays the full one exactly.
inline RunResult run_experiment(const ExperimentConfig& cfg,
                                const std::string& resume_checkpoint = "",
                                long halt_at_step = 0) {
  namespace fs = std::filesystem;
  parallel_workers() = cfg.workers;

  ExperimentData data = build_experiment_data(cfg);
  const TrainSetup setup = cfg.setup(data.train.flip_ok);

  fs::create_directories(cfg.output_dir);
  const std::string metrics_path =
      (fs::path(cfg.output_dir) / "metrics.csv").string();
  const std::string checkpoint_path =
      (fs::path(cfg.output_dir) / "checkpoint.bin").string();
  std::ofstream(fs::path(cfg.output_dir) / "config.cfg") << render_config(cfg);

  RunResult result;
  result.metrics_path = metrics_path;
  result.checkpoint_path = checkpoint_path;

  Classifier blueprint = make_default_classifier(
      data.train.images[0].height, data.train.images[0].width,
      data.train.images[0].channels, data.train.num_classes);
  if (!resume_checkpoint.empty()) {
    result.state = checkpoint_load(cfg, resume_checkpoint);
  } else {
    result.state = make_trainer_state(blueprint, setup, data.split.labeled,
                                      data.split.unlabeled, cfg.ema_decay,
                                      cfg.seed);
  }

  const long stop_at =
      halt_at_step > 0 ? std::min(halt_at_step, cfg.steps) : cfg.steps;
  const auto start = std::chrono::steady_clock::now();
  try {
    while (result.state.step < stop_at) {
      const long k = result.state.step;
      const StepRecord step =
          train_step(result.state, setup, data.split.labeled, data.split.unlabeled);

      if (k % cfg.eval_every == 0 || k == cfg.steps - 1) {
        RunRow row;
        row.step = k;
        row.lr = step.lr;
        row.loss_s = step.loss_s;
        row.loss_u = step.loss_u;
        row.mask_rate = step.stats.mask_rate;
        row.impurity = step.stats.impurity;
        row.err = evaluate_error(result.state.model, data.test);
        row.err_ema = evaluate_ema_error(result.state.model, result.state.ema,
                                         data.test);
        row.secs = std::chrono::duration<double>(
                       std::chrono::steady_clock::now() - start)
                       .count();
        result.record.append(std::move(row));
        checkpoint_save(result.state, cfg, checkpoint_path);
        emit_metrics_csv(result.record, metrics_path);
      }
    }
  } catch (const std::exception& e) {
    // keep the last periodic checkpoint; record what went wrong
    std::ofstream diag(fs::path(cfg.output_dir) / "error.txt");
    diag << "aborted at step " << result.state.step << ": " << e.what() << "\n";
    if (!result.record.rows.empty()) emit_metrics_csv(result.record, metrics_path);
    throw;
  }

  checkpoint_save(result.state, cfg, checkpoint_path);
  if (!result.record.rows.empty()) {
    emit_metrics_csv(result.record, metrics_path);
    emit_plot_svg(result.record, (fs::path(cfg.output_dir) / "metrics.svg").string());
  }
  return result;
}

// ---------------------------------------------------------------------------
// Knob sweeps
// ---------------------------------------------------------------------------

inline std::vector<SweepPoint> run_sweep(const ConfigMap& base_map,
                                         const std::string& knob,
                                         const std::vector<std::string>& values) {
  if (values.empty()) throw std::invalid_argument("run_sweep: no values");
  std::vector<SweepPoint> points;
  for (const auto& value : values) {
    ConfigMap map = base_map;
    apply_override(map, knob + "=" + value);
    ExperimentConfig cfg = bind_config(map);
    cfg.output_dir += "/sweep_" + knob + "_" + value;
    RunResult run = run_experiment(cfg);
    SweepPoint p;
    p.knob_value = std::stod(value);
    const RunRow& last = run.record.rows.back();
    p.final_err_ema = last.err_ema;
    p.final_mask_rate = last.mask_rate;
    p.final_impurity = last.impurity;
    points.push_back(p);
  }
  return points;
}

}  // namespace fixmatch
