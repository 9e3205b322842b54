#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

#include "fixmatch/image.hpp"
#include "fixmatch/rng.hpp"
#include "fixmatch/transforms.hpp"

namespace fixmatch {

// ---------------------------------------------------------------------------
// Weak augmentation: flip-and-shift
// ---------------------------------------------------------------------------

struct WeakAugConfig {
  bool flip_enabled = true;       // disabled for digit-like datasets
  double max_translate_frac = 0.125;
};

/// Horizontal flip with probability 0.5 (when enabled), then independent
/// integer-pixel translations, each uniform in +-floor(frac * dim).
inline ImageU8 weak_augment(const ImageU8& img, const WeakAugConfig& cfg,
                            RngStream& rng) {
  if (cfg.max_translate_frac < 0.0 || cfg.max_translate_frac > 0.5)
    throw std::invalid_argument("weak_augment: translate fraction outside [0, 0.5]");
  ImageU8 out = img;
  if (cfg.flip_enabled && rng.next_bool()) out = flip_horizontal(out);
  const int tx_max = static_cast<int>(cfg.max_translate_frac * img.width);
  const int ty_max = static_cast<int>(cfg.max_translate_frac * img.height);
  const int dx = tx_max > 0 ? static_cast<int>(rng.next_int(-tx_max, tx_max)) : 0;
  const int dy = ty_max > 0 ? static_cast<int>(rng.next_int(-ty_max, ty_max)) : 0;
  if (dx == 0 && dy == 0) return out;
  return detail::affine_nearest(out, 1.0, 0.0, 0.0, 1.0,
                                static_cast<double>(-dx),
                                static_cast<double>(-dy));
}

// ---------------------------------------------------------------------------
// Random-magnitude policy: two ops uniform over the 14-op catalog, each
// magnitude uniform over its declared range.
// ---------------------------------------------------------------------------

inline std::vector<TransformSpec> randaugment_sample(RngStream& rng) {
  const auto& catalog = randaugment_catalog();
  std::vector<TransformSpec> pipeline;
  pipeline.reserve(2);
  for (int slot = 0; slot < 2; ++slot) {
    const auto& entry = catalog[rng.next_below(catalog.size())];
    TransformSpec spec;
    spec.kind = entry.kind;
    spec.magnitude =
        entry.has_magnitude ? rng.next_range(entry.lo, entry.hi) : entry.lo;
    pipeline.push_back(spec);
  }
  return pipeline;
}

// ---------------------------------------------------------------------------
// Learned-magnitude policy: per-parameter bin weights updated online from
// labeled-example prediction quality.
// ---------------------------------------------------------------------------

inline constexpr int kCtaBins = 17;

/// Magnitude-bin weights per catalog entry, all initialized to 1. Bins whose
/// weight has decayed below the sampling floor are excluded when sampling.
struct CtaState {
  double decay = 0.99;          // weight <- decay*weight + (1-decay)*match
  double sample_floor = 0.85;   // bins below this weight are zeroed pre-normalization
  std::vector<std::array<double, kCtaBins>> bin_weights;  // per cta_catalog() entry
  std::array<double, kRescaleMethodCount> method_weights{};  // Rescale's method

  static CtaState fresh() {
    CtaState s;
    s.bin_weights.assign(cta_catalog().size(), {});
    for (auto& w : s.bin_weights) w.fill(1.0);
    s.method_weights.fill(1.0);
    return s;
  }

  bool valid() const {
    for (const auto& w : bin_weights)
      for (double v : w)
        if (!(v >= 0.0)) return false;
    for (double v : method_weights)
      if (!(v >= 0.0)) return false;
    return true;
  }
};

/// Identifies one sampled weight during pipeline construction so the update
/// step can credit exactly the bins it exercised.
struct CtaBinChoice {
  int catalog_index = 0;
  int bin = 0;             // bin index, or method index when is_method
  bool is_method = false;
};

struct CtaPipeline {
  std::vector<TransformSpec> specs;     // length 2
  std::vector<CtaBinChoice> choices;    // one per sampled weight
};

namespace detail {

/// Pick an index proportional to w, after zeroing entries below `floor`.
/// All below floor -> uniform fallback (counted via warn_count).
template <std::size_t N>
inline int pick_floored(const std::array<double, N>& w, double floor,
                        RngStream& rng, int* warn_count) {
  double total = 0.0;
  for (double v : w)
    if (v >= floor) total += v;
  if (total <= 0.0) {
    if (warn_count) ++(*warn_count);
    return static_cast<int>(rng.next_below(N));
  }
  const double r = rng.next_unit() * total;
  double acc = 0.0;
  for (std::size_t i = 0; i < N; ++i) {
    if (w[i] < floor) continue;
    acc += w[i];
    if (r < acc) return static_cast<int>(i);
  }
  // r landed on the accumulated total boundary; return the last active bin
  for (std::size_t i = N; i-- > 0;)
    if (w[i] >= floor) return static_cast<int>(i);
  return 0;
}

inline double bin_center(const TransformRange& range, int bin) {
  return range.lo + (bin + 0.5) * (range.hi - range.lo) / kCtaBins;
}

}  // namespace detail

/// Two kinds uniform over the 18-op catalog; magnitudes at the center of a
/// bin drawn proportionally to the learned (floored) weights.
inline CtaPipeline cta_sample(const CtaState& state, RngStream& rng,
                              int* fallback_warnings = nullptr) {
  if (!state.valid()) throw std::invalid_argument("cta_sample: invalid state");
  const auto& catalog = cta_catalog();
  CtaPipeline out;
  for (int slot = 0; slot < 2; ++slot) {
    const int idx = static_cast<int>(rng.next_below(catalog.size()));
    const auto& entry = catalog[idx];
    TransformSpec spec;
    spec.kind = entry.kind;
    if (entry.has_magnitude) {
      const int bin = detail::pick_floored(state.bin_weights[idx],
                                           state.sample_floor, rng,
                                           fallback_warnings);
      spec.magnitude = detail::bin_center(entry, bin);
      out.choices.push_back({idx, bin, false});
    }
    if (entry.kind == TransformKind::kRescale) {
      const int m = detail::pick_floored(state.method_weights,
                                         state.sample_floor, rng,
                                         fallback_warnings);
      spec.method = static_cast<RescaleMethod>(m);
      out.choices.push_back({idx, m, true});
    }
    out.specs.push_back(spec);
  }
  return out;
}

/// Like cta_sample but with uniformly drawn bins; used by the update probe.
inline CtaPipeline cta_sample_uniform(RngStream& rng) {
  const auto& catalog = cta_catalog();
  CtaPipeline out;
  for (int slot = 0; slot < 2; ++slot) {
    const int idx = static_cast<int>(rng.next_below(catalog.size()));
    const auto& entry = catalog[idx];
    TransformSpec spec;
    spec.kind = entry.kind;
    if (entry.has_magnitude) {
      const int bin = static_cast<int>(rng.next_below(kCtaBins));
      spec.magnitude = detail::bin_center(entry, bin);
      out.choices.push_back({idx, bin, false});
    }
    if (entry.kind == TransformKind::kRescale) {
      const int m = static_cast<int>(rng.next_below(kRescaleMethodCount));
      spec.method = static_cast<RescaleMethod>(m);
      out.choices.push_back({idx, m, true});
    }
    out.specs.push_back(spec);
  }
  return out;
}

/// Match score in [0,1]: 1 minus half the L1 gap between the model's
/// distribution and the one-hot truth. Exercised bins move toward it.
inline double cta_match_score(std::span<const double> model_dist,
                              std::size_t true_label) {
  double l1 = 0.0;
  for (std::size_t i = 0; i < model_dist.size(); ++i) {
    const double target = (i == true_label) ? 1.0 : 0.0;
    l1 += std::abs(model_dist[i] - target);
  }
  return 1.0 - 0.5 * l1;
}

inline void cta_update(CtaState& state, const std::vector<CtaBinChoice>& choices,
                       std::span<const double> model_dist, std::size_t true_label) {
  if (true_label >= model_dist.size())
    throw std::invalid_argument("cta_update: label out of range");
  const double score = cta_match_score(model_dist, true_label);
  for (const auto& ch : choices) {
    double& w = ch.is_method
                    ? state.method_weights[static_cast<std::size_t>(ch.bin)]
                    : state.bin_weights[static_cast<std::size_t>(ch.catalog_index)]
                                       [static_cast<std::size_t>(ch.bin)];
    w = state.decay * w + (1.0 - state.decay) * score;
  }
}

// ---------------------------------------------------------------------------
// Strong augmentation: policy pipeline, then Cutout with a fresh fraction.
// ---------------------------------------------------------------------------

enum class StrongPolicy : int {
  kRandAugment = 0,
  kCta,
  kMixUp,  // batch-level input mixing; handled by the loss layer
  kNone,   // identity; baseline/ablation hook
};

inline const char* strong_policy_name(StrongPolicy p) {
  switch (p) {
    case StrongPolicy::kRandAugment: return "randaugment";
    case StrongPolicy::kCta: return "cta";
    case StrongPolicy::kMixUp: return "mixup";
    case StrongPolicy::kNone: return "none";
  }
  return "?";
}

/// Heavy distortion branch: sample a 2-op pipeline via the policy, apply it,
/// then apply Cutout with fraction uniform in [0, 0.5]. Pure in
/// (img, rng key, state snapshot).
inline ImageU8 strong_augment(const ImageU8& img, StrongPolicy policy,
                              const CtaState* state, RngStream& rng,
                              int* cta_fallback_warnings = nullptr) {
  if (policy == StrongPolicy::kNone || policy == StrongPolicy::kMixUp)
    return img;  // mixing happens at batch level
  std::vector<TransformSpec> pipeline;
  if (policy == StrongPolicy::kRandAugment) {
    pipeline = randaugment_sample(rng);
  } else {
    if (!state)
      throw std::invalid_argument("strong_augment: cta policy needs CtaState");
    pipeline = cta_sample(*state, rng, cta_fallback_warnings).specs;
  }
  ImageU8 out = img;
  for (const auto& spec : pipeline) out = apply_transform(out, spec, &rng);
  return cutout(out, rng.next_range(0.0, 0.5), rng);
}

}  // namespace fixmatch
