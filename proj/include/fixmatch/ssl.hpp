#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

#include "fixmatch/augment.hpp"
#include "fixmatch/data.hpp"
#include "fixmatch/image.hpp"
#include "fixmatch/network.hpp"
#include "fixmatch/parallel.hpp"
#include "fixmatch/rng.hpp"
#include "fixmatch/tensor.hpp"

namespace fixmatch {

// ---------------------------------------------------------------------------
// Batch carriers and configuration
// ---------------------------------------------------------------------------

struct LabeledBatch {
  std::vector<ImageU8> images;
  Tensor labels;  // [B, L] one-hot rows

  void validate() const {
    if (labels.rank() != 2 || labels.shape[0] != images.size())
      throw std::invalid_argument("LabeledBatch: image/label count mismatch");
  }
};

struct UnlabeledBatch {
  std::vector<ImageU8> images;
  // Ground truth carried only for impurity diagnostics; no loss reads it.
  std::vector<int> hidden_labels;
};

struct FixMatchConfig {
  double tau = 0.95;          // confidence threshold
  double lambda_u = 1.0;      // unlabeled loss weight
  int mu = 7;                 // unlabeled:labeled batch ratio
  int batch = 64;             // B
  double temperature = 0.0;   // T; 0 = hard pseudo-labels
  int anchors = 1;            // M strong augmentations per example
  bool da_enabled = false;    // distribution alignment
  StrongPolicy policy = StrongPolicy::kRandAugment;
  double mixup_alpha = 9.0;   // only for the mixup policy

  void validate() const {
    if (tau < 0.0 || tau > 1.0) throw std::invalid_argument("config: tau outside [0,1]");
    if (lambda_u < 0.0) throw std::invalid_argument("config: lambda_u < 0");
    if (mu < 1) throw std::invalid_argument("config: mu < 1");
    if (batch < 1) throw std::invalid_argument("config: batch < 1");
    if (temperature < 0.0) throw std::invalid_argument("config: temperature < 0");
    if (anchors < 1) throw std::invalid_argument("config: anchors < 1");
    if (mixup_alpha <= 0.0) throw std::invalid_argument("config: mixup_alpha <= 0");
  }
};

/// Addresses the deterministic streams of one training step. index keys the
/// batch slot, so per-example work parallelizes without ordering effects.
struct RngPlan {
  std::uint64_t root_seed = 0;
  std::uint64_t step = 0;

  RngStream stream(StreamPurpose purpose, std::uint64_t index) const {
    return RngStream(root_seed, {purpose, step, index});
  }
};

struct BatchStats {
  double mask_rate = 0.0;
  std::optional<double> impurity;  // absent when nothing was retained
  double mean_max_confidence = 0.0;
};

struct LossResult {
  double loss = 0.0;
  GradSet grads;
};

inline std::vector<ImageU8> mixup_inputs(const std::vector<ImageU8>& images,
                                         double alpha, RngStream& rng);

// ---------------------------------------------------------------------------
// Label post-processing
// ---------------------------------------------------------------------------

/// Hard pseudo-label with its retention flag: retained iff max(q) >= tau.
inline std::pair<Tensor, bool> pseudo_label(const Tensor& q, double tau) {
  double mx = 0.0;
  for (double v : q.data) mx = std::max(mx, v);
  return {argmax_onehot(q), mx >= tau};
}

/// Temperature renormalization q_i^(1/T) / sum, computed in log space;
/// T = 1 is the identity, T -> 0 recovers the one-hot argmax.
inline Tensor sharpen(const Tensor& q, double temperature) {
  if (temperature < 0.0) throw std::invalid_argument("sharpen: negative temperature");
  if (temperature == 0.0) return argmax_onehot(q);
  Tensor out(q.shape);
  double mx = -INFINITY;
  for (double v : q.data) {
    if (v < 0.0) throw std::invalid_argument("sharpen: negative probability");
    mx = std::max(mx, v > 0.0 ? std::log(v) / temperature : -INFINITY);
  }
  double sum = 0.0;
  for (std::size_t i = 0; i < q.size(); ++i) {
    out[i] = q[i] > 0.0 ? std::exp(std::log(q[i]) / temperature - mx) : 0.0;
    sum += out[i];
  }
  for (auto& v : out.data) v /= sum;
  return out;
}

// ---------------------------------------------------------------------------
// Distribution alignment
// ---------------------------------------------------------------------------

struct DaState {
  Tensor labeled_marginal;  // p(y|X), fixed from the labeled split
  Tensor running_pred;      // running average of weak-branch predictions
  double decay = 0.999;

  static DaState make(const Tensor& labeled_marginal, double decay = 0.999) {
    DaState s;
    s.labeled_marginal = labeled_marginal;
    s.running_pred = Tensor(labeled_marginal.shape);
    const double uniform = 1.0 / static_cast<double>(labeled_marginal.size());
    for (auto& v : s.running_pred.data) v = uniform;
    s.decay = decay;
    return s;
  }

  static Tensor marginal_of(const Dataset& labeled) {
    Tensor m({static_cast<std::size_t>(labeled.num_classes)});
    for (int l : labeled.labels) m[static_cast<std::size_t>(l)] += 1.0;
    for (auto& v : m.data) v /= static_cast<double>(labeled.size());
    return m;
  }

  void update(const Tensor& batch_mean_pred) {
    check_same_shape(running_pred, batch_mean_pred, "DaState::update");
    for (std::size_t i = 0; i < running_pred.size(); ++i)
      running_pred[i] = decay * running_pred[i] + (1.0 - decay) * batch_mean_pred[i];
  }
};

/// q~ = Normalize(q * p(y|X) / running_pred), running_pred floored.
inline Tensor distribution_align(const Tensor& q, const DaState& da) {
  check_same_shape(q, da.labeled_marginal, "distribution_align");
  Tensor out(q.shape);
  double sum = 0.0;
  for (std::size_t i = 0; i < q.size(); ++i) {
    out[i] = q[i] * (da.labeled_marginal[i] / std::max(da.running_pred[i], kProbFloor));
    sum += out[i];
  }
  if (sum <= 0.0) throw std::runtime_error("distribution_align: degenerate reweighting");
  for (auto& v : out.data) v /= sum;
  return out;
}

// ---------------------------------------------------------------------------
// Pseudo-label quality metrics
// ---------------------------------------------------------------------------

inline BatchStats batch_stats(const std::vector<bool>& retained,
                              const std::vector<int>& pseudo_labels,
                              const std::vector<int>& true_labels,
                              const std::vector<double>& max_confidence) {
  if (retained.size() != pseudo_labels.size() ||
      retained.size() != max_confidence.size())
    throw std::invalid_argument("batch_stats: length mismatch");
  BatchStats stats;
  if (retained.empty()) return stats;
  long kept = 0, wrong = 0;
  double conf = 0.0;
  for (std::size_t i = 0; i < retained.size(); ++i) {
    conf += max_confidence[i];
    if (!retained[i]) continue;
    kept++;
    if (!true_labels.empty() && pseudo_labels[i] != true_labels[i]) wrong++;
  }
  stats.mask_rate = static_cast<double>(kept) / static_cast<double>(retained.size());
  stats.mean_max_confidence = conf / static_cast<double>(retained.size());
  if (kept > 0 && !true_labels.empty())
    stats.impurity = static_cast<double>(wrong) / static_cast<double>(kept);
  return stats;
}

// ---------------------------------------------------------------------------
// Supervised loss: mean cross-entropy on weakly augmented labeled examples
// ---------------------------------------------------------------------------

inline LossResult supervised_loss(const Classifier& model,
                                  const LabeledBatch& batch,
                                  const WeakAugConfig& weak_cfg,
                                  const RngPlan& plan) {
  batch.validate();
  const std::size_t n = batch.images.size();
  if (n == 0) throw std::invalid_argument("supervised_loss: empty batch");
  const double scale = 1.0 / static_cast<double>(n);

  const std::size_t n_chunks = (n + kParallelChunk - 1) / kParallelChunk;
  std::vector<GradSet> chunk_grads(n_chunks);
  std::vector<double> chunk_loss(n_chunks, 0.0);

  parallel_chunks(n, [&](std::size_t c, std::size_t lo, std::size_t hi) {
    chunk_grads[c] = GradSet::zeros_like(model);
    ForwardTrace trace;
    std::vector<double> prob(static_cast<std::size_t>(model.num_classes));
    std::vector<double> dlogits(prob.size());
    for (std::size_t i = lo; i < hi; ++i) {
      RngStream rng = plan.stream(StreamPurpose::kWeakLabeled, i);
      const ImageU8 augmented = weak_augment(batch.images[i], weak_cfg, rng);
      forward_example(model, image_to_input(augmented), trace);
      softmax_into(trace.acts.back(), prob);
      chunk_loss[c] += scale * cross_entropy(batch.labels.row(i), prob);
      for (std::size_t k = 0; k < prob.size(); ++k)
        dlogits[k] = scale * (prob[k] - batch.labels.at2(i, k));
      backward_example(model, trace, dlogits, chunk_grads[c]);
    }
  });

  LossResult result;
  result.grads = GradSet::zeros_like(model);
  for (std::size_t c = 0; c < n_chunks; ++c) {
    result.loss += chunk_loss[c];
    result.grads.add_scaled(chunk_grads[c], 1.0);
  }
  if (!std::isfinite(result.loss))
    throw std::runtime_error("supervised_loss: non-finite loss");
  return result;
}

// ---------------------------------------------------------------------------
// Consistency loss on weakly/strongly augmented unlabeled examples
// ---------------------------------------------------------------------------

struct UnsupervisedResult {
  double loss = 0.0;
  GradSet grads;
  BatchStats stats;
  Tensor mean_weak_pred;      // batch mean of raw weak-branch predictions
  int cta_fallback_warnings = 0;
};

/// Pseudo-labels come from the weak branch (constants w.r.t. gradients);
/// cross-entropy is enforced on `anchors` independent strong augmentations.
/// With alignment enabled, thresholding and labeling use the aligned
/// distribution. Masked examples contribute nothing, so their strong branch
/// is skipped entirely.
inline UnsupervisedResult unsupervised_loss(const Classifier& model,
                                            const UnlabeledBatch& batch,
                                            const FixMatchConfig& cfg,
                                            const WeakAugConfig& weak_cfg,
                                            const CtaState* cta_state,
                                            const DaState* da_state,
                                            const RngPlan& plan) {
  cfg.validate();
  const std::size_t n = batch.images.size();
  if (n == 0) throw std::invalid_argument("unsupervised_loss: empty batch");
  if (cfg.policy == StrongPolicy::kCta && !cta_state)
    throw std::invalid_argument("unsupervised_loss: cta policy needs state");
  if (cfg.da_enabled && !da_state)
    throw std::invalid_argument("unsupervised_loss: alignment needs state");
  const std::size_t classes = static_cast<std::size_t>(model.num_classes);
  const std::size_t anchors = static_cast<std::size_t>(cfg.anchors);

  // weak branch: predictions only, no gradients
  std::vector<Tensor> weak_pred(n);
  parallel_chunks(n, [&](std::size_t, std::size_t lo, std::size_t hi) {
    ForwardTrace trace;
    for (std::size_t i = lo; i < hi; ++i) {
      RngStream rng = plan.stream(StreamPurpose::kWeakUnlabeled, i);
      const ImageU8 augmented = weak_augment(batch.images[i], weak_cfg, rng);
      forward_example(model, image_to_input(augmented), trace);
      weak_pred[i] = Tensor({classes});
      softmax_into(trace.acts.back(), std::span<double>(weak_pred[i].data));
    }
  });

  UnsupervisedResult result;
  result.mean_weak_pred = Tensor({classes});
  for (const auto& q : weak_pred)
    for (std::size_t k = 0; k < classes; ++k)
      result.mean_weak_pred[k] += q[k] / static_cast<double>(n);

  // label construction and thresholding
  std::vector<bool> retained(n, false);
  std::vector<int> pl_class(n, 0);
  std::vector<double> max_conf(n, 0.0);
  std::vector<Tensor> labels(n);
  std::vector<std::size_t> active;
  for (std::size_t i = 0; i < n; ++i) {
    const Tensor effective =
        cfg.da_enabled ? distribution_align(weak_pred[i], *da_state) : weak_pred[i];
    const std::size_t top = argmax_index(std::span<const double>(effective.data));
    pl_class[i] = static_cast<int>(top);
    max_conf[i] = effective[top];
    retained[i] = effective[top] >= cfg.tau;
    if (retained[i]) {
      labels[i] = cfg.temperature > 0.0 ? sharpen(effective, cfg.temperature)
                                        : onehot(top, classes);
      active.push_back(i);
    }
  }
  result.stats = batch_stats(retained, pl_class, batch.hidden_labels, max_conf);

  // strong branch over retained examples; the mixup policy mixes the raw
  // inputs batch-wise, one independent mixing per anchor
  std::vector<std::vector<ImageU8>> mixed;
  if (cfg.policy == StrongPolicy::kMixUp) {
    mixed.resize(anchors);
    for (std::size_t m = 0; m < anchors; ++m) {
      RngStream rng = plan.stream(StreamPurpose::kMixUp, m);
      mixed[m] = mixup_inputs(batch.images, cfg.mixup_alpha, rng);
    }
  }

  const double scale = 1.0 / (static_cast<double>(n) * static_cast<double>(anchors));
  const std::size_t total_passes = active.size() * anchors;
  const std::size_t n_chunks = (total_passes + kParallelChunk - 1) / kParallelChunk;
  std::vector<GradSet> chunk_grads(std::max<std::size_t>(n_chunks, 1));
  std::vector<double> chunk_loss(std::max<std::size_t>(n_chunks, 1), 0.0);
  std::vector<int> chunk_warn(std::max<std::size_t>(n_chunks, 1), 0);

  parallel_chunks(total_passes, [&](std::size_t c, std::size_t lo, std::size_t hi) {
    chunk_grads[c] = GradSet::zeros_like(model);
    ForwardTrace trace;
    std::vector<double> prob(classes), dlogits(classes);
    for (std::size_t pass = lo; pass < hi; ++pass) {
      const std::size_t i = active[pass / anchors];
      const std::size_t m = pass % anchors;
      RngStream rng =
          plan.stream(StreamPurpose::kStrongAug, i * anchors + m);
      const ImageU8 strong =
          cfg.policy == StrongPolicy::kMixUp
              ? mixed[m][i]
              : strong_augment(batch.images[i], cfg.policy, cta_state, rng,
                               &chunk_warn[c]);
      forward_example(model, image_to_input(strong), trace);
      softmax_into(trace.acts.back(), prob);
      chunk_loss[c] += scale * cross_entropy(labels[i].data, prob);
      for (std::size_t k = 0; k < classes; ++k)
        dlogits[k] = scale * (prob[k] - labels[i][k]);
      backward_example(model, trace, dlogits, chunk_grads[c]);
    }
  });

  result.grads = GradSet::zeros_like(model);
  for (std::size_t c = 0; c < chunk_grads.size(); ++c) {
    if (chunk_grads[c].tensors.empty()) continue;
    result.loss += chunk_loss[c];
    result.grads.add_scaled(chunk_grads[c], 1.0);
    result.cta_fallback_warnings += chunk_warn[c];
  }
  if (!std::isfinite(result.loss))
    throw std::runtime_error("unsupervised_loss: non-finite loss");
  return result;
}

/// loss = l_s + lambda_u * l_u; gradients combine as g_s + lambda_u * g_u.
/// lambda_u = 0 leaves the supervised gradient bit-identical.
inline LossResult total_loss(const LossResult& supervised,
                             const LossResult& unsupervised, double lambda_u) {
  LossResult out;
  out.loss = supervised.loss + lambda_u * unsupervised.loss;
  out.grads = supervised.grads;
  if (lambda_u != 0.0) out.grads.add_scaled(unsupervised.grads, lambda_u);
  return out;
}

// ---------------------------------------------------------------------------
// Baselines
// ---------------------------------------------------------------------------

namespace detail {

/// Vector-Jacobian product of softmax: given output p and upstream d,
/// returns p o (d - <p, d>).
inline void softmax_vjp(std::span<const double> p, std::span<const double> d,
                        std::span<double> out) {
  double dot = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) dot += p[i] * d[i];
  for (std::size_t i = 0; i < p.size(); ++i) out[i] = p[i] * (d[i] - dot);
}

}  // namespace detail

/// Squared-distance consistency between two independent weak augmentations;
/// gradients flow through both branches. Returns the unnormalized sum.
inline LossResult pi_model_loss(const Classifier& model,
                                const UnlabeledBatch& batch,
                                const WeakAugConfig& weak_cfg,
                                const RngPlan& plan) {
  const std::size_t n = batch.images.size();
  if (n == 0) throw std::invalid_argument("pi_model_loss: empty batch");
  const std::size_t classes = static_cast<std::size_t>(model.num_classes);

  const std::size_t n_chunks = (n + kParallelChunk - 1) / kParallelChunk;
  std::vector<GradSet> chunk_grads(n_chunks);
  std::vector<double> chunk_loss(n_chunks, 0.0);

  parallel_chunks(n, [&](std::size_t c, std::size_t lo, std::size_t hi) {
    chunk_grads[c] = GradSet::zeros_like(model);
    ForwardTrace trace_a, trace_b;
    std::vector<double> pa(classes), pb(classes), diff(classes), dl(classes);
    for (std::size_t i = lo; i < hi; ++i) {
      RngStream rng_a = plan.stream(StreamPurpose::kWeakUnlabeled, 2 * i);
      RngStream rng_b = plan.stream(StreamPurpose::kWeakUnlabeled, 2 * i + 1);
      const ImageU8 view_a = weak_augment(batch.images[i], weak_cfg, rng_a);
      const ImageU8 view_b = weak_augment(batch.images[i], weak_cfg, rng_b);
      forward_example(model, image_to_input(view_a), trace_a);
      softmax_into(trace_a.acts.back(), pa);
      forward_example(model, image_to_input(view_b), trace_b);
      softmax_into(trace_b.acts.back(), pb);

      for (std::size_t k = 0; k < classes; ++k) {
        diff[k] = pa[k] - pb[k];
        chunk_loss[c] += diff[k] * diff[k];
      }
      // d/dp_a = 2 (p_a - p_b), d/dp_b = -2 (p_a - p_b)
      for (auto& v : diff) v *= 2.0;
      detail::softmax_vjp(pa, diff, dl);
      backward_example(model, trace_a, dl, chunk_grads[c]);
      for (auto& v : diff) v = -v;
      detail::softmax_vjp(pb, diff, dl);
      backward_example(model, trace_b, dl, chunk_grads[c]);
    }
  });

  LossResult result;
  result.grads = GradSet::zeros_like(model);
  for (std::size_t c = 0; c < n_chunks; ++c) {
    result.loss += chunk_loss[c];
    result.grads.add_scaled(chunk_grads[c], 1.0);
  }
  return result;
}

/// Thresholded self-training on unaugmented inputs: the same prediction
/// supplies both the (constant) hard label and the trained distribution.
inline LossResult pseudo_labeling_loss(const Classifier& model,
                                       const UnlabeledBatch& batch, double tau) {
  const std::size_t n = batch.images.size();
  if (n == 0) throw std::invalid_argument("pseudo_labeling_loss: empty batch");
  const std::size_t classes = static_cast<std::size_t>(model.num_classes);
  const double scale = 1.0 / static_cast<double>(n);

  const std::size_t n_chunks = (n + kParallelChunk - 1) / kParallelChunk;
  std::vector<GradSet> chunk_grads(n_chunks);
  std::vector<double> chunk_loss(n_chunks, 0.0);

  parallel_chunks(n, [&](std::size_t c, std::size_t lo, std::size_t hi) {
    chunk_grads[c] = GradSet::zeros_like(model);
    ForwardTrace trace;
    std::vector<double> prob(classes), dlogits(classes);
    for (std::size_t i = lo; i < hi; ++i) {
      forward_example(model, image_to_input(batch.images[i]), trace);
      softmax_into(trace.acts.back(), prob);
      const std::size_t top = argmax_index(prob);
      if (prob[top] < tau) continue;
      chunk_loss[c] += scale * -std::log(std::max(prob[top], kProbFloor));
      for (std::size_t k = 0; k < classes; ++k)
        dlogits[k] = scale * (prob[k] - (k == top ? 1.0 : 0.0));
      backward_example(model, trace, dlogits, chunk_grads[c]);
    }
  });

  LossResult result;
  result.grads = GradSet::zeros_like(model);
  for (std::size_t c = 0; c < n_chunks; ++c) {
    result.loss += chunk_loss[c];
    result.grads.add_scaled(chunk_grads[c], 1.0);
  }
  return result;
}

// ---------------------------------------------------------------------------
// Input MixUp: modality-agnostic stand-in for strong augmentation
// ---------------------------------------------------------------------------

/// Blends each image with its permutation partner at a fixed coefficient.
inline std::vector<ImageU8> mixup_with_lambda(const std::vector<ImageU8>& images,
                                              double lambda,
                                              const std::vector<std::size_t>& perm) {
  if (perm.size() != images.size())
    throw std::invalid_argument("mixup_with_lambda: permutation size mismatch");
  std::vector<ImageU8> out;
  out.reserve(images.size());
  for (std::size_t i = 0; i < images.size(); ++i) {
    const ImageU8& a = images[i];
    const ImageU8& b = images[perm[i]];
    if (a.size() != b.size())
      throw std::invalid_argument("mixup_with_lambda: ragged batch");
    ImageU8 mix(a.height, a.width, a.channels);
    for (std::size_t j = 0; j < a.size(); ++j)
      mix.pixels[j] = detail::clamp_u8(lambda * a.pixels[j] +
                                       (1.0 - lambda) * b.pixels[j]);
    out.push_back(std::move(mix));
  }
  return out;
}

/// One Beta(alpha, alpha) coefficient per batch; each image blends with a
/// permutation partner. Labels are untouched by design.
inline std::vector<ImageU8> mixup_inputs(const std::vector<ImageU8>& images,
                                         double alpha, RngStream& rng) {
  if (alpha <= 0.0) throw std::invalid_argument("mixup_inputs: alpha <= 0");
  if (images.empty()) return {};
  const double lambda = rng.next_beta_symmetric(alpha);
  const auto perm = rng.permutation(images.size());
  return mixup_with_lambda(images, lambda, perm);
}

}  // namespace fixmatch
