#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "fixmatch/augment.hpp"
#include "fixmatch/data.hpp"
#include "fixmatch/network.hpp"
#include "fixmatch/optim.hpp"
#include "fixmatch/parallel.hpp"
#include "fixmatch/serialize.hpp"
#include "fixmatch/ssl.hpp"

namespace fixmatch {

enum class Algorithm : int {
  kFixMatch = 0,
  kPseudoLabel,
  kPiModel,
  kSupervisedOnly,
};

inline const char* algorithm_name(Algorithm a) {
  switch (a) {
    case Algorithm::kFixMatch: return "fixmatch";
    case Algorithm::kPseudoLabel: return "pseudo_label";
    case Algorithm::kPiModel: return "pi_model";
    case Algorithm::kSupervisedOnly: return "supervised_only";
  }
  return "?";
}

inline Algorithm algorithm_from_name(const std::string& name) {
  for (int i = 0; i < 4; ++i)
    if (name == algorithm_name(static_cast<Algorithm>(i)))
      return static_cast<Algorithm>(i);
  throw std::invalid_argument("unknown algorithm: " + name);
}

enum class OptimizerKind : int { kSgd = 0, kAdam };

struct OptimConfig {
  OptimizerKind kind = OptimizerKind::kSgd;
  double momentum = 0.9;
  bool nesterov = true;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0005;
};

/// Everything train_step reads but never mutates.
struct TrainSetup {
  Algorithm algorithm = Algorithm::kFixMatch;
  FixMatchConfig fixmatch;
  WeakAugConfig weak;
  OptimConfig optim;
  Schedule schedule;
};

/// Every mutable piece of a run; checkpointing this resumes bit-exactly.
struct TrainerState {
  Classifier model;
  SgdState sgd;
  AdamState adam;
  EmaState ema;
  CtaState cta;
  DaState da;
  BatchSampler sampler;
  long step = 0;
  std::uint64_t root_seed = 0;
  long cta_fallback_warnings = 0;
};

inline TrainerState make_trainer_state(const Classifier& model,
                                       const TrainSetup& setup,
                                       const Dataset& labeled,
                                       const Dataset& unlabeled,
                                       double ema_decay, std::uint64_t seed) {
  TrainerState state;
  state.model = model;
  init_params(state.model, seed);
  state.sgd = SgdState::make(state.model, setup.optim.momentum, setup.optim.nesterov);
  state.adam = AdamState::make(state.model, setup.optim.beta1, setup.optim.beta2,
                               setup.optim.eps);
  state.ema = EmaState::make(state.model, ema_decay);
  state.cta = CtaState::fresh();
  state.da = DaState::make(DaState::marginal_of(labeled));
  state.sampler = BatchSampler::make(seed, labeled.size(), unlabeled.size());
  state.root_seed = seed;
  return state;
}

struct StepRecord {
  double lr = 0.0;
  double loss_s = 0.0;
  double loss_u = 0.0;
  BatchStats stats;
};

namespace detail {

inline LabeledBatch gather_labeled(const Dataset& ds,
                                   const std::vector<std::size_t>& idx) {
  LabeledBatch batch;
  batch.labels = Tensor({idx.size(), static_cast<std::size_t>(ds.num_classes)});
  batch.images.reserve(idx.size());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    batch.images.push_back(ds.images[idx[i]]);
    batch.labels.at2(i, static_cast<std::size_t>(ds.labels[idx[i]])) = 1.0;
  }
  return batch;
}

inline UnlabeledBatch gather_unlabeled(const Dataset& ds,
                                       const std::vector<std::size_t>& idx) {
  UnlabeledBatch batch;
  batch.images.reserve(idx.size());
  batch.hidden_labels.reserve(idx.size());
  for (std::size_t i : idx) {
    batch.images.push_back(ds.images[i]);
    batch.hidden_labels.push_back(ds.labels[i]);
  }
  return batch;
}

/// Mask/impurity readout for the plain self-training baseline: predictions
/// on unaugmented inputs, thresholded at tau.
inline BatchStats self_training_stats(const Classifier& model,
                                      const UnlabeledBatch& batch, double tau) {
  const std::size_t n = batch.images.size();
  std::vector<bool> retained(n);
  std::vector<int> pl(n);
  std::vector<double> conf(n);
  std::vector<char> kept(n);
  parallel_chunks(n, [&](std::size_t, std::size_t lo, std::size_t hi) {
    ForwardTrace trace;
    std::vector<double> prob(static_cast<std::size_t>(model.num_classes));
    for (std::size_t i = lo; i < hi; ++i) {
      forward_example(model, image_to_input(batch.images[i]), trace);
      softmax_into(trace.acts.back(), prob);
      const std::size_t top = argmax_index(prob);
      pl[i] = static_cast<int>(top);
      conf[i] = prob[top];
      kept[i] = prob[top] >= tau;
    }
  });
  for (std::size_t i = 0; i < n; ++i) retained[i] = kept[i] != 0;
  return batch_stats(retained, pl, batch.hidden_labels, conf);
}

/// One probe per step: a labeled example augmented with a uniformly sampled
/// pipeline; the exercised bins move toward the prediction's match score.
inline void cta_probe_update(TrainerState& state, const Dataset& labeled,
                             const RngPlan& plan) {
  RngStream rng = plan.stream(StreamPurpose::kCtaProbe, 0);
  const std::size_t idx = rng.next_below(labeled.size());
  CtaPipeline pipeline = cta_sample_uniform(rng);
  ImageU8 img = labeled.images[idx];
  for (const auto& spec : pipeline.specs) img = apply_transform(img, spec, &rng);

  ForwardTrace trace;
  std::vector<double> prob(static_cast<std::size_t>(state.model.num_classes));
  forward_example(state.model, image_to_input(img), trace);
  softmax_into(trace.acts.back(), prob);
  cta_update(state.cta, pipeline.choices, prob,
             static_cast<std::size_t>(labeled.labels[idx]));
}

}  // namespace detail

/// One optimization step: draw batches, compute the algorithm's losses,
/// apply the optimizer at the scheduled rate, update EMA and the online
/// augmentation/alignment states, and report the step's metrics.
inline StepRecord train_step(TrainerState& state, const TrainSetup& setup,
                             const Dataset& labeled, const Dataset& unlabeled) {
  const RngPlan plan{state.root_seed, static_cast<std::uint64_t>(state.step)};
  const FixMatchConfig& fm = setup.fixmatch;

  StepRecord record;
  record.lr = lr_at(setup.schedule, state.step);

  const auto labeled_idx =
      state.sampler.next_labeled(static_cast<std::size_t>(fm.batch));
  const LabeledBatch labeled_batch = detail::gather_labeled(labeled, labeled_idx);
  LossResult supervised =
      supervised_loss(state.model, labeled_batch, setup.weak, plan);
  record.loss_s = supervised.loss;

  LossResult combined = supervised;
  const bool wants_unlabeled =
      setup.algorithm != Algorithm::kSupervisedOnly && unlabeled.size() > 0;
  if (wants_unlabeled) {
    const auto unlabeled_idx = state.sampler.next_unlabeled(
        static_cast<std::size_t>(fm.mu) * static_cast<std::size_t>(fm.batch));
    const UnlabeledBatch unlabeled_batch =
        detail::gather_unlabeled(unlabeled, unlabeled_idx);

    switch (setup.algorithm) {
      case Algorithm::kFixMatch: {
        UnsupervisedResult u = unsupervised_loss(
            state.model, unlabeled_batch, fm, setup.weak,
            fm.policy == StrongPolicy::kCta ? &state.cta : nullptr,
            fm.da_enabled ? &state.da : nullptr, plan);
        record.loss_u = u.loss;
        record.stats = u.stats;
        state.cta_fallback_warnings += u.cta_fallback_warnings;
        combined = total_loss(supervised, {u.loss, u.grads}, fm.lambda_u);
        state.da.update(u.mean_weak_pred);
        break;
      }
      case Algorithm::kPseudoLabel: {
        LossResult u = pseudo_labeling_loss(state.model, unlabeled_batch, fm.tau);
        record.loss_u = u.loss;
        record.stats =
            detail::self_training_stats(state.model, unlabeled_batch, fm.tau);
        combined = total_loss(supervised, u, fm.lambda_u);
        break;
      }
      case Algorithm::kPiModel: {
        LossResult u = pi_model_loss(state.model, unlabeled_batch, setup.weak, plan);
        record.loss_u = u.loss;
        combined = total_loss(supervised, u, fm.lambda_u);
        break;
      }
      case Algorithm::kSupervisedOnly:
        break;
    }
  }

  if (!std::isfinite(combined.loss))
    throw std::runtime_error("train_step: non-finite loss at step " +
                             std::to_string(state.step));

  auto params = state.model.param_tensors();
  if (setup.optim.kind == OptimizerKind::kSgd)
    sgd_step(state.sgd, params, combined.grads, record.lr,
             setup.optim.weight_decay);
  else
    adam_step(state.adam, params, combined.grads, record.lr,
              setup.optim.weight_decay);

  ema_update(state.ema, std::as_const(state.model).param_tensors());

  if (setup.algorithm == Algorithm::kFixMatch &&
      fm.policy == StrongPolicy::kCta)
    detail::cta_probe_update(state, labeled, plan);

  state.step++;
  return record;
}

/// Error rate (1 - accuracy) of argmax predictions over a dataset.
inline double evaluate_error(const Classifier& model, const Dataset& ds) {
  if (ds.size() == 0) throw std::invalid_argument("evaluate_error: empty dataset");
  const std::size_t n = ds.size();
  const std::size_t n_chunks = (n + kParallelChunk - 1) / kParallelChunk;
  std::vector<long> chunk_wrong(n_chunks, 0);
  parallel_chunks(n, [&](std::size_t c, std::size_t lo, std::size_t hi) {
    ForwardTrace trace;
    for (std::size_t i = lo; i < hi; ++i) {
      forward_example(model, image_to_input(ds.images[i]), trace);
      const std::size_t top = argmax_index(trace.acts.back());
      if (static_cast<int>(top) != ds.labels[i]) chunk_wrong[c]++;
    }
  });
  long wrong = 0;
  for (long w : chunk_wrong) wrong += w;
  return static_cast<double>(wrong) / static_cast<double>(n);
}

/// Same, with the EMA shadow parameters swapped in.
inline double evaluate_ema_error(const Classifier& model, const EmaState& ema,
                                 const Dataset& ds) {
  Classifier shadow_model = model;
  ema.apply_to(shadow_model);
  return evaluate_error(shadow_model, ds);
}

// ---------------------------------------------------------------------------
// Trainer-state serialization (embedded in run checkpoints)
// ---------------------------------------------------------------------------

namespace detail {

inline void write_tensors(ByteWriter& w, const std::vector<Tensor>& ts) {
  w.u64(ts.size());
  for (const auto& t : ts) w.f64_block(t.data);
}

inline void read_tensors(ByteReader& r, std::vector<Tensor>& ts) {
  const std::uint64_t n = r.u64();
  if (n != ts.size()) throw std::runtime_error("checkpoint: tensor arity mismatch");
  for (auto& t : ts) {
    auto block = r.f64_block();
    if (block.size() != t.size())
      throw std::runtime_error("checkpoint: tensor size mismatch");
    t.data = std::move(block);
  }
}

}  // namespace detail

inline void write_trainer_state(ByteWriter& w, const TrainerState& state) {
  write_model(w, state.model);

  w.f64(state.sgd.momentum);
  w.u8(state.sgd.nesterov ? 1 : 0);
  w.i64(state.sgd.steps_taken);
  detail::write_tensors(w, state.sgd.velocity);

  w.f64(state.adam.beta1);
  w.f64(state.adam.beta2);
  w.f64(state.adam.eps);
  w.i64(state.adam.steps_taken);
  detail::write_tensors(w, state.adam.first_moment);
  detail::write_tensors(w, state.adam.second_moment);

  w.f64(state.ema.decay);
  detail::write_tensors(w, state.ema.shadow);

  w.f64(state.cta.decay);
  w.f64(state.cta.sample_floor);
  w.u64(state.cta.bin_weights.size());
  for (const auto& bins : state.cta.bin_weights)
    for (double v : bins) w.f64(v);
  for (double v : state.cta.method_weights) w.f64(v);

  w.f64(state.da.decay);
  w.f64_block(state.da.labeled_marginal.data);
  w.f64_block(state.da.running_pred.data);

  w.u64(state.sampler.root_seed);
  w.u64(state.sampler.labeled_size);
  w.u64(state.sampler.unlabeled_size);
  w.u64(state.sampler.labeled_epoch);
  w.u64(state.sampler.labeled_pos);
  w.u64(state.sampler.unlabeled_epoch);
  w.u64(state.sampler.unlabeled_pos);

  w.i64(state.step);
  w.u64(state.root_seed);
  w.i64(state.cta_fallback_warnings);
}

inline TrainerState read_trainer_state(ByteReader& r) {
  TrainerState state;
  state.model = read_model(r);

  state.sgd.momentum = r.f64();
  state.sgd.nesterov = r.u8() != 0;
  state.sgd.steps_taken = r.i64();
  state.sgd.velocity = {};
  for (const auto* t : state.model.param_tensors())
    state.sgd.velocity.push_back(Tensor(t->shape));
  detail::read_tensors(r, state.sgd.velocity);

  state.adam.beta1 = r.f64();
  state.adam.beta2 = r.f64();
  state.adam.eps = r.f64();
  state.adam.steps_taken = r.i64();
  for (const auto* t : state.model.param_tensors()) {
    state.adam.first_moment.push_back(Tensor(t->shape));
    state.adam.second_moment.push_back(Tensor(t->shape));
  }
  detail::read_tensors(r, state.adam.first_moment);
  detail::read_tensors(r, state.adam.second_moment);

  state.ema.decay = r.f64();
  for (const auto* t : state.model.param_tensors())
    state.ema.shadow.push_back(Tensor(t->shape));
  detail::read_tensors(r, state.ema.shadow);

  state.cta.decay = r.f64();
  state.cta.sample_floor = r.f64();
  const std::uint64_t n_cta = r.u64();
  if (n_cta != cta_catalog().size())
    throw std::runtime_error("checkpoint: augmentation catalog size changed");
  state.cta.bin_weights.assign(n_cta, {});
  for (auto& bins : state.cta.bin_weights)
    for (double& v : bins) v = r.f64();
  for (double& v : state.cta.method_weights) v = r.f64();

  state.da.decay = r.f64();
  state.da.labeled_marginal = Tensor::vec(r.f64_block());
  state.da.running_pred = Tensor::vec(r.f64_block());

  state.sampler.root_seed = r.u64();
  state.sampler.labeled_size = r.u64();
  state.sampler.unlabeled_size = r.u64();
  state.sampler.labeled_epoch = r.u64();
  state.sampler.labeled_pos = r.u64();
  state.sampler.unlabeled_epoch = r.u64();
  state.sampler.unlabeled_pos = r.u64();

  state.step = r.i64();
  state.root_seed = r.u64();
  state.cta_fallback_warnings = r.i64();
  return state;
}

}  // namespace fixmatch
