#pragma once

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

#include "fixmatch/network.hpp"
#include "fixmatch/tensor.hpp"

namespace fixmatch {

// Weight decay is coupled L2 everywhere: the penalty gradient wd * theta is
// added to the raw gradient before the optimizer's own arithmetic, for SGD
// and Adam alike.

// ---------------------------------------------------------------------------
// Learning-rate schedules
// ---------------------------------------------------------------------------

struct Schedule {
  enum class Kind { kCosine, kLinear, kConstant };
  Kind kind = Kind::kCosine;
  double base_lr = 0.03;
  double end_frac = 1.0 / 3.0;  // linear only: lr(K) = base_lr * end_frac
  long total_steps = 1;
};

/// Cosine: base_lr * cos(7 pi k / (16 K)); strictly decreasing on [0, K].
inline double lr_at(const Schedule& s, long k) {
  if (k < 0 || k > s.total_steps)
    throw std::invalid_argument("lr_at: step " + std::to_string(k) +
                                " outside [0, " + std::to_string(s.total_steps) + "]");
  switch (s.kind) {
    case Schedule::Kind::kCosine:
      return s.base_lr *
             std::cos(7.0 * std::numbers::pi * static_cast<double>(k) /
                      (16.0 * static_cast<double>(s.total_steps)));
    case Schedule::Kind::kLinear:
      return s.base_lr * (1.0 - (1.0 - s.end_frac) * static_cast<double>(k) /
                                    static_cast<double>(s.total_steps));
    case Schedule::Kind::kConstant:
      return s.base_lr;
  }
  throw std::logic_error("lr_at: unknown schedule kind");
}

// ---------------------------------------------------------------------------
// SGD with (Nesterov) momentum
// ---------------------------------------------------------------------------

struct SgdState {
  double momentum = 0.9;
  bool nesterov = true;
  long steps_taken = 0;
  std::vector<Tensor> velocity;

  static SgdState make(const Classifier& model, double momentum, bool nesterov) {
    if (momentum < 0.0 || momentum >= 1.0)
      throw std::invalid_argument("SgdState: momentum outside [0, 1)");
    SgdState s;
    s.momentum = momentum;
    s.nesterov = nesterov;
    for (const auto* t : model.param_tensors()) s.velocity.push_back(Tensor(t->shape));
    return s;
  }
};

/// v <- beta v + g'; theta <- theta - lr (beta v + g') with Nesterov, else
/// theta - lr v, where g' = g + wd * theta.
inline void sgd_step(SgdState& state, std::vector<Tensor*> params,
                     const GradSet& grads, double lr, double weight_decay) {
  if (params.size() != grads.tensors.size() ||
      params.size() != state.velocity.size())
    throw std::invalid_argument("sgd_step: arity mismatch");
  if (!grads.all_finite())
    throw std::runtime_error("sgd_step: non-finite gradient at step " +
                             std::to_string(state.steps_taken));
  const double beta = state.momentum;
  for (std::size_t t = 0; t < params.size(); ++t) {
    if (!params[t]->same_shape(grads.tensors[t]))
      throw std::invalid_argument("sgd_step: shape mismatch");
    double* __restrict th = params[t]->data.data();
    double* __restrict v = state.velocity[t].data.data();
    const double* __restrict g = grads.tensors[t].data.data();
    const std::size_t n = params[t]->size();
    if (state.nesterov) {
      for (std::size_t j = 0; j < n; ++j) {
        const double eff = g[j] + weight_decay * th[j];
        v[j] = beta * v[j] + eff;
        th[j] -= lr * (beta * v[j] + eff);
      }
    } else {
      for (std::size_t j = 0; j < n; ++j) {
        const double eff = g[j] + weight_decay * th[j];
        v[j] = beta * v[j] + eff;
        th[j] -= lr * v[j];
      }
    }
  }
  state.steps_taken++;
}

// ---------------------------------------------------------------------------
// Adam (bias-corrected), L2 coupled like SGD
// ---------------------------------------------------------------------------

struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  long steps_taken = 0;
  std::vector<Tensor> first_moment;
  std::vector<Tensor> second_moment;

  static AdamState make(const Classifier& model, double beta1 = 0.9,
                        double beta2 = 0.999, double eps = 1e-8) {
    if (beta1 < 0.0 || beta1 >= 1.0 || beta2 < 0.0 || beta2 >= 1.0)
      throw std::invalid_argument("AdamState: betas outside [0, 1)");
    AdamState s;
    s.beta1 = beta1;
    s.beta2 = beta2;
    s.eps = eps;
    for (const auto* t : model.param_tensors()) {
      s.first_moment.push_back(Tensor(t->shape));
      s.second_moment.push_back(Tensor(t->shape));
    }
    return s;
  }
};

inline void adam_step(AdamState& state, std::vector<Tensor*> params,
                      const GradSet& grads, double lr, double weight_decay) {
  if (params.size() != grads.tensors.size() ||
      params.size() != state.first_moment.size())
    throw std::invalid_argument("adam_step: arity mismatch");
  if (!grads.all_finite())
    throw std::runtime_error("adam_step: non-finite gradient at step " +
                             std::to_string(state.steps_taken));
  state.steps_taken++;
  const double b1 = state.beta1, b2 = state.beta2;
  const double corr1 = 1.0 - std::pow(b1, static_cast<double>(state.steps_taken));
  const double corr2 = 1.0 - std::pow(b2, static_cast<double>(state.steps_taken));
  for (std::size_t t = 0; t < params.size(); ++t) {
    if (!params[t]->same_shape(grads.tensors[t]))
      throw std::invalid_argument("adam_step: shape mismatch");
    double* __restrict th = params[t]->data.data();
    double* __restrict m = state.first_moment[t].data.data();
    double* __restrict v = state.second_moment[t].data.data();
    const double* __restrict g = grads.tensors[t].data.data();
    for (std::size_t j = 0; j < params[t]->size(); ++j) {
      const double eff = g[j] + weight_decay * th[j];
      m[j] = b1 * m[j] + (1.0 - b1) * eff;
      v[j] = b2 * v[j] + (1.0 - b2) * eff * eff;
      const double mhat = m[j] / corr1;
      const double vhat = v[j] / corr2;
      th[j] -= lr * mhat / (std::sqrt(vhat) + state.eps);
    }
  }
}

// ---------------------------------------------------------------------------
// Parameter EMA used for evaluation
// ---------------------------------------------------------------------------

struct EmaState {
  double decay = 0.999;
  std::vector<Tensor> shadow;

  static EmaState make(const Classifier& model, double decay) {
    if (decay < 0.0 || decay > 1.0)
      throw std::invalid_argument("EmaState: decay outside [0, 1]");
    EmaState s;
    s.decay = decay;
    for (const auto* t : model.param_tensors()) s.shadow.push_back(*t);
    return s;
  }

  /// Copies the shadow parameters into a model of the same architecture.
  void apply_to(Classifier& model) const {
    auto params = model.param_tensors();
    if (params.size() != shadow.size())
      throw std::invalid_argument("EmaState: model arity mismatch");
    for (std::size_t i = 0; i < params.size(); ++i) {
      if (!params[i]->same_shape(shadow[i]))
        throw std::invalid_argument("EmaState: shape mismatch");
      params[i]->data = shadow[i].data;
    }
  }
};

/// shadow <- decay * shadow + (1 - decay) * params.
inline void ema_update(EmaState& ema, const std::vector<const Tensor*>& params) {
  if (params.size() != ema.shadow.size())
    throw std::invalid_argument("ema_update: arity mismatch");
  const double d = ema.decay;
  for (std::size_t t = 0; t < params.size(); ++t) {
    if (!params[t]->same_shape(ema.shadow[t]))
      throw std::invalid_argument("ema_update: shape mismatch");
    double* __restrict s = ema.shadow[t].data.data();
    const double* __restrict p = params[t]->data.data();
    for (std::size_t j = 0; j < params[t]->size(); ++j)
      s[j] = d * s[j] + (1.0 - d) * p[j];
  }
}

}  // namespace fixmatch
