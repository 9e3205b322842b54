#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "fixmatch/rng.hpp"
#include "fixmatch/serialize.hpp"
#include "fixmatch/tensor.hpp"

namespace fixmatch {

// Compact classifier with hand-derived backward passes. Activations are
// channels-last ([H, W, C], row-major) so the inner loops run over the
// output-channel axis contiguously. Convolutions are "valid" (no padding):
// out_dim = floor((in - k) / stride) + 1.

struct ConvLayer {
  int in_h = 0, in_w = 0, in_c = 0;
  int kernel = 3, stride = 1, out_c = 0;
  int out_h = 0, out_w = 0;
  Tensor weights;  // [kernel, kernel, in_c, out_c]
  Tensor bias;     // [out_c]
};

struct DenseLayer {
  int in_dim = 0, out_dim = 0;
  Tensor weights;  // [in_dim, out_dim]
  Tensor bias;     // [out_dim]
};

struct ReluLayer {
  int dim = 0;
};

struct GlobalAvgPoolLayer {
  int in_h = 0, in_w = 0, in_c = 0;
};

struct FlattenLayer {
  int dim = 0;
};

using Layer = std::variant<ConvLayer, DenseLayer, ReluLayer, GlobalAvgPoolLayer,
                           FlattenLayer>;

/// Shape-agnostic build instruction; dimensions resolve against the running
/// activation shape when the classifier is assembled.
struct LayerSpec {
  enum Kind { kConv, kDense, kRelu, kGlobalAvgPool, kFlatten };
  Kind kind = kRelu;
  int kernel = 3;
  int stride = 1;
  int channels = 0;  // conv output channels
  int units = 0;     // dense output units

  static LayerSpec conv(int channels, int kernel = 3, int stride = 1) {
    LayerSpec s;
    s.kind = kConv;
    s.channels = channels;
    s.kernel = kernel;
    s.stride = stride;
    return s;
  }
  static LayerSpec dense(int units) {
    LayerSpec s;
    s.kind = kDense;
    s.units = units;
    return s;
  }
  static LayerSpec relu() { return LayerSpec{}; }
  static LayerSpec global_avg_pool() {
    LayerSpec s;
    s.kind = kGlobalAvgPool;
    return s;
  }
  static LayerSpec flatten() {
    LayerSpec s;
    s.kind = kFlatten;
    return s;
  }
};

struct Classifier {
  int in_h = 0, in_w = 0, in_c = 0;
  int num_classes = 0;
  std::vector<Layer> layers;

  std::size_t input_size() const {
    return static_cast<std::size_t>(in_h) * in_w * in_c;
  }

  std::vector<Tensor*> param_tensors() {
    std::vector<Tensor*> out;
    for (auto& l : layers) {
      if (auto* c = std::get_if<ConvLayer>(&l)) {
        out.push_back(&c->weights);
        out.push_back(&c->bias);
      } else if (auto* d = std::get_if<DenseLayer>(&l)) {
        out.push_back(&d->weights);
        out.push_back(&d->bias);
      }
    }
    return out;
  }
  std::vector<const Tensor*> param_tensors() const {
    std::vector<const Tensor*> out;
    for (const auto& l : layers) {
      if (const auto* c = std::get_if<ConvLayer>(&l)) {
        out.push_back(&c->weights);
        out.push_back(&c->bias);
      } else if (const auto* d = std::get_if<DenseLayer>(&l)) {
        out.push_back(&d->weights);
        out.push_back(&d->bias);
      }
    }
    return out;
  }

  std::size_t param_count() const {
    std::size_t n = 0;
    for (const auto* t : param_tensors()) n += t->size();
    return n;
  }
};

/// One gradient tensor per parameter tensor, in param_tensors() order.
struct GradSet {
  std::vector<Tensor> tensors;

  static GradSet zeros_like(const Classifier& model) {
    GradSet g;
    for (const auto* t : model.param_tensors()) g.tensors.push_back(Tensor(t->shape));
    return g;
  }

  void add_scaled(const GradSet& other, double scale) {
    if (tensors.size() != other.tensors.size())
      throw std::invalid_argument("GradSet::add_scaled: arity mismatch");
    for (std::size_t i = 0; i < tensors.size(); ++i) {
      if (!tensors[i].same_shape(other.tensors[i]))
        throw std::invalid_argument("GradSet::add_scaled: shape mismatch");
      for (std::size_t j = 0; j < tensors[i].size(); ++j)
        tensors[i][j] += scale * other.tensors[i][j];
    }
  }

  bool all_finite() const {
    for (const auto& t : tensors)
      if (!t.all_finite()) return false;
    return true;
  }
};

inline Classifier make_classifier(int in_h, int in_w, int in_c,
                                  const std::vector<LayerSpec>& specs) {
  Classifier model;
  model.in_h = in_h;
  model.in_w = in_w;
  model.in_c = in_c;

  int h = in_h, w = in_w, c = in_c;
  bool spatial = true;  // activation still has H x W structure
  for (const auto& spec : specs) {
    switch (spec.kind) {
      case LayerSpec::kConv: {
        if (!spatial) throw std::invalid_argument("conv after flatten/pool");
        ConvLayer l;
        l.in_h = h;
        l.in_w = w;
        l.in_c = c;
        l.kernel = spec.kernel;
        l.stride = spec.stride;
        l.out_c = spec.channels;
        l.out_h = (h - spec.kernel) / spec.stride + 1;
        l.out_w = (w - spec.kernel) / spec.stride + 1;
        if (l.out_h < 1 || l.out_w < 1)
          throw std::invalid_argument("conv output collapses to zero");
        l.weights = Tensor({static_cast<std::size_t>(spec.kernel),
                            static_cast<std::size_t>(spec.kernel),
                            static_cast<std::size_t>(c),
                            static_cast<std::size_t>(spec.channels)});
        l.bias = Tensor({static_cast<std::size_t>(spec.channels)});
        h = l.out_h;
        w = l.out_w;
        c = l.out_c;
        model.layers.emplace_back(std::move(l));
        break;
      }
      case LayerSpec::kDense: {
        const int in_dim = spatial ? h * w * c : c;
        DenseLayer l;
        l.in_dim = in_dim;
        l.out_dim = spec.units;
        l.weights = Tensor({static_cast<std::size_t>(in_dim),
                            static_cast<std::size_t>(spec.units)});
        l.bias = Tensor({static_cast<std::size_t>(spec.units)});
        spatial = false;
        h = w = 1;
        c = spec.units;
        model.layers.emplace_back(std::move(l));
        break;
      }
      case LayerSpec::kRelu: {
        ReluLayer l;
        l.dim = spatial ? h * w * c : c;
        model.layers.emplace_back(l);
        break;
      }
      case LayerSpec::kGlobalAvgPool: {
        if (!spatial) throw std::invalid_argument("pool after flatten");
        GlobalAvgPoolLayer l;
        l.in_h = h;
        l.in_w = w;
        l.in_c = c;
        model.layers.emplace_back(l);
        spatial = false;
        h = w = 1;
        break;
      }
      case LayerSpec::kFlatten: {
        FlattenLayer l;
        l.dim = h * w * c;
        model.layers.emplace_back(l);
        spatial = false;
        h = w = 1;
        c = l.dim;
        break;
      }
    }
  }
  model.num_classes = c;
  return model;
}

/// The desk-scale reference net: two small convs, global pooling, one head.
inline Classifier make_default_classifier(int in_h, int in_w, int in_c,
                                          int num_classes) {
  return make_classifier(in_h, in_w, in_c,
                         {LayerSpec::conv(16, 3, 1), LayerSpec::relu(),
                          LayerSpec::conv(32, 3, 2), LayerSpec::relu(),
                          LayerSpec::global_avg_pool(),
                          LayerSpec::dense(num_classes)});
}

/// He fan-in Gaussian init (std = sqrt(2 / fan_in)), biases zero, drawn from
/// one keyed stream per parameter tensor.
inline void init_params(Classifier& model, std::uint64_t root_seed) {
  std::uint64_t index = 0;
  for (auto& layer : model.layers) {
    if (auto* c = std::get_if<ConvLayer>(&layer)) {
      const double stddev =
          std::sqrt(2.0 / (static_cast<double>(c->kernel) * c->kernel * c->in_c));
      RngStream rng(root_seed, {StreamPurpose::kParamInit, 0, index++});
      for (auto& v : c->weights.data) v = stddev * rng.next_normal();
      for (auto& v : c->bias.data) v = 0.0;
    } else if (auto* d = std::get_if<DenseLayer>(&layer)) {
      const double stddev = std::sqrt(2.0 / d->in_dim);
      RngStream rng(root_seed, {StreamPurpose::kParamInit, 0, index++});
      for (auto& v : d->weights.data) v = stddev * rng.next_normal();
      for (auto& v : d->bias.data) v = 0.0;
    }
  }
}

// ---------------------------------------------------------------------------
// Forward / backward kernels
// ---------------------------------------------------------------------------

namespace detail {

inline void conv_forward(const ConvLayer& l, const double* __restrict in,
                         double* __restrict out) {
  const int K = l.kernel, Ci = l.in_c, Co = l.out_c, s = l.stride, W = l.in_w;
  const double* __restrict wts = l.weights.data.data();
  const double* __restrict bias = l.bias.data.data();
  for (int oy = 0; oy < l.out_h; ++oy) {
    int ox = 0;
    for (; ox + 2 <= l.out_w; ox += 2) {  // two output pixels share weights
      double* __restrict o0 = out + (static_cast<std::size_t>(oy) * l.out_w + ox) * Co;
      double* __restrict o1 = o0 + Co;
      for (int c = 0; c < Co; ++c) {
        o0[c] = bias[c];
        o1[c] = bias[c];
      }
      for (int ky = 0; ky < K; ++ky)
        for (int kx = 0; kx < K; ++kx) {
          const double* __restrict ip0 =
              in + (static_cast<std::size_t>(oy * s + ky) * W + ox * s + kx) * Ci;
          const double* __restrict ip1 = ip0 + s * Ci;
          const double* __restrict wp = wts + static_cast<std::size_t>((ky * K + kx) * Ci) * Co;
          for (int ci = 0; ci < Ci; ++ci) {
            const double v0 = ip0[ci], v1 = ip1[ci];
            const double* __restrict wr = wp + static_cast<std::size_t>(ci) * Co;
            for (int c = 0; c < Co; ++c) {
              o0[c] += v0 * wr[c];
              o1[c] += v1 * wr[c];
            }
          }
        }
    }
    for (; ox < l.out_w; ++ox) {
      double* __restrict o0 = out + (static_cast<std::size_t>(oy) * l.out_w + ox) * Co;
      for (int c = 0; c < Co; ++c) o0[c] = bias[c];
      for (int ky = 0; ky < K; ++ky)
        for (int kx = 0; kx < K; ++kx) {
          const double* __restrict ip =
              in + (static_cast<std::size_t>(oy * s + ky) * W + ox * s + kx) * Ci;
          const double* __restrict wp = wts + static_cast<std::size_t>((ky * K + kx) * Ci) * Co;
          for (int ci = 0; ci < Ci; ++ci) {
            const double v = ip[ci];
            const double* __restrict wr = wp + static_cast<std::size_t>(ci) * Co;
            for (int c = 0; c < Co; ++c) o0[c] += v * wr[c];
          }
        }
    }
  }
}

/// Accumulates parameter gradients and (optionally) the input gradient.
inline void conv_backward(const ConvLayer& l, const double* __restrict in,
                          const double* __restrict dout,
                          double* __restrict dweights, double* __restrict dbias,
                          double* __restrict din /* nullable, zero-filled */) {
  const int K = l.kernel, Ci = l.in_c, Co = l.out_c, s = l.stride, W = l.in_w;
  const double* __restrict wts = l.weights.data.data();
  for (int oy = 0; oy < l.out_h; ++oy)
    for (int ox = 0; ox < l.out_w; ++ox) {
      const double* __restrict g = dout + (static_cast<std::size_t>(oy) * l.out_w + ox) * Co;
      for (int c = 0; c < Co; ++c) dbias[c] += g[c];
      for (int ky = 0; ky < K; ++ky)
        for (int kx = 0; kx < K; ++kx) {
          const std::size_t in_off =
              (static_cast<std::size_t>(oy * s + ky) * W + ox * s + kx) * Ci;
          const double* __restrict ip = in + in_off;
          double* __restrict dwp = dweights + static_cast<std::size_t>((ky * K + kx) * Ci) * Co;
          for (int ci = 0; ci < Ci; ++ci) {
            const double v = ip[ci];
            double* __restrict dwr = dwp + static_cast<std::size_t>(ci) * Co;
            for (int c = 0; c < Co; ++c) dwr[c] += v * g[c];
          }
          if (din) {
            const double* __restrict wp = wts + static_cast<std::size_t>((ky * K + kx) * Ci) * Co;
            double* __restrict dip = din + in_off;
            for (int ci = 0; ci < Ci; ++ci) {
              const double* __restrict wr = wp + static_cast<std::size_t>(ci) * Co;
              double acc = 0.0;
              for (int c = 0; c < Co; ++c) acc += wr[c] * g[c];
              dip[ci] += acc;
            }
          }
        }
    }
}

}  // namespace detail

/// Per-layer activations of one example; acts[0] is the input, acts[i+1] the
/// output of layer i.
struct ForwardTrace {
  std::vector<std::vector<double>> acts;
};

inline void forward_example(const Classifier& model, std::span<const double> x,
                            ForwardTrace& trace) {
  if (x.size() != model.input_size())
    throw std::invalid_argument("forward: input size mismatch");
  trace.acts.resize(model.layers.size() + 1);
  trace.acts[0].assign(x.begin(), x.end());
  for (std::size_t i = 0; i < model.layers.size(); ++i) {
    const auto& in = trace.acts[i];
    auto& out = trace.acts[i + 1];
    std::visit(
        [&](const auto& l) {
          using T = std::decay_t<decltype(l)>;
          if constexpr (std::is_same_v<T, ConvLayer>) {
            out.resize(static_cast<std::size_t>(l.out_h) * l.out_w * l.out_c);
            detail::conv_forward(l, in.data(), out.data());
          } else if constexpr (std::is_same_v<T, DenseLayer>) {
            out.assign(l.bias.data.begin(), l.bias.data.end());
            const double* __restrict w = l.weights.data.data();
            for (int i2 = 0; i2 < l.in_dim; ++i2) {
              const double v = in[static_cast<std::size_t>(i2)];
              const double* __restrict wr = w + static_cast<std::size_t>(i2) * l.out_dim;
              for (int o = 0; o < l.out_dim; ++o) out[static_cast<std::size_t>(o)] += v * wr[o];
            }
          } else if constexpr (std::is_same_v<T, ReluLayer>) {
            out.resize(in.size());
            for (std::size_t j = 0; j < in.size(); ++j)
              out[j] = in[j] > 0.0 ? in[j] : 0.0;
          } else if constexpr (std::is_same_v<T, GlobalAvgPoolLayer>) {
            out.assign(static_cast<std::size_t>(l.in_c), 0.0);
            const double inv = 1.0 / (static_cast<double>(l.in_h) * l.in_w);
            for (int p = 0; p < l.in_h * l.in_w; ++p)
              for (int c = 0; c < l.in_c; ++c)
                out[static_cast<std::size_t>(c)] += in[static_cast<std::size_t>(p) * l.in_c + c];
            for (auto& v : out) v *= inv;
          } else {  // Flatten
            out = in;
          }
        },
        model.layers[i]);
  }
}

/// Accumulates dLoss/dparams for one example into grads (+=). dlogits is the
/// loss gradient on the final layer output. Gradient for the network input
/// itself is skipped (first layer's din is never consumed).
inline void backward_example(const Classifier& model, const ForwardTrace& trace,
                             std::span<const double> dlogits, GradSet& grads) {
  const std::size_t n_layers = model.layers.size();
  std::vector<double> grad(dlogits.begin(), dlogits.end());
  std::vector<double> next;

  // map layer index -> grad tensor base index
  std::vector<int> grad_base(n_layers, -1);
  int gi = 0;
  for (std::size_t i = 0; i < n_layers; ++i)
    if (std::holds_alternative<ConvLayer>(model.layers[i]) ||
        std::holds_alternative<DenseLayer>(model.layers[i])) {
      grad_base[i] = gi;
      gi += 2;
    }

  for (std::size_t ri = n_layers; ri-- > 0;) {
    const auto& in = trace.acts[ri];
    const bool need_din = ri > 0;
    std::visit(
        [&](const auto& l) {
          using T = std::decay_t<decltype(l)>;
          if constexpr (std::is_same_v<T, ConvLayer>) {
            double* dw = grads.tensors[static_cast<std::size_t>(grad_base[ri])].data.data();
            double* db = grads.tensors[static_cast<std::size_t>(grad_base[ri]) + 1].data.data();
            if (need_din) {
              next.assign(in.size(), 0.0);
              detail::conv_backward(l, in.data(), grad.data(), dw, db, next.data());
              grad.swap(next);
            } else {
              detail::conv_backward(l, in.data(), grad.data(), dw, db, nullptr);
            }
          } else if constexpr (std::is_same_v<T, DenseLayer>) {
            double* dw = grads.tensors[static_cast<std::size_t>(grad_base[ri])].data.data();
            double* db = grads.tensors[static_cast<std::size_t>(grad_base[ri]) + 1].data.data();
            for (int o = 0; o < l.out_dim; ++o) db[o] += grad[static_cast<std::size_t>(o)];
            const double* __restrict w = l.weights.data.data();
            if (need_din) next.assign(in.size(), 0.0);
            for (int i2 = 0; i2 < l.in_dim; ++i2) {
              const double v = in[static_cast<std::size_t>(i2)];
              double* __restrict dwr = dw + static_cast<std::size_t>(i2) * l.out_dim;
              const double* __restrict wr = w + static_cast<std::size_t>(i2) * l.out_dim;
              double acc = 0.0;
              for (int o = 0; o < l.out_dim; ++o) {
                dwr[o] += v * grad[static_cast<std::size_t>(o)];
                acc += wr[o] * grad[static_cast<std::size_t>(o)];
              }
              if (need_din) next[static_cast<std::size_t>(i2)] = acc;
            }
            if (need_din) grad.swap(next);
          } else if constexpr (std::is_same_v<T, ReluLayer>) {
            if (need_din) {
              for (std::size_t j = 0; j < grad.size(); ++j)
                if (in[j] <= 0.0) grad[j] = 0.0;
            }
          } else if constexpr (std::is_same_v<T, GlobalAvgPoolLayer>) {
            if (need_din) {
              const double inv = 1.0 / (static_cast<double>(l.in_h) * l.in_w);
              next.assign(in.size(), 0.0);
              for (int p = 0; p < l.in_h * l.in_w; ++p)
                for (int c = 0; c < l.in_c; ++c)
                  next[static_cast<std::size_t>(p) * l.in_c + c] =
                      grad[static_cast<std::size_t>(c)] * inv;
              grad.swap(next);
            }
          }
          // Flatten: gradient passes through unchanged
        },
        model.layers[ri]);
  }
}

// ---------------------------------------------------------------------------
// Batch-level public surface
// ---------------------------------------------------------------------------

inline Tensor forward(const Classifier& model, const Tensor& batch) {
  if (batch.rank() < 1 || batch.size() % model.input_size() != 0)
    throw std::invalid_argument("forward: batch shape mismatch");
  const std::size_t n = batch.size() / model.input_size();
  if (batch.shape[0] != n) throw std::invalid_argument("forward: batch shape mismatch");
  Tensor logits({n, static_cast<std::size_t>(model.num_classes)});
  ForwardTrace trace;
  for (std::size_t i = 0; i < n; ++i) {
    forward_example(model,
                    std::span<const double>(batch.data.data() + i * model.input_size(),
                                            model.input_size()),
                    trace);
    const auto& out = trace.acts.back();
    for (std::size_t c = 0; c < out.size(); ++c) logits.at2(i, c) = out[c];
  }
  if (!logits.all_finite())
    throw std::runtime_error("forward: non-finite logits");
  return logits;
}

/// Rows of softmax(forward(...)); each row a valid distribution.
inline Tensor predict_dist(const Classifier& model, const Tensor& batch) {
  Tensor logits = forward(model, batch);
  Tensor out(logits.shape);
  for (std::size_t i = 0; i < logits.shape[0]; ++i)
    softmax_into(logits.row(i), out.row(i));
  return out;
}

/// Exact gradients of the scalar loss whose logit gradient is dlogits [N, L].
inline GradSet backward(const Classifier& model, const Tensor& batch,
                        const Tensor& dlogits) {
  const std::size_t n = batch.size() / model.input_size();
  if (dlogits.rank() != 2 || dlogits.shape[0] != n ||
      dlogits.shape[1] != static_cast<std::size_t>(model.num_classes))
    throw std::invalid_argument("backward: dlogits shape mismatch");
  GradSet grads = GradSet::zeros_like(model);
  ForwardTrace trace;
  for (std::size_t i = 0; i < n; ++i) {
    forward_example(model,
                    std::span<const double>(batch.data.data() + i * model.input_size(),
                                            model.input_size()),
                    trace);
    backward_example(model, trace, dlogits.row(i), grads);
  }
  return grads;
}

// ---------------------------------------------------------------------------
// Finite-difference gradient check
// ---------------------------------------------------------------------------

enum class CheckLoss {
  kSoftmaxCrossEntropy,  // targets: one-hot per example from the seed
  kQuadratic,            // 0.5 * sum (logit - target)^2
};

namespace detail {

struct CheckTargets {
  std::vector<std::size_t> classes;  // for cross-entropy
  Tensor values;                     // for quadratic
};

inline CheckTargets make_targets(const Classifier& model, std::size_t n,
                                 CheckLoss loss, std::uint64_t seed) {
  CheckTargets t;
  RngStream rng(seed, {StreamPurpose::kGradCheck, 0, 0});
  if (loss == CheckLoss::kSoftmaxCrossEntropy) {
    for (std::size_t i = 0; i < n; ++i)
      t.classes.push_back(rng.next_below(static_cast<std::uint64_t>(model.num_classes)));
  } else {
    t.values = Tensor({n, static_cast<std::size_t>(model.num_classes)});
    for (auto& v : t.values.data) v = rng.next_range(-1.0, 1.0);
  }
  return t;
}

inline double check_loss_value(const Classifier& model, const Tensor& batch,
                               CheckLoss loss, const CheckTargets& targets) {
  Tensor logits = forward(model, batch);
  const std::size_t n = logits.shape[0];
  double total = 0.0;
  if (loss == CheckLoss::kSoftmaxCrossEntropy) {
    for (std::size_t i = 0; i < n; ++i) {
      std::vector<double> p(logits.shape[1]);
      softmax_into(logits.row(i), p);
      total += -std::log(std::max(p[targets.classes[i]], kProbFloor));
    }
  } else {
    for (std::size_t i = 0; i < logits.size(); ++i) {
      const double d = logits[i] - targets.values[i];
      total += 0.5 * d * d;
    }
  }
  return total;
}

inline Tensor check_loss_dlogits(const Classifier& model, const Tensor& batch,
                                 CheckLoss loss, const CheckTargets& targets) {
  Tensor logits = forward(model, batch);
  Tensor dl(logits.shape);
  if (loss == CheckLoss::kSoftmaxCrossEntropy) {
    for (std::size_t i = 0; i < logits.shape[0]; ++i) {
      std::vector<double> p(logits.shape[1]);
      softmax_into(logits.row(i), p);
      for (std::size_t c = 0; c < p.size(); ++c)
        dl.at2(i, c) = p[c] - (c == targets.classes[i] ? 1.0 : 0.0);
    }
  } else {
    for (std::size_t i = 0; i < logits.size(); ++i)
      dl[i] = logits[i] - targets.values[i];
  }
  return dl;
}

/// ReLU inputs within this distance of zero invalidate a finite-difference
/// probe (the kink). Offending biases are nudged before checking.
inline constexpr double kKinkTolerance = 1e-3;

inline bool nudge_relu_kinks(Classifier& model, const Tensor& batch) {
  bool nudged = false;
  ForwardTrace trace;
  const std::size_t n = batch.size() / model.input_size();
  for (std::size_t ex = 0; ex < n; ++ex) {
    forward_example(model,
                    std::span<const double>(batch.data.data() + ex * model.input_size(),
                                            model.input_size()),
                    trace);
    for (std::size_t li = 0; li < model.layers.size(); ++li) {
      if (!std::holds_alternative<ReluLayer>(model.layers[li])) continue;
      const auto& pre = trace.acts[li];
      for (std::size_t j = 0; j < pre.size(); ++j) {
        if (std::abs(pre[j]) >= kKinkTolerance) continue;
        // push the channel's bias away from the kink
        if (li == 0) continue;
        if (auto* c = std::get_if<ConvLayer>(&model.layers[li - 1])) {
          c->bias[j % static_cast<std::size_t>(c->out_c)] += 2.0 * kKinkTolerance;
          nudged = true;
        } else if (auto* d = std::get_if<DenseLayer>(&model.layers[li - 1])) {
          d->bias[j % static_cast<std::size_t>(d->out_dim)] += 2.0 * kKinkTolerance;
          nudged = true;
        }
      }
      if (nudged) return true;  // re-run the forward pass with new biases
    }
  }
  return false;
}

}  // namespace detail

/// Max relative error between analytic gradients and central finite
/// differences at step eps, over every parameter. The model copy is nudged
/// away from ReLU kinks first (documented exclusion).
inline double grad_check(Classifier model, const Tensor& batch, double eps,
                         CheckLoss loss = CheckLoss::kSoftmaxCrossEntropy,
                         std::uint64_t target_seed = 1) {
  if (!(eps > 0.0) || eps > 1e-3)
    throw std::invalid_argument("grad_check: eps outside (0, 1e-3]");
  for (int tries = 0; tries < 50; ++tries)
    if (!detail::nudge_relu_kinks(model, batch)) break;

  const std::size_t n = batch.size() / model.input_size();
  const auto targets = detail::make_targets(model, n, loss, target_seed);
  const Tensor dlogits = detail::check_loss_dlogits(model, batch, loss, targets);
  const GradSet analytic = backward(model, batch, dlogits);

  double worst = 0.0;
  auto params = model.param_tensors();
  for (std::size_t t = 0; t < params.size(); ++t) {
    for (std::size_t j = 0; j < params[t]->size(); ++j) {
      const double saved = (*params[t])[j];
      (*params[t])[j] = saved + eps;
      const double up = detail::check_loss_value(model, batch, loss, targets);
      (*params[t])[j] = saved - eps;
      const double down = detail::check_loss_value(model, batch, loss, targets);
      (*params[t])[j] = saved;
      const double numeric = (up - down) / (2.0 * eps);
      const double a = analytic.tensors[t][j];
      const double rel =
          std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-6});
      worst = std::max(worst, rel);
    }
  }
  return worst;
}

/// A small random architecture with a matching random batch, cycling through
/// every layer type across seeds; sized so finite differences stay fast.
/// Feeds the grad-check verification path.
struct GradCheckProbe {
  Classifier model;
  Tensor batch;
};

inline GradCheckProbe make_grad_check_probe(std::uint64_t seed) {
  RngStream rng(seed, {StreamPurpose::kGradCheck, 1, 0});
  const int h = 5 + static_cast<int>(rng.next_below(3));
  const int w = 5 + static_cast<int>(rng.next_below(3));
  const int c = 1 + static_cast<int>(rng.next_below(2));
  const int classes = 2 + static_cast<int>(rng.next_below(3));

  std::vector<LayerSpec> specs;
  switch (rng.next_below(5)) {
    case 0:
      specs = {LayerSpec::flatten(), LayerSpec::dense(classes)};
      break;
    case 1: {
      const int ch = 2 + static_cast<int>(rng.next_below(3));
      specs = {LayerSpec::conv(ch, 3, 1), LayerSpec::relu(),
               LayerSpec::global_avg_pool(), LayerSpec::dense(classes)};
      break;
    }
    case 2: {
      const int ch1 = 2 + static_cast<int>(rng.next_below(2));
      const int ch2 = 2 + static_cast<int>(rng.next_below(3));
      specs = {LayerSpec::conv(ch1, 3, 1), LayerSpec::relu(),
               LayerSpec::conv(ch2, 3, 2), LayerSpec::relu(),
               LayerSpec::global_avg_pool(), LayerSpec::dense(classes)};
      break;
    }
    case 3: {
      const int ch = 2 + static_cast<int>(rng.next_below(2));
      specs = {LayerSpec::conv(ch, 3, 2), LayerSpec::relu(),
               LayerSpec::flatten(), LayerSpec::dense(classes)};
      break;
    }
    default: {
      const int hidden = 4 + static_cast<int>(rng.next_below(5));
      specs = {LayerSpec::flatten(), LayerSpec::dense(hidden),
               LayerSpec::relu(), LayerSpec::dense(classes)};
      break;
    }
  }

  GradCheckProbe probe;
  probe.model = make_classifier(h, w, c, specs);
  init_params(probe.model, seed);
  probe.batch = Tensor({2, probe.model.input_size()});
  for (auto& v : probe.batch.data) v = rng.next_range(-1.0, 1.0);
  return probe;
}

// ---------------------------------------------------------------------------
// Model checkpoint: little-endian header (magic, version, layer descriptors)
// followed by raw 64-bit float parameter blocks; checksummed.
// ---------------------------------------------------------------------------

inline constexpr std::uint32_t kModelMagic = 0x54454E46;  // "FNET"
inline constexpr std::uint32_t kModelVersion = 1;

inline void write_model(ByteWriter& w, const Classifier& model) {
  w.u32(kModelMagic);
  w.u32(kModelVersion);
  w.i64(model.in_h);
  w.i64(model.in_w);
  w.i64(model.in_c);
  w.i64(model.num_classes);
  w.u64(model.layers.size());
  for (const auto& layer : model.layers) {
    std::visit(
        [&](const auto& l) {
          using T = std::decay_t<decltype(l)>;
          if constexpr (std::is_same_v<T, ConvLayer>) {
            w.u8(0);
            w.i64(l.kernel);
            w.i64(l.stride);
            w.i64(l.out_c);
          } else if constexpr (std::is_same_v<T, DenseLayer>) {
            w.u8(1);
            w.i64(l.out_dim);
          } else if constexpr (std::is_same_v<T, ReluLayer>) {
            w.u8(2);
          } else if constexpr (std::is_same_v<T, GlobalAvgPoolLayer>) {
            w.u8(3);
          } else {
            w.u8(4);
          }
        },
        layer);
  }
  for (const auto* t : model.param_tensors()) w.f64_block(t->data);
}

inline Classifier read_model(ByteReader& r) {
  if (r.u32() != kModelMagic) throw std::runtime_error("model: bad magic");
  if (r.u32() != kModelVersion) throw std::runtime_error("model: version mismatch");
  const int in_h = static_cast<int>(r.i64());
  const int in_w = static_cast<int>(r.i64());
  const int in_c = static_cast<int>(r.i64());
  const int classes = static_cast<int>(r.i64());
  const std::uint64_t n_layers = r.u64();
  std::vector<LayerSpec> specs;
  for (std::uint64_t i = 0; i < n_layers; ++i) {
    switch (r.u8()) {
      case 0: {
        const int k = static_cast<int>(r.i64());
        const int s = static_cast<int>(r.i64());
        const int c = static_cast<int>(r.i64());
        specs.push_back(LayerSpec::conv(c, k, s));
        break;
      }
      case 1:
        specs.push_back(LayerSpec::dense(static_cast<int>(r.i64())));
        break;
      case 2:
        specs.push_back(LayerSpec::relu());
        break;
      case 3:
        specs.push_back(LayerSpec::global_avg_pool());
        break;
      case 4:
        specs.push_back(LayerSpec::flatten());
        break;
      default:
        throw std::runtime_error("model: unknown layer kind");
    }
  }
  Classifier model = make_classifier(in_h, in_w, in_c, specs);
  if (model.num_classes != classes)
    throw std::runtime_error("model: descriptor/classes mismatch");
  for (auto* t : model.param_tensors()) {
    auto block = r.f64_block();
    if (block.size() != t->size())
      throw std::runtime_error("model: parameter block size mismatch");
    t->data = std::move(block);
  }
  return model;
}

inline void save_model(const Classifier& model, const std::string& path) {
  ByteWriter w;
  write_model(w, model);
  w.save(path);
}

inline Classifier load_model(const std::string& path) {
  ByteReader r = ByteReader::load(path);
  return read_model(r);
}

}  // namespace fixmatch
