#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace fixmatch {

// Probabilities are clamped to this floor before any log; keeps masked or
// degenerate predictions from injecting infinities into a loss.
inline constexpr double kProbFloor = 1e-12;

/// Dense row-major tensor of 64-bit floats. The reference numeric carrier
/// for model inputs, distributions, parameters and gradients.
struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<double> data;

  Tensor() = default;

  explicit Tensor(std::vector<std::size_t> s) : shape(std::move(s)) {
    data.assign(element_count(shape), 0.0);
  }

  Tensor(std::vector<std::size_t> s, std::vector<double> d)
      : shape(std::move(s)), data(std::move(d)) {
    if (data.size() != element_count(shape))
      throw std::invalid_argument("Tensor: data length does not match shape");
  }

  /// 1-D literal values. A named factory so that brace arguments to the
  /// shape constructors can never be mistaken for data.
  static Tensor vec(std::vector<double> values) {
    Tensor t;
    t.shape = {values.size()};
    t.data = std::move(values);
    return t;
  }

  static std::size_t element_count(const std::vector<std::size_t>& s) {
    std::size_t n = 1;
    for (std::size_t d : s) n *= d;
    return n;
  }

  static Tensor zeros(std::vector<std::size_t> s) { return Tensor(std::move(s)); }

  static Tensor zeros_like(const Tensor& t) { return Tensor(t.shape); }

  std::size_t size() const { return data.size(); }
  std::size_t dim(std::size_t i) const { return shape.at(i); }
  std::size_t rank() const { return shape.size(); }

  double& operator[](std::size_t i) { return data[i]; }
  double operator[](std::size_t i) const { return data[i]; }

  double& at2(std::size_t i, std::size_t j) { return data[i * shape[1] + j]; }
  double at2(std::size_t i, std::size_t j) const { return data[i * shape[1] + j]; }

  std::span<double> row(std::size_t i) {
    const std::size_t w = size() / shape[0];
    return std::span<double>(data.data() + i * w, w);
  }
  std::span<const double> row(std::size_t i) const {
    const std::size_t w = size() / shape[0];
    return std::span<const double>(data.data() + i * w, w);
  }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  bool all_finite() const {
    for (double v : data)
      if (!std::isfinite(v)) return false;
    return true;
  }
};

inline void check_same_shape(const Tensor& a, const Tensor& b, const char* what) {
  if (!a.same_shape(b))
    throw std::invalid_argument(std::string(what) + ": shape mismatch");
}

// ---------------------------------------------------------------------------
// Probability primitives
// ---------------------------------------------------------------------------

/// Numerically stabilized softmax (max subtraction). Output sums to 1.
inline void softmax_into(std::span<const double> logits, std::span<double> out) {
  if (logits.empty()) throw std::invalid_argument("softmax: empty input");
  double mx = logits[0];
  for (double v : logits) {
    if (!std::isfinite(v)) throw std::invalid_argument("softmax: non-finite logit");
    mx = std::max(mx, v);
  }
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp(logits[i] - mx);
    sum += out[i];
  }
  for (std::size_t i = 0; i < logits.size(); ++i) out[i] /= sum;
}

inline Tensor softmax(const Tensor& logits) {
  Tensor out(logits.shape);
  softmax_into(std::span<const double>(logits.data), std::span<double>(out.data));
  return out;
}

/// H(p, q) = -sum_i p_i ln q_i, with q clamped to kProbFloor.
inline double cross_entropy(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size())
    throw std::invalid_argument("cross_entropy: shape mismatch");
  double h = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] != 0.0) h -= p[i] * std::log(std::max(q[i], kProbFloor));
  }
  return h;
}

inline double cross_entropy(const Tensor& p, const Tensor& q) {
  check_same_shape(p, q, "cross_entropy");
  return cross_entropy(std::span<const double>(p.data),
                       std::span<const double>(q.data));
}

/// Index of the maximum; ties broken by lowest index.
inline std::size_t argmax_index(std::span<const double> q) {
  if (q.empty()) throw std::invalid_argument("argmax: empty input");
  std::size_t best = 0;
  for (std::size_t i = 1; i < q.size(); ++i)
    if (q[i] > q[best]) best = i;
  return best;
}

/// One-hot distribution at the argmax.
inline Tensor argmax_onehot(const Tensor& q) {
  Tensor out(q.shape);
  out.data[argmax_index(std::span<const double>(q.data))] = 1.0;
  return out;
}

inline Tensor onehot(std::size_t index, std::size_t classes) {
  Tensor out({classes});
  out.data.at(index) = 1.0;
  return out;
}

}  // namespace fixmatch
