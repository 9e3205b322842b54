#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

#include "fixmatch/image.hpp"
#include "fixmatch/rng.hpp"

namespace fixmatch {

// ---------------------------------------------------------------------------
// Transform catalog. One unified parameterization covers both policy
// catalogs: ops that the smaller catalog lists without a parameter
// (Autocontrast, Equalize) are expressed as a blend with ratio 1.
// ---------------------------------------------------------------------------

enum class TransformKind : int {
  kAutocontrast = 0,  // blend ratio: 0 = original, 1 = full remap
  kBrightness,        // 0 = black, 1 = original
  kColor,             // 0 = grayscale, 1 = original
  kContrast,          // 0 = flat gray at mean luma, 1 = original
  kCutout,            // patch side fraction of width; needs an rng
  kEqualize,          // blend ratio
  kInvert,            // blend ratio; 1 = full inversion
  kIdentity,
  kPosterize,         // bits kept, rounded to nearest integer
  kRescale,           // center-crop fraction, then resample back up
  kRotate,            // degrees
  kSharpness,         // 0 = blurred, 1 = original
  kShearX,            // shear rate
  kShearY,
  kSmooth,            // 0 = box-blurred, 1 = original
  kSolarize,          // invert pixels with p/255 strictly above threshold
  kTranslateX,        // fraction of width
  kTranslateY,        // fraction of height
};

inline constexpr int kTransformKindCount = 18;

enum class RescaleMethod : int {
  kAntiAlias = 0,  // Lanczos-3 windowed sinc
  kBicubic,        // Keys cubic, a = -0.5
  kBilinear,
  kBox,            // exact area average
  kHamming,        // sinc in a Hamming window, support 1
  kNearest,
};

inline constexpr int kRescaleMethodCount = 6;

inline const char* transform_kind_name(TransformKind k) {
  static constexpr std::array<const char*, kTransformKindCount> names = {
      "autocontrast", "brightness", "color",      "contrast", "cutout",
      "equalize",     "invert",     "identity",   "posterize", "rescale",
      "rotate",       "sharpness",  "shear_x",    "shear_y",   "smooth",
      "solarize",     "translate_x", "translate_y"};
  return names[static_cast<int>(k)];
}

inline const char* rescale_method_name(RescaleMethod m) {
  static constexpr std::array<const char*, kRescaleMethodCount> names = {
      "anti-alias", "bicubic", "bilinear", "box", "hamming", "nearest"};
  return names[static_cast<int>(m)];
}

struct TransformSpec {
  TransformKind kind = TransformKind::kIdentity;
  double magnitude = 0.0;
  RescaleMethod method = RescaleMethod::kNearest;  // only for kRescale
};

struct TransformRange {
  TransformKind kind;
  bool has_magnitude;
  double lo;
  double hi;
};

/// Catalog used by the random-magnitude policy (14 ops).
inline const std::vector<TransformRange>& randaugment_catalog() {
  static const std::vector<TransformRange> c = {
      {TransformKind::kAutocontrast, false, 1.0, 1.0},
      {TransformKind::kBrightness, true, 0.05, 0.95},
      {TransformKind::kColor, true, 0.05, 0.95},
      {TransformKind::kContrast, true, 0.05, 0.95},
      {TransformKind::kEqualize, false, 1.0, 1.0},
      {TransformKind::kIdentity, false, 0.0, 0.0},
      {TransformKind::kPosterize, true, 4.0, 8.0},
      {TransformKind::kRotate, true, -30.0, 30.0},
      {TransformKind::kSharpness, true, 0.05, 0.95},
      {TransformKind::kShearX, true, -0.3, 0.3},
      {TransformKind::kShearY, true, -0.3, 0.3},
      {TransformKind::kSolarize, true, 0.0, 1.0},
      {TransformKind::kTranslateX, true, -0.3, 0.3},
      {TransformKind::kTranslateY, true, -0.3, 0.3},
  };
  return c;
}

/// Catalog used by the learned-bin policy (18 ops).
inline const std::vector<TransformRange>& cta_catalog() {
  static const std::vector<TransformRange> c = {
      {TransformKind::kAutocontrast, true, 0.0, 1.0},
      {TransformKind::kBrightness, true, 0.0, 1.0},
      {TransformKind::kColor, true, 0.0, 1.0},
      {TransformKind::kContrast, true, 0.0, 1.0},
      {TransformKind::kCutout, true, 0.0, 0.5},
      {TransformKind::kEqualize, true, 0.0, 1.0},
      {TransformKind::kInvert, true, 0.0, 1.0},
      {TransformKind::kIdentity, false, 0.0, 0.0},
      {TransformKind::kPosterize, true, 1.0, 8.0},
      {TransformKind::kRescale, true, 0.5, 1.0},
      {TransformKind::kRotate, true, -45.0, 45.0},
      {TransformKind::kSharpness, true, 0.0, 1.0},
      {TransformKind::kShearX, true, -0.3, 0.3},
      {TransformKind::kShearY, true, -0.3, 0.3},
      {TransformKind::kSmooth, true, 0.0, 1.0},
      {TransformKind::kSolarize, true, 0.0, 1.0},
      {TransformKind::kTranslateX, true, -0.3, 0.3},
      {TransformKind::kTranslateY, true, -0.3, 0.3},
  };
  return c;
}

/// Widest admissible magnitude interval per kind (union over both catalogs);
/// apply_transform validates against this.
inline TransformRange admissible_range(TransformKind k) {
  for (const auto& r : cta_catalog())
    if (r.kind == k) return r;
  throw std::logic_error("admissible_range: unknown kind");
}

namespace detail {

inline std::uint8_t clamp_u8(double v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 255.0)));
}

/// out = ratio * effect + (1 - ratio) * original, per pixel.
/// ratio 0 and 1 reproduce the respective source bit-exactly.
inline ImageU8 blend(const ImageU8& original, const ImageU8& effect, double ratio) {
  ImageU8 out(original.height, original.width, original.channels);
  for (std::size_t i = 0; i < out.size(); ++i)
    out.pixels[i] = clamp_u8(ratio * effect.pixels[i] +
                             (1.0 - ratio) * original.pixels[i]);
  return out;
}

inline double luma(const ImageU8& img, int y, int x) {
  if (img.channels == 1) return img.at(y, x, 0);
  return 0.299 * img.at(y, x, 0) + 0.587 * img.at(y, x, 1) +
         0.114 * img.at(y, x, 2);
}

inline ImageU8 full_invert(const ImageU8& img) {
  ImageU8 out = img;
  for (auto& p : out.pixels) p = static_cast<std::uint8_t>(255 - p);
  return out;
}

inline ImageU8 full_autocontrast(const ImageU8& img) {
  ImageU8 out = img;
  for (int c = 0; c < img.channels; ++c) {
    std::uint8_t lo = 255, hi = 0;
    for (int y = 0; y < img.height; ++y)
      for (int x = 0; x < img.width; ++x) {
        lo = std::min(lo, img.at(y, x, c));
        hi = std::max(hi, img.at(y, x, c));
      }
    if (lo >= hi) continue;  // constant channel: leave untouched
    const double scale = 255.0 / (hi - lo);
    for (int y = 0; y < img.height; ++y)
      for (int x = 0; x < img.width; ++x)
        out.at(y, x, c) = clamp_u8((img.at(y, x, c) - lo) * scale);
  }
  return out;
}

/// Classic histogram equalization: cumulative-count LUT per channel with a
/// half-step offset; constant channels map to themselves.
inline ImageU8 full_equalize(const ImageU8& img) {
  ImageU8 out = img;
  for (int c = 0; c < img.channels; ++c) {
    std::array<std::int64_t, 256> h{};
    for (int y = 0; y < img.height; ++y)
      for (int x = 0; x < img.width; ++x) h[img.at(y, x, c)]++;

    std::int64_t nonzero = 0, total = 0, last = 0;
    for (int v = 0; v < 256; ++v)
      if (h[v]) {
        nonzero++;
        total += h[v];
        last = h[v];
      }
    if (nonzero <= 1) continue;
    const std::int64_t step = (total - last) / 255;
    if (step == 0) continue;

    std::array<std::uint8_t, 256> lut{};
    std::int64_t n = step / 2;
    for (int v = 0; v < 256; ++v) {
      lut[v] = static_cast<std::uint8_t>(std::clamp<std::int64_t>(n / step, 0, 255));
      n += h[v];
    }
    for (int y = 0; y < img.height; ++y)
      for (int x = 0; x < img.width; ++x)
        out.at(y, x, c) = lut[img.at(y, x, c)];
  }
  return out;
}

inline ImageU8 full_grayscale(const ImageU8& img) {
  ImageU8 out(img.height, img.width, img.channels);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) {
      const std::uint8_t g =
          static_cast<std::uint8_t>(std::lround(luma(img, y, x)));
      for (int c = 0; c < img.channels; ++c) out.at(y, x, c) = g;
    }
  return out;
}

inline ImageU8 flat_gray_at_mean(const ImageU8& img) {
  double sum = 0.0;
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) sum += luma(img, y, x);
  const std::uint8_t g = clamp_u8(sum / (static_cast<double>(img.height) * img.width));
  return ImageU8(img.height, img.width, img.channels, g);
}

/// 3x3 convolution with replicated borders; kernel given row-major, with
/// divisor. Result kept as doubles for a later single rounding in blend.
inline std::vector<double> conv3x3(const ImageU8& img,
                                   const std::array<double, 9>& k,
                                   double divisor) {
  std::vector<double> out(img.size());
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < img.channels; ++c) {
        double acc = 0.0;
        for (int dy = -1; dy <= 1; ++dy)
          for (int dx = -1; dx <= 1; ++dx) {
            const int yy = std::clamp(y + dy, 0, img.height - 1);
            const int xx = std::clamp(x + dx, 0, img.width - 1);
            acc += k[(dy + 1) * 3 + (dx + 1)] * img.at(yy, xx, c);
          }
        out[(static_cast<std::size_t>(y) * img.width + x) * img.channels + c] =
            acc / divisor;
      }
  return out;
}

inline ImageU8 blend_with_plane(const ImageU8& original,
                                const std::vector<double>& effect,
                                double ratio) {
  ImageU8 out(original.height, original.width, original.channels);
  for (std::size_t i = 0; i < out.size(); ++i)
    out.pixels[i] =
        clamp_u8(ratio * original.pixels[i] + (1.0 - ratio) * effect[i]);
  return out;
}

/// Inverse-mapped affine with nearest-neighbor sampling and gray fill:
/// source position for output (x, y) is (a*x + b*y + tx, c*x + d*y + ty),
/// all relative to the image center.
inline ImageU8 affine_nearest(const ImageU8& img, double a, double b, double c,
                              double d, double tx, double ty) {
  ImageU8 out(img.height, img.width, img.channels, kGrayFill);
  const double cx = (img.width - 1) / 2.0;
  const double cy = (img.height - 1) / 2.0;
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) {
      const double rx = x - cx, ry = y - cy;
      const double sx = a * rx + b * ry + tx + cx;
      const double sy = c * rx + d * ry + ty + cy;
      const int ix = static_cast<int>(std::lround(sx));
      const int iy = static_cast<int>(std::lround(sy));
      if (ix < 0 || ix >= img.width || iy < 0 || iy >= img.height) continue;
      for (int ch = 0; ch < img.channels; ++ch)
        out.at(y, x, ch) = img.at(iy, ix, ch);
    }
  return out;
}

// --- resampling kernels ---

inline double kernel_triangle(double x) {
  x = std::abs(x);
  return x < 1.0 ? 1.0 - x : 0.0;
}

inline double kernel_keys(double x) {  // Keys cubic, a = -0.5
  x = std::abs(x);
  if (x < 1.0) return (1.5 * x - 2.5) * x * x + 1.0;
  if (x < 2.0) return ((-0.5 * x + 2.5) * x - 4.0) * x + 2.0;
  return 0.0;
}

inline double kernel_hamming(double x) {
  x = std::abs(x);
  if (x == 0.0) return 1.0;
  if (x >= 1.0) return 0.0;
  const double px = std::numbers::pi * x;
  return std::sin(px) / px * (0.54 + 0.46 * std::cos(px));
}

inline double kernel_lanczos3(double x) {
  x = std::abs(x);
  if (x == 0.0) return 1.0;
  if (x >= 3.0) return 0.0;
  const double px = std::numbers::pi * x;
  return 3.0 * std::sin(px) * std::sin(px / 3.0) / (px * px);
}

/// One axis of a separable resample from n_src samples (stride src_stride)
/// to n_dst. scale = n_src / n_dst <= 1 here (we only scale up).
template <typename Kernel>
inline void resample_axis(const double* src, double* dst, int n_src, int n_dst,
                          int src_stride, int dst_stride, double support,
                          Kernel kernel) {
  const double scale = static_cast<double>(n_src) / n_dst;
  for (int i = 0; i < n_dst; ++i) {
    const double center = (i + 0.5) * scale - 0.5;
    const int lo = static_cast<int>(std::floor(center - support));
    const int hi = static_cast<int>(std::ceil(center + support));
    double acc = 0.0, wsum = 0.0;
    for (int j = lo; j <= hi; ++j) {
      const double w = kernel(j - center);
      if (w == 0.0) continue;
      const int jj = std::clamp(j, 0, n_src - 1);
      acc += w * src[jj * src_stride];
      wsum += w;
    }
    dst[i * dst_stride] = wsum != 0.0 ? acc / wsum : src[std::clamp(static_cast<int>(std::lround(center)), 0, n_src - 1) * src_stride];
  }
}

/// Box (area-average) axis resample; exact for integer scale ratios.
inline void resample_axis_box(const double* src, double* dst, int n_src,
                              int n_dst, int src_stride, int dst_stride) {
  const double scale = static_cast<double>(n_src) / n_dst;
  for (int i = 0; i < n_dst; ++i) {
    const double x0 = i * scale, x1 = (i + 1) * scale;
    double acc = 0.0;
    const int j0 = static_cast<int>(std::floor(x0));
    const int j1 = std::min(n_src - 1, static_cast<int>(std::ceil(x1)) - 1);
    for (int j = j0; j <= j1; ++j) {
      const double overlap = std::min<double>(j + 1, x1) - std::max<double>(j, x0);
      if (overlap > 0.0) acc += overlap * src[j * src_stride];
    }
    dst[i * dst_stride] = acc / (x1 - x0);
  }
}

inline void resample_axis_nearest(const double* src, double* dst, int n_src,
                                  int n_dst, int src_stride, int dst_stride) {
  const double scale = static_cast<double>(n_src) / n_dst;
  for (int i = 0; i < n_dst; ++i) {
    const int j = std::clamp(static_cast<int>(std::floor((i + 0.5) * scale)), 0,
                             n_src - 1);
    dst[i * dst_stride] = src[j * src_stride];
  }
}

inline void resample_axis_any(RescaleMethod m, const double* src, double* dst,
                              int n_src, int n_dst, int ss, int ds) {
  switch (m) {
    case RescaleMethod::kNearest:
      resample_axis_nearest(src, dst, n_src, n_dst, ss, ds);
      break;
    case RescaleMethod::kBox:
      resample_axis_box(src, dst, n_src, n_dst, ss, ds);
      break;
    case RescaleMethod::kBilinear:
      resample_axis(src, dst, n_src, n_dst, ss, ds, 1.0, kernel_triangle);
      break;
    case RescaleMethod::kBicubic:
      resample_axis(src, dst, n_src, n_dst, ss, ds, 2.0, kernel_keys);
      break;
    case RescaleMethod::kHamming:
      resample_axis(src, dst, n_src, n_dst, ss, ds, 1.0, kernel_hamming);
      break;
    case RescaleMethod::kAntiAlias:
      resample_axis(src, dst, n_src, n_dst, ss, ds, 3.0, kernel_lanczos3);
      break;
  }
}

/// Center crop of fraction L per axis, resampled back to the original size.
inline ImageU8 rescale(const ImageU8& img, double frac, RescaleMethod m) {
  const int crop_w = std::max(1, static_cast<int>(std::lround(frac * img.width)));
  const int crop_h = std::max(1, static_cast<int>(std::lround(frac * img.height)));
  const int x0 = (img.width - crop_w) / 2;
  const int y0 = (img.height - crop_h) / 2;

  // horizontal pass: crop_h x crop_w -> crop_h x width
  std::vector<double> mid(static_cast<std::size_t>(crop_h) * img.width * img.channels);
  std::vector<double> row(static_cast<std::size_t>(crop_w));
  for (int y = 0; y < crop_h; ++y)
    for (int c = 0; c < img.channels; ++c) {
      for (int x = 0; x < crop_w; ++x) row[x] = img.at(y0 + y, x0 + x, c);
      resample_axis_any(m, row.data(),
                        mid.data() + (static_cast<std::size_t>(y) * img.width) * img.channels + c,
                        crop_w, img.width, 1, img.channels);
    }

  // vertical pass: crop_h x width -> height x width
  ImageU8 out(img.height, img.width, img.channels);
  std::vector<double> col(static_cast<std::size_t>(crop_h));
  std::vector<double> col_out(static_cast<std::size_t>(img.height));
  for (int x = 0; x < img.width; ++x)
    for (int c = 0; c < img.channels; ++c) {
      for (int y = 0; y < crop_h; ++y)
        col[y] = mid[(static_cast<std::size_t>(y) * img.width + x) * img.channels + c];
      resample_axis_any(m, col.data(), col_out.data(), crop_h, img.height, 1, 1);
      for (int y = 0; y < img.height; ++y)
        out.at(y, x, c) = clamp_u8(col_out[y]);
    }
  return out;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Public operations
// ---------------------------------------------------------------------------

inline ImageU8 flip_horizontal(const ImageU8& img) {
  ImageU8 out(img.height, img.width, img.channels);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < img.channels; ++c)
        out.at(y, x, c) = img.at(y, img.width - 1 - x, c);
  return out;
}

/// One square gray patch of side floor(frac * width), center uniform over
/// the image, clipped at the borders.
inline ImageU8 cutout(const ImageU8& img, double frac, RngStream& rng) {
  if (frac < 0.0 || frac > 0.5)
    throw std::invalid_argument("cutout: fraction outside [0, 0.5]");
  const int side = static_cast<int>(frac * img.width);
  const int cx = static_cast<int>(rng.next_below(static_cast<std::uint64_t>(img.width)));
  const int cy = static_cast<int>(rng.next_below(static_cast<std::uint64_t>(img.height)));
  ImageU8 out = img;
  if (side == 0) return out;
  const int x0 = std::max(0, cx - side / 2), x1 = std::min(img.width, cx - side / 2 + side);
  const int y0 = std::max(0, cy - side / 2), y1 = std::min(img.height, cy - side / 2 + side);
  for (int y = y0; y < y1; ++y)
    for (int x = x0; x < x1; ++x)
      for (int c = 0; c < img.channels; ++c) out.at(y, x, c) = kGrayFill;
  return out;
}

/// Applies one catalog transform. Pure in (img, spec) except Cutout, whose
/// patch position comes from the stream (required for that kind only).
inline ImageU8 apply_transform(const ImageU8& img, const TransformSpec& t,
                               RngStream* rng = nullptr) {
  const TransformRange range = admissible_range(t.kind);
  if (range.has_magnitude &&
      (t.magnitude < range.lo || t.magnitude > range.hi ||
       !std::isfinite(t.magnitude)))
    throw std::invalid_argument(
        std::string("apply_transform: magnitude out of range for ") +
        transform_kind_name(t.kind));

  const double m = t.magnitude;
  switch (t.kind) {
    case TransformKind::kIdentity:
      return img;
    case TransformKind::kAutocontrast:
      return detail::blend(img, detail::full_autocontrast(img), m);
    case TransformKind::kBrightness: {
      ImageU8 out = img;
      for (auto& p : out.pixels) p = detail::clamp_u8(m * p);
      return out;
    }
    case TransformKind::kColor:
      return detail::blend(detail::full_grayscale(img), img, m);
    case TransformKind::kContrast:
      return detail::blend(detail::flat_gray_at_mean(img), img, m);
    case TransformKind::kCutout: {
      if (!rng)
        throw std::invalid_argument("apply_transform: cutout needs an rng stream");
      return cutout(img, m, *rng);
    }
    case TransformKind::kEqualize:
      return detail::blend(img, detail::full_equalize(img), m);
    case TransformKind::kInvert:
      return detail::blend(img, detail::full_invert(img), m);
    case TransformKind::kPosterize: {
      const int bits = std::clamp(static_cast<int>(std::lround(m)), 1, 8);
      const std::uint8_t mask = static_cast<std::uint8_t>(0xFF << (8 - bits));
      ImageU8 out = img;
      for (auto& p : out.pixels) p = static_cast<std::uint8_t>(p & mask);
      return out;
    }
    case TransformKind::kRescale:
      return detail::rescale(img, m, t.method);
    case TransformKind::kRotate: {
      const double rad = m * std::numbers::pi / 180.0;
      const double c = std::cos(rad), s = std::sin(rad);
      // inverse rotation about the center
      return detail::affine_nearest(img, c, s, -s, c, 0.0, 0.0);
    }
    case TransformKind::kSharpness: {
      static constexpr std::array<double, 9> k = {1, 1, 1, 1, 5, 1, 1, 1, 1};
      return detail::blend_with_plane(img, detail::conv3x3(img, k, 13.0), m);
    }
    case TransformKind::kShearX:
      return detail::affine_nearest(img, 1.0, m, 0.0, 1.0, 0.0, 0.0);
    case TransformKind::kShearY:
      return detail::affine_nearest(img, 1.0, 0.0, m, 1.0, 0.0, 0.0);
    case TransformKind::kSmooth: {
      static constexpr std::array<double, 9> k = {1, 1, 1, 1, 1, 1, 1, 1, 1};
      return detail::blend_with_plane(img, detail::conv3x3(img, k, 9.0), m);
    }
    case TransformKind::kSolarize: {
      ImageU8 out = img;
      for (auto& p : out.pixels)
        if (p / 255.0 > m) p = static_cast<std::uint8_t>(255 - p);
      return out;
    }
    case TransformKind::kTranslateX: {
      const double shift = std::lround(m * img.width);
      return detail::affine_nearest(img, 1.0, 0.0, 0.0, 1.0, -shift, 0.0);
    }
    case TransformKind::kTranslateY: {
      const double shift = std::lround(m * img.height);
      return detail::affine_nearest(img, 1.0, 0.0, 0.0, 1.0, 0.0, -shift);
    }
  }
  throw std::logic_error("apply_transform: unhandled kind");
}

inline TransformKind transform_kind_from_name(const std::string& name) {
  for (int i = 0; i < kTransformKindCount; ++i)
    if (name == transform_kind_name(static_cast<TransformKind>(i)))
      return static_cast<TransformKind>(i);
  throw std::invalid_argument("unknown transform kind: " + name);
}

inline RescaleMethod rescale_method_from_name(const std::string& name) {
  for (int i = 0; i < kRescaleMethodCount; ++i)
    if (name == rescale_method_name(static_cast<RescaleMethod>(i)))
      return static_cast<RescaleMethod>(i);
  throw std::invalid_argument("unknown rescale method: " + name);
}

}  // namespace fixmatch
