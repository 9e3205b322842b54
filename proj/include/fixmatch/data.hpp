#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "fixmatch/image.hpp"
#include "fixmatch/rng.hpp"
#include "fixmatch/tensor.hpp"

namespace fixmatch {

struct Dataset {
  std::string name;
  int num_classes = 0;
  bool flip_ok = true;  // digit-like datasets set false; weak aug honors it
  std::vector<ImageU8> images;
  std::vector<int> labels;

  std::size_t size() const { return images.size(); }

  void validate() const {
    if (images.size() != labels.size())
      throw std::runtime_error("Dataset: image/label count mismatch");
    for (int l : labels)
      if (l < 0 || l >= num_classes)
        throw std::runtime_error("Dataset: label out of range");
  }
};

/// Pixels mapped to [-1, 1]; the model's input encoding.
inline std::vector<double> image_to_input(const ImageU8& img) {
  std::vector<double> out(img.size());
  for (std::size_t i = 0; i < img.size(); ++i)
    out[i] = img.pixels[i] / 127.5 - 1.0;
  return out;
}

inline Tensor images_to_batch(const std::vector<ImageU8>& images) {
  if (images.empty()) throw std::invalid_argument("images_to_batch: empty");
  const std::size_t per = images[0].size();
  Tensor batch({images.size(), per});
  for (std::size_t i = 0; i < images.size(); ++i) {
    if (images[i].size() != per)
      throw std::invalid_argument("images_to_batch: ragged image sizes");
    for (std::size_t j = 0; j < per; ++j)
      batch[i * per + j] = images[i].pixels[j] / 127.5 - 1.0;
  }
  return batch;
}

// ---------------------------------------------------------------------------
// IDX container (big-endian dims, magic 0x803 for images / 0x801 for labels)
// ---------------------------------------------------------------------------

namespace detail {

inline std::uint32_t read_be32(std::istream& f, const std::string& what) {
  std::uint8_t b[4];
  f.read(reinterpret_cast<char*>(b), 4);
  if (f.gcount() != 4) throw std::runtime_error("idx: truncated " + what);
  return (static_cast<std::uint32_t>(b[0]) << 24) |
         (static_cast<std::uint32_t>(b[1]) << 16) |
         (static_cast<std::uint32_t>(b[2]) << 8) | b[3];
}

inline void write_be32(std::ostream& f, std::uint32_t v) {
  const std::uint8_t b[4] = {static_cast<std::uint8_t>(v >> 24),
                             static_cast<std::uint8_t>(v >> 16),
                             static_cast<std::uint8_t>(v >> 8),
                             static_cast<std::uint8_t>(v)};
  f.write(reinterpret_cast<const char*>(b), 4);
}

}  // namespace detail

inline constexpr std::uint32_t kIdxImagesMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;

/// Loads an IDX image/label pair; pixel bytes preserved exactly.
/// num_classes is derived as max(label) + 1 unless overridden by sidecar
/// metadata (see read_dataset_metadata).
inline Dataset load_idx(const std::string& images_path,
                        const std::string& labels_path) {
  std::ifstream fi(images_path, std::ios::binary);
  if (!fi) throw std::runtime_error("idx: cannot open " + images_path);
  if (detail::read_be32(fi, "image magic") != kIdxImagesMagic)
    throw std::runtime_error("idx: bad image magic in " + images_path);
  const std::uint32_t count = detail::read_be32(fi, "image count");
  const std::uint32_t rows = detail::read_be32(fi, "rows");
  const std::uint32_t cols = detail::read_be32(fi, "cols");

  std::ifstream fl(labels_path, std::ios::binary);
  if (!fl) throw std::runtime_error("idx: cannot open " + labels_path);
  if (detail::read_be32(fl, "label magic") != kIdxLabelsMagic)
    throw std::runtime_error("idx: bad label magic in " + labels_path);
  const std::uint32_t label_count = detail::read_be32(fl, "label count");
  if (label_count != count)
    throw std::runtime_error("idx: image/label count mismatch (" +
                             std::to_string(count) + " vs " +
                             std::to_string(label_count) + ")");

  Dataset ds;
  ds.name = images_path;
  ds.images.reserve(count);
  ds.labels.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    ImageU8 img(static_cast<int>(rows), static_cast<int>(cols), 1);
    fi.read(reinterpret_cast<char*>(img.pixels.data()),
            static_cast<std::streamsize>(img.size()));
    if (fi.gcount() != static_cast<std::streamsize>(img.size()))
      throw std::runtime_error("idx: truncated image data in " + images_path);
    ds.images.push_back(std::move(img));

    char label;
    fl.read(&label, 1);
    if (fl.gcount() != 1)
      throw std::runtime_error("idx: truncated label data in " + labels_path);
    ds.labels.push_back(static_cast<std::uint8_t>(label));
  }
  int max_label = 0;
  for (int l : ds.labels) max_label = std::max(max_label, l);
  ds.num_classes = max_label + 1;
  return ds;
}

inline void save_idx(const Dataset& ds, const std::string& images_path,
                     const std::string& labels_path) {
  if (ds.images.empty()) throw std::invalid_argument("save_idx: empty dataset");
  std::ofstream fi(images_path, std::ios::binary);
  if (!fi) throw std::runtime_error("idx: cannot open " + images_path);
  detail::write_be32(fi, kIdxImagesMagic);
  detail::write_be32(fi, static_cast<std::uint32_t>(ds.images.size()));
  detail::write_be32(fi, static_cast<std::uint32_t>(ds.images[0].height));
  detail::write_be32(fi, static_cast<std::uint32_t>(ds.images[0].width));
  for (const auto& img : ds.images)
    fi.write(reinterpret_cast<const char*>(img.pixels.data()),
             static_cast<std::streamsize>(img.size()));

  std::ofstream fl(labels_path, std::ios::binary);
  if (!fl) throw std::runtime_error("idx: cannot open " + labels_path);
  detail::write_be32(fl, kIdxLabelsMagic);
  detail::write_be32(fl, static_cast<std::uint32_t>(ds.labels.size()));
  for (int l : ds.labels) {
    const char b = static_cast<char>(l);
    fl.write(&b, 1);
  }
}

/// Sidecar metadata: line-oriented key=value (name, classes, flip).
inline void read_dataset_metadata(Dataset& ds, const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("metadata: cannot open " + path);
  std::string line;
  while (std::getline(f, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    auto trim = [](std::string s) {
      const auto a = s.find_first_not_of(" \t\r");
      const auto b = s.find_last_not_of(" \t\r");
      return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
    };
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key == "name") ds.name = value;
    else if (key == "classes") ds.num_classes = std::stoi(value);
    else if (key == "flip") ds.flip_ok = (value == "true" || value == "1");
  }
}

inline void write_dataset_metadata(const Dataset& ds, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("metadata: cannot open " + path);
  f << "name = " << ds.name << "\n"
    << "classes = " << ds.num_classes << "\n"
    << "flip = " << (ds.flip_ok ? "true" : "false") << "\n";
}

// ---------------------------------------------------------------------------
// Synthetic glyphs: ten mirror-symmetric shapes rendered with jitter, scale,
// rotation, brightness and pixel noise. Every class survives flip-and-shift
// augmentation by construction, which is what makes the dataset usable as an
// offline stand-in for the real benchmarks.
// ---------------------------------------------------------------------------

namespace detail {

inline double edge_sd(double u, double v, double px, double py, double qx,
                      double qy) {
  // signed distance to the edge line (P -> Q), positive on the left
  const double ex = qx - px, ey = qy - py;
  const double len = std::sqrt(ex * ex + ey * ey);
  return (ex * (v - py) - ey * (u - px)) / len;
}

/// Positive-inside shape measure in canonical [-1, 1] coordinates.
inline double glyph_inside(int glyph, double u, double v) {
  const double r = std::sqrt(u * u + v * v);
  switch (glyph) {
    case 0:  // disk
      return 0.55 - r;
    case 1:  // ring
      return 0.14 - std::abs(r - 0.48);
    case 2:  // horizontal bar
      return std::min(0.24 - std::abs(v), 0.80 - std::abs(u));
    case 3:  // vertical bar
      return std::min(0.24 - std::abs(u), 0.80 - std::abs(v));
    case 4:  // plus
      return std::max(std::min(0.17 - std::abs(v), 0.72 - std::abs(u)),
                      std::min(0.17 - std::abs(u), 0.72 - std::abs(v)));
    case 5: {  // diagonal cross
      const double s = std::numbers::sqrt2 / 2.0;
      const double u2 = (u + v) * s, v2 = (u - v) * s;
      return std::max(std::min(0.17 - std::abs(v2), 0.80 - std::abs(u2)),
                      std::min(0.17 - std::abs(u2), 0.80 - std::abs(v2)));
    }
    case 6: {  // triangle, apex at top (y grows downward)
      const double ax = 0.0, ay = -0.68;
      const double bx = -0.70, by = 0.52;
      const double cx = 0.70, cy = 0.52;
      // vertex order chosen so the interior is on the positive side
      return std::min({edge_sd(u, v, ax, ay, cx, cy),
                       edge_sd(u, v, cx, cy, bx, by),
                       edge_sd(u, v, bx, by, ax, ay)});
    }
    case 7:  // triangle, apex at bottom
      return glyph_inside(6, u, -v);
    case 8: {  // square outline
      const double m = std::max(std::abs(u), std::abs(v));
      return std::min(0.64 - m, m - 0.36);
    }
    case 9:  // diamond
      return 0.66 - (std::abs(u) + std::abs(v));
    default:
      throw std::invalid_argument("glyph_inside: undefined glyph");
  }
}

inline ImageU8 render_glyph(int glyph, int size, RngStream& rng) {
  const double rot = rng.next_range(-15.0, 15.0) * std::numbers::pi / 180.0;
  const double scale = rng.next_range(0.62, 0.95);
  const double jx = rng.next_range(-0.1, 0.1) * size;
  const double jy = rng.next_range(-0.1, 0.1) * size;
  const double brightness = rng.next_range(0.55, 1.0);
  const double noise_sigma = rng.next_range(4.0, 14.0);

  const double half = (size - 1) / 2.0;
  const double cosr = std::cos(rot), sinr = std::sin(rot);
  const double edge = 1.2 * (2.0 / size) / scale;  // about one pixel of ramp

  ImageU8 img(size, size, 1);
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      const double u0 = (x - half - jx) / (half * scale);
      const double v0 = (y - half - jy) / (half * scale);
      const double u = cosr * u0 + sinr * v0;
      const double v = -sinr * u0 + cosr * v0;
      const double ink =
          std::clamp(glyph_inside(glyph, u, v) / edge + 0.5, 0.0, 1.0);
      const double value =
          255.0 * brightness * ink + noise_sigma * rng.next_normal();
      img.at(y, x, 0) = static_cast<std::uint8_t>(
          std::lround(std::clamp(value, 0.0, 255.0)));
    }
  return img;
}

}  // namespace detail

inline constexpr int kGlyphShapeCount = 10;

/// Balanced synthetic dataset: n_per_class examples of each of L glyph
/// classes at the given square size. Fully determined by the seed.
inline Dataset synth_glyphs(int n_per_class, int num_classes, int size,
                            std::uint64_t seed) {
  if (num_classes < 1 || num_classes > kGlyphShapeCount)
    throw std::invalid_argument("synth_glyphs: classes outside [1, " +
                                std::to_string(kGlyphShapeCount) + "]");
  if (n_per_class < 1 || size < 8)
    throw std::invalid_argument("synth_glyphs: degenerate request");
  Dataset ds;
  ds.name = "synth_glyphs";
  ds.num_classes = num_classes;
  ds.flip_ok = true;  // all glyphs are mirror-symmetric
  for (int i = 0; i < n_per_class; ++i)
    for (int cls = 0; cls < num_classes; ++cls) {
      RngStream rng(seed, {StreamPurpose::kGlyphs, static_cast<std::uint64_t>(cls),
                           static_cast<std::uint64_t>(i)});
      ds.images.push_back(detail::render_glyph(cls, size, rng));
      ds.labels.push_back(cls);
    }
  return ds;
}

// ---------------------------------------------------------------------------
// Labeled-fold construction
// ---------------------------------------------------------------------------

struct SplitSpec {
  int labels_per_class = 4;
  std::uint64_t fold_seed = 1;
  bool include_labeled_in_unlabeled = true;
};

struct Split {
  Dataset labeled;
  Dataset unlabeled;  // labels retained as hidden ground truth (metrics only)
};

/// Draws exactly labels_per_class per class by seeded permutation. The
/// unlabeled side holds the remaining examples, plus copies of the labeled
/// ones when the footnote-style flag is set.
inline Split make_split(const Dataset& ds, const SplitSpec& spec) {
  ds.validate();
  if (spec.labels_per_class < 1)
    throw std::invalid_argument("make_split: labels_per_class must be >= 1");

  std::vector<std::vector<std::size_t>> by_class(ds.num_classes);
  for (std::size_t i = 0; i < ds.size(); ++i)
    by_class[static_cast<std::size_t>(ds.labels[i])].push_back(i);

  Split out;
  out.labeled.name = ds.name + "/labeled";
  out.unlabeled.name = ds.name + "/unlabeled";
  out.labeled.num_classes = out.unlabeled.num_classes = ds.num_classes;
  out.labeled.flip_ok = out.unlabeled.flip_ok = ds.flip_ok;

  std::vector<bool> is_labeled(ds.size(), false);
  for (int cls = 0; cls < ds.num_classes; ++cls) {
    auto& pool = by_class[static_cast<std::size_t>(cls)];
    if (pool.size() < static_cast<std::size_t>(spec.labels_per_class))
      throw std::invalid_argument("make_split: class " + std::to_string(cls) +
                                  " has only " + std::to_string(pool.size()) +
                                  " examples");
    RngStream rng(spec.fold_seed,
                  {StreamPurpose::kSplit, 0, static_cast<std::uint64_t>(cls)});
    const auto perm = rng.permutation(pool.size());
    for (int j = 0; j < spec.labels_per_class; ++j) {
      const std::size_t idx = pool[perm[static_cast<std::size_t>(j)]];
      is_labeled[idx] = true;
      out.labeled.images.push_back(ds.images[idx]);
      out.labeled.labels.push_back(ds.labels[idx]);
    }
  }
  for (std::size_t i = 0; i < ds.size(); ++i)
    if (!is_labeled[i]) {
      out.unlabeled.images.push_back(ds.images[i]);
      out.unlabeled.labels.push_back(ds.labels[i]);
    }
  if (spec.include_labeled_in_unlabeled)
    for (std::size_t i = 0; i < out.labeled.size(); ++i) {
      out.unlabeled.images.push_back(out.labeled.images[i]);
      out.unlabeled.labels.push_back(out.labeled.labels[i]);
    }
  return out;
}

// ---------------------------------------------------------------------------
// Batch sampler: labeled pool cycles with a fresh permutation per pass;
// unlabeled pool is sampled without replacement within each epoch. Only the
// (epoch, position) counters are state; permutations re-derive from the seed.
// ---------------------------------------------------------------------------

struct BatchSampler {
  std::uint64_t root_seed = 0;
  std::size_t labeled_size = 0;
  std::size_t unlabeled_size = 0;

  std::uint64_t labeled_epoch = 0;
  std::size_t labeled_pos = 0;
  std::uint64_t unlabeled_epoch = 0;
  std::size_t unlabeled_pos = 0;

  static BatchSampler make(std::uint64_t root_seed, std::size_t labeled,
                           std::size_t unlabeled) {
    BatchSampler s;
    s.root_seed = root_seed;
    s.labeled_size = labeled;
    s.unlabeled_size = unlabeled;
    return s;
  }

  std::vector<std::size_t> next_labeled(std::size_t count) {
    return draw(count, labeled_size, StreamPurpose::kSamplerLabeled,
                labeled_epoch, labeled_pos);
  }

  std::vector<std::size_t> next_unlabeled(std::size_t count) {
    return draw(count, unlabeled_size, StreamPurpose::kSamplerUnlabeled,
                unlabeled_epoch, unlabeled_pos);
  }

 private:
  std::vector<std::size_t> draw(std::size_t count, std::size_t pool,
                                StreamPurpose purpose, std::uint64_t& epoch,
                                std::size_t& pos) {
    if (pool == 0) throw std::invalid_argument("sampler: empty pool");
    std::vector<std::size_t> out;
    out.reserve(count);
    RngStream rng(root_seed, {purpose, epoch, 0});
    std::vector<std::size_t> perm = rng.permutation(pool);
    while (out.size() < count) {
      if (pos == pool) {
        epoch++;
        pos = 0;
        RngStream next_rng(root_seed, {purpose, epoch, 0});
        perm = next_rng.permutation(pool);
      }
      out.push_back(perm[pos++]);
    }
    return out;
  }
};

}  // namespace fixmatch
