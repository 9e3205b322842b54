#pragma once

#include <cstdint>

#include "fixmatch/image.hpp"
#include "fixmatch/rng.hpp"

namespace fixmatch::testutil {

inline ImageU8 random_image(RngStream& rng, int h, int w, int c) {
  ImageU8 img(h, w, c);
  for (auto& p : img.pixels)
    p = static_cast<std::uint8_t>(rng.next_below(256));
  return img;
}

/// Pearson chi-square statistic against uniform expected counts.
inline double chi_square_uniform(const std::vector<long>& counts, long total) {
  const double expected = static_cast<double>(total) / counts.size();
  double stat = 0.0;
  for (long c : counts) {
    const double d = c - expected;
    stat += d * d / expected;
  }
  return stat;
}

}  // namespace fixmatch::testutil
