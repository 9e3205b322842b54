#pragma once

#include <cstdint>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace fixmatch {

/// Gray level used for Cutout patches and for pixels exposed by geometric
/// transforms (rotate/shear/translate fill).
inline constexpr std::uint8_t kGrayFill = 127;

/// 8-bit image, row-major, interleaved channels (1 = grayscale, 3 = RGB).
struct ImageU8 {
  int height = 0;
  int width = 0;
  int channels = 0;
  std::vector<std::uint8_t> pixels;

  ImageU8() = default;
  ImageU8(int h, int w, int c, std::uint8_t fill = 0)
      : height(h), width(w), channels(c),
        pixels(static_cast<std::size_t>(h) * w * c, fill) {
    if (h < 1 || w < 1 || (c != 1 && c != 3))
      throw std::invalid_argument("ImageU8: bad dimensions");
  }

  std::uint8_t& at(int y, int x, int c) {
    return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
  std::uint8_t at(int y, int x, int c) const {
    return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }

  std::size_t size() const { return pixels.size(); }

  bool operator==(const ImageU8& o) const {
    return height == o.height && width == o.width && channels == o.channels &&
           pixels == o.pixels;
  }
};

// ---------------------------------------------------------------------------
// Binary PGM (P5) / PPM (P6) round-trip, maxval 255. Used by the
// augment-preview subcommand and golden-file tests.
// ---------------------------------------------------------------------------

inline void write_pnm(const ImageU8& img, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("write_pnm: cannot open " + path);
  f << (img.channels == 1 ? "P5" : "P6") << "\n"
    << img.width << " " << img.height << "\n255\n";
  f.write(reinterpret_cast<const char*>(img.pixels.data()),
          static_cast<std::streamsize>(img.pixels.size()));
  if (!f) throw std::runtime_error("write_pnm: short write to " + path);
}

inline ImageU8 read_pnm(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("read_pnm: cannot open " + path);

  auto next_token = [&f, &path]() -> std::string {
    std::string tok;
    while (true) {
      int ch = f.get();
      if (ch == EOF) throw std::runtime_error("read_pnm: truncated " + path);
      if (ch == '#') {  // comment to end of line
        while (ch != EOF && ch != '\n') ch = f.get();
        continue;
      }
      if (std::isspace(ch)) {
        if (!tok.empty()) return tok;
        continue;
      }
      tok.push_back(static_cast<char>(ch));
    }
  };

  const std::string magic = next_token();
  int channels = 0;
  if (magic == "P5") channels = 1;
  else if (magic == "P6") channels = 3;
  else throw std::runtime_error("read_pnm: unsupported magic '" + magic + "'");

  const int width = std::stoi(next_token());
  const int height = std::stoi(next_token());
  const int maxval = std::stoi(next_token());
  if (width < 1 || height < 1)
    throw std::runtime_error("read_pnm: bad dimensions in " + path);
  if (maxval != 255)
    throw std::runtime_error("read_pnm: only maxval 255 supported");

  ImageU8 img(height, width, channels);
  f.read(reinterpret_cast<char*>(img.pixels.data()),
         static_cast<std::streamsize>(img.pixels.size()));
  if (f.gcount() != static_cast<std::streamsize>(img.pixels.size()))
    throw std::runtime_error("read_pnm: truncated pixel data in " + path);
  return img;
}

}  // namespace fixmatch
