#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace fixmatch {

// Little-endian binary encoding with an FNV-1a trailer, shared by the model
// checkpoint and the full training-state checkpoint.

class ByteWriter {
 public:
  void u8(std::uint8_t v) { buf_.push_back(v); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void i64(std::int64_t v) { u64(static_cast<std::uint64_t>(v)); }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void str(const std::string& s) {
    u64(s.size());
    buf_.insert(buf_.end(), s.begin(), s.end());
  }
  void f64_block(const std::vector<double>& v) {
    u64(v.size());
    for (double d : v) f64(d);
  }

  const std::vector<std::uint8_t>& bytes() const { return buf_; }

  std::uint64_t checksum() const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (std::uint8_t b : buf_) {
      h ^= b;
      h *= 0x100000001b3ULL;
    }
    return h;
  }

  /// Writes payload followed by its checksum.
  void save(const std::string& path) const {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("save: cannot open " + path);
    f.write(reinterpret_cast<const char*>(buf_.data()),
            static_cast<std::streamsize>(buf_.size()));
    const std::uint64_t sum = checksum();
    for (int i = 0; i < 8; ++i) {
      const char b = static_cast<char>(sum >> (8 * i));
      f.write(&b, 1);
    }
    if (!f) throw std::runtime_error("save: short write to " + path);
  }

 private:
  std::vector<std::uint8_t> buf_;
};

class ByteReader {
 public:
  explicit ByteReader(std::vector<std::uint8_t> bytes) : buf_(std::move(bytes)) {}

  /// Loads a file written by ByteWriter::save and verifies the checksum.
  static ByteReader load(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("load: cannot open " + path);
    std::vector<std::uint8_t> all((std::istreambuf_iterator<char>(f)),
                                  std::istreambuf_iterator<char>());
    if (all.size() < 8) throw std::runtime_error("load: truncated " + path);
    std::uint64_t stored = 0;
    for (int i = 0; i < 8; ++i)
      stored |= static_cast<std::uint64_t>(all[all.size() - 8 + i]) << (8 * i);
    all.resize(all.size() - 8);
    ByteReader r(std::move(all));
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (std::uint8_t b : r.buf_) {
      h ^= b;
      h *= 0x100000001b3ULL;
    }
    if (h != stored)
      throw std::runtime_error("load: checksum mismatch in " + path);
    return r;
  }

  std::uint8_t u8() { return buf_.at(pos_++); }
  std::uint32_t u32() {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(u8()) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(u8()) << (8 * i);
    return v;
  }
  std::int64_t i64() { return static_cast<std::int64_t>(u64()); }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string str() {
    const std::uint64_t n = u64();
    if (pos_ + n > buf_.size()) throw std::runtime_error("str: truncated stream");
    std::string s(buf_.begin() + static_cast<std::ptrdiff_t>(pos_),
                  buf_.begin() + static_cast<std::ptrdiff_t>(pos_ + n));
    pos_ += n;
    return s;
  }
  std::vector<double> f64_block() {
    const std::uint64_t n = u64();
    if (pos_ + n * 8 > buf_.size())
      throw std::runtime_error("f64_block: truncated stream");
    std::vector<double> v(n);
    for (auto& d : v) d = f64();
    return v;
  }

  bool exhausted() const { return pos_ == buf_.size(); }

 private:
  std::vector<std::uint8_t> buf_;
  std::size_t pos_ = 0;
};

}  // namespace fixmatch
