#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <string_view>

#include "ebm/error.hpp"

namespace ebm::io {

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

class Writer {
 public:
  void bytes(std::string_view b) { out_.append(b); }
  void u32(std::uint32_t v) { pod(v); }
  void u64(std::uint64_t v) { pod(v); }
  void f64(double v) { pod(v); }
  void str(std::string_view s) {
    u32(static_cast<std::uint32_t>(s.size()));
    out_.append(s);
  }
  const std::string& buffer() const { return out_; }

 private:
  template <typename T>
  void pod(T v) {
    char raw[sizeof(T)];
    std::memcpy(raw, &v, sizeof(T));
    out_.append(raw, sizeof(T));
  }
  std::string out_;
};

class Reader {
 public:
  Reader(std::string data, std::string origin) : data_(std::move(data)), origin_(std::move(origin)) {}

  std::string_view bytes(std::size_t n) {
    need(n);
    std::string_view v(data_.data() + pos_, n);
    pos_ += n;
    return v;
  }
  std::uint32_t u32() { return pod<std::uint32_t>(); }
  std::uint64_t u64() { return pod<std::uint64_t>(); }
  double f64() { return pod<double>(); }
  std::string str() {
    std::uint32_t n = u32();
    return std::string(bytes(n));
  }
  std::size_t remaining() const { return data_.size() - pos_; }
  const std::string& origin() const { return origin_; }

  void expect_magic(std::string_view magic) {
    if (remaining() < magic.size() || std::string_view(data_.data() + pos_, magic.size()) != magic)
      throw FormatError(origin_ + ": bad magic, expected \"" + std::string(magic) + "\"");
    pos_ += magic.size();
  }

 private:
  void need(std::size_t n) const {
    if (remaining() < n) throw FormatError(origin_ + ": truncated file");
  }
  template <typename T>
  T pod() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, data_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }

  std::string data_;
  std::string origin_;
  std::size_t pos_ = 0;
};

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  return std::string(std::istreambuf_iterator<char>(in), {});
}

inline void write_file(const std::filesystem::path& path, std::string_view data) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out.write(data.data(), static_cast<std::streamsize>(data.size()));
  if (!out) throw DataError("write failed for " + path.string());
}

}  // namespace ebm::io
