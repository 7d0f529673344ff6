#pragma once

// Little-endian binary cache files. Every file starts with an 8-byte magic.

#include "geofm/common.hpp"

#include <array>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <string_view>

namespace geofm::binio {

using Magic = std::array<char, 8>;

Magic make_magic(std::string_view tag);

class Writer {
 public:
  /// Writes to `path.tmp` and renames onto `path` in commit().
  explicit Writer(std::filesystem::path path);
  ~Writer();
  Writer(const Writer&) = delete;
  Writer& operator=(const Writer&) = delete;

  void magic(const Magic& m);
  void u32(std::uint32_t v);
  void u64(std::uint64_t v);
  void f64(double v);
  void f32_array(std::span<const float> values);
  void f64_array(std::span<const double> values);
  void i64_array(std::span<const std::int64_t> values);
  void commit();

 private:
  void raw(const void* data, std::size_t bytes);

  std::filesystem::path path_;
  std::filesystem::path tmp_;
  std::ofstream out_;
  bool committed_ = false;
};

class Reader {
 public:
  explicit Reader(const std::filesystem::path& path);

  void expect_magic(const Magic& m);
  std::uint32_t u32();
  std::uint64_t u64();
  double f64();
  void f32_array(std::span<float> values);
  void f64_array(std::span<double> values);
  void i64_array(std::span<std::int64_t> values);
  void expect_end();

 private:
  void raw(void* data, std::size_t bytes);

  std::filesystem::path path_;
  std::ifstream in_;
};

// Row-major matrix helpers on top of the array primitives.
void write_rowmajor(Writer& w, const MatrixXd& m);
void write_rowmajor(Writer& w, const MatrixXf& m);
void read_rowmajor(Reader& r, MatrixXd& m);
void read_rowmajor(Reader& r, MatrixXf& m);

}  // namespace geofm::binio
