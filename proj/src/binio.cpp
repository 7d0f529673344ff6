#include "geofm/binio.hpp"

#include <algorithm>
#include <bit>

static_assert(std::endian::native == std::endian::little, "cache files assume a little-endian host");

namespace geofm::binio {

Magic make_magic(std::string_view tag) {
  Magic m{};
  std::copy_n(tag.begin(), std::min(tag.size(), m.size()), m.begin());
  return m;
}

Writer::Writer(std::filesystem::path path) : path_(std::move(path)) {
  tmp_ = path_;
  tmp_ += ".tmp";
  out_.open(tmp_, std::ios::binary | std::ios::trunc);
  if (!out_) throw_data("cannot open '" + tmp_.string() + "' for writing");
}

Writer::~Writer() {
  if (!committed_) {
    out_.close();
    std::error_code ec;
    std::filesystem::remove(tmp_, ec);
  }
}

void Writer::raw(const void* data, std::size_t bytes) {
  out_.write(static_cast<const char*>(data), static_cast<std::streamsize>(bytes));
  if (!out_) throw_data("write failed on '" + tmp_.string() + "'");
}

void Writer::magic(const Magic& m) { raw(m.data(), m.size()); }
void Writer::u32(std::uint32_t v) { raw(&v, sizeof v); }
void Writer::u64(std::uint64_t v) { raw(&v, sizeof v); }
void Writer::f64(double v) { raw(&v, sizeof v); }
void Writer::f32_array(std::span<const float> values) { raw(values.data(), values.size_bytes()); }
void Writer::f64_array(std::span<const double> values) { raw(values.data(), values.size_bytes()); }
void Writer::i64_array(std::span<const std::int64_t> values) { raw(values.data(), values.size_bytes()); }

void Writer::commit() {
  out_.flush();
  out_.close();
  if (!out_) throw_data("failed to flush '" + tmp_.string() + "'");
  std::filesystem::rename(tmp_, path_);
  committed_ = true;
}

Reader::Reader(const std::filesystem::path& path) : path_(path), in_(path, std::ios::binary) {
  if (!in_) throw_data("cannot open '" + path.string() + "'");
}

void Reader::raw(void* data, std::size_t bytes) {
  in_.read(static_cast<char*>(data), static_cast<std::streamsize>(bytes));
  if (in_.gcount() != static_cast<std::streamsize>(bytes)) throw_data("truncated file '" + path_.string() + "'");
}

void Reader::expect_magic(const Magic& m) {
  Magic got{};
  raw(got.data(), got.size());
  if (got != m) throw_data("bad magic in '" + path_.string() + "'");
}

std::uint32_t Reader::u32() {
  std::uint32_t v;
  raw(&v, sizeof v);
  return v;
}

std::uint64_t Reader::u64() {
  std::uint64_t v;
  raw(&v, sizeof v);
  return v;
}

double Reader::f64() {
  double v;
  raw(&v, sizeof v);
  return v;
}

void Reader::f32_array(std::span<float> values) { raw(values.data(), values.size_bytes()); }
void Reader::f64_array(std::span<double> values) { raw(values.data(), values.size_bytes()); }
void Reader::i64_array(std::span<std::int64_t> values) { raw(values.data(), values.size_bytes()); }

void Reader::expect_end() {
  if (in_.peek() != std::char_traits<char>::eof()) throw_data("trailing bytes in '" + path_.string() + "'");
}

namespace {

template <typename Scalar>
using RowMajor = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

}  // namespace

void write_rowmajor(Writer& w, const MatrixXd& m) {
  RowMajor<double> rm = m;
  w.f64_array({rm.data(), static_cast<std::size_t>(rm.size())});
}

void write_rowmajor(Writer& w, const MatrixXf& m) {
  RowMajor<float> rm = m;
  w.f32_array({rm.data(), static_cast<std::size_t>(rm.size())});
}

void read_rowmajor(Reader& r, MatrixXd& m) {
  RowMajor<double> rm(m.rows(), m.cols());
  r.f64_array({rm.data(), static_cast<std::size_t>(rm.size())});
  m = rm;
}

void read_rowmajor(Reader& r, MatrixXf& m) {
  RowMajor<float> rm(m.rows(), m.cols());
  r.f32_array({rm.data(), static_cast<std::size_t>(rm.size())});
  m = rm;
}

}  // namespace geofm::binio
