#include "sals/tensor.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>
#include <string>

#include "sals/error.hpp"

namespace sals {

static_assert(std::endian::native == std::endian::little,
              "tensor I/O assumes a little-endian host");

DenseMatrix::DenseMatrix(std::size_t rows, std::size_t cols, float fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

DenseMatrix::DenseMatrix(std::size_t rows, std::size_t cols, std::vector<float> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows * cols) {
    throw InvalidArgument("DenseMatrix: data length " + std::to_string(data_.size()) +
                          " != rows x cols = " + std::to_string(rows * cols));
  }
}

DenseMatrix DenseMatrix::gather_rows(std::span<const std::size_t> indices) const {
  DenseMatrix out(indices.size(), cols_);
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= rows_) {
      throw OutOfRange("gather_rows: row " + std::to_string(indices[i]) + " >= " +
                       std::to_string(rows_));
    }
    auto src = row(indices[i]);
    std::copy(src.begin(), src.end(), out.row(i).begin());
  }
  return out;
}

DenseMatrix DenseMatrix::slice_rows(std::size_t begin, std::size_t end) const {
  if (begin > end || end > rows_) throw OutOfRange("slice_rows: bad range");
  std::vector<float> d(data_.begin() + static_cast<std::ptrdiff_t>(begin * cols_),
                       data_.begin() + static_cast<std::ptrdiff_t>(end * cols_));
  return DenseMatrix(end - begin, cols_, std::move(d));
}

bool DenseMatrix::all_finite() const noexcept {
  return std::all_of(data_.begin(), data_.end(), [](float v) { return std::isfinite(v); });
}

DenseMatrix identity_matrix(std::size_t n) {
  DenseMatrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0f;
  return m;
}

namespace {

void require_same_shape(const DenseMatrix& a, const DenseMatrix& b, const char* who) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw InvalidArgument(std::string(who) + ": shape mismatch " + std::to_string(a.rows()) +
                          "x" + std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) +
                          "x" + std::to_string(b.cols()));
  }
}

}  // namespace

double frobenius_distance(const DenseMatrix& a, const DenseMatrix& b) {
  require_same_shape(a, b, "frobenius_distance");
  double acc = 0.0;
  auto x = a.data();
  auto y = b.data();
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double diff = static_cast<double>(x[i]) - static_cast<double>(y[i]);
    acc += diff * diff;
  }
  return std::sqrt(acc);
}

double max_abs_difference(const DenseMatrix& a, const DenseMatrix& b) {
  require_same_shape(a, b, "max_abs_difference");
  double m = 0.0;
  auto x = a.data();
  auto y = b.data();
  for (std::size_t i = 0; i < x.size(); ++i) {
    m = std::max(m, std::abs(static_cast<double>(x[i]) - static_cast<double>(y[i])));
  }
  return m;
}

namespace {

constexpr char kMagic[4] = {'S', 'A', 'L', 'S'};

template <typename T>
void append_le(std::vector<std::uint8_t>& out, T value) {
  std::uint8_t buf[sizeof(T)];
  std::memcpy(buf, &value, sizeof(T));
  out.insert(out.end(), buf, buf + sizeof(T));
}

}  // namespace

std::vector<std::uint8_t> encode_tensor(const DenseMatrix& m) {
  std::vector<std::uint8_t> out;
  out.reserve(kTensorHeaderBytes + 2 * sizeof(std::uint64_t) + m.data().size() * sizeof(float));
  out.insert(out.end(), std::begin(kMagic), std::end(kMagic));
  out.push_back(kTensorFormatVersion);
  out.push_back(0);  // dtype f32
  out.push_back(2);  // ndim
  out.push_back(0);  // reserved
  append_le<std::uint64_t>(out, m.rows());
  append_le<std::uint64_t>(out, m.cols());
  const auto payload = m.data();
  const auto* bytes = reinterpret_cast<const std::uint8_t*>(payload.data());
  out.insert(out.end(), bytes, bytes + payload.size_bytes());
  return out;
}

DenseMatrix decode_tensor(std::span<const std::uint8_t> bytes) {
  using Kind = FormatError::Kind;
  if (bytes.size() < kTensorHeaderBytes) {
    throw FormatError(Kind::kTruncated, "tensor: header truncated");
  }
  if (std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw FormatError(Kind::kBadMagic, "tensor: bad magic (expected 'SALS')");
  }
  if (bytes[4] != kTensorFormatVersion) {
    throw FormatError(Kind::kVersionMismatch,
                      "tensor: unsupported version " + std::to_string(bytes[4]));
  }
  if (bytes[5] != 0) {
    throw FormatError(Kind::kUnsupportedDtype,
                      "tensor: unsupported dtype " + std::to_string(bytes[5]));
  }
  const std::size_t ndim = bytes[6];
  if (ndim > 2) {
    throw FormatError(Kind::kBadShape, "tensor: ndim " + std::to_string(ndim) + " > 2");
  }
  const std::size_t dims_end = kTensorHeaderBytes + ndim * sizeof(std::uint64_t);
  if (bytes.size() < dims_end) throw FormatError(Kind::kTruncated, "tensor: dims truncated");

  std::uint64_t dims[2] = {1, 1};
  for (std::size_t i = 0; i < ndim; ++i) {
    std::memcpy(&dims[2 - ndim + i], bytes.data() + kTensorHeaderBytes + i * 8, 8);
  }
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() / sizeof(float);
  if (dims[1] != 0 && dims[0] > limit / dims[1]) {
    throw FormatError(Kind::kBadShape, "tensor: element count overflows");
  }
  const std::uint64_t count = dims[0] * dims[1];
  const std::uint64_t available = bytes.size() - dims_end;
  if (available < count * sizeof(float)) {
    throw FormatError(Kind::kTruncated, "tensor: payload truncated (" +
                                            std::to_string(available) + " of " +
                                            std::to_string(count * sizeof(float)) + " bytes)");
  }
  if (available > count * sizeof(float)) {
    throw FormatError(Kind::kTrailingData, "tensor: trailing bytes after payload");
  }
  std::vector<float> data(count);
  std::memcpy(data.data(), bytes.data() + dims_end, count * sizeof(float));
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (!std::isfinite(data[i])) {
      throw FormatError(Kind::kNonFinite,
                        "tensor: non-finite value at element " + std::to_string(i));
    }
  }
  return DenseMatrix(dims[0], dims[1], std::move(data));
}

void write_tensor(const DenseMatrix& m, const std::filesystem::path& path) {
  const auto bytes = encode_tensor(m);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write to '" + path.string() + "' failed");
}

DenseMatrix read_tensor(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError("read from '" + path.string() + "' failed");
  return decode_tensor(bytes);
}

}  // namespace sals
