#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace sals {

// Row-major f32 matrix. Reductions over its contents accumulate in double.
class DenseMatrix {
 public:
  DenseMatrix() = default;
  DenseMatrix(std::size_t rows, std::size_t cols, float fill = 0.0f);
  DenseMatrix(std::size_t rows, std::size_t cols, std::vector<float> data);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  bool empty() const noexcept { return data_.empty(); }

  float& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  float operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<float> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const float> row(std::size_t r) const {
    return {data_.data() + r * cols_, cols_};
  }

  std::span<float> data() noexcept { return data_; }
  std::span<const float> data() const noexcept { return data_; }

  // Copies the listed rows, in order, into a new matrix.
  DenseMatrix gather_rows(std::span<const std::size_t> indices) const;
  // Rows [begin, end).
  DenseMatrix slice_rows(std::size_t begin, std::size_t end) const;

  bool all_finite() const noexcept;

  friend bool operator==(const DenseMatrix&, const DenseMatrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<float> data_;
};

DenseMatrix identity_matrix(std::size_t n);

// ‖a − b‖_F accumulated in double. Shapes must match.
double frobenius_distance(const DenseMatrix& a, const DenseMatrix& b);
double max_abs_difference(const DenseMatrix& a, const DenseMatrix& b);

// On-disk tensor format, little-endian:
//   "SALS" | version u8 = 1 | dtype u8 = 0 (f32) | ndim u8 | reserved u8 = 0
//   | ndim x u64 dims | row-major f32 payload
// Matrices are written with ndim = 2. Readers also accept ndim = 1 (a single
// row) and ndim = 0 (a 1x1 scalar).
inline constexpr std::uint8_t kTensorFormatVersion = 1;
inline constexpr std::size_t kTensorHeaderBytes = 8;

std::vector<std::uint8_t> encode_tensor(const DenseMatrix& m);
DenseMatrix decode_tensor(std::span<const std::uint8_t> bytes);

void write_tensor(const DenseMatrix& m, const std::filesystem::path& path);
DenseMatrix read_tensor(const std::filesystem::path& path);

}  // namespace sals
