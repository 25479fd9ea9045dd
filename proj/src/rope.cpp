#include "sals/rope.hpp"

#include <cmath>
#include <string>

#include "sals/error.hpp"

namespace sals {

RotaryTable::RotaryTable(std::size_t max_positions, std::size_t head_dim, double base,
                         RopePairing pairing)
    : max_positions_(max_positions),
      head_dim_(head_dim),
      half_(head_dim / 2),
      pairing_(pairing) {
  if (head_dim == 0 || head_dim % 2 != 0) {
    throw InvalidArgument("RotaryTable: head_dim must be even and >= 2");
  }
  if (!(base > 0.0)) throw InvalidArgument("RotaryTable: base must be > 0");
  angles_.resize(max_positions * half_);
  cos_.resize(angles_.size());
  sin_.resize(angles_.size());
  std::vector<double> inv_freq(half_);
  for (std::size_t i = 0; i < half_; ++i) {
    inv_freq[i] = std::pow(base, -2.0 * static_cast<double>(i) / static_cast<double>(head_dim));
  }
  for (std::size_t m = 0; m < max_positions; ++m) {
    for (std::size_t i = 0; i < half_; ++i) {
      const double a = static_cast<double>(m) * inv_freq[i];
      angles_[m * half_ + i] = a;
      cos_[m * half_ + i] = std::cos(a);
      sin_[m * half_ + i] = std::sin(a);
    }
  }
}

RotaryTable RotaryTable::for_config(const AttentionConfig& cfg, std::size_t max_positions) {
  return RotaryTable(max_positions, cfg.head_dim, cfg.rope_base, cfg.rope_pairing);
}

RotaryTable RotaryTable::inverse() const {
  RotaryTable inv = *this;
  for (auto& a : inv.angles_) a = -a;
  for (auto& s : inv.sin_) s = -s;
  return inv;
}

void RotaryTable::rotate(std::span<float> x, std::size_t position) const {
  if (position >= max_positions_) {
    throw OutOfRange("rope: position " + std::to_string(position) + " outside table of " +
                     std::to_string(max_positions_));
  }
  if (x.size() % head_dim_ != 0) {
    throw InvalidArgument("rope: vector length " + std::to_string(x.size()) +
                          " is not a multiple of head_dim " + std::to_string(head_dim_));
  }
  const double* c = cos_.data() + position * half_;
  const double* s = sin_.data() + position * half_;
  const std::size_t stride = pairing_ == RopePairing::kAdjacent ? 1 : half_;
  for (std::size_t base = 0; base < x.size(); base += head_dim_) {
    for (std::size_t i = 0; i < half_; ++i) {
      const std::size_t lo = pairing_ == RopePairing::kAdjacent ? base + 2 * i : base + i;
      const std::size_t hi = lo + stride;
      const double x0 = x[lo];
      const double x1 = x[hi];
      x[lo] = static_cast<float>(x0 * c[i] - x1 * s[i]);
      x[hi] = static_cast<float>(x0 * s[i] + x1 * c[i]);
    }
  }
}

std::vector<float> apply_rope(std::span<const float> x, std::size_t position,
                              const RotaryTable& table) {
  std::vector<float> out(x.begin(), x.end());
  table.rotate(out, position);
  return out;
}

DenseMatrix apply_rope_batch(const DenseMatrix& x, std::span<const std::size_t> positions,
                             const RotaryTable& table) {
  if (positions.size() != x.rows()) {
    throw InvalidArgument("apply_rope_batch: " + std::to_string(positions.size()) +
                          " positions for " + std::to_string(x.rows()) + " rows");
  }
  DenseMatrix out = x;
  for (std::size_t r = 0; r < x.rows(); ++r) table.rotate(out.row(r), positions[r]);
  return out;
}

}  // namespace sals
