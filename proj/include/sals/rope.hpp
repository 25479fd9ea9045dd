#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "sals/config.hpp"
#include "sals/tensor.hpp"

namespace sals {

// Precomputed rotary angles: angle(m, i) = m * base^(-2i/d) for positions
// m < max_positions and pair index i < d/2. Each head of a stacked n*d
// vector is rotated independently with the same table.
class RotaryTable {
 public:
  RotaryTable(std::size_t max_positions, std::size_t head_dim, double base = 10000.0,
              RopePairing pairing = RopePairing::kAdjacent);

  static RotaryTable for_config(const AttentionConfig& cfg, std::size_t max_positions);

  std::size_t max_positions() const noexcept { return max_positions_; }
  std::size_t head_dim() const noexcept { return head_dim_; }
  RopePairing pairing() const noexcept { return pairing_; }

  double angle(std::size_t position, std::size_t pair) const {
    return angles_[position * half_ + pair];
  }

  // Same table with every angle negated: applying it undoes a forward rotation.
  RotaryTable inverse() const;

  // Rotates x (length n*d) in place for the given position.
  void rotate(std::span<float> x, std::size_t position) const;

 private:
  RotaryTable() = default;

  std::size_t max_positions_ = 0;
  std::size_t head_dim_ = 0;
  std::size_t half_ = 0;
  RopePairing pairing_ = RopePairing::kAdjacent;
  std::vector<double> angles_;
  std::vector<double> cos_;
  std::vector<double> sin_;
};

std::vector<float> apply_rope(std::span<const float> x, std::size_t position,
                              const RotaryTable& table);

// Row i is rotated by positions[i]; selected tokens keep their original
// sequence positions.
DenseMatrix apply_rope_batch(const DenseMatrix& x, std::span<const std::size_t> positions,
                             const RotaryTable& table);

}  // namespace sals
