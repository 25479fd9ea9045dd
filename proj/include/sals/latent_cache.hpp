#pragma once

#include <cstddef>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <span>
#include <vector>

#include "sals/calibration.hpp"
#include "sals/config.hpp"
#include "sals/tensor.hpp"
#include "sals/traffic.hpp"

namespace sals {

// Asymmetric min/max quantization over contiguous channel groups. For each
// group the stored scale is f32((max - min) / (2^bits - 1)) and the zero point
// is the group minimum; codes are round((v - zero) / scale) computed in double
// against the stored scale. A zero range stores scale 0 and all codes 0.
struct QuantizedVector {
  std::vector<std::uint8_t> codes;
  std::vector<float> scales;
  std::vector<float> zeros;
  unsigned bits = 4;
  std::size_t group = 32;
};

QuantizedVector quantize_value(std::span<const float> v, unsigned bits, std::size_t group);
// code * scale + zero, evaluated in double.
std::vector<double> dequantize_value(const QuantizedVector& q);

// U^T k.
std::vector<float> project_key(std::span<const float> k, const ProjectionMatrix& p);
// U l.
std::vector<float> reconstruct_key(std::span<const float> latent, const ProjectionMatrix& p);

// Compressed per-layer KV store: one latent key row (r) and one value record
// per token, plus a full-precision copy of the last w tokens' keys and values.
// Tokens that fall out of that window survive only in compressed form.
class LatentKvCache {
 public:
  explicit LatentKvCache(const AttentionConfig& cfg);

  std::size_t size() const noexcept { return positions_.size(); }
  std::size_t rank() const noexcept { return rank_; }
  std::size_t key_dim() const noexcept { return key_dim_; }
  unsigned value_bits() const noexcept { return value_bits_; }
  std::size_t recent_size() const noexcept { return recent_.size(); }
  std::size_t recent_capacity() const noexcept { return window_; }

  std::span<const std::size_t> positions() const noexcept { return positions_; }
  std::span<const float> latent_row(std::size_t j) const {
    return {latent_.data() + j * rank_, rank_};
  }
  DenseMatrix latent_keys() const;

  // True when token j still has a full-precision copy.
  bool in_recent_window(std::size_t j) const noexcept {
    return j < size() && j >= size() - recent_.size();
  }

  // Projects and stores k, quantizes and stores v, and pushes (k, v) into the
  // recent window. Positions must be strictly increasing.
  void append(std::span<const float> k, std::span<const float> v, std::size_t position,
              const ProjectionMatrix& p);

  // Row i is token indices[i]'s key: the buffered original inside the recent
  // window, latent_j U^T otherwise. Credits the counter's reconstruct phase.
  DenseMatrix reconstruct_keys(std::span<const std::size_t> indices, const ProjectionMatrix& p,
                               TrafficCounter* counter = nullptr,
                               TrafficMode mode = TrafficMode::kItemized) const;

  // Values for the given tokens: buffered originals or dequantized records.
  // Credits the counter's value phase.
  DenseMatrix gather_values(std::span<const std::size_t> indices,
                            TrafficCounter* counter = nullptr,
                            TrafficMode mode = TrafficMode::kItemized) const;

  const QuantizedVector& quantized_value(std::size_t j) const { return quant_values_.at(j); }

  // s*r + s*nd*bits/32 + (buffered tokens)*2nd, in f32-element equivalents.
  double stored_elements() const noexcept;

  // Writes <prefix>.latent.sals, .positions.sals and either .codes/.scales/
  // .zeros.sals (quantized values) or .values.sals.
  void dump(const std::filesystem::path& prefix) const;

 private:
  struct RecentEntry {
    std::vector<float> key;
    std::vector<float> value;
  };

  std::size_t key_dim_;
  std::size_t rank_;
  unsigned value_bits_;
  std::size_t group_;
  std::size_t window_;
  std::vector<float> latent_;
  std::vector<QuantizedVector> quant_values_;
  std::vector<float> raw_values_;
  std::vector<std::size_t> positions_;
  std::deque<RecentEntry> recent_;
};

}  // namespace sals
