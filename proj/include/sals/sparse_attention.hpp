#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "sals/calibration.hpp"
#include "sals/config.hpp"
#include "sals/latent_cache.hpp"
#include "sals/rope.hpp"
#include "sals/selection.hpp"
#include "sals/tensor.hpp"
#include "sals/traffic.hpp"

namespace sals {

struct SparseAttentionResult {
  std::vector<std::vector<double>> probs;  // per query head, over selected tokens
  std::vector<float> y;                    // query heads concatenated
};

// Softmax attention restricted to the given (already rotated) keys and their
// values, per query head with 1/sqrt(d) scaling and max subtraction. Query
// head h reads key/value head h / (query_heads / num_heads).
SparseAttentionResult sparse_attention_over(std::span<const float> q_rot,
                                            const DenseMatrix& keys_rot,
                                            const DenseMatrix& values,
                                            const AttentionConfig& cfg);

struct AttentionOutput {
  std::vector<float> y;
  TokenSelection selection;
  std::vector<std::vector<double>> probs;
  TrafficReport traffic;
  bool dense = false;
};

// Attention of the pre-RoPE query q (at `position`) over the given cached
// tokens: keys are reconstructed (or read from the recent window), both
// sides are rotated at their original positions, and values are gathered
// from the cache.
SparseAttentionResult attend_over_selection(std::span<const float> q,
                                            const LatentKvCache& cache,
                                            std::span<const std::size_t> indices,
                                            const ProjectionMatrix& p,
                                            const AttentionConfig& cfg,
                                            const RotaryTable& table, std::size_t position,
                                            TrafficCounter* counter = nullptr);

// One decode step. Appends (k_new, v_new) at `position`, scores every cached
// token on the leading r* latent coordinates, selects sink/critical/recent
// tokens (the current token is always kept, so z is treated as at least 1),
// reconstructs and rotates the selected keys and attends over them.
//
// When `layer` is one of the policy's dense layers the scoring and
// selection are skipped and every cached token is attended.
AttentionOutput sals_decode_step(std::span<const float> q, std::span<const float> k_new,
                                 std::span<const float> v_new, LatentKvCache& cache,
                                 const ProjectionMatrix& p, const SelectionPolicy& policy,
                                 const AttentionConfig& cfg, const RotaryTable& table,
                                 std::size_t position,
                                 std::optional<std::size_t> layer = std::nullopt);

// Appends every row of K/V to an empty cache at positions
// first_position, first_position + 1, ... . Prefill attention itself is left
// to the dense reference.
void prefill(const DenseMatrix& keys, const DenseMatrix& values, LatentKvCache& cache,
             const ProjectionMatrix& p, std::size_t first_position = 0);

}  // namespace sals
