#pragma once

#include <cstddef>

#include "sals/calibration.hpp"
#include "sals/config.hpp"
#include "sals/rope.hpp"
#include "sals/tensor.hpp"

namespace sals {

// Ground-truth and baseline attention over whole sequences. Token i sits at
// position i. Q is s x (query heads * d); K and V are s x nd. All loops are
// plain quadratic reductions in double.

DenseMatrix full_attention(const DenseMatrix& Q, const DenseMatrix& K, const DenseMatrix& V,
                           const AttentionConfig& cfg, const RotaryTable& table,
                           bool causal = true);

// Keys are rotated first, then projected onto span(U_post): K_R U U^T.
DenseMatrix post_rope_lowrank_attention(const DenseMatrix& Q, const DenseMatrix& K,
                                        const DenseMatrix& V, const ProjectionMatrix& u_post,
                                        const AttentionConfig& cfg, const RotaryTable& table,
                                        bool causal = true);

struct BaselineTraffic {
  double reconstruct_elements = 0.0;  // s*r read + s*nd written
  double attention_elements = 0.0;    // 2*s*nd
  double total() const noexcept { return reconstruct_elements + attention_elements; }
};

struct BaselineResult {
  DenseMatrix output;
  BaselineTraffic traffic;  // for a single decode step over all s tokens
};

// Every key is reconstructed as (K U) U^T, rotated, and attended in full.
BaselineResult pre_rope_lowrank_full(const DenseMatrix& Q, const DenseMatrix& K,
                                     const DenseMatrix& V, const ProjectionMatrix& u,
                                     const AttentionConfig& cfg, const RotaryTable& table,
                                     bool causal = true);

}  // namespace sals
