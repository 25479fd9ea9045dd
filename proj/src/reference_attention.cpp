#include "sals/reference_attention.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <vector>

#include "sals/error.hpp"

namespace sals {

namespace {

void check_shapes(const DenseMatrix& Q, const DenseMatrix& K, const DenseMatrix& V,
                  const AttentionConfig& cfg) {
  cfg.validate();
  if (K.cols() != cfg.key_dim() || V.cols() != cfg.key_dim() || Q.cols() != cfg.query_dim()) {
    throw InvalidArgument("attention: expected Q x " + std::to_string(cfg.query_dim()) +
                          ", K/V x " + std::to_string(cfg.key_dim()) + " columns");
  }
  if (K.rows() != V.rows() || Q.rows() != K.rows()) {
    throw InvalidArgument("attention: Q, K and V must have the same number of rows");
  }
}

std::vector<std::size_t> sequence_positions(std::size_t s) {
  std::vector<std::size_t> pos(s);
  std::iota(pos.begin(), pos.end(), 0);
  return pos;
}

// Attention of already-rotated queries over already-rotated keys.
DenseMatrix attend_rotated(const DenseMatrix& q_rot, const DenseMatrix& k_rot,
                           const DenseMatrix& V, const AttentionConfig& cfg, bool causal) {
  const std::size_t s = k_rot.rows();
  const std::size_t d = cfg.head_dim;
  const std::size_t nq = cfg.query_heads();
  const std::size_t group = nq / cfg.num_heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(d));

  DenseMatrix out(q_rot.rows(), cfg.query_dim());
  std::vector<double> logits(s);
  std::vector<double> acc(d);
  for (std::size_t i = 0; i < q_rot.rows(); ++i) {
    const std::size_t visible = causal ? i + 1 : s;
    for (std::size_t h = 0; h < nq; ++h) {
      const std::size_t kv = h / group;
      double peak = -std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < visible; ++j) {
        double dot = 0.0;
        for (std::size_t c = 0; c < d; ++c) {
          dot += static_cast<double>(q_rot(i, h * d + c)) * k_rot(j, kv * d + c);
        }
        logits[j] = dot * scale;
        peak = std::max(peak, logits[j]);
      }
      double denom = 0.0;
      for (std::size_t j = 0; j < visible; ++j) {
        logits[j] = std::exp(logits[j] - peak);
        denom += logits[j];
      }
      std::fill(acc.begin(), acc.end(), 0.0);
      for (std::size_t j = 0; j < visible; ++j) {
        const double w = logits[j] / denom;
        for (std::size_t c = 0; c < d; ++c) acc[c] += w * V(j, kv * d + c);
      }
      for (std::size_t c = 0; c < d; ++c) out(i, h * d + c) = static_cast<float>(acc[c]);
    }
  }
  return out;
}

}  // namespace

DenseMatrix full_attention(const DenseMatrix& Q, const DenseMatrix& K, const DenseMatrix& V,
                           const AttentionConfig& cfg, const RotaryTable& table, bool causal) {
  check_shapes(Q, K, V, cfg);
  const auto pos = sequence_positions(K.rows());
  return attend_rotated(apply_rope_batch(Q, pos, table), apply_rope_batch(K, pos, table), V,
                        cfg, causal);
}

DenseMatrix post_rope_lowrank_attention(const DenseMatrix& Q, const DenseMatrix& K,
                                        const DenseMatrix& V, const ProjectionMatrix& u_post,
                                        const AttentionConfig& cfg, const RotaryTable& table,
                                        bool causal) {
  check_shapes(Q, K, V, cfg);
  const auto pos = sequence_positions(K.rows());
  const DenseMatrix k_rot = apply_rope_batch(K, pos, table);
  const DenseMatrix k_approx = reconstruct_rows(project_rows(k_rot, u_post.U), u_post.U);
  return attend_rotated(apply_rope_batch(Q, pos, table), k_approx, V, cfg, causal);
}

BaselineResult pre_rope_lowrank_full(const DenseMatrix& Q, const DenseMatrix& K,
                                     const DenseMatrix& V, const ProjectionMatrix& u,
                                     const AttentionConfig& cfg, const RotaryTable& table,
                                     bool causal) {
  check_shapes(Q, K, V, cfg);
  const auto pos = sequence_positions(K.rows());
  const DenseMatrix k_approx = reconstruct_rows(project_rows(K, u.U), u.U);
  BaselineResult result;
  result.output = attend_rotated(apply_rope_batch(Q, pos, table),
                                 apply_rope_batch(k_approx, pos, table), V, cfg, causal);
  const double s = static_cast<double>(K.rows());
  const double nd = static_cast<double>(cfg.key_dim());
  result.traffic.reconstruct_elements = s * static_cast<double>(u.rank()) + s * nd;
  result.traffic.attention_elements = 2.0 * s * nd;
  return result;
}

}  // namespace sals
