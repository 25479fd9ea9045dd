#include "sals/sparse_attention.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "sals/error.hpp"

namespace sals {

SparseAttentionResult sparse_attention_over(std::span<const float> q_rot,
                                            const DenseMatrix& keys_rot,
                                            const DenseMatrix& values,
                                            const AttentionConfig& cfg) {
  const std::size_t d = cfg.head_dim;
  const std::size_t nq = cfg.query_heads();
  const std::size_t group = nq / cfg.num_heads;
  const std::size_t count = keys_rot.rows();
  if (count == 0) throw InvalidArgument("sparse_attention_over: empty selection");
  if (values.rows() != count || keys_rot.cols() != cfg.key_dim() ||
      values.cols() != cfg.key_dim() || q_rot.size() != nq * d) {
    throw InvalidArgument("sparse_attention_over: shape mismatch");
  }

  const double scale = 1.0 / std::sqrt(static_cast<double>(d));
  SparseAttentionResult out;
  out.probs.assign(nq, std::vector<double>(count));
  out.y.assign(nq * d, 0.0f);
  std::vector<double> acc(d);
  for (std::size_t h = 0; h < nq; ++h) {
    const std::size_t kv = h / group;
    auto& p = out.probs[h];
    double peak = -std::numeric_limits<double>::infinity();
    for (std::size_t t = 0; t < count; ++t) {
      auto k = keys_rot.row(t);
      double dot = 0.0;
      for (std::size_t c = 0; c < d; ++c) {
        dot += static_cast<double>(q_rot[h * d + c]) * k[kv * d + c];
      }
      p[t] = dot * scale;
      peak = std::max(peak, p[t]);
    }
    double denom = 0.0;
    for (auto& v : p) {
      v = std::exp(v - peak);
      denom += v;
    }
    for (auto& v : p) v /= denom;

    std::fill(acc.begin(), acc.end(), 0.0);
    for (std::size_t t = 0; t < count; ++t) {
      auto v = values.row(t);
      for (std::size_t c = 0; c < d; ++c) acc[c] += p[t] * v[kv * d + c];
    }
    for (std::size_t c = 0; c < d; ++c) out.y[h * d + c] = static_cast<float>(acc[c]);
  }
  return out;
}

SparseAttentionResult attend_over_selection(std::span<const float> q,
                                            const LatentKvCache& cache,
                                            std::span<const std::size_t> indices,
                                            const ProjectionMatrix& p,
                                            const AttentionConfig& cfg,
                                            const RotaryTable& table, std::size_t position,
                                            TrafficCounter* counter) {
  DenseMatrix keys = cache.reconstruct_keys(indices, p, counter, cfg.traffic_mode);
  std::vector<std::size_t> key_positions(indices.size());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    key_positions[i] = cache.positions()[indices[i]];
  }
  const DenseMatrix keys_rot = apply_rope_batch(keys, key_positions, table);
  const DenseMatrix values = cache.gather_values(indices, counter, cfg.traffic_mode);
  const auto q_rot = apply_rope(q, position, table);
  return sparse_attention_over(q_rot, keys_rot, values, cfg);
}

AttentionOutput sals_decode_step(std::span<const float> q, std::span<const float> k_new,
                                 std::span<const float> v_new, LatentKvCache& cache,
                                 const ProjectionMatrix& p, const SelectionPolicy& policy,
                                 const AttentionConfig& cfg, const RotaryTable& table,
                                 std::size_t position, std::optional<std::size_t> layer) {
  if (q.size() != cfg.query_dim()) {
    throw InvalidArgument("sals_decode_step: query length " + std::to_string(q.size()) +
                          " != " + std::to_string(cfg.query_dim()));
  }
  policy.validate(cfg);
  cache.append(k_new, v_new, position, p);

  AttentionOutput out;
  out.dense = layer.has_value() && policy.is_dense(*layer);
  TrafficCounter counter;
  const std::size_t s = cache.size();

  if (out.dense) {
    out.selection.indices.resize(s);
    std::iota(out.selection.indices.begin(), out.selection.indices.end(), 0);
    out.selection.scores.assign(s, std::numeric_limits<double>::quiet_NaN());
  } else {
    const auto scores =
        latent_scores(pool_query_heads(q, cfg), cache, p, policy.score_rank, &counter);
    SelectionPolicy effective = policy;
    effective.recent = std::max<std::size_t>(policy.recent, 1);
    out.selection = select_topk(scores, effective);
    out.selection.score_phase_elements = counter.score_elements();
  }

  auto attn = attend_over_selection(q, cache, out.selection.indices, p, cfg, table, position,
                                    &counter);
  out.y = std::move(attn.y);
  out.probs = std::move(attn.probs);

  out.traffic = make_traffic_report(counter, s, cfg.key_dim());
  out.traffic.selected = out.selection.indices.size();
  out.traffic.selected_recent = static_cast<std::size_t>(
      std::count_if(out.selection.indices.begin(), out.selection.indices.end(),
                    [&](std::size_t j) { return cache.in_recent_window(j); }));
  if (has_closed_form(cfg, policy, s, out.dense)) {
    out.traffic.predicted_ratio =
        predict_step_traffic(cfg, policy, s, out.dense).total() / out.traffic.baseline_elements;
  }
  return out;
}

void prefill(const DenseMatrix& keys, const DenseMatrix& values, LatentKvCache& cache,
             const ProjectionMatrix& p, std::size_t first_position) {
  if (cache.size() != 0) throw InvalidArgument("prefill: cache is not empty");
  if (keys.rows() != values.rows()) throw InvalidArgument("prefill: K/V row count mismatch");
  for (std::size_t t = 0; t < keys.rows(); ++t) {
    cache.append(keys.row(t), values.row(t), first_position + t, p);
  }
}

}  // namespace sals
