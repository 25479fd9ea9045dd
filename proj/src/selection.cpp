#include "sals/selection.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "sals/error.hpp"
#include "sals/rope.hpp"
#include "sals/synthetic.hpp"

namespace sals {

std::vector<float> pool_query_heads(std::span<const float> q, const AttentionConfig& cfg) {
  const std::size_t d = cfg.head_dim;
  const std::size_t nq = cfg.query_heads();
  const std::size_t n = cfg.num_heads;
  if (q.size() != nq * d) {
    throw InvalidArgument("query length " + std::to_string(q.size()) + " != query heads x d " +
                          std::to_string(nq * d));
  }
  if (nq == n) return {q.begin(), q.end()};
  const std::size_t group = nq / n;
  std::vector<float> pooled(n * d);
  for (std::size_t h = 0; h < n; ++h) {
    for (std::size_t c = 0; c < d; ++c) {
      double acc = 0.0;
      for (std::size_t g = 0; g < group; ++g) acc += q[(h * group + g) * d + c];
      pooled[h * d + c] = static_cast<float>(acc / static_cast<double>(group));
    }
  }
  return pooled;
}

std::vector<double> latent_scores(std::span<const float> q, const LatentKvCache& cache,
                                  const ProjectionMatrix& p, std::size_t score_rank,
                                  TrafficCounter* counter) {
  if (score_rank == 0 || score_rank > p.rank()) {
    throw InvalidArgument("latent_scores: score_rank " + std::to_string(score_rank) +
                          " outside [1, " + std::to_string(p.rank()) + "]");
  }
  if (q.size() != p.dim()) {
    throw InvalidArgument("latent_scores: query length " + std::to_string(q.size()) +
                          " != projection dim " + std::to_string(p.dim()));
  }
  // Only the leading r* latent coordinates of the query are needed.
  std::vector<double> q_latent(score_rank, 0.0);
  for (std::size_t i = 0; i < q.size(); ++i) {
    const double qi = q[i];
    auto u = p.U.row(i);
    for (std::size_t j = 0; j < score_rank; ++j) q_latent[j] += qi * u[j];
  }
  for (auto& v : q_latent) v = static_cast<float>(v);

  std::vector<double> scores(cache.size());
  for (std::size_t t = 0; t < cache.size(); ++t) {
    auto k = cache.latent_row(t);
    double acc = 0.0;
    for (std::size_t j = 0; j < score_rank; ++j) acc += q_latent[j] * k[j];
    scores[t] = acc;
  }
  if (counter) counter->add_score(cache.size() * score_rank);
  return scores;
}

std::vector<std::size_t> top_indices(std::span<const double> scores, std::size_t n_c) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  n_c = std::min(n_c, scores.size());
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_c), order.end(),
                    [&](std::size_t a, std::size_t b) {
                      return scores[a] > scores[b] || (scores[a] == scores[b] && a < b);
                    });
  order.resize(n_c);
  std::sort(order.begin(), order.end());
  return order;
}

TokenSelection select_topk(std::span<const double> scores, const SelectionPolicy& policy) {
  const std::size_t s = scores.size();
  std::vector<char> chosen(s, 0);
  const std::size_t sink = std::min(policy.sink, s);
  const std::size_t recent = std::min(policy.recent, s);
  for (std::size_t i = 0; i < sink; ++i) chosen[i] = 1;
  for (std::size_t i = s - recent; i < s; ++i) chosen[i] = 1;

  std::vector<std::size_t> candidates;
  candidates.reserve(s);
  for (std::size_t i = 0; i < s; ++i) {
    if (!chosen[i]) candidates.push_back(i);
  }
  const std::size_t take = std::min(policy.critical_budget, candidates.size());
  std::partial_sort(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(take),
                    candidates.end(), [&](std::size_t a, std::size_t b) {
                      return scores[a] > scores[b] || (scores[a] == scores[b] && a < b);
                    });
  for (std::size_t i = 0; i < take; ++i) chosen[candidates[i]] = 1;

  TokenSelection sel;
  for (std::size_t i = 0; i < s; ++i) {
    if (chosen[i]) {
      sel.indices.push_back(i);
      sel.scores.push_back(scores[i]);
    }
  }
  return sel;
}

double overlap_score(std::span<const double> approx_scores, std::span<const double> exact_probs,
                     std::size_t n_c) {
  const std::size_t s = approx_scores.size();
  if (exact_probs.size() != s) throw InvalidArgument("overlap_score: length mismatch");
  if (n_c > s) {
    throw InvalidArgument("overlap_score: N_c " + std::to_string(n_c) + " > s " +
                          std::to_string(s));
  }
  double total = 0.0;
  for (double p : exact_probs) {
    if (!(p >= 0.0)) throw InvalidArgument("overlap_score: probabilities must be >= 0");
    total += p;
  }
  if (!(total > 0.0)) throw InvalidArgument("overlap_score: zero total mass");
  if (n_c == s) return 1.0;
  double captured = 0.0;
  for (std::size_t i : top_indices(approx_scores, n_c)) captured += exact_probs[i];
  return std::min(1.0, captured / total);
}

std::vector<double> exact_attention_probs(std::span<const float> q_rot,
                                          const DenseMatrix& keys_rot,
                                          const AttentionConfig& cfg) {
  const std::size_t d = cfg.head_dim;
  const std::size_t nq = cfg.query_heads();
  const std::size_t group = nq / cfg.num_heads;
  const std::size_t s = keys_rot.rows();
  if (q_rot.size() != nq * d || keys_rot.cols() != cfg.key_dim()) {
    throw InvalidArgument("exact_attention_probs: shape mismatch");
  }
  const double scale = 1.0 / std::sqrt(static_cast<double>(d));
  std::vector<double> mean(s, 0.0);
  std::vector<double> logits(s);
  for (std::size_t h = 0; h < nq; ++h) {
    const std::size_t kv = h / group;
    double peak = -std::numeric_limits<double>::infinity();
    for (std::size_t t = 0; t < s; ++t) {
      auto k = keys_rot.row(t);
      double acc = 0.0;
      for (std::size_t c = 0; c < d; ++c) {
        acc += static_cast<double>(q_rot[h * d + c]) * k[kv * d + c];
      }
      logits[t] = acc * scale;
      peak = std::max(peak, logits[t]);
    }
    double denom = 0.0;
    for (auto& l : logits) {
      l = std::exp(l - peak);
      denom += l;
    }
    for (std::size_t t = 0; t < s; ++t) mean[t] += logits[t] / denom;
  }
  for (auto& m : mean) m /= static_cast<double>(nq);
  return mean;
}

SelectionRecallReport selection_recall(std::size_t trials, const SyntheticSpec& spec,
                                       const AttentionConfig& cfg,
                                       const SelectionPolicy& policy, bool rope_enabled) {
  cfg.validate();
  policy.validate(cfg);
  const std::size_t s = spec.seq_len;
  const std::size_t nd = cfg.key_dim();
  const RotaryTable table = RotaryTable::for_config(cfg, std::max<std::size_t>(s, 1));

  SelectionRecallReport report;
  report.trials = trials;
  report.n_c = std::min(policy.budget(), s);
  report.min_overlap = 1.0;
  std::size_t hits = 0;
  double overlap_sum = 0.0;

  for (std::size_t trial = 0; trial < trials; ++trial) {
    SyntheticSpec ts = spec;
    ts.seed = spec.seed + 0x9E3779B97F4A7C15ull * (trial + 1);
    const DenseMatrix keys = generate_keys(ts, cfg);

    std::vector<float> query_keyspace;
    if (ts.planted) {
      query_keyspace = planted_query_direction(ts, cfg);
    } else {
      SyntheticSpec qs = ts;
      qs.seq_len = 1;
      qs.seed = ts.seed ^ 0xD1B54A32D192ED03ull;
      const DenseMatrix q = generate_keys(qs, cfg);
      query_keyspace.assign(q.row(0).begin(), q.row(0).end());
    }
    // Broadcast the key-space query to every query head in its group.
    const std::size_t group = cfg.query_heads() / cfg.num_heads;
    std::vector<float> query(cfg.query_dim());
    for (std::size_t h = 0; h < cfg.query_heads(); ++h) {
      std::copy_n(query_keyspace.begin() + static_cast<std::ptrdiff_t>((h / group) * cfg.head_dim),
                  cfg.head_dim, query.begin() + static_cast<std::ptrdiff_t>(h * cfg.head_dim));
    }

    Covariance cov(nd);
    cov.accumulate(keys);
    const ProjectionMatrix proj = compute_joint_projection(cov, cfg.latent_rank);

    AttentionConfig cache_cfg = cfg;
    cache_cfg.value_bits = 32;
    cache_cfg.recent_window = 0;
    LatentKvCache cache(cache_cfg);
    for (std::size_t t = 0; t < s; ++t) cache.append(keys.row(t), keys.row(t), t, proj);
    const auto approx = latent_scores(pool_query_heads(query, cfg), cache, proj,
                                      policy.score_rank);

    std::vector<std::size_t> positions(s, 0);
    if (rope_enabled) std::iota(positions.begin(), positions.end(), 0);
    const DenseMatrix keys_rot = apply_rope_batch(keys, positions, table);
    const auto q_rot = apply_rope(query, rope_enabled && s > 0 ? s - 1 : 0, table);
    const auto probs = exact_attention_probs(q_rot, keys_rot, cfg);

    const double os = overlap_score(approx, probs, report.n_c);
    overlap_sum += os;
    report.min_overlap = std::min(report.min_overlap, os);

    if (ts.planted) {
      const auto sel = select_topk(approx, policy);
      if (std::binary_search(sel.indices.begin(), sel.indices.end(), ts.planted->position)) {
        ++hits;
      }
    }
  }
  report.mean_overlap = trials ? overlap_sum / static_cast<double>(trials) : 0.0;
  report.planted_recall = spec.planted && trials
                              ? static_cast<double>(hits) / static_cast<double>(trials)
                              : std::numeric_limits<double>::quiet_NaN();
  return report;
}

}  // namespace sals
