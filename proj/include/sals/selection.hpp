#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "sals/calibration.hpp"
#include "sals/config.hpp"
#include "sals/latent_cache.hpp"
#include "sals/traffic.hpp"

namespace sals {

struct TokenSelection {
  std::vector<std::size_t> indices;  // unique, ascending
  std::vector<double> scores;        // aligned with indices
  double score_phase_elements = 0.0;
};

// Mean-pools each group of query heads that share a key/value head, giving
// an n*d query for the shared latent space. Identity when the head counts
// match.
std::vector<float> pool_query_heads(std::span<const float> q, const AttentionConfig& cfg);

// score_j = <(U^T q)[:r*], latent_j[:r*]> for every cached token. Credits
// s*r* elements to the counter's score phase.
std::vector<double> latent_scores(std::span<const float> q, const LatentKvCache& cache,
                                  const ProjectionMatrix& p, std::size_t score_rank,
                                  TrafficCounter* counter = nullptr);

// First min(x, s) sink tokens, last min(z, s) recent tokens, and the y
// best-scoring of the rest (ties go to the lower index). Overlaps between
// sink and recent are not refunded to y.
TokenSelection select_topk(std::span<const double> scores, const SelectionPolicy& policy);

// Top-n_c indices of the scores, ties to the lower index, ascending.
std::vector<std::size_t> top_indices(std::span<const double> scores, std::size_t n_c);

// Fraction of the exact attention mass captured by the top-n_c tokens of the
// approximate scores.
double overlap_score(std::span<const double> approx_scores, std::span<const double> exact_probs,
                     std::size_t n_c);

// Per-head scaled softmax of the post-RoPE query against post-RoPE keys,
// averaged over heads into one distribution over tokens.
std::vector<double> exact_attention_probs(std::span<const float> q_rot,
                                          const DenseMatrix& keys_rot,
                                          const AttentionConfig& cfg);

struct SelectionRecallReport {
  std::size_t trials = 0;
  std::size_t n_c = 0;
  double mean_overlap = 0.0;
  double min_overlap = 0.0;
  double planted_recall = 0.0;  // NaN when the spec plants nothing
};

// Seeded trials on synthetic keys. Each trial draws keys from the spec (seed
// offset by the trial index), calibrates a joint projection on them at the
// configured rank, and scores them against a query along the planted
// direction (a fresh key-distribution draw when nothing is planted). The
// query sits at position s-1 and token j at position j, or every position is
// 0 when rope_enabled is false. Overlap uses n_c = min(x+y+z, s) against the
// exact post-RoPE attention; recall asks whether select_topk kept the planted
// token.
SelectionRecallReport selection_recall(std::size_t trials, const SyntheticSpec& spec,
                                       const AttentionConfig& cfg,
                                       const SelectionPolicy& policy, bool rope_enabled = true);

}  // namespace sals
