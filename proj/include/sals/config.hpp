#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

namespace sals {

// How RoPE pairs the dimensions of a head: (2i, 2i+1) or (i, i + d/2).
enum class RopePairing { kAdjacent, kHalfSplit };

// Itemized counts every element the decode step touches, including the
// value bit width and full-precision recent buffer. Idealized counts
// s*r* for scoring and k*r each for keys and values, nothing else.
enum class TrafficMode { kItemized, kIdealized };

struct AttentionConfig {
  std::size_t num_heads = 1;        // n, key/value heads held in the cache
  std::size_t head_dim = 64;        // d
  std::size_t num_query_heads = 0;  // 0 means equal to num_heads
  double rope_base = 10000.0;
  RopePairing rope_pairing = RopePairing::kAdjacent;
  std::size_t latent_rank = 16;  // r
  std::size_t score_rank = 8;    // r*
  // 2 and 4 select group quantization; 16 and 32 keep values unquantized
  // and only change the width charged by the traffic counter.
  unsigned value_bits = 4;
  std::size_t quant_group = 32;
  std::size_t recent_window = 64;  // w
  std::size_t num_layers = 32;
  TrafficMode traffic_mode = TrafficMode::kItemized;

  std::size_t key_dim() const noexcept { return num_heads * head_dim; }
  std::size_t query_heads() const noexcept {
    return num_query_heads == 0 ? num_heads : num_query_heads;
  }
  std::size_t query_dim() const noexcept { return query_heads() * head_dim; }
  bool quantized_values() const noexcept { return value_bits == 2 || value_bits == 4; }

  // Throws InvalidArgument naming the first offending field.
  void validate() const;

  // r = nd/4, r* = r/2, 4-bit values, group 32 (or nd when smaller),
  // w = 64: the 25% setting.
  static AttentionConfig with_defaults(std::size_t num_heads, std::size_t head_dim);
};

struct SelectionPolicy {
  std::size_t sink = 16;             // x
  std::size_t critical_budget = 432; // y
  std::size_t recent = 64;           // z
  std::size_t score_rank = 8;        // r*
  std::set<std::size_t> dense_layers = {0, 1, 31};

  std::size_t budget() const noexcept { return sink + critical_budget + recent; }
  bool is_dense(std::size_t layer) const { return dense_layers.count(layer) != 0; }

  void validate(const AttentionConfig& cfg) const;

  static SelectionPolicy with_defaults(const AttentionConfig& cfg);
};

struct RunConfig {
  AttentionConfig attention;
  SelectionPolicy policy;
  std::size_t layer = 2;
  std::size_t prefill = 0;
  bool center_covariance = false;
};

// JSON document whose keys mirror the field names above in snake_case.
// Missing keys take defaults derived from num_heads/head_dim; a missing
// recent_window follows "recent", a missing score_rank is latent_rank/2 and
// a missing dense_layers is {0, 1, num_layers - 1}.
RunConfig parse_run_config(std::string_view json_text);
RunConfig load_run_config(const std::filesystem::path& path);
std::string run_config_to_json(const RunConfig& cfg);

struct PlantedToken {
  std::size_t position = 0;
  double gain = 1.0;
};

struct SyntheticSpec {
  std::size_t seq_len = 0;
  std::vector<double> spectrum;  // descending covariance eigenvalues, length nd
  std::uint64_t seed = 0;
  std::optional<PlantedToken> planted;

  void validate(std::size_t key_dim) const;

  // spectrum[i] = scale * ratio^i
  static std::vector<double> geometric_spectrum(std::size_t dim, double ratio,
                                                double scale = 1.0);
};

// Keys: "seq_len", "seed", either "spectrum" (array) or "geometric_decay"
// with "dim" (and optional "scale"), and optional
// "planted_token": {"position", "gain"}.
SyntheticSpec parse_synthetic_spec(std::string_view json_text);
SyntheticSpec load_synthetic_spec(const std::filesystem::path& path);

}  // namespace sals
