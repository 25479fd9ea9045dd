#pragma once

#include <cstddef>
#include <cstdint>

#include "sals/config.hpp"

namespace sals {

// Element-traffic counter for one decode step. Counts are kept in bits so
// sub-word value widths stay exact; *_elements() report f32-element
// equivalents (bits / 32).
class TrafficCounter {
 public:
  void add_score(std::uint64_t elements, unsigned bits = 32) { score_bits_ += elements * bits; }
  void add_reconstruct(std::uint64_t elements, unsigned bits = 32) {
    reconstruct_bits_ += elements * bits;
  }
  void add_value(std::uint64_t elements, unsigned bits = 32) { value_bits_ += elements * bits; }

  double score_elements() const noexcept { return score_bits_ / 32.0; }
  double reconstruct_elements() const noexcept { return reconstruct_bits_ / 32.0; }
  double value_elements() const noexcept { return value_bits_ / 32.0; }
  double total_elements() const noexcept {
    return (score_bits_ + reconstruct_bits_ + value_bits_) / 32.0;
  }

  void reset() noexcept { *this = TrafficCounter{}; }

 private:
  std::uint64_t score_bits_ = 0;
  std::uint64_t reconstruct_bits_ = 0;
  std::uint64_t value_bits_ = 0;
};

struct PhaseTraffic {
  double score = 0.0;
  double reconstruct = 0.0;
  double value = 0.0;

  double total() const noexcept { return score + reconstruct + value; }
};

struct TrafficReport {
  double elements_score_phase = 0.0;
  double elements_reconstruct_phase = 0.0;
  double elements_value_phase = 0.0;
  double baseline_elements = 0.0;  // 2 * s * nd, a dense step over K and V
  double predicted_ratio = 0.0;    // NaN when no closed form applies
  double measured_ratio = 0.0;
  std::size_t seq_len = 0;
  std::size_t selected = 0;
  std::size_t selected_recent = 0;

  double measured_total() const noexcept {
    return elements_score_phase + elements_reconstruct_phase + elements_value_phase;
  }
};

TrafficReport make_traffic_report(const TrafficCounter& counter, std::size_t seq_len,
                                  std::size_t key_dim);

// Closed-form element counts for one decode step at sequence length s
// (including the current token). With k = min(x + y + max(z, 1), s) selected
// tokens, of which the q most recent are held in the full-precision window:
//
//   itemized:        s*r* + (k - q)*r + q*nd  |  (k - q)*nd*bits/32 + q*nd
//   idealized: s*r* + k*r               |  k*r
//
// q = min(w, s) is only determined when w <= max(z, 1) or every token is
// selected; otherwise there is no closed form and InvalidArgument is thrown.
// Dense layers skip scoring and select all s tokens.
PhaseTraffic predict_step_traffic(const AttentionConfig& cfg, const SelectionPolicy& policy,
                                  std::size_t seq_len, bool dense = false);

bool has_closed_form(const AttentionConfig& cfg, const SelectionPolicy& policy,
                     std::size_t seq_len, bool dense = false);

// Tokens selected by a decode step at length s.
std::size_t step_budget(const SelectionPolicy& policy, std::size_t seq_len);

}  // namespace sals
