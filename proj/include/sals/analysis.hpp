#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "sals/config.hpp"
#include "sals/rope.hpp"
#include "sals/tensor.hpp"
#include "sals/traffic.hpp"

namespace sals {

// Smallest prefix of the descending spectrum whose share of the total
// reaches v percent.
std::size_t rank_at_variance(std::span<const double> eigenvalues, double v);

struct SpectrumReport {
  std::size_t layer = 0;
  std::vector<double> eigenvalues_pre;   // descending, >= 0
  std::vector<double> eigenvalues_post;  // descending, >= 0
  std::size_t rank_pre = 0;
  std::size_t rank_post = 0;
  double v = 90.0;
};

// Mean-centered covariance spectra (scatter / s) of the keys as given and
// after rotating row t to positions[t], with Rank(v) of each.
SpectrumReport key_spectrum_report(const DenseMatrix& keys,
                                   std::span<const std::size_t> positions,
                                   const RotaryTable& table, double v, std::size_t layer = 0);

// Demonstration on the synthetic generator: token t is placed at position t
// (or every position is 0 when rope_enabled is false). The documented
// default generator is a geometric spectrum with ratio 0.5.
SpectrumReport rope_rank_demo(const SyntheticSpec& spec, const AttentionConfig& cfg, double v,
                              bool rope_enabled = true);

// 2sd / (s r* + 2kr) = 1 / (d_r* / 2 + d_r k_s).
double memory_speedup(double d_rstar, double d_r, double k_s);
inline double access_ratio(double d_rstar, double d_r, double k_s) {
  return 1.0 / memory_speedup(d_rstar, d_r, k_s);
}

struct TrafficReconciliation {
  PhaseTraffic measured;
  PhaseTraffic predicted;
  bool matches = false;
  std::string detail;
};

// Compares a decode step's counted traffic to the closed form for the same
// configuration at length s. Exact comparison: both sides are sums of
// integer multiples of 1/32.
TrafficReconciliation reconcile_traffic(const TrafficReport& report, const AttentionConfig& cfg,
                                        const SelectionPolicy& policy, std::size_t seq_len,
                                        bool dense = false);

std::string traffic_report_json(const TrafficReport& report);

}  // namespace sals
