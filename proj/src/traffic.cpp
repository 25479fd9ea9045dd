#include "sals/traffic.hpp"

#include <algorithm>
#include <limits>

#include "sals/error.hpp"

namespace sals {

TrafficReport make_traffic_report(const TrafficCounter& counter, std::size_t seq_len,
                                  std::size_t key_dim) {
  TrafficReport r;
  r.elements_score_phase = counter.score_elements();
  r.elements_reconstruct_phase = counter.reconstruct_elements();
  r.elements_value_phase = counter.value_elements();
  r.baseline_elements = 2.0 * static_cast<double>(seq_len) * static_cast<double>(key_dim);
  r.measured_ratio = r.baseline_elements > 0.0 ? r.measured_total() / r.baseline_elements : 0.0;
  r.predicted_ratio = std::numeric_limits<double>::quiet_NaN();
  r.seq_len = seq_len;
  return r;
}

std::size_t step_budget(const SelectionPolicy& policy, std::size_t seq_len) {
  const std::size_t recent = std::max<std::size_t>(policy.recent, 1);
  return std::min(policy.sink + policy.critical_budget + recent, seq_len);
}

bool has_closed_form(const AttentionConfig& cfg, const SelectionPolicy& policy,
                     std::size_t seq_len, bool dense) {
  if (cfg.traffic_mode == TrafficMode::kIdealized) return true;
  const std::size_t k = dense ? seq_len : step_budget(policy, seq_len);
  return cfg.recent_window <= std::max<std::size_t>(policy.recent, 1) || k == seq_len;
}

PhaseTraffic predict_step_traffic(const AttentionConfig& cfg, const SelectionPolicy& policy,
                                  std::size_t seq_len, bool dense) {
  if (!has_closed_form(cfg, policy, seq_len, dense)) {
    throw InvalidArgument(
        "predict_step_traffic: recent_window > recent leaves the buffered share of the "
        "selection data-dependent");
  }
  const double s = static_cast<double>(seq_len);
  const double r = static_cast<double>(cfg.latent_rank);
  const double nd = static_cast<double>(cfg.key_dim());
  const double k = static_cast<double>(dense ? seq_len : step_budget(policy, seq_len));

  PhaseTraffic p;
  p.score = dense ? 0.0 : s * static_cast<double>(policy.score_rank);
  if (cfg.traffic_mode == TrafficMode::kIdealized) {
    p.reconstruct = k * r;
    p.value = k * r;
    return p;
  }
  const double q = static_cast<double>(std::min(cfg.recent_window, seq_len));
  const double compressed = k - q;
  p.reconstruct = compressed * r + q * nd;
  p.value = compressed * nd * static_cast<double>(cfg.value_bits) / 32.0 + q * nd;
  return p;
}

}  // namespace sals
