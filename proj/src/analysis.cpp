#include "sals/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "sals/calibration.hpp"
#include "sals/error.hpp"
#include "sals/synthetic.hpp"

namespace sals {

std::size_t rank_at_variance(std::span<const double> eigenvalues, double v) {
  if (!(v > 0.0 && v <= 100.0)) throw InvalidArgument("rank_at_variance: v must be in (0, 100]");
  double total = 0.0;
  for (double l : eigenvalues) {
    if (!(l >= 0.0)) throw InvalidArgument("rank_at_variance: eigenvalues must be >= 0");
    total += l;
  }
  if (!(total > 0.0)) throw InvalidArgument("rank_at_variance: all-zero spectrum");
  const double target = v / 100.0;
  double cumulative = 0.0;
  for (std::size_t i = 0; i < eigenvalues.size(); ++i) {
    cumulative += eigenvalues[i];
    // Relative slack of 1e-12 absorbs summation round-off at exact thresholds.
    if (cumulative >= target * total * (1.0 - 1e-12) || i + 1 == eigenvalues.size()) {
      return i + 1;
    }
  }
  return eigenvalues.size();
}

namespace {

std::vector<double> centered_spectrum(const DenseMatrix& keys) {
  Covariance cov(keys.cols());
  cov.accumulate(keys);
  const auto eig = jacobi_eigen(cov.matrix(/*centered=*/true));
  std::vector<double> out = eig.eigenvalues;
  const double inv = keys.rows() ? 1.0 / static_cast<double>(keys.rows()) : 0.0;
  for (auto& l : out) l = std::max(0.0, l) * inv;
  return out;
}

}  // namespace

SpectrumReport key_spectrum_report(const DenseMatrix& keys,
                                   std::span<const std::size_t> positions,
                                   const RotaryTable& table, double v, std::size_t layer) {
  SpectrumReport report;
  report.layer = layer;
  report.v = v;
  report.eigenvalues_pre = centered_spectrum(keys);
  report.eigenvalues_post = centered_spectrum(apply_rope_batch(keys, positions, table));
  report.rank_pre = rank_at_variance(report.eigenvalues_pre, v);
  report.rank_post = rank_at_variance(report.eigenvalues_post, v);
  return report;
}

SpectrumReport rope_rank_demo(const SyntheticSpec& spec, const AttentionConfig& cfg, double v,
                              bool rope_enabled) {
  const DenseMatrix keys = generate_keys(spec, cfg);
  std::vector<std::size_t> positions(keys.rows(), 0);
  if (rope_enabled) std::iota(positions.begin(), positions.end(), 0);
  const RotaryTable table = RotaryTable::for_config(cfg, std::max<std::size_t>(keys.rows(), 1));
  return key_spectrum_report(keys, positions, table, v);
}

double memory_speedup(double d_rstar, double d_r, double k_s) {
  for (double x : {d_rstar, d_r, k_s}) {
    if (!(x > 0.0 && x <= 1.0)) {
      throw InvalidArgument("memory_speedup: ratios must lie in (0, 1]");
    }
  }
  return 1.0 / (d_rstar / 2.0 + d_r * k_s);
}

TrafficReconciliation reconcile_traffic(const TrafficReport& report, const AttentionConfig& cfg,
                                        const SelectionPolicy& policy, std::size_t seq_len,
                                        bool dense) {
  TrafficReconciliation rec;
  rec.measured = {report.elements_score_phase, report.elements_reconstruct_phase,
                  report.elements_value_phase};
  rec.predicted = predict_step_traffic(cfg, policy, seq_len, dense);
  rec.matches = rec.measured.score == rec.predicted.score &&
                rec.measured.reconstruct == rec.predicted.reconstruct &&
                rec.measured.value == rec.predicted.value;
  std::ostringstream ss;
  ss << "score " << rec.measured.score << " vs " << rec.predicted.score << ", reconstruct "
     << rec.measured.reconstruct << " vs " << rec.predicted.reconstruct << ", value "
     << rec.measured.value << " vs " << rec.predicted.value;
  rec.detail = ss.str();
  return rec;
}

std::string traffic_report_json(const TrafficReport& report) {
  nlohmann::json j;
  j["seq_len"] = report.seq_len;
  j["selected"] = report.selected;
  j["selected_recent"] = report.selected_recent;
  j["elements_score_phase"] = report.elements_score_phase;
  j["elements_reconstruct_phase"] = report.elements_reconstruct_phase;
  j["elements_value_phase"] = report.elements_value_phase;
  j["baseline_elements"] = report.baseline_elements;
  j["measured_ratio"] = report.measured_ratio;
  if (std::isnan(report.predicted_ratio)) {
    j["predicted_ratio"] = nullptr;
  } else {
    j["predicted_ratio"] = report.predicted_ratio;
  }
  return j.dump(2);
}

}  // namespace sals
