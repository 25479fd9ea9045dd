#include "cli.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <numeric>
#include <optional>
#include <sstream>
#include <thread>

#include <CLI11.hpp>
#include <json.hpp>

#include "sals/analysis.hpp"
#include "sals/calibration.hpp"
#include "sals/config.hpp"
#include "sals/error.hpp"
#include "sals/latent_cache.hpp"
#include "sals/reference_attention.hpp"
#include "sals/rope.hpp"
#include "sals/selection.hpp"
#include "sals/sparse_attention.hpp"
#include "sals/synthetic.hpp"
#include "sals/tensor.hpp"

namespace sals::cli {

namespace {

namespace fs = std::filesystem;

// Runs fn(i) for i in [0, n) on up to `threads` workers. Each index writes
// only its own output slot, so results do not depend on the worker count.
template <typename Fn>
void parallel_for(std::size_t n, std::size_t threads, Fn&& fn) {
  threads = std::max<std::size_t>(1, std::min(threads, n));
  if (threads == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> workers;
  std::vector<std::exception_ptr> errors(threads);
  for (std::size_t w = 0; w < threads; ++w) {
    workers.emplace_back([&, w] {
      try {
        for (std::size_t i = w; i < n; i += threads) fn(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : workers) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out << text;
  if (!out) throw IoError("write to '" + path.string() + "' failed");
}

std::string format_double(double v) {
  std::ostringstream ss;
  ss << std::setprecision(10) << v;
  return ss.str();
}

// Flags shared by attend/compare/analyze that override config values.
struct Overrides {
  std::optional<std::size_t> latent_rank;
  std::optional<std::size_t> score_rank;
  std::optional<unsigned> value_bits;
  std::optional<std::size_t> recent_window;
  std::optional<std::size_t> sink;
  std::optional<std::size_t> critical;
  std::optional<std::size_t> recent;
  std::optional<std::size_t> layer;
  std::optional<std::size_t> prefill;

  void add_to(CLI::App* app) {
    app->add_option("--latent-rank", latent_rank, "Override latent_rank");
    app->add_option("--score-rank", score_rank, "Override score_rank");
    app->add_option("--value-bits", value_bits, "Override value_bits");
    app->add_option("--recent-window", recent_window, "Override recent_window");
    app->add_option("--sink", sink, "Override sink");
    app->add_option("--critical", critical, "Override critical_budget");
    app->add_option("--recent", recent, "Override recent");
    app->add_option("--layer", layer, "Layer index (dense layers skip sparsification)");
    app->add_option("--prefill", prefill, "Tokens handled by dense prefill before decoding");
  }

  void apply(RunConfig& rc) const {
    auto& a = rc.attention;
    auto& p = rc.policy;
    if (latent_rank) {
      a.latent_rank = *latent_rank;
      if (!score_rank) {
        a.score_rank = std::max<std::size_t>(1, a.latent_rank / 2);
        p.score_rank = a.score_rank;
      }
    }
    if (score_rank) a.score_rank = p.score_rank = *score_rank;
    if (value_bits) a.value_bits = *value_bits;
    if (recent) {
      p.recent = *recent;
      if (!recent_window) a.recent_window = *recent;
    }
    if (recent_window) a.recent_window = *recent_window;
    if (sink) p.sink = *sink;
    if (critical) p.critical_budget = *critical;
    if (layer) rc.layer = *layer;
    if (prefill) rc.prefill = *prefill;
    a.validate();
    p.validate(a);
  }
};

struct Inputs {
  DenseMatrix keys;
  DenseMatrix queries;
  DenseMatrix values;
};

Inputs load_inputs(const std::string& k, const std::string& q, const std::string& v,
                   const AttentionConfig& cfg) {
  Inputs in{read_tensor(k), read_tensor(q), read_tensor(v)};
  if (in.keys.cols() != cfg.key_dim()) {
    throw InvalidArgument("--keys: expected " + std::to_string(cfg.key_dim()) +
                          " columns (num_heads*head_dim), got " +
                          std::to_string(in.keys.cols()));
  }
  if (in.values.cols() != cfg.key_dim() || in.values.rows() != in.keys.rows()) {
    throw InvalidArgument("--values: shape must match --keys");
  }
  if (in.queries.cols() != cfg.query_dim() || in.queries.rows() != in.keys.rows()) {
    throw InvalidArgument("--queries: expected " + std::to_string(in.keys.rows()) + "x" +
                          std::to_string(cfg.query_dim()));
  }
  return in;
}

ProjectionMatrix obtain_projection(const std::string& proj_path, const DenseMatrix& keys,
                                   const RunConfig& rc) {
  const auto& cfg = rc.attention;
  if (!proj_path.empty()) {
    DenseMatrix U = read_tensor(proj_path);
    if (U.rows() != cfg.key_dim() || U.cols() != cfg.latent_rank) {
      throw InvalidArgument("--proj: expected " + std::to_string(cfg.key_dim()) + "x" +
                            std::to_string(cfg.latent_rank) + " (latent_rank), got " +
                            std::to_string(U.rows()) + "x" + std::to_string(U.cols()));
    }
    return projection_from_basis(std::move(U));
  }
  Covariance cov(cfg.key_dim());
  cov.accumulate(keys);
  return compute_joint_projection(cov, cfg.latent_rank, rc.center_covariance);
}

struct SalsRun {
  DenseMatrix output;
  std::vector<TrafficReport> steps;
  std::vector<bool> reconciled;  // empty entries where no closed form applies
  std::optional<LatentKvCache> cache;
};

// Dense prefill over the first P tokens, then one SALS decode step per
// remaining token.
SalsRun run_sals(const Inputs& in, const ProjectionMatrix& proj, const RunConfig& rc) {
  const auto& cfg = rc.attention;
  const std::size_t s = in.keys.rows();
  const std::size_t p = std::min(rc.prefill, s);
  const RotaryTable table = RotaryTable::for_config(cfg, std::max<std::size_t>(s, 1));

  SalsRun run;
  run.output = DenseMatrix(s, cfg.query_dim());
  if (p > 0) {
    const DenseMatrix dense = full_attention(in.queries.slice_rows(0, p), in.keys.slice_rows(0, p),
                                             in.values.slice_rows(0, p), cfg, table);
    for (std::size_t t = 0; t < p; ++t) {
      std::copy(dense.row(t).begin(), dense.row(t).end(), run.output.row(t).begin());
    }
  }
  run.cache.emplace(cfg);
  prefill(in.keys.slice_rows(0, p), in.values.slice_rows(0, p), *run.cache, proj);
  const bool dense_layer = rc.policy.is_dense(rc.layer);
  for (std::size_t t = p; t < s; ++t) {
    const auto step = sals_decode_step(in.queries.row(t), in.keys.row(t), in.values.row(t),
                                       *run.cache, proj, rc.policy, cfg, table, t, rc.layer);
    std::copy(step.y.begin(), step.y.end(), run.output.row(t).begin());
    run.steps.push_back(step.traffic);
    if (has_closed_form(cfg, rc.policy, t + 1, dense_layer)) {
      run.reconciled.push_back(
          reconcile_traffic(step.traffic, cfg, rc.policy, t + 1, dense_layer).matches);
    }
  }
  return run;
}

nlohmann::json report_to_json(const TrafficReport& r) {
  return nlohmann::json::parse(traffic_report_json(r));
}

// ---------------------------------------------------------------- gen-data

struct GenDataArgs {
  std::string spec;
  std::string config;
  std::string out;
  std::string queries_out;
  std::string values_out;
  std::optional<std::uint64_t> seed;
};

int cmd_gen_data(const GenDataArgs& a, std::ostream& err) {
  SyntheticSpec spec = load_synthetic_spec(a.spec);
  if (a.seed) spec.seed = *a.seed;
  AttentionConfig cfg;
  if (!a.config.empty()) {
    cfg = load_run_config(a.config).attention;
  } else {
    cfg = AttentionConfig::with_defaults(1, spec.spectrum.size());
  }
  const DenseMatrix keys = generate_keys(spec, cfg);
  write_tensor(keys, a.out);
  if (!a.queries_out.empty()) {
    SyntheticSpec qs = spec;
    qs.planted.reset();
    qs.seed = spec.seed ^ 0x5155455259ull;
    DenseMatrix q = generate_keys(qs, cfg);
    if (cfg.query_dim() != cfg.key_dim()) {
      q = generate_gaussian(spec.seq_len, cfg.query_dim(), qs.seed);
    }
    write_tensor(q, a.queries_out);
  }
  if (!a.values_out.empty()) {
    write_tensor(generate_gaussian(spec.seq_len, cfg.key_dim(), spec.seed ^ 0x56414c5545ull),
                 a.values_out);
  }
  err << "gen-data: wrote " << keys.rows() << "x" << keys.cols() << " keys to " << a.out << "\n";
  return kExitOk;
}

// --------------------------------------------------------------- calibrate

struct CalibrateArgs {
  std::vector<std::string> keys;
  std::size_t rank = 0;
  std::string out;
  std::string kind = "joint";
  std::size_t heads = 0;
  std::string config;
  bool center = false;
  std::size_t threads = 1;
};

int cmd_calibrate(const CalibrateArgs& a, std::ostream& err) {
  std::vector<DenseMatrix> batches(a.keys.size());
  parallel_for(a.keys.size(), a.threads, [&](std::size_t i) { batches[i] = read_tensor(a.keys[i]); });
  const std::size_t dim = batches.front().cols();
  for (std::size_t i = 0; i < batches.size(); ++i) {
    if (batches[i].cols() != dim) {
      throw InvalidArgument("--keys: '" + a.keys[i] + "' has " +
                            std::to_string(batches[i].cols()) + " columns, expected " +
                            std::to_string(dim));
    }
  }
  std::vector<Covariance> partial(batches.size(), Covariance(dim));
  parallel_for(batches.size(), a.threads, [&](std::size_t i) { partial[i].accumulate(batches[i]); });
  Covariance cov(dim);
  for (const auto& c : partial) cov.merge(c);

  std::size_t heads = a.heads;
  if (heads == 0) heads = a.config.empty() ? 1 : load_run_config(a.config).attention.num_heads;

  ProjectionMatrix proj;
  if (a.kind == "joint") {
    proj = compute_joint_projection(cov, a.rank, a.center);
  } else if (a.kind == "per_head") {
    proj = compute_per_head_projection(cov, a.rank, heads, a.center);
  } else {
    throw InvalidArgument("--kind: expected 'joint' or 'per_head'");
  }
  write_tensor(proj.U, a.out);

  nlohmann::json side;
  side["rank"] = proj.rank();
  side["dim"] = proj.dim();
  side["kind"] = proj.kind == ProjectionKind::kJoint ? "joint" : "per_head";
  side["num_heads"] = heads;
  side["centered"] = a.center;
  side["eigenvalues"] = proj.eigenvalues;
  side["samples_seen"] = cov.samples_seen();
  side["captured_energy"] = captured_energy(cov, proj, a.center);
  side["total_energy"] = cov.matrix(a.center).trace();
  side["orthonormality_error"] = orthonormality_error(proj.U);
  write_text(a.out + ".json", side.dump(2) + "\n");
  err << "calibrate: rank " << proj.rank() << " projection from " << cov.samples_seen()
      << " samples written to " << a.out << "\n";
  return kExitOk;
}

// ------------------------------------------------------------------ attend

struct AttentionArgs {
  std::string config;
  std::string keys;
  std::string queries;
  std::string values;
  std::string proj;
  std::optional<std::uint64_t> seed;
  Overrides overrides;
};

struct AttendArgs : AttentionArgs {
  std::string out;
  std::string traffic;
  std::string dump_cache;
};

int cmd_attend(const AttendArgs& a, std::ostream& err) {
  RunConfig rc = load_run_config(a.config);
  a.overrides.apply(rc);
  const Inputs in = load_inputs(a.keys, a.queries, a.values, rc.attention);
  const ProjectionMatrix proj = obtain_projection(a.proj, in.keys, rc);
  SalsRun run = run_sals(in, proj, rc);
  write_tensor(run.output, a.out);

  nlohmann::json j;
  j["layer"] = rc.layer;
  j["dense_layer"] = rc.policy.is_dense(rc.layer);
  j["prefill"] = std::min(rc.prefill, in.keys.rows());
  j["traffic_mode"] = rc.attention.traffic_mode == TrafficMode::kItemized ? "itemized"
                                                                         : "idealized";
  j["steps"] = nlohmann::json::array();
  for (const auto& s : run.steps) j["steps"].push_back(report_to_json(s));
  j["final_step"] = run.steps.empty() ? nlohmann::json(nullptr) : report_to_json(run.steps.back());
  j["reconciled_steps"] = std::count(run.reconciled.begin(), run.reconciled.end(), true);
  j["closed_form_steps"] = run.reconciled.size();
  j["stored_elements"] = run.cache->stored_elements();
  const std::string traffic_path = a.traffic.empty() ? a.out + ".traffic.json" : a.traffic;
  write_text(traffic_path, j.dump(2) + "\n");

  if (!a.dump_cache.empty()) run.cache->dump(a.dump_cache);
  err << "attend: " << run.steps.size() << " decode steps, output " << run.output.rows() << "x"
      << run.output.cols() << " written to " << a.out << "\n";
  if (std::count(run.reconciled.begin(), run.reconciled.end(), false) > 0) {
    err << "attend: traffic counter disagrees with the closed-form model\n";
    return kExitDataError;
  }
  return kExitOk;
}

// ----------------------------------------------------------------- compare

struct CompareArgs : AttentionArgs {
  std::string methods = "full,post_rope,pre_rope_full,sals";
  std::string out_dir;
  std::string csv;
};

int cmd_compare(const CompareArgs& a, std::ostream& out, std::ostream& err) {
  RunConfig rc = load_run_config(a.config);
  a.overrides.apply(rc);
  const auto& cfg = rc.attention;
  const Inputs in = load_inputs(a.keys, a.queries, a.values, cfg);
  const std::size_t s = in.keys.rows();
  const double nd = static_cast<double>(cfg.key_dim());
  const double r = static_cast<double>(cfg.latent_rank);
  const RotaryTable table = RotaryTable::for_config(cfg, std::max<std::size_t>(s, 1));

  std::vector<std::string> methods;
  {
    std::stringstream ss(a.methods);
    std::string m;
    while (std::getline(ss, m, ',')) {
      if (m != "full" && m != "post_rope" && m != "pre_rope_full" && m != "sals") {
        throw InvalidArgument("--methods: unknown method '" + m + "'");
      }
      methods.push_back(m);
    }
  }

  const DenseMatrix reference = full_attention(in.queries, in.keys, in.values, cfg, table);
  std::ostringstream csv;
  csv << "method,frobenius_error,max_abs_error,traffic_elements,traffic_ratio\n";
  const double baseline = 2.0 * static_cast<double>(s) * nd;
  for (const auto& m : methods) {
    DenseMatrix result;
    double traffic = 0.0;
    if (m == "full") {
      result = reference;
      traffic = baseline;
    } else if (m == "post_rope") {
      std::vector<std::size_t> pos(s);
      std::iota(pos.begin(), pos.end(), 0);
      Covariance cov(cfg.key_dim());
      cov.accumulate(apply_rope_batch(in.keys, pos, table));
      const auto u_post = compute_joint_projection(cov, cfg.latent_rank, rc.center_covariance);
      result = post_rope_lowrank_attention(in.queries, in.keys, in.values, u_post, cfg, table);
      traffic = static_cast<double>(s) * (r + nd);
    } else if (m == "pre_rope_full") {
      const auto proj = obtain_projection(a.proj, in.keys, rc);
      auto base = pre_rope_lowrank_full(in.queries, in.keys, in.values, proj, cfg, table);
      result = std::move(base.output);
      traffic = base.traffic.total();
    } else {
      const auto proj = obtain_projection(a.proj, in.keys, rc);
      auto run = run_sals(in, proj, rc);
      result = std::move(run.output);
      traffic = run.steps.empty() ? 0.0 : run.steps.back().measured_total();
    }
    csv << m << "," << format_double(frobenius_distance(result, reference)) << ","
        << format_double(max_abs_difference(result, reference)) << "," << format_double(traffic)
        << "," << format_double(baseline > 0 ? traffic / baseline : 0.0) << "\n";
    if (!a.out_dir.empty()) {
      fs::create_directories(a.out_dir);
      write_tensor(result, fs::path(a.out_dir) / (m + ".sals"));
    }
  }
  if (a.csv.empty()) {
    out << csv.str();
  } else {
    write_text(a.csv, csv.str());
  }
  err << "compare: " << methods.size() << " methods over " << s << " tokens\n";
  return kExitOk;
}

// ----------------------------------------------------------------- analyze

struct AnalyzeArgs {
  bool rank = false;
  bool overlap = false;
  bool traffic = false;
  std::string config;
  std::vector<std::string> keys;
  std::vector<std::string> queries;
  std::string synthetic;
  double v = 90.0;
  std::vector<std::size_t> n_c;
  std::size_t seq_len = 1024;
  std::uint64_t seed = 0;
  std::string out;
  std::size_t threads = 1;
  bool no_rope = false;
  Overrides overrides;
};

double percentile(std::vector<double> values, double q) {
  if (values.empty()) return std::nan("");
  std::sort(values.begin(), values.end());
  const double pos = q * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = static_cast<std::size_t>(std::ceil(pos));
  return values[lo] + (values[hi] - values[lo]) * (pos - static_cast<double>(lo));
}

std::string analyze_rank(const AnalyzeArgs& a) {
  std::ostringstream csv;
  csv << "layer,rank_pre,rank_post,v\n";
  if (!a.synthetic.empty()) {
    SyntheticSpec spec = load_synthetic_spec(a.synthetic);
    if (a.seed) spec.seed = a.seed;
    AttentionConfig cfg = a.config.empty()
                              ? AttentionConfig::with_defaults(1, spec.spectrum.size())
                              : load_run_config(a.config).attention;
    const auto rep = rope_rank_demo(spec, cfg, a.v, !a.no_rope);
    csv << 0 << "," << rep.rank_pre << "," << rep.rank_post << "," << format_double(a.v) << "\n";
    return csv.str();
  }
  if (a.config.empty()) throw InvalidArgument("--config: required with --keys for --rank");
  const auto cfg = load_run_config(a.config).attention;
  std::vector<SpectrumReport> reports(a.keys.size());
  parallel_for(a.keys.size(), a.threads, [&](std::size_t layer) {
    const DenseMatrix keys = read_tensor(a.keys[layer]);
    if (keys.cols() != cfg.key_dim()) {
      throw InvalidArgument("--keys: '" + a.keys[layer] + "' does not have num_heads*head_dim columns");
    }
    std::vector<std::size_t> pos(keys.rows(), 0);
    if (!a.no_rope) std::iota(pos.begin(), pos.end(), 0);
    const RotaryTable table = RotaryTable::for_config(cfg, std::max<std::size_t>(keys.rows(), 1));
    reports[layer] = key_spectrum_report(keys, pos, table, a.v, layer);
  });
  for (const auto& rep : reports) {
    csv << rep.layer << "," << rep.rank_pre << "," << rep.rank_post << "," << format_double(a.v)
        << "\n";
  }
  return csv.str();
}

std::string analyze_overlap(const AnalyzeArgs& a) {
  if (a.config.empty()) throw InvalidArgument("--config: required for --overlap");
  if (a.keys.size() != a.queries.size() || a.keys.empty()) {
    throw InvalidArgument("--overlap: give one --queries per --keys (one pair per layer)");
  }
  RunConfig rc = load_run_config(a.config);
  a.overrides.apply(rc);
  const auto& cfg = rc.attention;
  std::vector<std::size_t> sweep = a.n_c;
  if (sweep.empty()) sweep.push_back(rc.policy.budget());

  std::ostringstream csv;
  csv << "layer,n_c,queries,mean_os,p10_os\n";
  for (std::size_t layer = 0; layer < a.keys.size(); ++layer) {
    const DenseMatrix keys = read_tensor(a.keys[layer]);
    const DenseMatrix queries = read_tensor(a.queries[layer]);
    if (keys.cols() != cfg.key_dim() || queries.cols() != cfg.query_dim() ||
        queries.rows() != keys.rows()) {
      throw InvalidArgument("--overlap: layer " + std::to_string(layer) +
                            " tensors do not match num_heads/head_dim/num_query_heads");
    }
    const std::size_t s = keys.rows();
    Covariance cov(cfg.key_dim());
    cov.accumulate(keys);
    const auto proj = compute_joint_projection(cov, cfg.latent_rank, rc.center_covariance);
    AttentionConfig cache_cfg = cfg;
    cache_cfg.value_bits = 32;
    cache_cfg.recent_window = 0;
    LatentKvCache cache(cache_cfg);
    for (std::size_t t = 0; t < s; ++t) cache.append(keys.row(t), keys.row(t), t, proj);
    const RotaryTable table = RotaryTable::for_config(cfg, std::max<std::size_t>(s, 1));
    std::vector<std::size_t> pos(s);
    std::iota(pos.begin(), pos.end(), 0);
    const DenseMatrix keys_rot = apply_rope_batch(keys, pos, table);
    const auto all_scores_q = [&](std::size_t i) {
      return latent_scores(pool_query_heads(queries.row(i), cfg), cache, proj,
                           rc.policy.score_rank);
    };

    // per_row[i][m]: overlap of query i at sweep entry m, NaN when i+1 <= n_c.
    std::vector<std::vector<double>> per_row(s, std::vector<double>(sweep.size(), std::nan("")));
    parallel_for(s, a.threads, [&](std::size_t i) {
      auto approx = all_scores_q(i);
      approx.resize(i + 1);
      const auto q_rot = apply_rope(queries.row(i), i, table);
      const auto probs = exact_attention_probs(q_rot, keys_rot.slice_rows(0, i + 1), cfg);
      for (std::size_t m = 0; m < sweep.size(); ++m) {
        if (i + 1 > sweep[m]) per_row[i][m] = overlap_score(approx, probs, sweep[m]);
      }
    });
    for (std::size_t m = 0; m < sweep.size(); ++m) {
      std::vector<double> vals;
      for (const auto& row : per_row) {
        if (!std::isnan(row[m])) vals.push_back(row[m]);
      }
      const double mean =
          vals.empty() ? 1.0 : std::accumulate(vals.begin(), vals.end(), 0.0) / vals.size();
      const double p10 = vals.empty() ? 1.0 : percentile(vals, 0.10);
      csv << layer << "," << sweep[m] << "," << vals.size() << "," << format_double(mean) << ","
          << format_double(p10) << "\n";
    }
  }
  return csv.str();
}

std::string analyze_traffic(const AnalyzeArgs& a) {
  if (a.config.empty()) throw InvalidArgument("--config: required for --traffic");
  RunConfig rc = load_run_config(a.config);
  a.overrides.apply(rc);
  const auto& cfg = rc.attention;
  const std::size_t s = a.seq_len;
  if (s == 0) throw InvalidArgument("--seq-len: must be >= 1");
  Inputs in{generate_gaussian(s, cfg.key_dim(), a.seed),
            generate_gaussian(s, cfg.query_dim(), a.seed + 1),
            generate_gaussian(s, cfg.key_dim(), a.seed + 2)};
  Covariance cov(cfg.key_dim());
  cov.accumulate(in.keys);
  const auto proj = compute_joint_projection(cov, cfg.latent_rank, rc.center_covariance);
  LatentKvCache cache(cfg);
  prefill(in.keys.slice_rows(0, s - 1), in.values.slice_rows(0, s - 1), cache, proj);
  const RotaryTable table = RotaryTable::for_config(cfg, s);
  const auto step = sals_decode_step(in.queries.row(s - 1), in.keys.row(s - 1),
                                     in.values.row(s - 1), cache, proj, rc.policy, cfg, table,
                                     s - 1, rc.layer);
  nlohmann::json j = report_to_json(step.traffic);
  j["layer"] = rc.layer;
  j["dense_layer"] = step.dense;
  j["traffic_mode"] =
      cfg.traffic_mode == TrafficMode::kItemized ? "itemized" : "idealized";
  if (has_closed_form(cfg, rc.policy, s, step.dense)) {
    const auto rec = reconcile_traffic(step.traffic, cfg, rc.policy, s, step.dense);
    j["predicted"] = {{"score", rec.predicted.score},
                      {"reconstruct", rec.predicted.reconstruct},
                      {"value", rec.predicted.value}};
    j["reconciled"] = rec.matches;
  } else {
    j["reconciled"] = nullptr;
  }
  const double nd = static_cast<double>(cfg.key_dim());
  const double d_rstar = static_cast<double>(rc.policy.score_rank) / nd;
  const double d_r = static_cast<double>(cfg.latent_rank) / nd;
  const double k_s = static_cast<double>(step_budget(rc.policy, s)) / static_cast<double>(s);
  j["model"] = {{"d_rstar", d_rstar},
                {"d_r", d_r},
                {"k_s", k_s},
                {"memory_speedup", memory_speedup(d_rstar, d_r, k_s)},
                {"access_ratio", access_ratio(d_rstar, d_r, k_s)}};
  return j.dump(2) + "\n";
}

int cmd_analyze(const AnalyzeArgs& a, std::ostream& out, std::ostream& err) {
  const int modes = int(a.rank) + int(a.overlap) + int(a.traffic);
  if (modes != 1) {
    err << "analyze: choose exactly one of --rank, --overlap, --traffic\n";
    return kExitUsage;
  }
  std::string text;
  if (a.rank) {
    if (a.keys.empty() && a.synthetic.empty()) {
      err << "analyze --rank: give --keys (one per layer) or --synthetic\n";
      return kExitUsage;
    }
    text = analyze_rank(a);
  } else if (a.overlap) {
    text = analyze_overlap(a);
  } else {
    text = analyze_traffic(a);
  }
  if (a.out.empty()) {
    out << text;
  } else {
    write_text(a.out, text);
  }
  return kExitOk;
}

void add_attention_inputs(CLI::App* app, AttentionArgs& a) {
  app->add_option("--config", a.config, "JSON run configuration")->required();
  app->add_option("--keys", a.keys, "Pre-RoPE keys tensor (s x nd)")->required();
  app->add_option("--queries", a.queries, "Pre-RoPE queries tensor")->required();
  app->add_option("--values", a.values, "Values tensor (s x nd)")->required();
  app->add_option("--proj", a.proj, "Projection tensor from `calibrate` (default: calibrate on --keys)");
  app->add_option("--seed", a.seed, "Seed (attend and compare are deterministic)");
  a.overrides.add_to(app);
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Sparse attention in a shared low-rank latent space"};
  app.name("sals");
  app.require_subcommand(1);
  std::size_t threads = 1;
  app.add_option("--threads", threads, "Worker cap; results do not depend on it");

  GenDataArgs gen;
  auto* gen_cmd = app.add_subcommand("gen-data", "Generate synthetic key/query/value tensors");
  gen_cmd->add_option("--spec", gen.spec, "Synthetic spec JSON")->required();
  gen_cmd->add_option("--config", gen.config, "Run configuration JSON");
  gen_cmd->add_option("--out", gen.out, "Keys output tensor")->required();
  gen_cmd->add_option("--queries-out", gen.queries_out, "Optional queries output tensor");
  gen_cmd->add_option("--values-out", gen.values_out, "Optional values output tensor");
  gen_cmd->add_option("--seed", gen.seed, "Override the spec seed");

  CalibrateArgs cal;
  auto* cal_cmd = app.add_subcommand("calibrate", "Compute a projection from pre-RoPE keys");
  cal_cmd->add_option("--keys", cal.keys, "Key tensors (repeatable)")->required();
  cal_cmd->add_option("--rank", cal.rank, "Latent rank r")->required();
  cal_cmd->add_option("--out", cal.out, "Projection tensor output (sidecar: <out>.json)")->required();
  cal_cmd->add_option("--kind", cal.kind, "joint or per_head");
  cal_cmd->add_option("--heads", cal.heads, "Head count for per_head");
  cal_cmd->add_option("--config", cal.config, "Run configuration JSON");
  cal_cmd->add_flag("--center", cal.center, "Mean-center the covariance");
  std::uint64_t cal_seed = 0;
  cal_cmd->add_option("--seed", cal_seed, "Accepted for uniformity; calibration is deterministic");

  AttendArgs att;
  auto* att_cmd = app.add_subcommand("attend", "Prefill then decode with sparse latent attention");
  add_attention_inputs(att_cmd, att);
  att_cmd->add_option("--out", att.out, "Output tensor (s x query dim)")->required();
  att_cmd->add_option("--traffic", att.traffic, "Traffic JSON path (default <out>.traffic.json)");
  att_cmd->add_option("--dump-cache", att.dump_cache, "Write the final cache under this prefix");

  CompareArgs cmp;
  auto* cmp_cmd = app.add_subcommand("compare", "Error and traffic of baselines vs full attention");
  add_attention_inputs(cmp_cmd, cmp);
  cmp_cmd->add_option("--methods", cmp.methods, "Comma list of full,post_rope,pre_rope_full,sals");
  cmp_cmd->add_option("--out-dir", cmp.out_dir, "Write <method>.sals outputs here");
  cmp_cmd->add_option("--csv", cmp.csv, "CSV path (default stdout)");

  AnalyzeArgs ana;
  auto* ana_cmd = app.add_subcommand("analyze", "Rank, overlap and traffic analyses");
  ana_cmd->add_flag("--rank", ana.rank, "Rank(v) before/after RoPE, CSV");
  ana_cmd->add_flag("--overlap", ana.overlap, "Per-layer overlap scores, CSV");
  ana_cmd->add_flag("--traffic", ana.traffic, "Traffic report for one decode step, JSON");
  ana_cmd->add_option("--config", ana.config, "Run configuration JSON");
  ana_cmd->add_option("--keys", ana.keys, "Key tensors, one per layer");
  ana_cmd->add_option("--queries", ana.queries, "Query tensors, one per layer");
  ana_cmd->add_option("--synthetic", ana.synthetic, "Synthetic spec for --rank");
  ana_cmd->add_option("--v", ana.v, "Variance percentage for Rank(v)");
  ana_cmd->add_option("--nc", ana.n_c, "N_c sweep for --overlap")->delimiter(',');
  ana_cmd->add_option("--seq-len", ana.seq_len, "Sequence length for --traffic");
  ana_cmd->add_option("--seed", ana.seed, "Seed for synthetic inputs");
  ana_cmd->add_option("--out", ana.out, "Output path (default stdout)");
  ana_cmd->add_flag("--no-rope", ana.no_rope, "Place every token at position 0");
  ana.overrides.add_to(ana_cmd);

  if (args.empty()) {
    err << app.help();
    return kExitUsage;
  }
  if (!args.front().empty() && args.front().front() != '-') {
    const auto subs = app.get_subcommands([](CLI::App*) { return true; });
    const bool known = std::any_of(subs.begin(), subs.end(),
                                   [&](CLI::App* s) { return s->get_name() == args.front(); });
    if (!known) {
      err << "sals: unknown subcommand '" << args.front() << "'\n";
      return kExitUsage;
    }
  }
  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "sals: " << e.what() << "\n";
    return kExitUsage;
  }

  cal.threads = threads;
  ana.threads = threads;
  try {
    if (*gen_cmd) return cmd_gen_data(gen, err);
    if (*cal_cmd) return cmd_calibrate(cal, err);
    if (*att_cmd) return cmd_attend(att, err);
    if (*cmp_cmd) return cmd_compare(cmp, out, err);
    if (*ana_cmd) return cmd_analyze(ana, out, err);
  } catch (const sals::Error& e) {
    err << "sals: " << e.what() << "\n";
    return kExitDataError;
  } catch (const std::exception& e) {
    err << "sals: " << e.what() << "\n";
    return kExitDataError;
  }
  err << app.help();
  return kExitUsage;
}

}  // namespace sals::cli
