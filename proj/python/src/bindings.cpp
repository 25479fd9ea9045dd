#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <algorithm>
#include <numeric>

#include "sals/analysis.hpp"
#include "sals/calibration.hpp"
#include "sals/config.hpp"
#include "sals/error.hpp"
#include "sals/latent_cache.hpp"
#include "sals/reference_attention.hpp"
#include "sals/rope.hpp"
#include "sals/selection.hpp"
#include "sals/sparse_attention.hpp"
#include "sals/tensor.hpp"

namespace py = pybind11;
using namespace sals;

namespace {

using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;
using DoubleArray = py::array_t<double, py::array::c_style | py::array::forcecast>;

DenseMatrix to_matrix(const FloatArray& a) {
  if (a.ndim() == 1) {
    return DenseMatrix(1, a.shape(0), std::vector<float>(a.data(), a.data() + a.size()));
  }
  if (a.ndim() != 2) throw InvalidArgument("expected a 1-D or 2-D array");
  return DenseMatrix(a.shape(0), a.shape(1), std::vector<float>(a.data(), a.data() + a.size()));
}

py::array_t<float> to_array(const DenseMatrix& m) {
  py::array_t<float> out({m.rows(), m.cols()});
  std::copy(m.data().begin(), m.data().end(), out.mutable_data());
  return out;
}

py::dict traffic_dict(const TrafficReport& r) {
  py::dict d;
  d["elements_score_phase"] = r.elements_score_phase;
  d["elements_reconstruct_phase"] = r.elements_reconstruct_phase;
  d["elements_value_phase"] = r.elements_value_phase;
  d["baseline_elements"] = r.baseline_elements;
  d["measured_ratio"] = r.measured_ratio;
  d["predicted_ratio"] = r.predicted_ratio;
  d["seq_len"] = r.seq_len;
  d["selected"] = r.selected;
  return d;
}

ProjectionMatrix projection_for(const FloatArray& U) {
  return projection_from_basis(to_matrix(U));
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Sparse attention over a low-rank latent key cache";

  py::register_exception<InvalidArgument>(m, "InvalidArgument", PyExc_ValueError);
  py::register_exception<FormatError>(m, "FormatError", PyExc_ValueError);
  py::register_exception<IoError>(m, "IoError", PyExc_OSError);
  py::register_exception<ConvergenceError>(m, "ConvergenceError", PyExc_RuntimeError);

  py::enum_<TrafficMode>(m, "TrafficMode")
      .value("itemized", TrafficMode::kItemized)
      .value("idealized", TrafficMode::kIdealized);
  py::enum_<RopePairing>(m, "RopePairing")
      .value("adjacent", RopePairing::kAdjacent)
      .value("half_split", RopePairing::kHalfSplit);

  py::class_<AttentionConfig>(m, "AttentionConfig")
      .def(py::init([](std::size_t num_heads, std::size_t head_dim) {
             return AttentionConfig::with_defaults(num_heads, head_dim);
           }),
           py::arg("num_heads") = 1, py::arg("head_dim") = 64)
      .def_readwrite("num_heads", &AttentionConfig::num_heads)
      .def_readwrite("head_dim", &AttentionConfig::head_dim)
      .def_readwrite("num_query_heads", &AttentionConfig::num_query_heads)
      .def_readwrite("rope_base", &AttentionConfig::rope_base)
      .def_readwrite("rope_pairing", &AttentionConfig::rope_pairing)
      .def_readwrite("latent_rank", &AttentionConfig::latent_rank)
      .def_readwrite("score_rank", &AttentionConfig::score_rank)
      .def_readwrite("value_bits", &AttentionConfig::value_bits)
      .def_readwrite("quant_group", &AttentionConfig::quant_group)
      .def_readwrite("recent_window", &AttentionConfig::recent_window)
      .def_readwrite("num_layers", &AttentionConfig::num_layers)
      .def_readwrite("traffic_mode", &AttentionConfig::traffic_mode)
      .def_property_readonly("key_dim", &AttentionConfig::key_dim)
      .def("validate", &AttentionConfig::validate);

  py::class_<SelectionPolicy>(m, "SelectionPolicy")
      .def(py::init([](std::size_t sink, std::size_t critical, std::size_t recent,
                       std::size_t score_rank, std::set<std::size_t> dense_layers) {
             SelectionPolicy p;
             p.sink = sink;
             p.critical_budget = critical;
             p.recent = recent;
             p.score_rank = score_rank;
             p.dense_layers = std::move(dense_layers);
             return p;
           }),
           py::arg("sink") = 16, py::arg("critical_budget") = 432, py::arg("recent") = 64,
           py::arg("score_rank") = 8,
           py::arg("dense_layers") = std::set<std::size_t>{0, 1, 31})
      .def_readwrite("sink", &SelectionPolicy::sink)
      .def_readwrite("critical_budget", &SelectionPolicy::critical_budget)
      .def_readwrite("recent", &SelectionPolicy::recent)
      .def_readwrite("score_rank", &SelectionPolicy::score_rank)
      .def_readwrite("dense_layers", &SelectionPolicy::dense_layers);

  m.def("read_tensor", [](const std::string& path) { return to_array(read_tensor(path)); },
        py::arg("path"));
  m.def("write_tensor",
        [](const FloatArray& a, const std::string& path) { write_tensor(to_matrix(a), path); },
        py::arg("array"), py::arg("path"));

  m.def(
      "calibrate",
      [](const FloatArray& keys, std::size_t rank, const std::string& kind,
         std::size_t num_heads, bool centered) {
        const DenseMatrix k = to_matrix(keys);
        Covariance cov(k.cols());
        cov.accumulate(k);
        ProjectionMatrix p;
        if (kind == "joint") {
          p = compute_joint_projection(cov, rank, centered);
        } else if (kind == "per_head") {
          p = compute_per_head_projection(cov, rank, num_heads, centered);
        } else {
          throw InvalidArgument("kind must be 'joint' or 'per_head'");
        }
        return py::make_tuple(to_array(p.U), p.eigenvalues, captured_energy(cov, p, centered));
      },
      py::arg("keys"), py::arg("rank"), py::arg("kind") = "joint", py::arg("num_heads") = 1,
      py::arg("centered") = false,
      "Returns (U, eigenvalues, captured_energy) for the keys' covariance.");

  m.def(
      "apply_rope",
      [](const FloatArray& x, std::vector<std::size_t> positions, std::size_t head_dim,
         double base, RopePairing pairing) {
        const DenseMatrix X = to_matrix(x);
        const std::size_t maxpos =
            positions.empty() ? 1 : *std::max_element(positions.begin(), positions.end()) + 1;
        return to_array(apply_rope_batch(X, positions, RotaryTable(maxpos, head_dim, base, pairing)));
      },
      py::arg("x"), py::arg("positions"), py::arg("head_dim"), py::arg("base") = 10000.0,
      py::arg("pairing") = RopePairing::kAdjacent);

  m.def(
      "select_topk",
      [](const DoubleArray& scores, std::size_t sink, std::size_t critical, std::size_t recent) {
        SelectionPolicy p;
        p.sink = sink;
        p.critical_budget = critical;
        p.recent = recent;
        return select_topk(std::span<const double>(scores.data(), scores.size()), p).indices;
      },
      py::arg("scores"), py::arg("sink"), py::arg("critical_budget"), py::arg("recent"));

  m.def(
      "quantize_roundtrip",
      [](const FloatArray& v, unsigned bits, std::size_t group) {
        const auto q = quantize_value(std::span<const float>(v.data(), v.size()), bits, group);
        return py::make_tuple(dequantize_value(q), q.scales);
      },
      py::arg("values"), py::arg("bits"), py::arg("group"),
      "Returns (dequantized values, per-group scales).");

  m.def("memory_speedup", &memory_speedup, py::arg("d_rstar"), py::arg("d_r"), py::arg("k_s"));
  m.def("rank_at_variance",
        [](std::vector<double> eigenvalues, double v) { return rank_at_variance(eigenvalues, v); },
        py::arg("eigenvalues"), py::arg("v"));

  m.def(
      "full_attention",
      [](const FloatArray& Q, const FloatArray& K, const FloatArray& V,
         const AttentionConfig& cfg) {
        const DenseMatrix k = to_matrix(K);
        return to_array(full_attention(to_matrix(Q), k, to_matrix(V), cfg,
                                       RotaryTable::for_config(cfg, std::max<std::size_t>(1, k.rows()))));
      },
      py::arg("queries"), py::arg("keys"), py::arg("values"), py::arg("config"));

  m.def(
      "decode",
      [](const FloatArray& Q, const FloatArray& K, const FloatArray& V, const FloatArray& U,
         const AttentionConfig& cfg, const SelectionPolicy& policy, std::size_t layer) {
        const DenseMatrix q = to_matrix(Q), k = to_matrix(K), v = to_matrix(V);
        if (q.rows() != k.rows() || v.rows() != k.rows()) {
          throw InvalidArgument("decode: Q, K and V need the same number of rows");
        }
        const ProjectionMatrix p = projection_for(U);
        const RotaryTable table = RotaryTable::for_config(cfg, std::max<std::size_t>(1, k.rows()));
        LatentKvCache cache(cfg);
        DenseMatrix y(k.rows(), cfg.query_dim());
        py::list traffic;
        for (std::size_t t = 0; t < k.rows(); ++t) {
          const auto out =
              sals_decode_step(q.row(t), k.row(t), v.row(t), cache, p, policy, cfg, table, t, layer);
          std::copy(out.y.begin(), out.y.end(), y.row(t).begin());
          traffic.append(traffic_dict(out.traffic));
        }
        return py::make_tuple(to_array(y), traffic);
      },
      py::arg("queries"), py::arg("keys"), py::arg("values"), py::arg("projection"),
      py::arg("config"), py::arg("policy"), py::arg("layer") = 2,
      "Decodes every row in order (token t at position t). Returns (outputs, per-step traffic).");
}
