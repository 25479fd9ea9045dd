#include <doctest.h>

#include <cmath>
#include <numeric>

#include "sals/calibration.hpp"
#include "sals/reference_attention.hpp"
#include "sals/rope.hpp"
#include "sals/sparse_attention.hpp"
#include "sals/synthetic.hpp"
#include "support.hpp"

using namespace sals;

namespace {

AttentionConfig config(std::size_t n, std::size_t d) {
  AttentionConfig cfg;
  cfg.num_heads = n;
  cfg.head_dim = d;
  cfg.latent_rank = n * d;
  cfg.score_rank = 1;
  cfg.quant_group = 1;
  return cfg;
}

ProjectionMatrix calibrated(const DenseMatrix& keys, std::size_t r) {
  Covariance cov(keys.cols());
  cov.accumulate(keys);
  return compute_joint_projection(cov, r);
}

// Straight-line causal attention with its own rotation code.
DenseMatrix naive_attention(const DenseMatrix& Q, const DenseMatrix& K, const DenseMatrix& V,
                            std::size_t n, std::size_t d, double base) {
  const std::size_t s = K.rows();
  auto rotate = [&](std::span<const float> x, std::size_t m) {
    std::vector<double> y(x.begin(), x.end());
    for (std::size_t h = 0; h < n; ++h) {
      for (std::size_t i = 0; i < d / 2; ++i) {
        const double a = double(m) * std::pow(base, -2.0 * double(i) / double(d));
        const double x0 = x[h * d + 2 * i], x1 = x[h * d + 2 * i + 1];
        y[h * d + 2 * i] = x0 * std::cos(a) - x1 * std::sin(a);
        y[h * d + 2 * i + 1] = x0 * std::sin(a) + x1 * std::cos(a);
      }
    }
    return y;
  };
  DenseMatrix out(s, n * d);
  for (std::size_t t = 0; t < s; ++t) {
    const auto q = rotate(Q.row(t), t);
    for (std::size_t h = 0; h < n; ++h) {
      std::vector<double> logits(t + 1);
      for (std::size_t j = 0; j <= t; ++j) {
        const auto k = rotate(K.row(j), j);
        double acc = 0.0;
        for (std::size_t c = 0; c < d; ++c) acc += q[h * d + c] * k[h * d + c];
        logits[j] = acc / std::sqrt(double(d));
      }
      const double mx = *std::max_element(logits.begin(), logits.end());
      double z = 0.0;
      for (auto& l : logits) z += (l = std::exp(l - mx));
      for (std::size_t c = 0; c < d; ++c) {
        double acc = 0.0;
        for (std::size_t j = 0; j <= t; ++j) acc += logits[j] / z * V(j, h * d + c);
        out(t, h * d + c) = static_cast<float>(acc);
      }
    }
  }
  return out;
}

}  // namespace

TEST_CASE("single token attention returns V") {
  const auto cfg = config(2, 4);
  const auto Q = test::random_matrix(1, 8, 1), K = test::random_matrix(1, 8, 2);
  const auto V = test::random_matrix(1, 8, 3);
  CHECK(full_attention(Q, K, V, cfg, RotaryTable(1, 4)) == V);
}

TEST_CASE("zero queries average the visible values") {
  const auto cfg = config(1, 4);
  const DenseMatrix Q(5, 4);
  const auto K = test::random_matrix(5, 4, 4), V = test::random_matrix(5, 4, 5);
  const auto out = full_attention(Q, K, V, cfg, RotaryTable(5, 4));
  for (std::size_t t = 0; t < 5; ++t) {
    for (std::size_t c = 0; c < 4; ++c) {
      double mean = 0.0;
      for (std::size_t j = 0; j <= t; ++j) mean += V(j, c);
      CHECK(out(t, c) == doctest::Approx(mean / double(t + 1)).epsilon(1e-6));
    }
  }
}

TEST_CASE("full attention matches an independent quadratic loop") {
  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 10; ++trial) {
    const std::size_t n = 1 + rng() % 3, d = 2 * (1 + rng() % 4), s = 1 + rng() % 16;
    const auto cfg = config(n, d);
    const auto Q = test::random_matrix(s, n * d, rng()), K = test::random_matrix(s, n * d, rng());
    const auto V = test::random_matrix(s, n * d, rng());
    const auto got = full_attention(Q, K, V, cfg, RotaryTable::for_config(cfg, s));
    CHECK(max_abs_difference(got, naive_attention(Q, K, V, n, d, 10000.0)) < 1e-6);
  }
}

TEST_CASE("non-causal attention at the last row equals causal") {
  const auto cfg = config(2, 4);
  const auto Q = test::random_matrix(9, 8, 7), K = test::random_matrix(9, 8, 8);
  const auto V = test::random_matrix(9, 8, 9);
  const RotaryTable table(9, 4);
  const auto a = full_attention(Q, K, V, cfg, table, true);
  const auto b = full_attention(Q, K, V, cfg, table, false);
  for (std::size_t c = 0; c < 8; ++c) CHECK(a(8, c) == doctest::Approx(b(8, c)).epsilon(1e-6));
}

TEST_CASE("causal rows ignore later tokens") {
  const auto cfg = config(1, 8);
  const auto Q = test::random_matrix(10, 8, 10);
  auto K = test::random_matrix(10, 8, 11), V = test::random_matrix(10, 8, 12);
  const RotaryTable table(10, 8);
  const auto a = full_attention(Q, K, V, cfg, table);
  for (std::size_t c = 0; c < 8; ++c) {
    K(9, c) = 100.0f;
    V(9, c) = -100.0f;
  }
  const auto b = full_attention(Q, K, V, cfg, table);
  CHECK(a.slice_rows(0, 9) == b.slice_rows(0, 9));
}

TEST_CASE("all baselines converge to full attention at r = nd") {
  const auto cfg = config(2, 8);
  const auto Q = test::random_matrix(24, 16, 13), K = test::random_matrix(24, 16, 14);
  const auto V = test::random_matrix(24, 16, 15);
  const auto table = RotaryTable::for_config(cfg, 24);
  const auto ref = full_attention(Q, K, V, cfg, table);
  const auto p = calibrated(K, 16);
  auto K_rot = apply_rope_batch(K, [] {
    std::vector<std::size_t> pos(24);
    std::iota(pos.begin(), pos.end(), 0);
    return pos;
  }(), table);
  const auto p_post = calibrated(K_rot, 16);
  CHECK(max_abs_difference(post_rope_lowrank_attention(Q, K, V, p_post, cfg, table), ref) < 1e-5);
  CHECK(max_abs_difference(pre_rope_lowrank_full(Q, K, V, p, cfg, table).output, ref) < 1e-5);
}

TEST_CASE("pre-RoPE projection beats post-RoPE projection on low-rank keys") {
  const std::size_t n = 1, d = 64, s = 512, r = 16;
  auto cfg = config(n, d);
  SyntheticSpec spec;
  spec.seq_len = s;
  spec.seed = 19;
  spec.spectrum = SyntheticSpec::geometric_spectrum(d, 0.5);
  const auto K = generate_keys(spec, cfg);
  const auto Q = generate_keys([&] { auto q = spec; q.seed = 20; return q; }(), cfg);
  const auto V = test::random_matrix(s, d, 21);
  const auto table = RotaryTable::for_config(cfg, s);
  const auto ref = full_attention(Q, K, V, cfg, table);

  std::vector<std::size_t> pos(s);
  std::iota(pos.begin(), pos.end(), 0);
  const auto p_pre = calibrated(K, r);
  const auto p_post = calibrated(apply_rope_batch(K, pos, table), r);
  const double e_pre = frobenius_distance(pre_rope_lowrank_full(Q, K, V, p_pre, cfg, table).output, ref);
  const double e_post = frobenius_distance(post_rope_lowrank_attention(Q, K, V, p_post, cfg, table), ref);
  MESSAGE("pre-RoPE error " << e_pre << ", post-RoPE error " << e_post);
  CHECK(e_pre < e_post);
}

TEST_CASE("pre-RoPE full reconstruction traffic is s*r + s*nd + 2*s*nd") {
  const auto cfg = config(2, 8);
  const auto K = test::random_matrix(30, 16, 22);
  const auto p = calibrated(K, 5);
  const auto res = pre_rope_lowrank_full(K, K, K, p, cfg, RotaryTable::for_config(cfg, 30));
  CHECK(res.traffic.reconstruct_elements == 30.0 * 5 + 30.0 * 16);
  CHECK(res.traffic.attention_elements == 2.0 * 30 * 16);
  CHECK(res.traffic.total() == 30.0 * (5 + 16 + 32));
}

TEST_CASE("grouped queries share key/value heads") {
  auto cfg = config(1, 4);
  cfg.num_query_heads = 2;
  const auto K = test::random_matrix(6, 4, 23), V = test::random_matrix(6, 4, 24);
  const auto q1 = test::random_matrix(6, 4, 25);
  DenseMatrix Q(6, 8);
  for (std::size_t t = 0; t < 6; ++t) {
    for (std::size_t c = 0; c < 4; ++c) Q(t, c) = Q(t, 4 + c) = q1(t, c);
  }
  const RotaryTable table(6, 4);
  const auto out = full_attention(Q, K, V, cfg, table);
  const auto single = full_attention(q1, K, V, config(1, 4), table);
  for (std::size_t t = 0; t < 6; ++t) {
    for (std::size_t c = 0; c < 4; ++c) {
      CHECK(out(t, c) == single(t, c));
      CHECK(out(t, 4 + c) == single(t, c));
    }
  }
}
