#include "sals/synthetic.hpp"

#include <cmath>

#include "sals/error.hpp"

namespace sals {

DenseMatrix random_orthogonal(std::size_t n, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  // Columns stored contiguously in double while orthogonalizing.
  std::vector<double> cols(n * n);
  for (auto& v : cols) v = normal(rng);

  for (std::size_t j = 0; j < n; ++j) {
    double* cj = cols.data() + j * n;
    // Two passes of modified Gram-Schmidt keep the basis orthonormal to
    // working precision.
    for (int pass = 0; pass < 2; ++pass) {
      for (std::size_t p = 0; p < j; ++p) {
        const double* cp = cols.data() + p * n;
        double dot = 0.0;
        for (std::size_t i = 0; i < n; ++i) dot += cp[i] * cj[i];
        for (std::size_t i = 0; i < n; ++i) cj[i] -= dot * cp[i];
      }
    }
    double norm = 0.0;
    for (std::size_t i = 0; i < n; ++i) norm += cj[i] * cj[i];
    norm = std::sqrt(norm);
    if (norm < 1e-12) throw ConvergenceError("random_orthogonal: degenerate draw");
    for (std::size_t i = 0; i < n; ++i) cj[i] /= norm;
  }

  DenseMatrix out(n, n);
  for (std::size_t j = 0; j < n; ++j) {
    for (std::size_t i = 0; i < n; ++i) out(i, j) = static_cast<float>(cols[j * n + i]);
  }
  return out;
}

DenseMatrix generate_keys(const SyntheticSpec& spec, const AttentionConfig& cfg) {
  const std::size_t nd = cfg.key_dim();
  spec.validate(nd);

  std::mt19937_64 rng(spec.seed);
  const DenseMatrix basis = random_orthogonal(nd, rng);
  std::vector<double> stddev(nd);
  for (std::size_t i = 0; i < nd; ++i) stddev[i] = std::sqrt(spec.spectrum[i]);

  std::normal_distribution<double> normal(0.0, 1.0);
  DenseMatrix keys(spec.seq_len, nd);
  std::vector<double> z(nd);
  std::vector<double> row(nd);
  for (std::size_t t = 0; t < spec.seq_len; ++t) {
    for (std::size_t i = 0; i < nd; ++i) z[i] = normal(rng) * stddev[i];
    std::fill(row.begin(), row.end(), 0.0);
    for (std::size_t i = 0; i < nd; ++i) {
      if (z[i] == 0.0) continue;
      for (std::size_t c = 0; c < nd; ++c) row[c] += z[i] * basis(c, i);
    }
    for (std::size_t c = 0; c < nd; ++c) keys(t, c) = static_cast<float>(row[c]);
  }

  if (spec.planted) {
    for (std::size_t c = 0; c < nd; ++c) {
      keys(spec.planted->position, c) =
          static_cast<float>(spec.planted->gain * basis(c, 0));
    }
  }
  return keys;
}

std::vector<float> planted_query_direction(const SyntheticSpec& spec,
                                           const AttentionConfig& cfg) {
  const std::size_t nd = cfg.key_dim();
  spec.validate(nd);
  std::mt19937_64 rng(spec.seed);
  const DenseMatrix basis = random_orthogonal(nd, rng);
  std::vector<float> dir(nd);
  for (std::size_t c = 0; c < nd; ++c) dir[c] = basis(c, 0);
  return dir;
}

DenseMatrix generate_gaussian(std::size_t rows, std::size_t cols, std::uint64_t seed,
                              double stddev) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, stddev);
  DenseMatrix out(rows, cols);
  for (auto& v : out.data()) v = static_cast<float>(normal(rng));
  return out;
}

}  // namespace sals
