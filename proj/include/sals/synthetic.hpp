#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "sals/config.hpp"
#include "sals/tensor.hpp"

namespace sals {

// Synthetic workloads.
//
// generate_keys draws s rows k = sum_i sqrt(lambda_i) z_i b_i with z ~ N(0, 1)
// and {b_i} a random orthonormal basis derived from the seed, so the
// population covariance has eigenvalues exactly equal to the spectrum and
// eigenvectors b_i. The basis is drawn before any row, so every spec with the
// same seed and dimension shares it.
//
// Planted-token convention: the planted row is replaced by gain * b_0, the
// unit vector along the largest-variance axis. planted_query_direction returns
// b_0 so callers can build a query that singles the planted token out.

DenseMatrix random_orthogonal(std::size_t n, std::mt19937_64& rng);

DenseMatrix generate_keys(const SyntheticSpec& spec, const AttentionConfig& cfg);

std::vector<float> planted_query_direction(const SyntheticSpec& spec,
                                           const AttentionConfig& cfg);

// i.i.d. N(0, stddev^2) entries.
DenseMatrix generate_gaussian(std::size_t rows, std::size_t cols, std::uint64_t seed,
                              double stddev = 1.0);

}  // namespace sals
