#pragma once

// Straight-line reference for the decode loop, written without the library's
// cache, selection, rotation or quantization code. Everything is plain
// vectors so the two implementations share nothing but the projection basis.

#include <cstddef>
#include <vector>

namespace oracle {

using Rows = std::vector<std::vector<float>>;

struct Params {
  std::size_t n = 1;   // key/value heads
  std::size_t nq = 1;  // query heads
  std::size_t d = 2;
  std::size_t r = 1;
  std::size_t r_star = 1;
  unsigned bits = 32;
  std::size_t group = 1;
  std::size_t w = 0;
  std::size_t x = 0;
  std::size_t y = 0;
  std::size_t z = 0;
  double base = 10000.0;
  bool dense = false;
};

// Decodes every row in order (token t at position t) and returns the
// attention output of each step. U is nd x r, row-major.
Rows decode(const Params& p, const std::vector<float>& U, const Rows& Q, const Rows& K,
            const Rows& V);

// Causal softmax attention with rotation, one output row per query.
Rows full_attention(std::size_t n, std::size_t nq, std::size_t d, double base, const Rows& Q,
                    const Rows& K, const Rows& V);

}  // namespace oracle
