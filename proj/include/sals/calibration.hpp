#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "sals/tensor.hpp"

namespace sals {

// Dense symmetric matrix held in double, row-major, both triangles stored.
struct SymmetricMatrix {
  std::size_t n = 0;
  std::vector<double> a;

  explicit SymmetricMatrix(std::size_t dim = 0) : n(dim), a(dim * dim, 0.0) {}

  double& operator()(std::size_t i, std::size_t j) { return a[i * n + j]; }
  double operator()(std::size_t i, std::size_t j) const { return a[i * n + j]; }

  double trace() const;
  SymmetricMatrix block(std::size_t offset, std::size_t size) const;
};

struct EigenDecomposition {
  std::vector<double> eigenvalues;  // descending; ties keep the lower index first
  // Column j (stored as vectors[i * n + j]) is the unit eigenvector for
  // eigenvalues[j]; its largest-magnitude component is positive.
  std::vector<double> vectors;
  std::size_t n = 0;
  int sweeps = 0;
};

// Cyclic Jacobi. Stops once the off-diagonal Frobenius norm drops below
// rel_tol * |trace| (or rel_tol * ||A||_F when the trace vanishes).
EigenDecomposition jacobi_eigen(const SymmetricMatrix& m, double rel_tol = 1e-10,
                                int max_sweeps = 100);

// Running sum of K^T K over pre-RoPE key batches, plus the column sums so a
// mean-centered scatter matrix can be derived for PCA-style analysis.
class Covariance {
 public:
  explicit Covariance(std::size_t dim);

  std::size_t dim() const noexcept { return dim_; }
  std::uint64_t samples_seen() const noexcept { return samples_; }

  // C += K^T K, accumulated in double.
  Covariance& accumulate(const DenseMatrix& keys);
  // Adds another accumulator over the same dimension.
  Covariance& merge(const Covariance& other);

  // Uncentered K^T K, or the centered scatter K^T K - s * mu mu^T.
  SymmetricMatrix matrix(bool centered = false) const;

 private:
  std::size_t dim_;
  std::uint64_t samples_ = 0;
  SymmetricMatrix gram_;
  std::vector<double> sums_;
};

enum class ProjectionKind { kJoint, kPerHeadBlock };

struct ProjectionMatrix {
  DenseMatrix U;                    // nd x r, column-orthonormal
  std::vector<double> eigenvalues;  // per column, clamped at 0
  // Row-major nd x r double-precision eigenvectors that U was rounded from;
  // empty when the projection was built from an f32 basis.
  std::vector<double> basis;
  ProjectionKind kind = ProjectionKind::kJoint;

  std::size_t dim() const noexcept { return U.rows(); }
  std::size_t rank() const noexcept { return U.cols(); }
};

// Wraps an explicit nd x r basis (e.g. read back from disk).
ProjectionMatrix projection_from_basis(DenseMatrix U,
                                       ProjectionKind kind = ProjectionKind::kJoint);

// Leading r eigenvectors of the (optionally centered) covariance.
ProjectionMatrix compute_joint_projection(const Covariance& cov, std::size_t r,
                                          bool centered = false);

// Block-diagonal projection: for each of the n heads, the top r/n eigenvectors
// of that head's d x d diagonal block. Eigenvalues are listed in column order,
// descending within each block.
ProjectionMatrix compute_per_head_projection(const Covariance& cov, std::size_t r,
                                             std::size_t num_heads, bool centered = false);

// trace(U^T C U). The ProjectionMatrix overload uses the double-precision
// basis when one is present.
double captured_energy(const SymmetricMatrix& c, const DenseMatrix& U);
double captured_energy(const SymmetricMatrix& c, std::span<const double> basis,
                       std::size_t rank);
double captured_energy(const Covariance& cov, const ProjectionMatrix& p,
                       bool centered = false);

// max_ij |(U^T U - I)_ij|.
double orthonormality_error(const DenseMatrix& U);

// K U (s x r) and L U^T (s x nd), accumulated in double, stored as f32.
DenseMatrix project_rows(const DenseMatrix& keys, const DenseMatrix& U);
DenseMatrix reconstruct_rows(const DenseMatrix& latent, const DenseMatrix& U);

}  // namespace sals
