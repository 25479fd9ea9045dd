#include "sals/calibration.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "sals/error.hpp"

namespace sals {

double SymmetricMatrix::trace() const {
  double t = 0.0;
  for (std::size_t i = 0; i < n; ++i) t += a[i * n + i];
  return t;
}

SymmetricMatrix SymmetricMatrix::block(std::size_t offset, std::size_t size) const {
  if (offset + size > n) throw OutOfRange("SymmetricMatrix::block out of range");
  SymmetricMatrix out(size);
  for (std::size_t i = 0; i < size; ++i) {
    for (std::size_t j = 0; j < size; ++j) out(i, j) = (*this)(offset + i, offset + j);
  }
  return out;
}

namespace {

double off_diagonal_norm(const SymmetricMatrix& m) {
  double acc = 0.0;
  for (std::size_t i = 0; i < m.n; ++i) {
    for (std::size_t j = 0; j < m.n; ++j) {
      if (i != j) acc += m(i, j) * m(i, j);
    }
  }
  return std::sqrt(acc);
}

double frobenius_norm(const SymmetricMatrix& m) {
  double acc = 0.0;
  for (double v : m.a) acc += v * v;
  return std::sqrt(acc);
}

}  // namespace

EigenDecomposition jacobi_eigen(const SymmetricMatrix& m, double rel_tol, int max_sweeps) {
  const std::size_t n = m.n;
  SymmetricMatrix a = m;
  std::vector<double> v(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) v[i * n + i] = 1.0;

  const double trace = std::abs(a.trace());
  const double scale = trace > 0.0 ? trace : frobenius_norm(a);
  const double threshold = rel_tol * scale;

  int sweep = 0;
  while (off_diagonal_norm(a) > threshold) {
    if (sweep == max_sweeps) {
      throw ConvergenceError("jacobi_eigen: no convergence after " +
                             std::to_string(max_sweeps) + " sweeps");
    }
    ++sweep;
    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        const double apq = a(p, q);
        if (apq == 0.0) continue;
        const double theta = (a(q, q) - a(p, p)) / (2.0 * apq);
        const double t = (theta >= 0.0 ? 1.0 : -1.0) /
                         (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          const double akp = a(k, p);
          const double akq = a(k, q);
          a(k, p) = c * akp - s * akq;
          a(k, q) = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double apk = a(p, k);
          const double aqk = a(q, k);
          a(p, k) = c * apk - s * aqk;
          a(q, k) = s * apk + c * aqk;
        }
        a(p, q) = 0.0;
        a(q, p) = 0.0;
        for (std::size_t k = 0; k < n; ++k) {
          const double vkp = v[k * n + p];
          const double vkq = v[k * n + q];
          v[k * n + p] = c * vkp - s * vkq;
          v[k * n + q] = s * vkp + c * vkq;
        }
      }
    }
  }

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t x, std::size_t y) { return a(x, x) > a(y, y); });

  EigenDecomposition out;
  out.n = n;
  out.sweeps = sweep;
  out.eigenvalues.resize(n);
  out.vectors.resize(n * n);
  for (std::size_t j = 0; j < n; ++j) {
    const std::size_t src = order[j];
    out.eigenvalues[j] = a(src, src);
    std::size_t lead = 0;
    for (std::size_t i = 1; i < n; ++i) {
      if (std::abs(v[i * n + src]) > std::abs(v[lead * n + src])) lead = i;
    }
    const double sign = v[lead * n + src] < 0.0 ? -1.0 : 1.0;
    for (std::size_t i = 0; i < n; ++i) out.vectors[i * n + j] = sign * v[i * n + src];
  }
  return out;
}

Covariance::Covariance(std::size_t dim) : dim_(dim), gram_(dim), sums_(dim, 0.0) {}

Covariance& Covariance::accumulate(const DenseMatrix& keys) {
  if (keys.cols() != dim_) {
    throw InvalidArgument("accumulate_covariance: key dim " + std::to_string(keys.cols()) +
                          " != covariance dim " + std::to_string(dim_));
  }
  std::vector<double> row(dim_);
  for (std::size_t t = 0; t < keys.rows(); ++t) {
    auto k = keys.row(t);
    for (std::size_t i = 0; i < dim_; ++i) row[i] = k[i];
    for (std::size_t i = 0; i < dim_; ++i) {
      sums_[i] += row[i];
      const double ri = row[i];
      if (ri == 0.0) continue;
      double* g = gram_.a.data() + i * dim_;
      for (std::size_t j = i; j < dim_; ++j) g[j] += ri * row[j];
    }
  }
  // Only the upper triangle is accumulated above; mirror it.
  for (std::size_t i = 0; i < dim_; ++i) {
    for (std::size_t j = i + 1; j < dim_; ++j) gram_(j, i) = gram_(i, j);
  }
  samples_ += keys.rows();
  return *this;
}

Covariance& Covariance::merge(const Covariance& other) {
  if (other.dim_ != dim_) throw InvalidArgument("Covariance::merge: dim mismatch");
  for (std::size_t i = 0; i < gram_.a.size(); ++i) gram_.a[i] += other.gram_.a[i];
  for (std::size_t i = 0; i < dim_; ++i) sums_[i] += other.sums_[i];
  samples_ += other.samples_;
  return *this;
}

SymmetricMatrix Covariance::matrix(bool centered) const {
  SymmetricMatrix out = gram_;
  if (centered && samples_ > 0) {
    const double inv = 1.0 / static_cast<double>(samples_);
    for (std::size_t i = 0; i < dim_; ++i) {
      for (std::size_t j = 0; j < dim_; ++j) out(i, j) -= sums_[i] * sums_[j] * inv;
    }
  }
  return out;
}

ProjectionMatrix projection_from_basis(DenseMatrix U, ProjectionKind kind) {
  ProjectionMatrix p;
  p.eigenvalues.assign(U.cols(), 0.0);
  p.U = std::move(U);
  p.kind = kind;
  return p;
}

ProjectionMatrix compute_joint_projection(const Covariance& cov, std::size_t r,
                                          bool centered) {
  const std::size_t nd = cov.dim();
  if (r == 0 || r > nd) {
    throw OutOfRange("compute_joint_projection: rank " + std::to_string(r) +
                     " outside [1, " + std::to_string(nd) + "]");
  }
  const auto eig = jacobi_eigen(cov.matrix(centered));
  ProjectionMatrix p;
  p.kind = ProjectionKind::kJoint;
  p.U = DenseMatrix(nd, r);
  p.basis.resize(nd * r);
  p.eigenvalues.resize(r);
  for (std::size_t j = 0; j < r; ++j) {
    p.eigenvalues[j] = std::max(0.0, eig.eigenvalues[j]);
    for (std::size_t i = 0; i < nd; ++i) {
      p.basis[i * r + j] = eig.vectors[i * nd + j];
      p.U(i, j) = static_cast<float>(p.basis[i * r + j]);
    }
  }
  return p;
}

ProjectionMatrix compute_per_head_projection(const Covariance& cov, std::size_t r,
                                             std::size_t num_heads, bool centered) {
  const std::size_t nd = cov.dim();
  if (num_heads == 0 || nd % num_heads != 0) {
    throw InvalidArgument("compute_per_head_projection: num_heads must divide nd");
  }
  if (r % num_heads != 0) {
    throw InvalidArgument("compute_per_head_projection: num_heads must divide rank");
  }
  if (r == 0 || r > nd) throw OutOfRange("compute_per_head_projection: rank out of range");
  const std::size_t d = nd / num_heads;
  const std::size_t per_head = r / num_heads;
  const SymmetricMatrix c = cov.matrix(centered);

  ProjectionMatrix p;
  p.kind = ProjectionKind::kPerHeadBlock;
  p.U = DenseMatrix(nd, r);
  p.basis.assign(nd * r, 0.0);
  p.eigenvalues.resize(r);
  for (std::size_t h = 0; h < num_heads; ++h) {
    const auto eig = jacobi_eigen(c.block(h * d, d));
    for (std::size_t j = 0; j < per_head; ++j) {
      const std::size_t col = h * per_head + j;
      p.eigenvalues[col] = std::max(0.0, eig.eigenvalues[j]);
      for (std::size_t i = 0; i < d; ++i) {
        p.basis[(h * d + i) * r + col] = eig.vectors[i * d + j];
        p.U(h * d + i, col) = static_cast<float>(eig.vectors[i * d + j]);
      }
    }
  }
  return p;
}

double captured_energy(const SymmetricMatrix& c, std::span<const double> basis,
                       std::size_t rank) {
  const std::size_t n = c.n;
  if (rank == 0 ? !basis.empty() : basis.size() != n * rank) {
    throw InvalidArgument("captured_energy: basis is not " + std::to_string(n) + " x " +
                          std::to_string(rank));
  }
  double total = 0.0;
  std::vector<double> u(n);
  for (std::size_t j = 0; j < rank; ++j) {
    for (std::size_t i = 0; i < n; ++i) u[i] = basis[i * rank + j];
    for (std::size_t i = 0; i < n; ++i) {
      if (u[i] == 0.0) continue;
      double ci = 0.0;
      const double* row = c.a.data() + i * n;
      for (std::size_t k = 0; k < n; ++k) ci += row[k] * u[k];
      total += u[i] * ci;
    }
  }
  return total;
}

double captured_energy(const SymmetricMatrix& c, const DenseMatrix& U) {
  if (U.rows() != c.n) {
    throw InvalidArgument("captured_energy: U has " + std::to_string(U.rows()) +
                          " rows, covariance dim is " + std::to_string(c.n));
  }
  std::vector<double> basis(U.data().begin(), U.data().end());
  return captured_energy(c, basis, U.cols());
}

double captured_energy(const Covariance& cov, const ProjectionMatrix& p, bool centered) {
  if (p.dim() != cov.dim()) {
    throw InvalidArgument("captured_energy: projection dim " + std::to_string(p.dim()) +
                          " != covariance dim " + std::to_string(cov.dim()));
  }
  if (!p.basis.empty()) return captured_energy(cov.matrix(centered), p.basis, p.rank());
  return captured_energy(cov.matrix(centered), p.U);
}

double orthonormality_error(const DenseMatrix& U) {
  double worst = 0.0;
  for (std::size_t a = 0; a < U.cols(); ++a) {
    for (std::size_t b = a; b < U.cols(); ++b) {
      double dot = 0.0;
      for (std::size_t i = 0; i < U.rows(); ++i) {
        dot += static_cast<double>(U(i, a)) * static_cast<double>(U(i, b));
      }
      worst = std::max(worst, std::abs(dot - (a == b ? 1.0 : 0.0)));
    }
  }
  return worst;
}

DenseMatrix project_rows(const DenseMatrix& keys, const DenseMatrix& U) {
  if (keys.cols() != U.rows()) throw InvalidArgument("project_rows: dim mismatch");
  const std::size_t r = U.cols();
  DenseMatrix out(keys.rows(), r);
  std::vector<double> acc(r);
  for (std::size_t t = 0; t < keys.rows(); ++t) {
    std::fill(acc.begin(), acc.end(), 0.0);
    auto k = keys.row(t);
    for (std::size_t i = 0; i < k.size(); ++i) {
      const double ki = k[i];
      auto u = U.row(i);
      for (std::size_t j = 0; j < r; ++j) acc[j] += ki * u[j];
    }
    for (std::size_t j = 0; j < r; ++j) out(t, j) = static_cast<float>(acc[j]);
  }
  return out;
}

DenseMatrix reconstruct_rows(const DenseMatrix& latent, const DenseMatrix& U) {
  if (latent.cols() != U.cols()) throw InvalidArgument("reconstruct_rows: rank mismatch");
  DenseMatrix out(latent.rows(), U.rows());
  for (std::size_t t = 0; t < latent.rows(); ++t) {
    auto l = latent.row(t);
    for (std::size_t i = 0; i < U.rows(); ++i) {
      auto u = U.row(i);
      double acc = 0.0;
      for (std::size_t j = 0; j < l.size(); ++j) acc += static_cast<double>(l[j]) * u[j];
      out(t, i) = static_cast<float>(acc);
    }
  }
  return out;
}

}  // namespace sals
