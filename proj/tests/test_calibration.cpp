#include <doctest.h>

#include <cmath>

#include "sals/calibration.hpp"
#include "sals/config.hpp"
#include "sals/error.hpp"
#include "sals/synthetic.hpp"
#include "support.hpp"

using namespace sals;

namespace {

// Covariance whose Gram matrix is F^T F, fed row by row.
Covariance covariance_from_factor(const Eigen::MatrixXd& f) {
  DenseMatrix rows(static_cast<std::size_t>(f.rows()), static_cast<std::size_t>(f.cols()));
  for (Eigen::Index i = 0; i < f.rows(); ++i) {
    for (Eigen::Index j = 0; j < f.cols(); ++j) rows(i, j) = static_cast<float>(f(i, j));
  }
  Covariance cov(rows.cols());
  cov.accumulate(rows);
  return cov;
}

Covariance diagonal_covariance(const std::vector<double>& diag) {
  const std::size_t n = diag.size();
  DenseMatrix rows(n, n);
  for (std::size_t i = 0; i < n; ++i) rows(i, i) = static_cast<float>(std::sqrt(diag[i]));
  Covariance cov(n);
  cov.accumulate(rows);
  return cov;
}

}  // namespace

TEST_CASE("single basis row gives an outer product") {
  Covariance cov(4);
  cov.accumulate(DenseMatrix(1, 4, std::vector<float>{1, 0, 0, 0}));
  const auto c = cov.matrix();
  for (std::size_t i = 0; i < 4; ++i) {
    for (std::size_t j = 0; j < 4; ++j) CHECK(c(i, j) == (i == 0 && j == 0 ? 1.0 : 0.0));
  }
  CHECK(cov.samples_seen() == 1);
}

TEST_CASE("batched accumulation equals one concatenated batch") {
  const auto k = test::random_matrix(40, 12, 1);
  Covariance whole(12), parts(12), merged(12), a(12), b(12);
  whole.accumulate(k);
  parts.accumulate(k.slice_rows(0, 17)).accumulate(k.slice_rows(17, 40));
  b.accumulate(k.slice_rows(17, 40));
  a.accumulate(k.slice_rows(0, 17));
  merged.merge(b).merge(a);
  const auto cw = whole.matrix(), cp = parts.matrix(), cm = merged.matrix();
  const double scale = cw.trace();
  for (std::size_t i = 0; i < cw.a.size(); ++i) {
    CHECK(std::abs(cw.a[i] - cp.a[i]) <= 1e-6 * scale);
    CHECK(std::abs(cw.a[i] - cm.a[i]) <= 1e-6 * scale);
  }
  CHECK(merged.samples_seen() == 40);
}

TEST_CASE("covariance matches K^T K computed by Eigen, and is symmetric PSD") {
  const auto k = test::random_matrix(30, 10, 2);
  Covariance cov(10);
  cov.accumulate(k);
  const Eigen::MatrixXd ref = test::to_eigen(k).transpose() * test::to_eigen(k);
  const auto c = cov.matrix();
  for (std::size_t i = 0; i < 10; ++i) {
    for (std::size_t j = 0; j < 10; ++j) {
      CHECK(c(i, j) == doctest::Approx(ref(i, j)).epsilon(1e-12));
      CHECK(c(i, j) == c(j, i));
    }
  }
  for (double l : test::reference_eigenvalues(test::to_eigen(c))) CHECK(l >= -1e-6 * c.trace());
}

TEST_CASE("centered covariance subtracts the mean outer product") {
  DenseMatrix k(2, 2, std::vector<float>{1, 3, 3, 5});
  Covariance cov(2);
  cov.accumulate(k);
  const auto c = cov.matrix(true);
  // mean (2, 4); deviations (-1,-1), (1,1)
  CHECK(c(0, 0) == doctest::Approx(2.0));
  CHECK(c(0, 1) == doctest::Approx(2.0));
  CHECK(c(1, 1) == doctest::Approx(2.0));
}

TEST_CASE("accumulate rejects a dimension mismatch") {
  Covariance cov(4);
  CHECK_THROWS_AS(cov.accumulate(DenseMatrix(2, 5)), InvalidArgument);
  Covariance other(5);
  CHECK_THROWS_AS(cov.merge(other), InvalidArgument);
}

TEST_CASE("sample covariance from the generator recovers its spectrum via Jacobi") {
  SyntheticSpec spec;
  spec.seq_len = 10000;
  spec.spectrum = {4, 1, 0.1, 0.01};
  spec.seed = 21;
  auto cfg = AttentionConfig::with_defaults(1, 4);
  Covariance cov(4);
  cov.accumulate(generate_keys(spec, cfg));
  const auto eig = jacobi_eigen(cov.matrix());
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(eig.eigenvalues[i] / 10000.0 == doctest::Approx(spec.spectrum[i]).epsilon(0.10));
  }
}

TEST_CASE("Jacobi agrees with Eigen on random symmetric matrices") {
  for (std::size_t n : {1u, 2u, 3u, 8u, 17u, 64u}) {
    CAPTURE(n);
    const auto m = test::random_psd(n, n + 3, 100 + n);
    const auto eig = jacobi_eigen(test::from_eigen(m));
    const auto ref = test::reference_eigenvalues(m);
    for (std::size_t i = 0; i < n; ++i) {
      CHECK(std::abs(eig.eigenvalues[i] - ref[i]) <= 1e-6 * ref.front());
    }
    // A v = lambda v for every returned pair.
    for (std::size_t j = 0; j < n; ++j) {
      double worst = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        double av = 0.0;
        for (std::size_t k = 0; k < n; ++k) av += m(i, k) * eig.vectors[k * n + j];
        worst = std::max(worst, std::abs(av - eig.eigenvalues[j] * eig.vectors[i * n + j]));
      }
      CHECK(worst <= 1e-8 * ref.front());
    }
  }
}

TEST_CASE("Jacobi at nd=512 matches Eigen within 1e-5 relative") {
  const auto m = test::random_psd(512, 600, 512);
  const auto eig = jacobi_eigen(test::from_eigen(m));
  const auto ref = test::reference_eigenvalues(m);
  double worst = 0.0;
  for (std::size_t i = 0; i < 512; ++i) {
    worst = std::max(worst, std::abs(eig.eigenvalues[i] - ref[i]) / ref.front());
  }
  CHECK(worst < 1e-5);
}

TEST_CASE("Jacobi reports non-convergence") {
  const auto m = test::random_psd(16, 16, 7);
  CHECK_THROWS_AS(jacobi_eigen(test::from_eigen(m), 1e-10, 1), ConvergenceError);
}

TEST_CASE("Jacobi: descending order, sign convention, stable ties") {
  SymmetricMatrix m(4);
  m(0, 0) = 1.0;
  m(1, 1) = 3.0;
  m(2, 2) = 1.0;
  m(3, 3) = 2.0;
  const auto eig = jacobi_eigen(m);
  CHECK(eig.eigenvalues == std::vector<double>{3.0, 2.0, 1.0, 1.0});
  // equal eigenvalues keep the lower original index first
  CHECK(eig.vectors[0 * 4 + 2] == 1.0);
  CHECK(eig.vectors[2 * 4 + 3] == 1.0);

  const auto r = jacobi_eigen(test::from_eigen(test::random_psd(9, 9, 3)));
  for (std::size_t j = 0; j < 9; ++j) {
    std::size_t arg = 0;
    for (std::size_t i = 1; i < 9; ++i) {
      if (std::abs(r.vectors[i * 9 + j]) > std::abs(r.vectors[arg * 9 + j])) arg = i;
    }
    CHECK(r.vectors[arg * 9 + j] > 0.0);
  }
}

TEST_CASE("joint projection of diag(4,1,0,0) at r=1 is e1 with eigenvalue 4") {
  const auto p = compute_joint_projection(diagonal_covariance({4, 1, 0, 0}), 1);
  CHECK(p.rank() == 1);
  CHECK(p.eigenvalues == std::vector<double>{4.0});
  CHECK(p.U(0, 0) == 1.0f);
  for (std::size_t i = 1; i < 4; ++i) CHECK(p.U(i, 0) == 0.0f);
}

TEST_CASE("isotropic covariance: any orthonormal pair, energy 2") {
  const auto cov = diagonal_covariance({1, 1, 1, 1});
  const auto p = compute_joint_projection(cov, 2);
  CHECK(captured_energy(cov, p) == doctest::Approx(2.0));
  CHECK(orthonormality_error(p.U) < 1e-6);
}

TEST_CASE("joint projection on random PSD 8x8, r=3, matches the reference solver") {
  const auto m = test::random_psd(8, 20, 8);
  Eigen::LLT<Eigen::MatrixXd> llt(m);
  const Eigen::MatrixXd f = llt.matrixU();
  const auto cov = covariance_from_factor(f);
  const auto p = compute_joint_projection(cov, 3);
  const auto ref = test::reference_eigenvalues(test::to_eigen(cov.matrix()));
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(std::abs(p.eigenvalues[i] - ref[i]) <= 1e-6 * ref.front());
  }
  CHECK(orthonormality_error(p.U) < 1e-6);
  CHECK(captured_energy(cov, p) == doctest::Approx(ref[0] + ref[1] + ref[2]).epsilon(1e-9));
}

TEST_CASE("projection rank bounds") {
  const auto cov = diagonal_covariance({1, 1, 1, 1});
  CHECK_THROWS_AS(compute_joint_projection(cov, 0), OutOfRange);
  CHECK_THROWS_AS(compute_joint_projection(cov, 5), OutOfRange);
  CHECK_THROWS_AS(compute_per_head_projection(cov, 3, 2), InvalidArgument);
  CHECK_THROWS_AS(compute_per_head_projection(cov, 2, 3), InvalidArgument);
}

TEST_CASE("per-head projection of diag(3,2,0.1,0.1), n=2, r=2 captures 3.1") {
  const auto cov = diagonal_covariance({3, 2, 0.1, 0.1});
  const auto p = compute_per_head_projection(cov, 2, 2);
  CHECK(p.kind == ProjectionKind::kPerHeadBlock);
  CHECK(captured_energy(cov, p) == doctest::Approx(3.1));
  CHECK(p.U(0, 0) == 1.0f);
  CHECK(p.U(2, 1) == 1.0f);
  // off-diagonal blocks are zero
  CHECK(p.U(2, 0) == 0.0f);
  CHECK(p.U(3, 0) == 0.0f);
  CHECK(p.U(0, 1) == 0.0f);
  CHECK(p.U(1, 1) == 0.0f);
  CHECK(captured_energy(cov, compute_joint_projection(cov, 2)) == doctest::Approx(5.0));
}

TEST_CASE("identical diagonal blocks: per-head energy equals joint energy") {
  const auto block = test::random_psd(4, 6, 41);
  Eigen::MatrixXd c = Eigen::MatrixXd::Zero(8, 8);
  c.block(0, 0, 4, 4) = block;
  c.block(4, 4, 4, 4) = block;
  Eigen::LLT<Eigen::MatrixXd> llt(c);
  const auto cov = covariance_from_factor(llt.matrixU());
  for (std::size_t r : {2u, 4u, 6u}) {
    const double joint = captured_energy(cov, compute_joint_projection(cov, r));
    const double per_head = captured_energy(cov, compute_per_head_projection(cov, r, 2));
    CHECK(joint == doctest::Approx(per_head).epsilon(1e-6));
  }
}

TEST_CASE("a single head makes per-head and joint projections identical") {
  const auto k = test::random_matrix(50, 6, 4);
  Covariance cov(6);
  cov.accumulate(k);
  const auto a = compute_joint_projection(cov, 3);
  const auto b = compute_per_head_projection(cov, 3, 1);
  CHECK(a.U == b.U);
  CHECK(a.eigenvalues == b.eigenvalues);
}

TEST_CASE("captured energy: full identity gives the trace, e1 gives C11") {
  const auto cov = diagonal_covariance({4, 1, 0, 0});
  CHECK(captured_energy(cov.matrix(), identity_matrix(4)) == doctest::Approx(5.0));
  CHECK(captured_energy(cov.matrix(), DenseMatrix(4, 1, std::vector<float>{1, 0, 0, 0})) == 4.0);
  CHECK_THROWS_AS(captured_energy(cov.matrix(), identity_matrix(3)), InvalidArgument);
}

TEST_CASE("captured energy equals the column-wise sum of u^T C u") {
  const auto c = test::random_psd(10, 10, 5);
  std::mt19937_64 rng(5);
  const auto q = random_orthogonal(10, rng);
  DenseMatrix u(10, 4);
  for (std::size_t i = 0; i < 10; ++i) {
    for (std::size_t j = 0; j < 4; ++j) u(i, j) = q(i, j);
  }
  const Eigen::MatrixXd ue = test::to_eigen(u);
  double oracle = 0.0;
  for (int j = 0; j < 4; ++j) oracle += ue.col(j).dot(c * ue.col(j));
  CHECK(captured_energy(test::from_eigen(c), u) == doctest::Approx(oracle).epsilon(1e-12));
}

TEST_CASE("joint projection captures at least as much energy as per-head blocks") {
  std::mt19937_64 rng(2024);
  int violations = 0;
  for (int trial = 0; trial < 60; ++trial) {
    const std::size_t n = std::size_t{2} << (trial % 3);
    const std::size_t d = 2 * (1 + rng() % 4);
    const std::size_t nd = n * d;
    const std::size_t r = n * (1 + rng() % d);
    const auto c = test::random_psd(nd, 1 + rng() % (2 * nd), rng());
    Eigen::MatrixXd jittered = c + 1e-9 * Eigen::MatrixXd::Identity(nd, nd);
    Eigen::LLT<Eigen::MatrixXd> llt(jittered);
    const auto cov = covariance_from_factor(llt.matrixU());
    const double trace = cov.matrix().trace();
    const double joint = captured_energy(cov, compute_joint_projection(cov, r));
    const double per_head = captured_energy(cov, compute_per_head_projection(cov, r, n));
    if (joint < per_head - 1e-9 * trace) ++violations;
  }
  CHECK(violations == 0);
}

TEST_CASE("captured energy is monotone in rank") {
  const auto k = test::random_matrix(100, 16, 6);
  Covariance cov(16);
  cov.accumulate(k);
  double prev = 0.0;
  for (std::size_t r = 1; r <= 16; ++r) {
    const double e = captured_energy(cov, compute_joint_projection(cov, r));
    CHECK(e >= prev);
    prev = e;
  }
  CHECK(prev == doctest::Approx(cov.matrix().trace()).epsilon(1e-12));
}

TEST_CASE("projection residual equals trace minus captured energy") {
  SyntheticSpec spec;
  spec.seq_len = 500;
  spec.spectrum = SyntheticSpec::geometric_spectrum(16, 0.6);
  spec.seed = 8;
  const auto keys = generate_keys(spec, AttentionConfig::with_defaults(2, 8));
  Covariance cov(16);
  cov.accumulate(keys);
  for (std::size_t r : {1u, 4u, 8u, 12u}) {
    const auto p = compute_joint_projection(cov, r);
    const auto approx = reconstruct_rows(project_rows(keys, p.U), p.U);
    double residual = 0.0;
    for (std::size_t i = 0; i < keys.data().size(); ++i) {
      const double diff = double(keys.data()[i]) - approx.data()[i];
      residual += diff * diff;
    }
    const double expected = cov.matrix().trace() - captured_energy(cov, p);
    CHECK(std::abs(residual - expected) <= 1e-4 * expected);
  }
}

TEST_CASE("projection_from_basis wraps an explicit basis") {
  const auto p = projection_from_basis(identity_matrix(4));
  CHECK(p.rank() == 4);
  CHECK(p.dim() == 4);
  CHECK(p.basis.empty());
  CHECK(orthonormality_error(p.U) == 0.0);
}
