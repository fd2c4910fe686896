#pragma once

// Linear algebra around A = I - rho W. One sparse LU factorization of A is
// built per rho value and shared by every solve at that value; transposed
// solves reuse the same factors.

#include <gsar/error.hpp>
#include <gsar/weights.hpp>

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <Eigen/SparseLU>

#include <algorithm>
#include <cmath>
#include <memory>
#include <string>

namespace gsar {

inline constexpr double kRhoLimit = 1.0 - 1e-9;

class SpatialOperator {
 public:
  using SparseColMatrix = Eigen::SparseMatrix<double, Eigen::ColMajor>;

  SpatialOperator(SpatialWeights w, double rho) : w_(std::move(w)), rho_(rho) {
    if (!std::isfinite(rho) || std::abs(rho) >= kRhoLimit)
      throw ValidationError("rho = " + std::to_string(rho) + " outside (-1, 1)");
    SparseColMatrix a(w_.n(), w_.n());
    a.setIdentity();
    a -= rho * SparseColMatrix(w_.matrix());
    a.makeCompressed();
    a_ = std::make_shared<const SparseColMatrix>(std::move(a));
    auto lu = std::make_shared<Eigen::SparseLU<SparseColMatrix>>();
    lu->analyzePattern(*a_);
    lu->factorize(*a_);
    if (lu->info() != Eigen::Success)
      throw NumericalError("factorization of I - rho W failed at rho = " + std::to_string(rho));
    lu_ = std::move(lu);
  }

  double rho() const noexcept { return rho_; }
  Eigen::Index n() const noexcept { return w_.n(); }
  const SpatialWeights& weights() const noexcept { return w_; }
  const SparseColMatrix& a() const noexcept { return *a_; }

  /// A^{-1} B.
  Eigen::MatrixXd solve_A(const Eigen::MatrixXd& b) const {
    check_rows(b.rows());
    Eigen::MatrixXd x = lu_->solve(b);
    check_solution(x);
    return x;
  }

  Eigen::VectorXd solve_A(const Eigen::VectorXd& b) const {
    check_rows(b.rows());
    Eigen::VectorXd x = lu_->solve(b);
    check_solution(x);
    return x;
  }

  /// A^{-T} B.
  Eigen::MatrixXd solve_At(const Eigen::MatrixXd& b) const {
    check_rows(b.rows());
    // transpose() only wraps a pointer to the factors; it mutates nothing.
    Eigen::MatrixXd x = lu_->transpose().solve(b);
    check_solution(x);
    return x;
  }

  Eigen::VectorXd solve_At(const Eigen::VectorXd& b) const {
    return solve_At(Eigen::MatrixXd(b)).col(0);
  }

  /// (A^T A)^{-1} B as A^{-1}(A^{-T} B).
  Eigen::MatrixXd solve_AtA(const Eigen::MatrixXd& b) const {
    return solve_A(solve_At(b));
  }

  /// A B (no solve).
  Eigen::MatrixXd apply_A(const Eigen::MatrixXd& b) const {
    check_rows(b.rows());
    return *a_ * b;
  }

  Eigen::MatrixXd apply_W(const Eigen::MatrixXd& b) const {
    check_rows(b.rows());
    return w_.matrix() * b;
  }

  /// Diagonal of (A^T A)^{-1}, i.e. the squared row norms of A^{-1},
  /// accumulated over blocks of identity columns.
  Eigen::VectorXd ata_inv_diag() const {
    const Eigen::Index n = w_.n();
    constexpr Eigen::Index block = 256;
    Eigen::VectorXd diag = Eigen::VectorXd::Zero(n);
    for (Eigen::Index start = 0; start < n; start += block) {
      const Eigen::Index width = std::min(block, n - start);
      Eigen::MatrixXd e = Eigen::MatrixXd::Zero(n, width);
      for (Eigen::Index k = 0; k < width; ++k) e(start + k, k) = 1.0;
      const Eigen::MatrixXd cols = solve_A(e);
      diag += cols.rowwise().squaredNorm();
    }
    return diag;
  }

  /// d eta / d rho = A^{-1} W A^{-1} X beta.
  Eigen::VectorXd deta_drho(const Eigen::Ref<const Eigen::MatrixXd>& x,
                            const Eigen::VectorXd& beta) const {
    check_design(x, beta);
    const Eigen::VectorXd v0 = solve_A(Eigen::VectorXd(x * beta));
    return solve_A(Eigen::VectorXd(w_.matrix() * v0));
  }

  /// d2 eta / d rho2 = 2 A^{-1} W A^{-1} W A^{-1} X beta.
  Eigen::VectorXd d2eta_drho2(const Eigen::Ref<const Eigen::MatrixXd>& x,
                              const Eigen::VectorXd& beta) const {
    check_design(x, beta);
    const Eigen::VectorXd v0 = solve_A(Eigen::VectorXd(x * beta));
    const Eigen::VectorXd v1 = solve_A(Eigen::VectorXd(w_.matrix() * v0));
    return 2.0 * solve_A(Eigen::VectorXd(w_.matrix() * v1));
  }

  /// sum_{j=0}^{terms} rho^j W^j b. Diagnostic only.
  Eigen::VectorXd neumann_partial(const Eigen::VectorXd& b, int terms) const {
    if (terms < 0) throw ValidationError("neumann_partial needs terms >= 0");
    check_rows(b.rows());
    Eigen::VectorXd term = b;
    Eigen::VectorXd sum = b;
    for (int j = 1; j <= terms; ++j) {
      term = rho_ * (w_.matrix() * term);
      sum += term;
    }
    return sum;
  }

 private:
  void check_rows(Eigen::Index rows) const {
    if (rows != w_.n())
      throw DimensionError("right-hand side has " + std::to_string(rows) + " rows, expected " +
                           std::to_string(w_.n()));
  }

  void check_design(const Eigen::Ref<const Eigen::MatrixXd>& x,
                    const Eigen::VectorXd& beta) const {
    check_rows(x.rows());
    if (x.cols() != beta.size()) throw DimensionError("design columns do not match beta");
  }

  static void check_solution(const Eigen::MatrixXd& x) {
    if (!x.allFinite()) throw NumericalError("solve with I - rho W produced nonfinite values");
  }

  SpatialWeights w_;
  double rho_;
  std::shared_ptr<const SparseColMatrix> a_;
  std::shared_ptr<Eigen::SparseLU<SparseColMatrix>> lu_;
};

}  // namespace gsar
