#pragma once

#include <Eigen/Dense>

#include "lmmdiag/errors.hpp"

namespace lmmdiag {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

struct SymEig {
  Vector values;   // ascending
  Matrix vectors;  // columns are eigenvectors
};

// Eigendecomposition of a symmetric matrix.  Throws InvalidInput on
// non-finite entries or asymmetry beyond 1e-10 relative.
SymEig sym_eig(const Matrix& m);

struct GinvResult {
  Matrix ginv;
  int rank = 0;
  double tolerance_used = 0.0;
};

// Default relative rank tolerance: eps * order.
double default_rank_tol(Eigen::Index order);

// Moore-Penrose inverse of a symmetric PSD matrix via eigendecomposition.
// Eigenvalues below rel_tol * lambda_max are treated as zero.
GinvResult pinv_psd(const Matrix& m, double rel_tol);
GinvResult pinv_psd(const Matrix& m);

// log pseudo-determinant over eigenvalues above rel_tol * lambda_max
double log_pdet_psd(const Matrix& m, double rel_tol);

// V = theta * Z Z' + diag(R_diag).  theta is the variance ratio
// sigma_g^2 / sigma^2; R defaults to the identity.
struct LowRankV {
  Matrix Z;
  double theta = 0.0;
  Vector R_diag;  // empty means identity

  Vector r_diag_or_ones() const {
    return R_diag.size() == 0 ? Vector::Ones(Z.rows()) : R_diag;
  }
};

// Repeated-solve engine for V(theta) = theta Z Z' + D with D diagonal.
// Caches the eigendecomposition of W = Z' D^-1 Z so that solves and
// log-determinants for many theta values cost O(n m) each; V is never formed.
class VOps {
 public:
  VOps(const Matrix& Z, const Vector& R_diag);

  Matrix solve(double theta, const Matrix& B) const;
  double logdet(double theta) const;

  Eigen::Index n() const { return Z_.rows(); }
  Eigen::Index m() const { return Z_.cols(); }

 private:
  Matrix Z_;
  Vector dinv_;
  Matrix dinv_z_;   // D^-1 Z
  Matrix u_;        // D^-1 Z Q
  Matrix zt_dinv_;  // Q' Z' D^-1
  Vector evals_;    // eigenvalues of W, clamped at 0
  double logdet_r_ = 0.0;
};

// One-shot wrappers over VOps
Matrix v_solve(const LowRankV& v, const Matrix& B);
double v_logdet(const LowRankV& v);

// True iff k lies in the row space of X (the defining condition for
// estimability of k'beta): the residual of projecting k onto the column
// space of X'X has norm <= rel_tol * ||k||.
bool is_estimable(const Vector& k, const Matrix& X, double rel_tol = 1e-8);

}  // namespace lmmdiag
