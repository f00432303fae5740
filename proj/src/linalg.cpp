#include "lmmdiag/linalg.hpp"

#include <cmath>
#include <limits>

namespace lmmdiag {

SymEig sym_eig(const Matrix& m) {
  if (m.rows() != m.cols()) throw InvalidInput("sym_eig: matrix is not square");
  if (!m.allFinite()) throw InvalidInput("sym_eig: non-finite entries");
  double scale = m.cwiseAbs().maxCoeff();
  double asym = (m - m.transpose()).cwiseAbs().maxCoeff();
  if (scale > 0.0 && asym > 1e-10 * scale)
    throw InvalidInput("sym_eig: matrix is not symmetric");
  Eigen::SelfAdjointEigenSolver<Matrix> es(0.5 * (m + m.transpose()));
  if (es.info() != Eigen::Success) throw NumericalFailure("sym_eig: eigendecomposition failed");
  return {es.eigenvalues(), es.eigenvectors()};
}

double default_rank_tol(Eigen::Index order) {
  return std::numeric_limits<double>::epsilon() * static_cast<double>(order);
}

GinvResult pinv_psd(const Matrix& m, double rel_tol) {
  SymEig eig = sym_eig(m);
  double lambda_max = eig.values.size() ? eig.values.cwiseAbs().maxCoeff() : 0.0;
  double cut = rel_tol * lambda_max;
  Vector inv = Vector::Zero(eig.values.size());
  int rank = 0;
  for (Eigen::Index i = 0; i < eig.values.size(); ++i) {
    if (eig.values[i] > cut) {
      inv[i] = 1.0 / eig.values[i];
      ++rank;
    }
  }
  GinvResult out;
  out.ginv = eig.vectors * inv.asDiagonal() * eig.vectors.transpose();
  out.rank = rank;
  out.tolerance_used = rel_tol;
  return out;
}

GinvResult pinv_psd(const Matrix& m) { return pinv_psd(m, default_rank_tol(m.rows())); }

double log_pdet_psd(const Matrix& m, double rel_tol) {
  SymEig eig = sym_eig(m);
  double lambda_max = eig.values.size() ? eig.values.cwiseAbs().maxCoeff() : 0.0;
  double cut = rel_tol * lambda_max;
  double out = 0.0;
  for (Eigen::Index i = 0; i < eig.values.size(); ++i)
    if (eig.values[i] > cut) out += std::log(eig.values[i]);
  return out;
}

VOps::VOps(const Matrix& Z, const Vector& R_diag) : Z_(Z) {
  Vector d = R_diag.size() == 0 ? Vector::Ones(Z.rows()) : R_diag;
  if (d.size() != Z.rows()) throw InvalidInput("VOps: R_diag length mismatch");
  if ((d.array() <= 0.0).any()) throw InvalidInput("VOps: R_diag entries must be positive");
  dinv_ = d.cwiseInverse();
  dinv_z_ = dinv_.asDiagonal() * Z_;
  Matrix w = Z_.transpose() * dinv_z_;
  SymEig eig = sym_eig(w);
  evals_ = eig.values.cwiseMax(0.0);
  u_ = dinv_z_ * eig.vectors;
  zt_dinv_ = eig.vectors.transpose() * dinv_z_.transpose();
  logdet_r_ = d.array().log().sum();
}

Matrix VOps::solve(double theta, const Matrix& B) const {
  if (theta < 0.0) throw InvalidInput("v_solve: theta must be nonnegative");
  if (B.rows() != Z_.rows()) throw InvalidInput("v_solve: dimension mismatch");
  Matrix db = dinv_.asDiagonal() * B;
  if (theta == 0.0) return db;
  // V^-1 = D^-1 - D^-1 Z (Z'D^-1 Z + theta^-1 I)^-1 Z'D^-1
  Matrix c = zt_dinv_ * B;
  Vector inv_mid = (evals_.array() + 1.0 / theta).inverse();
  return db - u_ * (inv_mid.asDiagonal() * c);
}

double VOps::logdet(double theta) const {
  if (theta < 0.0) throw InvalidInput("v_logdet: theta must be nonnegative");
  // log|V| = log|I + theta Z'D^-1 Z| + log|D|
  double out = logdet_r_;
  for (Eigen::Index i = 0; i < evals_.size(); ++i) {
    double t = 1.0 + theta * evals_[i];
    if (!(t > 0.0)) throw NumericalFailure("v_logdet: I + theta*Z'R^-1*Z not positive definite");
    out += std::log(t);
  }
  return out;
}

Matrix v_solve(const LowRankV& v, const Matrix& B) {
  return VOps(v.Z, v.R_diag).solve(v.theta, B);
}

double v_logdet(const LowRankV& v) { return VOps(v.Z, v.R_diag).logdet(v.theta); }

bool is_estimable(const Vector& k, const Matrix& X, double rel_tol) {
  if (k.size() != X.cols()) throw InvalidInput("is_estimable: dimension mismatch");
  double knorm = k.norm();
  if (knorm == 0.0) throw InvalidInput("is_estimable: k is the zero vector");
  Matrix xtx = X.transpose() * X;
  GinvResult g = pinv_psd(xtx, default_rank_tol(std::max(X.rows(), X.cols())));
  Vector residual = k - xtx * (g.ginv * k);
  return residual.norm() <= rel_tol * knorm;
}

}  // namespace lmmdiag
