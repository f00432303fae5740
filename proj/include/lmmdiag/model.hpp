#pragma once

#include <optional>
#include <utility>
#include <vector>

#include "lmmdiag/linalg.hpp"

namespace lmmdiag {

// Y = X beta + Z eta + eps, eta ~ N(0, sigma^2 G(theta)), eps ~ N(0, sigma^2 R).
// Single random factor with G = theta * I is the tested surface; factor_of
// carries the per-column factor assignment for the data model.
struct ModelSpec {
  Matrix X;
  Matrix Z;
  Vector R_diag;               // empty = identity
  std::vector<int> factor_of;  // per Z column; empty = single factor 0

  Eigen::Index n() const { return X.rows(); }
  Eigen::Index p() const { return X.cols(); }
  Eigen::Index m() const { return Z.cols(); }
  Vector r_diag_or_ones() const {
    return R_diag.size() == 0 ? Vector::Ones(X.rows()) : R_diag;
  }
  int n_factors() const;
};

// All-fixed model Y = [X Z] beta_star + eps, minimum-norm solution.
struct FixedFit {
  Vector beta_star;  // length p + m
  double sigma2_hat = 0.0;
  int rank_xstar = 0;
};

struct MixedFit {
  double theta_hat = 0.0;
  double sigma2_hat = 0.0;
  Vector beta_hat;  // E-BLUE solution
  Vector eta_hat;   // EBLUP
  Matrix xtvix;     // X' Vhat^-1 X
  GinvResult xtvix_ginv;
  double reml_value = 0.0;
  bool converged = false;
};

struct RemlResult {
  double theta_hat = 0.0;
  double sigma2_hat = 0.0;
  double reml_value = 0.0;
  bool converged = false;
};

struct EstimateSE {
  double estimate = 0.0;
  double se = 0.0;
};

FixedFit fit_fixed(const ModelSpec& spec, const Vector& Y);

// Estimate and standard error of k_star' beta_star under the fixed model.
// When the eta block of k_star is zero the SE uses the Schur-complement
// quadratic form k'[X'R^-1X - X'R^-1Z(Z'R^-1Z)^- Z'R^-1X]^- k.
EstimateSE blue(const FixedFit& fit, const ModelSpec& spec, const Vector& k_star);

// Minimizes l_R(theta) = log|V| + log|X'V^-1X|_+ + (n - rank X) log(Y'PY)
// over log theta in [-20, 20] by Brent's method; a minimum at the lower
// boundary is reported as theta_hat = 0 with converged = true.
RemlResult reml_theta(const ModelSpec& spec, const Vector& Y);

MixedFit fit_mixed(const ModelSpec& spec, const Vector& Y,
                   std::optional<double> theta = std::nullopt);

// Plug-in fixed-Z standard error sqrt(sigma2 * k'(X'Vhat^-1X)^- k).
double mixed_se(const MixedFit& fit, const Vector& k);

struct VarDecomp {
  double gls_term = 0.0;    // sigma^2 E[k'(X'V^-1X)^- k]
  double var_nu_eta = 0.0;  // var(nu_k' eta) across draws
  double correction = 0.0;  // sigma^2 E[nu_k' G nu_k]
};

// Monte Carlo decomposition of var(k'beta_hat) across supplied (Z, eta) draws.
VarDecomp var_mixed_decomposition(const ModelSpec& spec, const Vector& k, double theta,
                                  double sigma2,
                                  const std::vector<std::pair<Matrix, Vector>>& draws);

}  // namespace lmmdiag
