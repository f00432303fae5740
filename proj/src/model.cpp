#include "lmmdiag/model.hpp"

#include <algorithm>
#include <cmath>

namespace lmmdiag {

int ModelSpec::n_factors() const {
  if (factor_of.empty()) return 1;
  if (static_cast<Eigen::Index>(factor_of.size()) != m())
    throw InvalidInput("ModelSpec: factor_of length mismatch");
  return *std::max_element(factor_of.begin(), factor_of.end()) + 1;
}

namespace {

// Symmetric g-inverse plus log pseudo-determinant from one eigendecomposition.
struct GinvPdet {
  Matrix ginv;
  double log_pdet = 0.0;
  int rank = 0;
};

GinvPdet ginv_with_pdet(const Matrix& a, double rel_tol) {
  SymEig eig = sym_eig(a);
  double lambda_max = eig.values.size() ? eig.values.cwiseAbs().maxCoeff() : 0.0;
  double cut = rel_tol * lambda_max;
  Vector inv = Vector::Zero(eig.values.size());
  GinvPdet out;
  for (Eigen::Index i = 0; i < eig.values.size(); ++i) {
    if (eig.values[i] > cut) {
      inv[i] = 1.0 / eig.values[i];
      out.log_pdet += std::log(eig.values[i]);
      ++out.rank;
    }
  }
  out.ginv = eig.vectors * inv.asDiagonal() * eig.vectors.transpose();
  return out;
}

// REML profile pieces at a given theta, sharing one VOps factorization.
struct RemlEval {
  const ModelSpec& spec;
  const Vector& Y;
  VOps ops;
  int rank_x;
  Matrix xy;  // [X Y]

  RemlEval(const ModelSpec& s, const Vector& y)
      : spec(s), Y(y), ops(s.Z, s.R_diag), rank_x(0), xy(s.n(), s.p() + 1) {
    rank_x = pinv_psd(s.X.transpose() * s.X).rank;
    xy.leftCols(s.p()) = s.X;
    xy.col(s.p()) = y;
  }

  struct At {
    double criterion = 0.0;
    double sigma2 = 0.0;
    Matrix xtvix;
    Matrix xtvix_ginv;
    int xtvix_rank = 0;
    Vector beta;
  };

  At eval(double theta) const {
    Eigen::Index p = spec.p();
    double dof = static_cast<double>(spec.n() - rank_x);
    Matrix vixy = ops.solve(theta, xy);
    At out;
    out.xtvix = spec.X.transpose() * vixy.leftCols(p);
    Vector xtviy = spec.X.transpose() * vixy.col(p);
    GinvPdet g = ginv_with_pdet(out.xtvix, default_rank_tol(std::max(spec.n(), p)));
    out.beta = g.ginv * xtviy;
    double ypy = Y.dot(vixy.col(p)) - xtviy.dot(out.beta);
    if (!(ypy > 0.0)) throw NumericalFailure("reml: Y'PY is not positive");
    out.sigma2 = ypy / dof;
    out.criterion = ops.logdet(theta) + g.log_pdet + dof * std::log(ypy);
    out.xtvix_ginv = std::move(g.ginv);
    out.xtvix_rank = g.rank;
    return out;
  }
};

// Brent's bounded scalar minimization (golden section with parabolic steps).
template <typename F>
std::pair<double, bool> brent_min(F f, double a, double b, double tol, int max_iter) {
  const double golden = 0.3819660112501051;
  double x = a + golden * (b - a);
  double w = x, v = x;
  double fx = f(x), fw = fx, fv = fx;
  double d = 0.0, e = 0.0;
  for (int it = 0; it < max_iter; ++it) {
    double xm = 0.5 * (a + b);
    double tol1 = tol;
    double tol2 = 2.0 * tol1;
    if (std::abs(x - xm) <= tol2 - 0.5 * (b - a)) return {x, true};
    bool use_golden = true;
    if (std::abs(e) > tol1) {
      double r = (x - w) * (fx - fv);
      double q = (x - v) * (fx - fw);
      double pnum = (x - v) * q - (x - w) * r;
      double qden = 2.0 * (q - r);
      if (qden > 0.0) pnum = -pnum;
      qden = std::abs(qden);
      double e_old = e;
      e = d;
      if (std::abs(pnum) < std::abs(0.5 * qden * e_old) && pnum > qden * (a - x) &&
          pnum < qden * (b - x)) {
        d = pnum / qden;
        double u = x + d;
        if (u - a < tol2 || b - u < tol2) d = (xm > x) ? tol1 : -tol1;
        use_golden = false;
      }
    }
    if (use_golden) {
      e = (x >= xm) ? a - x : b - x;
      d = golden * e;
    }
    double u = (std::abs(d) >= tol1) ? x + d : x + ((d > 0.0) ? tol1 : -tol1);
    double fu = f(u);
    if (fu <= fx) {
      if (u >= x) a = x; else b = x;
      v = w; fv = fw;
      w = x; fw = fx;
      x = u; fx = fu;
    } else {
      if (u < x) a = u; else b = u;
      if (fu <= fw || w == x) {
        v = w; fv = fw;
        w = u; fw = fu;
      } else if (fu <= fv || v == x || v == w) {
        v = u; fv = fu;
      }
    }
  }
  return {x, false};
}

void check_spec(const ModelSpec& spec, const Vector& Y) {
  if (spec.n() < 1) throw InvalidInput("model: empty design");
  if (spec.Z.rows() != spec.n()) throw InvalidInput("model: X/Z row mismatch");
  if (Y.size() != spec.n()) throw InvalidInput("model: Y length mismatch");
  if (!Y.allFinite()) throw InvalidInput("model: non-finite response");
}

}  // namespace

FixedFit fit_fixed(const ModelSpec& spec, const Vector& Y) {
  check_spec(spec, Y);
  Eigen::Index n = spec.n(), p = spec.p(), m = spec.m();
  Matrix xstar(n, p + m);
  xstar.leftCols(p) = spec.X;
  xstar.rightCols(m) = spec.Z;
  Vector rinv = spec.r_diag_or_ones().cwiseInverse();
  Matrix xtrx = xstar.transpose() * (rinv.asDiagonal() * xstar);
  GinvResult g = pinv_psd(xtrx, default_rank_tol(std::max(n, p + m)));
  if (n <= g.rank) throw DegenerateModel("fit_fixed: no residual degrees of freedom");
  Vector xtry = xstar.transpose() * (rinv.asDiagonal() * Y);
  FixedFit fit;
  fit.beta_star = g.ginv * xtry;  // minimum-norm via Moore-Penrose
  fit.rank_xstar = g.rank;
  Vector resid = Y - xstar * fit.beta_star;
  double rss = resid.dot(rinv.asDiagonal() * resid);
  fit.sigma2_hat = rss / static_cast<double>(n - g.rank);
  return fit;
}

EstimateSE blue(const FixedFit& fit, const ModelSpec& spec, const Vector& k_star) {
  Eigen::Index p = spec.p(), m = spec.m();
  if (k_star.size() != p + m) throw InvalidInput("blue: k_star length mismatch");
  Matrix xstar(spec.n(), p + m);
  xstar.leftCols(p) = spec.X;
  xstar.rightCols(m) = spec.Z;
  if (!is_estimable(k_star, xstar)) throw NotEstimable("blue: k_star is not estimable");

  EstimateSE out;
  out.estimate = k_star.dot(fit.beta_star);

  Vector rinv = spec.r_diag_or_ones().cwiseInverse();
  if (k_star.tail(m).isZero(0.0)) {
    // Schur-complement form for k in the fixed block
    Matrix xtr = spec.X.transpose() * rinv.asDiagonal();
    Matrix ztr = spec.Z.transpose() * rinv.asDiagonal();
    Matrix ztrz = ztr * spec.Z;
    Matrix xtrz = xtr * spec.Z;
    Matrix s = xtr * spec.X - xtrz * (pinv_psd(ztrz).ginv * xtrz.transpose());
    Vector k = k_star.head(p);
    out.se = std::sqrt(fit.sigma2_hat * k.dot(pinv_psd(s).ginv * k));
  } else {
    Matrix xtrx = xstar.transpose() * (rinv.asDiagonal() * xstar);
    out.se = std::sqrt(fit.sigma2_hat * k_star.dot(pinv_psd(xtrx).ginv * k_star));
  }
  return out;
}

RemlResult reml_theta(const ModelSpec& spec, const Vector& Y) {
  check_spec(spec, Y);
  if (spec.n_factors() != 1)
    throw InvalidInput("reml_theta: only the single-factor path is supported");
  RemlEval eval(spec, Y);
  if (spec.n() <= eval.rank_x) throw DegenerateModel("reml_theta: n <= rank(X)");

  auto f = [&](double log_theta) { return eval.eval(std::exp(log_theta)).criterion; };
  const double lo = -20.0, hi = 20.0;
  auto [log_theta, converged] = brent_min(f, lo, hi, 1e-10, 200);

  double f_zero = eval.eval(0.0).criterion;
  double theta = std::exp(log_theta);
  bool at_zero = (f_zero <= f(log_theta)) || (log_theta <= lo + 1e-8);
  if (at_zero) {
    theta = 0.0;
    converged = true;
  }
  RemlEval::At at = eval.eval(theta);
  return {theta, at.sigma2, at.criterion, converged};
}

MixedFit fit_mixed(const ModelSpec& spec, const Vector& Y, std::optional<double> theta) {
  check_spec(spec, Y);
  MixedFit fit;
  if (theta) {
    if (*theta < 0.0) throw InvalidInput("fit_mixed: theta must be nonnegative");
    fit.theta_hat = *theta;
    fit.converged = true;
  } else {
    RemlResult reml = reml_theta(spec, Y);
    fit.theta_hat = reml.theta_hat;
    fit.converged = reml.converged;
  }
  RemlEval eval(spec, Y);
  RemlEval::At at = eval.eval(fit.theta_hat);
  fit.sigma2_hat = at.sigma2;
  fit.reml_value = at.criterion;
  fit.beta_hat = at.beta;
  fit.xtvix = std::move(at.xtvix);
  fit.xtvix_ginv = {std::move(at.xtvix_ginv), at.xtvix_rank,
                    default_rank_tol(std::max(spec.n(), spec.p()))};
  // EBLUP: eta = Ghat Z' Vhat^-1 (Y - X beta), Ghat = theta I
  Vector resid = Y - spec.X * fit.beta_hat;
  fit.eta_hat = fit.theta_hat * (spec.Z.transpose() * eval.ops.solve(fit.theta_hat, resid));
  return fit;
}

double mixed_se(const MixedFit& fit, const Vector& k) {
  if (k.size() != fit.xtvix.rows()) throw InvalidInput("mixed_se: k length mismatch");
  Vector residual = k - fit.xtvix * (fit.xtvix_ginv.ginv * k);
  if (residual.norm() > 1e-8 * k.norm()) throw NotEstimable("mixed_se: k is not estimable");
  return std::sqrt(fit.sigma2_hat * k.dot(fit.xtvix_ginv.ginv * k));
}

VarDecomp var_mixed_decomposition(const ModelSpec& spec, const Vector& k, double theta,
                                  double sigma2,
                                  const std::vector<std::pair<Matrix, Vector>>& draws) {
  if (draws.size() < 2) throw InvalidInput("var_mixed_decomposition: need at least 2 draws");
  double sum_q = 0.0, sum_nu_g_nu = 0.0;
  double sum_ne = 0.0, sum_ne2 = 0.0;
  for (const auto& [z, eta] : draws) {
    VOps ops(z, spec.R_diag);
    Matrix vix = ops.solve(theta, spec.X);
    Matrix a = spec.X.transpose() * vix;
    Matrix aginv = pinv_psd(a).ginv;
    sum_q += k.dot(aginv * k);
    Vector nu = z.transpose() * (vix * (aginv * k));  // nu' = k' A^- X'V^-1 Z
    sum_nu_g_nu += theta * nu.squaredNorm();
    double ne = nu.dot(eta);
    sum_ne += ne;
    sum_ne2 += ne * ne;
  }
  double s = static_cast<double>(draws.size());
  VarDecomp out;
  out.gls_term = sigma2 * sum_q / s;
  out.var_nu_eta = (sum_ne2 - sum_ne * sum_ne / s) / (s - 1.0);
  out.correction = sigma2 * sum_nu_g_nu / s;
  return out;
}

}  // namespace lmmdiag
