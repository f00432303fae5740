#include "lmmdiag/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace lmmdiag {

FactorCov FactorCov::diagonal(int m, double var) {
  FactorCov g;
  g.factor_of.assign(m, 0);
  g.var = {var};
  g.corr = {0.0};
  return g;
}

FactorCov FactorCov::from_matrix(const Matrix& g, const std::vector<int>& factor_of) {
  if (g.rows() != g.cols() || static_cast<Eigen::Index>(factor_of.size()) != g.rows())
    throw InvalidInput("FactorCov: dimension mismatch");
  int nf = factor_of.empty() ? 0 : *std::max_element(factor_of.begin(), factor_of.end()) + 1;
  FactorCov out;
  out.factor_of = factor_of;
  out.var.assign(nf, 0.0);
  out.corr.assign(nf, 0.0);
  std::vector<bool> seen(nf, false);
  const double tol = 1e-10 * std::max(1.0, g.cwiseAbs().maxCoeff());
  for (Eigen::Index i = 0; i < g.rows(); ++i) {
    int fi = factor_of[i];
    if (!seen[fi]) {
      out.var[fi] = g(i, i);
      seen[fi] = true;
    } else if (std::abs(g(i, i) - out.var[fi]) > tol) {
      throw UnsupportedCovariance("FactorCov: unequal variances within a factor");
    }
  }
  std::vector<bool> corr_set(nf, false);
  for (Eigen::Index i = 0; i < g.rows(); ++i) {
    for (Eigen::Index j = i + 1; j < g.cols(); ++j) {
      if (factor_of[i] != factor_of[j]) {
        if (std::abs(g(i, j)) > tol)
          throw UnsupportedCovariance("FactorCov: nonzero covariance across factors");
        continue;
      }
      int fi = factor_of[i];
      double rho = out.var[fi] > 0.0 ? g(i, j) / out.var[fi] : 0.0;
      if (!corr_set[fi]) {
        out.corr[fi] = rho;
        corr_set[fi] = true;
      } else if (std::abs(rho - out.corr[fi]) > 1e-8) {
        throw UnsupportedCovariance("FactorCov: G is not equicorrelated within a factor");
      }
    }
  }
  return out;
}

NuVector nu_k(const MixedFit& fit, const ModelSpec& spec, const Vector& k) {
  if (k.size() != spec.p()) throw InvalidInput("nu_k: k length mismatch");
  Vector residual = k - fit.xtvix * (fit.xtvix_ginv.ginv * k);
  if (residual.norm() > 1e-8 * k.norm()) throw NotEstimable("nu_k: k is not estimable");
  VOps ops(spec.Z, spec.R_diag);
  Matrix vix = ops.solve(fit.theta_hat, spec.X);
  NuVector out;
  out.nu = spec.Z.transpose() * (vix * (fit.xtvix_ginv.ginv * k));
  out.k = k;
  out.theta_used = fit.theta_hat;
  return out;
}

double internal_bias(const NuVector& nu, const Vector& eta_hat) {
  if (nu.nu.size() != eta_hat.size()) throw InvalidInput("internal_bias: dimension mismatch");
  return nu.nu.dot(eta_hat);
}

double hausman_diff(const MixedFit& mixed, const FixedFit& fixed, const Vector& k) {
  Eigen::Index p = mixed.beta_hat.size();
  if (k.size() != p) throw InvalidInput("hausman_diff: k length mismatch");
  Vector residual = k - mixed.xtvix * (mixed.xtvix_ginv.ginv * k);
  if (residual.norm() > 1e-8 * k.norm()) throw NotEstimable("hausman_diff: k is not estimable");
  return k.dot(mixed.beta_hat) - k.dot(fixed.beta_star.head(p));
}

namespace {

struct FactorIndex {
  std::vector<std::vector<int>> members;  // per factor
};

FactorIndex index_factors(const FactorCov& g, Eigen::Index m) {
  if (static_cast<Eigen::Index>(g.factor_of.size()) != m)
    throw InvalidInput("permute_eta: factor map length mismatch");
  FactorIndex idx;
  idx.members.resize(g.var.size());
  for (Eigen::Index i = 0; i < m; ++i) {
    int f = g.factor_of[i];
    if (f < 0 || f >= static_cast<int>(g.var.size()))
      throw InvalidInput("permute_eta: factor label out of range");
    idx.members[f].push_back(static_cast<int>(i));
  }
  return idx;
}

void permute_into(const Vector& eta, const FactorCov& g, const FactorIndex& idx, Rng& rng,
                  Vector& out, std::vector<int>& scratch, std::vector<double>& w0) {
  out = eta;
  for (std::size_t f = 0; f < idx.members.size(); ++f) {
    const auto& mem = idx.members[f];
    if (mem.size() < 2) continue;
    scratch.assign(mem.begin(), mem.end());
    if (g.corr[f] == 0.0) {
      rng.shuffle(scratch);
      for (std::size_t i = 0; i < mem.size(); ++i) out[mem[i]] = eta[scratch[i]];
    } else {
      // rank-matching construction: draw w0 ~ N(0, G) for this factor, then
      // replace the order statistics of w0 by those of eta, smallest first
      double rho = g.corr[f];
      if (rho < 0.0 || rho >= 1.0)
        throw UnsupportedCovariance("permute_eta: equicorrelation outside [0, 1)");
      double sd = std::sqrt(std::max(g.var[f], 0.0));
      double shared = std::sqrt(rho) * rng.next_normal();
      double own_scale = std::sqrt(1.0 - rho);
      w0.resize(mem.size());
      for (std::size_t i = 0; i < mem.size(); ++i)
        w0[i] = sd * (shared + own_scale * rng.next_normal());
      // scratch holds positions 0..s-1 ordered by w0 (ties by original index)
      std::iota(scratch.begin(), scratch.end(), 0);
      std::stable_sort(scratch.begin(), scratch.end(),
                       [&](int a, int b) { return w0[a] < w0[b]; });
      std::vector<double> sorted_eta(mem.size());
      for (std::size_t i = 0; i < mem.size(); ++i) sorted_eta[i] = eta[mem[i]];
      std::sort(sorted_eta.begin(), sorted_eta.end());
      for (std::size_t r = 0; r < mem.size(); ++r) out[mem[scratch[r]]] = sorted_eta[r];
    }
  }
}

}  // namespace

Vector permute_eta(const Vector& eta_hat, const FactorCov& g_hat, Rng& rng) {
  FactorIndex idx = index_factors(g_hat, eta_hat.size());
  Vector out;
  std::vector<int> scratch;
  std::vector<double> w0;
  permute_into(eta_hat, g_hat, idx, rng, out, scratch, w0);
  return out;
}

void sample_permutation_values_serial(const NuVector& nu, const Vector& eta_hat,
                                      const FactorCov& g_hat, std::uint64_t seed,
                                      std::vector<double>& values) {
  FactorIndex idx = index_factors(g_hat, eta_hat.size());
  Vector permuted;
  std::vector<int> scratch;
  std::vector<double> w0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    Rng rng = Rng::stream(seed, i);
    permute_into(eta_hat, g_hat, idx, rng, permuted, scratch, w0);
    values[i] = nu.nu.dot(permuted);
  }
}

void sample_permutation_values(const NuVector& nu, const Vector& eta_hat,
                               const FactorCov& g_hat, std::uint64_t seed,
                               std::vector<double>& values) {
  FactorIndex idx = index_factors(g_hat, eta_hat.size());
  const long n = static_cast<long>(values.size());
#pragma omp parallel
  {
    Vector permuted;
    std::vector<int> scratch;
    std::vector<double> w0;
#pragma omp for schedule(static)
    for (long i = 0; i < n; ++i) {
      Rng rng = Rng::stream(seed, static_cast<std::uint64_t>(i));
      permute_into(eta_hat, g_hat, idx, rng, permuted, scratch, w0);
      values[i] = nu.nu.dot(permuted);
    }
  }
}

PermutationResult summarize_permutations(double observed, const std::vector<double>& values,
                                         std::uint64_t seed) {
  PermutationResult out;
  out.observed = observed;
  out.n_perms = static_cast<long>(values.size());
  out.seed = seed;
  long below = 0, equal = 0;
  double sum = 0.0, lo = values.empty() ? 0.0 : values.front(), hi = lo;
  for (double v : values) {
    if (v < observed) ++below;
    else if (v == observed) ++equal;
    sum += v;
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  double n = static_cast<double>(values.size());
  out.dist_mean = sum / n;
  double ss = 0.0;
  for (double v : values) ss += (v - out.dist_mean) * (v - out.dist_mean);
  out.dist_sd = n > 1 ? std::sqrt(ss / (n - 1.0)) : 0.0;
  // mid-rank percentile
  out.percentile = 100.0 * (static_cast<double>(below) + 0.5 * static_cast<double>(equal) + 0.5) /
                   (n + 1.0);
  if (out.percentile < 0.5) out.flag = BiasFlag::negative_bias;
  else if (out.percentile > 99.5) out.flag = BiasFlag::positive_bias;

  const int n_bins = 200;
  out.histogram.assign(n_bins, 0);
  out.hist_lo = lo;
  out.hist_hi = hi;
  if (hi > lo) {
    double scale = n_bins / (hi - lo);
    for (double v : values) {
      int b = std::min(n_bins - 1, static_cast<int>((v - lo) * scale));
      ++out.histogram[b];
    }
  } else {
    out.histogram[0] = static_cast<long>(values.size());
  }
  return out;
}

PermutationResult permutation_test(const NuVector& nu, const Vector& eta_hat,
                                   const FactorCov& g_hat, long n_perms, std::uint64_t seed) {
  if (n_perms < 100) throw InvalidInput("permutation_test: n_perms must be at least 100");
  std::vector<double> values(static_cast<std::size_t>(n_perms));
  sample_permutation_values(nu, eta_hat, g_hat, seed, values);
  return summarize_permutations(internal_bias(nu, eta_hat), values, seed);
}

SimBiasResult sim_bias(const MixedFit& fit, const ModelSpec& spec, const Vector& k, int n_sims,
                       std::uint64_t seed, TargetSource target_source, const FixedFit* fixed) {
  if (n_sims < 2) throw InvalidInput("sim_bias: n_sims must be at least 2");
  Vector beta;
  if (target_source == TargetSource::fixed_beta) {
    if (!fixed) throw InvalidInput("sim_bias: fixed_beta target requires a FixedFit");
    beta = fixed->beta_star.head(spec.p());
  } else {
    beta = fit.beta_hat;
  }
  const Vector mean = spec.X * beta + spec.Z * fit.eta_hat;
  const Vector noise_sd = (fit.sigma2_hat * spec.r_diag_or_ones().array()).sqrt().matrix();

  std::vector<double> estimates(n_sims, 0.0);
  std::vector<char> ok(n_sims, 0);
#pragma omp parallel for schedule(dynamic)
  for (int s = 0; s < n_sims; ++s) {
    Rng rng = Rng::stream(seed, static_cast<std::uint64_t>(s));
    Vector y(spec.n());
    for (Eigen::Index i = 0; i < spec.n(); ++i) y[i] = mean[i] + noise_sd[i] * rng.next_normal();
    try {
      MixedFit refit = fit_mixed(spec, y);
      estimates[s] = k.dot(refit.beta_hat);
      ok[s] = 1;
    } catch (const Error&) {
      ok[s] = 0;
    }
  }

  SimBiasResult out;
  out.n_sims = n_sims;
  out.target_source = target_source;
  out.target = k.dot(beta);
  double sum = 0.0;
  int n_ok = 0;
  for (int s = 0; s < n_sims; ++s)
    if (ok[s]) {
      sum += estimates[s];
      ++n_ok;
    }
  out.n_failed = n_sims - n_ok;
  if (out.n_failed * 10 > n_sims)
    throw SimulationUnstable("sim_bias: more than 10% of replicate fits failed");
  out.mean_estimate = sum / n_ok;
  double ss = 0.0;
  for (int s = 0; s < n_sims; ++s)
    if (ok[s]) ss += (estimates[s] - out.mean_estimate) * (estimates[s] - out.mean_estimate);
  out.mc_se = n_ok > 1 ? std::sqrt(ss / (n_ok - 1.0) / n_ok) : 0.0;
  out.bias = out.mean_estimate - out.target;
  return out;
}

}  // namespace lmmdiag
