#pragma once

#include <cstdint>
#include <vector>

#include "lmmdiag/model.hpp"
#include "lmmdiag/rng.hpp"

namespace lmmdiag {

// nu_k' = k'(X'Vhat^-1 X)^- X'Vhat^-1 Z; nu_k'eta is the bias of the E-BLUE
// of k'beta when Z and eta are dependent.
struct NuVector {
  Vector nu;
  Vector k;
  double theta_used = 0.0;
};

enum class BiasFlag { none, negative_bias, positive_bias };

struct PermutationResult {
  double observed = 0.0;  // nu_k' eta_hat
  long n_perms = 0;
  double dist_mean = 0.0;
  double dist_sd = 0.0;
  double percentile = 0.0;  // mid-rank convention, in [0, 100]
  BiasFlag flag = BiasFlag::none;
  std::uint64_t seed = 0;
  std::vector<long> histogram;  // 200 equal-width bins over [hist_lo, hist_hi]
  double hist_lo = 0.0;
  double hist_hi = 0.0;
};

enum class TargetSource { mixed_beta, fixed_beta };

struct SimBiasResult {
  int n_sims = 0;
  double mean_estimate = 0.0;
  double bias = 0.0;  // mean_estimate - target
  double mc_se = 0.0;
  double target = 0.0;
  TargetSource target_source = TargetSource::mixed_beta;
  int n_failed = 0;
};

// Factor-structured random-effects covariance: within each factor a common
// variance and a common (equicorrelated) correlation.  corr = 0 is the
// diagonal case.
struct FactorCov {
  std::vector<int> factor_of;  // per component of eta
  std::vector<double> var;     // per factor
  std::vector<double> corr;    // per factor

  static FactorCov diagonal(int m, double var = 1.0);
  // Recovers the structure from a dense G; throws UnsupportedCovariance if G
  // is not equicorrelated within factors and block-diagonal across them.
  static FactorCov from_matrix(const Matrix& g, const std::vector<int>& factor_of);
};

NuVector nu_k(const MixedFit& fit, const ModelSpec& spec, const Vector& k);

double internal_bias(const NuVector& nu, const Vector& eta_hat);

// k' beta_hathat - k' beta_tilde
double hausman_diff(const MixedFit& mixed, const FixedFit& fixed, const Vector& k);

// One draw of the permutation function pi(eta_hat): an independent uniform
// shuffle within each diagonal factor; the w0 rank-matching construction for
// equicorrelated factors.
Vector permute_eta(const Vector& eta_hat, const FactorCov& g_hat, Rng& rng);

// Fills values[i] with nu'pi_i(eta_hat), replicate i drawn from
// Rng::stream(seed, i).  The serial and OpenMP versions produce identical
// output; the serial one is the reference for tests and the benchmark.
void sample_permutation_values_serial(const NuVector& nu, const Vector& eta_hat,
                                      const FactorCov& g_hat, std::uint64_t seed,
                                      std::vector<double>& values);
void sample_permutation_values(const NuVector& nu, const Vector& eta_hat,
                               const FactorCov& g_hat, std::uint64_t seed,
                               std::vector<double>& values);

PermutationResult permutation_test(const NuVector& nu, const Vector& eta_hat,
                                   const FactorCov& g_hat, long n_perms, std::uint64_t seed);

// Builds the permutation summary from already-sampled values (used by the
// power study, which inverts the percentile at a chosen level).
PermutationResult summarize_permutations(double observed, const std::vector<double>& values,
                                         std::uint64_t seed);

// External bias estimate: refits the mixed model on Y_s = X beta + Z eta_hat + e_s
// with beta frozen at beta_hathat (or beta_tilde) and e_s ~ N(0, sigma2_hat R).
SimBiasResult sim_bias(const MixedFit& fit, const ModelSpec& spec, const Vector& k, int n_sims,
                       std::uint64_t seed, TargetSource target_source = TargetSource::mixed_beta,
                       const FixedFit* fixed = nullptr);

}  // namespace lmmdiag
