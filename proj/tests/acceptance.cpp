// End-to-end acceptance checks.  Each criterion prints one PASS/FAIL line;
// the exit code is the number of failures.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <vector>

#include "lmmdiag/diagnostics.hpp"
#include "lmmdiag/experiments.hpp"
#include "lmmdiag/schedules.hpp"
#include "oracles.hpp"
#include "testutil.hpp"

using namespace lmmdiag;
using testutil::intercept_spec;
using testutil::normal_vector;
using testutil::simulate_season;

namespace {

int failures = 0;

struct Timer {
  std::chrono::steady_clock::time_point t0 = std::chrono::steady_clock::now();
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  }
};

void report(int criterion, bool pass, double seconds, const char* detail) {
  std::printf("criterion %d: %s (%.1fs) %s\n", criterion, pass ? "PASS" : "FAIL", seconds,
              detail);
  if (!pass) ++failures;
}

// equal home and away games per team: a random pairing stacked with its
// home/away mirror
Matrix balanced_random_schedule(int m, int gpt, Rng& rng) {
  Matrix half = gen_random_schedule(m, gpt, rng);
  Matrix z(2 * half.rows(), m);
  z.topRows(half.rows()) = half;
  z.bottomRows(half.rows()) = -half;
  return z;
}

struct MeanSe {
  double mean = 0.0;
  double se = 0.0;
};

MeanSe mean_se(const std::vector<double>& v) {
  MeanSe out;
  for (double x : v) out.mean += x;
  out.mean /= static_cast<double>(v.size());
  double ss = 0.0;
  for (double x : v) ss += (x - out.mean) * (x - out.mean);
  out.se = std::sqrt(ss / static_cast<double>(v.size() - 1) / static_cast<double>(v.size()));
  return out;
}

void criterion1() {
  Timer t;
  char detail[128] = "";
  bool pass = true;
  Rng rng(101);
  for (int rep = 0; rep < 20 && pass; ++rep) {
    int m = 4 + static_cast<int>(rng.next_below(7));
    Matrix z = balanced_random_schedule(m, 6, rng);
    ModelSpec spec = intercept_spec(z);
    Vector eta = normal_vector(m, 6.0, rng);
    Vector y = simulate_season(z, 3.0, eta, 4.0, rng);
    MixedFit mixed = fit_mixed(spec, y);
    FixedFit fixed = fit_fixed(spec, y);
    Vector k = Vector::Ones(1);
    Vector k_star = Vector::Zero(1 + m);
    k_star[0] = 1.0;
    NuVector nu = nu_k(mixed, spec, k);
    double nu_inf = nu.nu.cwiseAbs().maxCoeff();
    double gap = std::abs(k.dot(mixed.beta_hat) - blue(fixed, spec, k_star).estimate);
    std::vector<double> values(500);
    sample_permutation_values_serial(nu, mixed.eta_hat, FactorCov::diagonal(m), 7, values);
    double dist_max = 0.0;
    for (double v : values) dist_max = std::max(dist_max, std::abs(v));
    if (nu_inf > 1e-10 || gap > 1e-8 || dist_max > 1e-9) {
      pass = false;
      std::snprintf(detail, sizeof detail, "rep %d: |nu|=%.2e gap=%.2e dist=%.2e", rep, nu_inf,
                    gap, dist_max);
    }
  }
  pass = pass && t.seconds() < 10.0;
  report(1, pass, t.seconds(), detail);
}

void criterion2() {
  Timer t;
  char detail[128] = "";
  bool pass = true;
  Rng rng(103);
  for (int rep = 0; rep < 50 && pass; ++rep) {
    int m = 2 + static_cast<int>(rng.next_below(9));       // m <= 10
    int gpt = 2 + static_cast<int>(rng.next_below(5));     // n <= 50
    if (m * gpt % 2) ++gpt;
    Matrix z = gen_random_schedule(m, gpt, rng);
    Eigen::Index n = z.rows();
    Vector r_diag(n);
    for (Eigen::Index i = 0; i < n; ++i) r_diag[i] = 0.5 + rng.next_double();
    double theta = 0.1 + 3.0 * rng.next_double();
    ModelSpec spec = intercept_spec(z);
    spec.R_diag = r_diag;
    Vector y = simulate_season(z, 2.0, normal_vector(m, 5.0, rng), 3.0, rng);

    Matrix dense = oracle::dense_v(z, theta, r_diag);
    Matrix b = Matrix::Random(n, 3);
    LowRankV v{z, theta, r_diag};
    double e1 = (v_solve(v, b) - dense.ldlt().solve(b)).norm() / (1.0 + b.norm());
    double logdet_dense = 2.0 * Matrix(Eigen::LLT<Matrix>(dense).matrixL())
                                    .diagonal().array().log().sum();
    double e2 = std::abs(v_logdet(v) - logdet_dense) / (1.0 + std::abs(logdet_dense));

    MixedFit fit = fit_mixed(spec, y, theta);
    Matrix vinv = dense.ldlt().solve(Matrix::Identity(n, n));
    Matrix a = spec.X.transpose() * vinv * spec.X;
    Vector beta_dense = oracle::dense_pinv(a) * (spec.X.transpose() * (vinv * y));
    Vector eta_dense = theta * z.transpose() * (vinv * (y - spec.X * beta_dense));
    double e3 = (fit.beta_hat - beta_dense).norm() / (1.0 + beta_dense.norm());
    double e4 = (fit.eta_hat - eta_dense).norm() / (1.0 + eta_dense.norm());
    Vector nu_dense = oracle::dense_nu(spec.X, z, Vector::Ones(1), theta, r_diag);
    double e5 = (nu_k(fit, spec, Vector::Ones(1)).nu - nu_dense).norm() / (1.0 + nu_dense.norm());

    double worst = std::max({e1, e2, e3, e4, e5});
    if (worst > 1e-9) {
      pass = false;
      std::snprintf(detail, sizeof detail, "rep %d: max rel err %.2e", rep, worst);
    }
  }
  pass = pass && t.seconds() < 5.0;
  report(2, pass, t.seconds(), detail);
}

void criterion3() {
  Timer t;
  char detail[128] = "";
  bool pass = true;
#pragma omp parallel for schedule(dynamic)
  for (int season = 0; season < 10; ++season) {
    Rng rng = Rng::stream(107, static_cast<std::uint64_t>(season));
    Matrix z = gen_random_schedule(50, 12, rng);
    ModelSpec spec = intercept_spec(z);
    Vector eta = normal_vector(50, 15.0, rng);  // sigma_g^2 = 225
    Vector y = simulate_season(z, 2.0, eta, 23.0, rng);  // sigma^2 = 529
    RemlResult reml = reml_theta(spec, y);
    double lib = std::log(reml.theta_hat);
    double grid = oracle::grid_search_reml_logtheta(spec.X, z, y, -20.0, 20.0, 2000);
    if (std::abs(lib - grid) > 1e-4) {
#pragma omp critical
      {
        pass = false;
        std::snprintf(detail, sizeof detail, "season %d: log theta %.6f vs grid %.6f", season,
                      lib, grid);
      }
    }
  }
  pass = pass && t.seconds() < 60.0;
  report(3, pass, t.seconds(), detail);
}

void criterion4() {
  Timer t;
  Rng rng(109);
  Matrix z = gen_random_schedule(50, 12, rng);
  ModelSpec spec = intercept_spec(z);
  const double lambda = 2.5;
  std::vector<double> est(500);
#pragma omp parallel for schedule(dynamic)
  for (int s = 0; s < 500; ++s) {
    Rng srng = Rng::stream(211, static_cast<std::uint64_t>(s));
    Vector eta = normal_vector(50, 15.0, srng);
    Vector y = simulate_season(z, lambda, eta, 23.0, srng);
    est[s] = fit_mixed(spec, y).beta_hat[0];
  }
  MeanSe m = mean_se(est);
  bool pass = std::abs(m.mean - lambda) <= 3.0 * m.se && t.seconds() < 120.0;
  char detail[128];
  std::snprintf(detail, sizeof detail, "bias %.4f, mc se %.4f", m.mean - lambda, m.se);
  report(4, pass, t.seconds(), detail);
}

void criterion5() {
  Timer t;
  AdversarialConfig cfg;
  cfg.n_candidates = 1000;
  cfg.n_sims = 200;
  cfg.seed = 20260825;
  AdversarialSimResult r = adversarial_sim(cfg);
  double mixed_se = (r.mixed_ci_hi - r.mixed_ci_lo) / (2.0 * 1.96);
  double fixed_se = (r.fixed_ci_hi - r.fixed_ci_lo) / (2.0 * 1.96);
  bool pass = std::abs(r.mixed_mean - r.selected_nu_eta) <= 3.0 * mixed_se &&
              std::abs(r.fixed_mean) <= 3.0 * fixed_se && r.corr_diff_vs_internal >= 0.9 &&
              t.seconds() < 300.0;
  char detail[160];
  std::snprintf(detail, sizeof detail,
                "mixed %.4f vs nu'eta %.4f (se %.4f), fixed %.4f (se %.4f), corr %.3f",
                r.mixed_mean, r.selected_nu_eta, mixed_se, r.fixed_mean, fixed_se,
                r.corr_diff_vs_internal);
  report(5, pass, t.seconds(), detail);
}

// shared by criteria 6 and 7: an adversarially selected paper-scale schedule
struct AdvBase {
  Matrix z;
  Vector eta;
};

AdvBase make_adv_base(std::uint64_t seed) {
  Rng rng(seed);
  AdvBase out;
  out.eta = normal_vector(50, 15.0, rng);
  std::vector<Matrix> cands;
  cands.reserve(1000);
  for (int c = 0; c < 1000; ++c) cands.push_back(gen_random_schedule(50, 12, rng));
  double theta = 225.0 / 529.0;
  out.z = cands[adversarial_select(cands, out.eta, Vector::Ones(1), theta).index];
  return out;
}

void criterion6() {
  Timer t;
  AdvBase base = make_adv_base(127);
  PowerConfig cfg;
  cfg.base_Z = base.z;
  cfg.eta_hat = base.eta;
  cfg.sigma2 = 529.0;
  cfg.scenarios = {{0.0, true}, {0.0, false}};
  cfg.n_sims = 500;
  cfg.n_perms = 10000;
  cfg.alpha = 0.05;
  cfg.seed = 131;
  auto rows = power_study(cfg);
  bool pass = rows[0].rejection_rate >= 0.02 && rows[0].rejection_rate <= 0.10 &&
              rows[1].rejection_rate >= 0.95 && t.seconds() < 600.0;
  char detail[128];
  std::snprintf(detail, sizeof detail, "shuffled RR %.3f, adversarial RR %.3f",
                rows[0].rejection_rate, rows[1].rejection_rate);
  report(6, pass, t.seconds(), detail);
}

void criterion7() {
  Timer t;
  AdvBase base = make_adv_base(137);
  Rng flip_rng(1);
  Matrix z_flipped = switch_homes(base.z, 1.0, flip_rng);
  ModelSpec spec_a = intercept_spec(base.z);
  ModelSpec spec_b = intercept_spec(z_flipped);
  Vector k = Vector::Ones(1);
  const int n_sims = 200;
  std::vector<double> beta_a(n_sims), beta_b(n_sims), int_a(n_sims), int_b(n_sims);
#pragma omp parallel for schedule(dynamic)
  for (int s = 0; s < n_sims; ++s) {
    for (int side = 0; side < 2; ++side) {
      const ModelSpec& spec = side == 0 ? spec_a : spec_b;
      Rng rng = Rng::stream(139 + side, static_cast<std::uint64_t>(s));
      Vector y = spec.Z * base.eta;  // lambda = 0
      for (Eigen::Index i = 0; i < y.size(); ++i) y[i] += 23.0 * rng.next_normal();
      MixedFit fit = fit_mixed(spec, y);
      double b = fit.beta_hat[0];
      double ib = internal_bias(nu_k(fit, spec, k), fit.eta_hat);
      if (side == 0) {
        beta_a[s] = b;
        int_a[s] = ib;
      } else {
        beta_b[s] = b;
        int_b[s] = ib;
      }
    }
  }
  MeanSe ba = mean_se(beta_a), bb = mean_se(beta_b);
  MeanSe ia = mean_se(int_a), ib = mean_se(int_b);
  double beta_gap = std::abs(ba.mean + bb.mean);
  double int_gap = std::abs(ia.mean + ib.mean);
  double beta_tol = 3.0 * std::sqrt(ba.se * ba.se + bb.se * bb.se);
  double int_tol = 3.0 * std::sqrt(ia.se * ia.se + ib.se * ib.se);
  bool pass = beta_gap <= beta_tol && int_gap <= int_tol && t.seconds() < 120.0;
  char detail[160];
  std::snprintf(detail, sizeof detail,
                "mean beta %.4f / %.4f, mean nu'eta %.4f / %.4f", ba.mean, bb.mean, ia.mean,
                ib.mean);
  report(7, pass, t.seconds(), detail);
}

void criterion8() {
  Timer t;
  char detail[128] = "";
  bool pass = true;
  Rng rng(149);
  for (int rep = 0; rep < 20 && pass; ++rep) {
    const int m = 6;
    NuVector nu;
    nu.nu = normal_vector(m, 1.0, rng);
    nu.k = Vector::Ones(1);
    Vector eta = normal_vector(m, 2.0, rng);
    double observed = nu.nu.dot(eta);
    std::vector<int> perm(m);
    std::iota(perm.begin(), perm.end(), 0);
    long below = 0, equal = 0, total = 0;
    do {
      double v = 0.0;
      for (int i = 0; i < m; ++i) v += nu.nu[i] * eta[perm[i]];
      if (v < observed) ++below;
      else if (v == observed) ++equal;
      ++total;
    } while (std::next_permutation(perm.begin(), perm.end()));
    double exact = 100.0 * (below + 0.5 * equal) / total;
    PermutationResult r =
        permutation_test(nu, eta, FactorCov::diagonal(m), 100000, 151 + rep);
    if (std::abs(r.percentile - exact) > 1.0) {
      pass = false;
      std::snprintf(detail, sizeof detail, "rep %d: %.3f vs exact %.3f", rep, r.percentile,
                    exact);
    }
  }
  pass = pass && t.seconds() < 30.0;
  report(8, pass, t.seconds(), detail);
}

}  // namespace

int main() {
  criterion1();
  criterion2();
  criterion3();
  criterion4();
  criterion5();
  criterion6();
  criterion7();
  criterion8();
  if (failures == 0) std::printf("all criteria passed\n");
  return failures;
}
