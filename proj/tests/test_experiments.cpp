#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "lmmdiag/experiments.hpp"
#include "testutil.hpp"

using namespace lmmdiag;
using testutil::balanced_round_robin;
using testutil::normal_vector;
using testutil::simulate_season;

namespace {

namespace fs = std::filesystem;

std::string write_schedule_csv(const Matrix& z, const Vector& margins, const std::string& name) {
  fs::path path = fs::temp_directory_path() / name;
  std::ofstream out(path);
  out << "home_team,away_team,home_score,away_score,neutral\n";
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    int h = -1, a = -1;
    for (Eigen::Index j = 0; j < z.cols(); ++j) {
      if (z(i, j) == 1.0) h = static_cast<int>(j);
      if (z(i, j) == -1.0) a = static_cast<int>(j);
    }
    // any score pair with the right difference works; away fixed at 0
    out << "T" << h << ",T" << a << "," << margins[i] << ",0,false\n";
  }
  return path.string();
}

}  // namespace

TEST_CASE("hfa_table on a balanced schedule has no mixed-fixed gap") {
  Rng rng(61);
  Matrix z = balanced_round_robin(5);
  Vector eta = normal_vector(5, 6.0, rng);
  Vector y = simulate_season(z, 3.0, eta, 4.0, rng);
  std::string path = write_schedule_csv(z, y, "lmmdiag_balanced.csv");

  HfaConfig cfg;
  cfg.n_perms = 1000;
  cfg.n_sims = 50;
  cfg.seed = 7;
  auto rows = hfa_table({{"balanced", path}}, cfg);
  std::remove(path.c_str());
  REQUIRE(rows.size() == 1);
  const HfaRow& r = rows[0];
  CHECK(r.ok);
  CHECK(r.label == "balanced");
  CHECK(std::abs(r.diff) < 1e-8);
  CHECK(std::abs(r.internal_bias) < 1e-8);
  // nu is zero only up to rounding, so the percentile is arbitrary noise
  CHECK(r.percentile >= 0.0);
  CHECK(r.percentile <= 100.0);
  CHECK(r.mixed_se > 0.0);
  CHECK(r.diff == doctest::Approx(r.mixed_est - r.fixed_est));
}

TEST_CASE("hfa_table reports a broken dataset and continues") {
  Rng rng(67);
  Matrix z = balanced_round_robin(4);
  Vector y = simulate_season(z, 2.0, normal_vector(4, 5.0, rng), 4.0, rng);
  std::string path = write_schedule_csv(z, y, "lmmdiag_ok.csv");
  HfaConfig cfg;
  cfg.n_perms = 500;
  cfg.n_sims = 10;
  auto rows = hfa_table({{"missing", "/nonexistent/games.csv"}, {"good", path}}, cfg);
  std::remove(path.c_str());
  REQUIRE(rows.size() == 2);
  CHECK_FALSE(rows[0].ok);
  CHECK(!rows[0].error.empty());
  CHECK(rows[1].ok);
}

TEST_CASE("hfa_table simulation bias tracks the internal bias") {
  // random, aligned (stronger team hosts every game) and anti-aligned
  // schedules so the internal biases span a wide range, then compare against
  // the simulation estimates
  Rng rng(71);
  std::vector<std::pair<std::string, std::string>> datasets;
  std::vector<std::string> paths;
  const double sd_eta = 6.0, sigma = 3.0;
  for (int d = 0; d < 6; ++d) {
    Vector eta = normal_vector(8, sd_eta, rng);
    Matrix z = gen_random_schedule(8, 20, rng);
    if (d >= 2) {
      double dir = d < 4 ? 1.0 : -1.0;
      for (Eigen::Index i = 0; i < z.rows(); ++i) {
        int h = -1, a = -1;
        for (Eigen::Index j = 0; j < z.cols(); ++j) {
          if (z(i, j) == 1.0) h = static_cast<int>(j);
          if (z(i, j) == -1.0) a = static_cast<int>(j);
        }
        if (dir * (eta[h] - eta[a]) < 0) z.row(i) = -z.row(i);
      }
    }
    Vector y = simulate_season(z, 0.0, eta, sigma, rng);
    std::string path = write_schedule_csv(z, y, "lmmdiag_track" + std::to_string(d) + ".csv");
    paths.push_back(path);
    datasets.emplace_back("d" + std::to_string(d), path);
  }
  HfaConfig cfg;
  cfg.n_perms = 500;
  cfg.n_sims = 300;
  cfg.seed = 99;
  auto rows = hfa_table(datasets, cfg);
  for (const auto& p : paths) std::remove(p.c_str());
  REQUIRE(rows.size() == 6);
  double sx = 0, sy = 0, sxx = 0, syy = 0, sxy = 0;
  for (const HfaRow& r : rows) {
    REQUIRE(r.ok);
    sx += r.internal_bias;
    sy += r.sim_bias;
    sxx += r.internal_bias * r.internal_bias;
    syy += r.sim_bias * r.sim_bias;
    sxy += r.internal_bias * r.sim_bias;
  }
  double n = 6.0;
  double corr = (sxy - sx * sy / n) /
                std::sqrt((sxx - sx * sx / n) * (syy - sy * sy / n));
  CHECK(corr > 0.9);
}

TEST_CASE("adversarial_sim is reproducible and internally consistent") {
  AdversarialConfig cfg;
  cfg.m_teams = 8;
  cfg.games_per_team = 10;
  cfg.sigma_g2 = 36.0;
  cfg.sigma2 = 9.0;
  cfg.n_candidates = 60;
  cfg.n_sims = 40;
  cfg.seed = 12;
  AdversarialSimResult a = adversarial_sim(cfg);
  AdversarialSimResult b = adversarial_sim(cfg);
  CHECK(a.selected_index == b.selected_index);
  CHECK(a.mixed_mean == b.mixed_mean);
  CHECK(a.fixed_mean == b.fixed_mean);
  CHECK(a.corr_diff_vs_internal == b.corr_diff_vs_internal);

  CHECK(a.selected_nu_eta > 0.0);
  CHECK(a.n_failed == 0);
  REQUIRE(static_cast<int>(a.per_sim.size()) == cfg.n_sims);
  double mixed = 0.0, fixed = 0.0;
  for (const auto& s : a.per_sim) {
    CHECK(s.ok);
    CHECK(s.diff == doctest::Approx(s.mixed - s.fixed).epsilon(1e-12));
    mixed += s.mixed;
    fixed += s.fixed;
  }
  CHECK(a.mixed_mean == doctest::Approx(mixed / cfg.n_sims));
  CHECK(a.fixed_mean == doctest::Approx(fixed / cfg.n_sims));
  CHECK(a.mixed_ci_lo < a.mixed_mean);
  CHECK(a.mixed_mean < a.mixed_ci_hi);
  // truth is zero: the fixed-model mean stays near 0 while the mixed mean is
  // dragged toward the selected nu'eta
  double half = 0.5 * (a.fixed_ci_hi - a.fixed_ci_lo);
  CHECK(std::abs(a.fixed_mean) < 4.0 * half);
  double mixed_half = 0.5 * (a.mixed_ci_hi - a.mixed_ci_lo);
  CHECK(std::abs(a.mixed_mean - a.selected_nu_eta) < 4.0 * mixed_half);
  CHECK(a.corr_diff_vs_internal > 0.5);
}

TEST_CASE("adversarial_sim responds to the seed") {
  AdversarialConfig cfg;
  cfg.m_teams = 6;
  cfg.games_per_team = 6;
  cfg.n_candidates = 30;
  cfg.n_sims = 10;
  cfg.seed = 1;
  AdversarialSimResult a = adversarial_sim(cfg);
  cfg.seed = 2;
  AdversarialSimResult b = adversarial_sim(cfg);
  CHECK(a.mixed_mean != b.mixed_mean);
}

TEST_CASE("power_study separates aligned and shuffled schedules") {
  Rng rng(83);
  Vector eta = normal_vector(8, 6.0, rng);
  double sigma2 = 4.0;
  // orient every game so the stronger team hosts: maximal Z/eta dependence
  Matrix z = gen_random_schedule(8, 24, rng);
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    int h = -1, a = -1;
    for (Eigen::Index j = 0; j < z.cols(); ++j) {
      if (z(i, j) == 1.0) h = static_cast<int>(j);
      if (z(i, j) == -1.0) a = static_cast<int>(j);
    }
    if (eta[h] < eta[a]) z.row(i) = -z.row(i);
  }

  PowerConfig cfg;
  cfg.base_Z = z;
  cfg.eta_hat = eta;
  cfg.sigma2 = sigma2;
  cfg.scenarios = {{0.0, false}, {0.0, true}};
  cfg.n_sims = 60;
  cfg.n_perms = 400;
  cfg.alpha = 0.05;
  cfg.seed = 5;
  auto rows = power_study(cfg);
  REQUIRE(rows.size() == 2);
  CHECK(rows[0].n_sims == 60);
  CHECK_FALSE(rows[0].shuffle_schedule);
  CHECK(rows[1].shuffle_schedule);
  // the aligned schedule was chosen to maximize nu'eta: high power
  CHECK(rows[0].rejection_rate > 0.8);
  // shuffling eta breaks the dependence: near-nominal level
  CHECK(rows[1].rejection_rate < 0.3);
  CHECK(std::abs(rows[0].mean_internal_bias) > std::abs(rows[1].mean_internal_bias));
}

TEST_CASE("power_study is deterministic in the seed") {
  Rng rng(89);
  PowerConfig cfg;
  cfg.base_Z = gen_random_schedule(5, 4, rng);
  cfg.eta_hat = normal_vector(5, 3.0, rng);
  cfg.sigma2 = 2.0;
  cfg.scenarios = {{0.5, false}};
  cfg.n_sims = 20;
  cfg.n_perms = 200;
  cfg.seed = 17;
  auto a = power_study(cfg);
  auto b = power_study(cfg);
  CHECK(a[0].rejection_rate == b[0].rejection_rate);
  CHECK(a[0].mean_beta == b[0].mean_beta);
  CHECK(a[0].mean_internal_bias == b[0].mean_internal_bias);
}

TEST_CASE("emit_permutation_plot writes a self-contained SVG") {
  Rng rng(97);
  NuVector nu;
  nu.nu = normal_vector(10, 1.0, rng);
  nu.k = Vector::Ones(1);
  Vector eta = normal_vector(10, 2.0, rng);
  PermutationResult r = permutation_test(nu, eta, FactorCov::diagonal(10), 2000, 3);
  fs::path path = fs::temp_directory_path() / "lmmdiag_perm.svg";
  emit_permutation_plot(r, path.string());
  std::ifstream in(path);
  std::stringstream buf;
  buf << in.rdbuf();
  std::string svg = buf.str();
  std::remove(path.string().c_str());
  CHECK(svg.find("<svg") != std::string::npos);
  CHECK(svg.rfind("</svg>") != std::string::npos);
  CHECK(svg.find("<rect") != std::string::npos);  // histogram bars
  CHECK(svg.find("stroke-dasharray") != std::string::npos);

  CHECK_THROWS_AS(emit_permutation_plot(r, "/nonexistent/dir/plot.svg"), IoError);
}

TEST_CASE("csv writers emit a header and one line per row") {
  std::vector<HfaRow> hfa(2);
  hfa[0].label = "a";
  hfa[0].ok = true;
  hfa[1].label = "b";
  hfa[1].error = "boom";
  std::ostringstream out;
  write_hfa_csv(hfa, out);
  std::string s = out.str();
  CHECK(std::count(s.begin(), s.end(), '\n') == 3);
  CHECK(s.find("label") != std::string::npos);
  CHECK(s.find("boom") != std::string::npos);

  std::vector<PowerRow> power(1);
  power[0].p_s = 0.25;
  std::ostringstream out2;
  write_power_csv(power, out2);
  std::string s2 = out2.str();
  CHECK(std::count(s2.begin(), s2.end(), '\n') == 2);
  CHECK(s2.find("0.25") != std::string::npos);
}
