#pragma once

#include <cstdint>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "lmmdiag/diagnostics.hpp"
#include "lmmdiag/schedules.hpp"

namespace lmmdiag {

struct HfaRow {
  std::string label;
  double fixed_est = 0.0;
  double mixed_est = 0.0;
  double mixed_se = 0.0;
  double diff = 0.0;  // mixed_est - fixed_est
  double internal_bias = 0.0;
  double percentile = 0.0;
  double sim_mean = 0.0;
  double sim_bias = 0.0;
  bool ok = false;
  std::string error;
};

struct HfaConfig {
  long n_perms = 1000000;
  int n_sims = 1000;
  std::uint64_t seed = 1;
};

// Full per-dataset pipeline: fixed fit, mixed fit, bias diagnostics, and the
// simulation estimate with beta_tilde as the frozen target.  Failures are
// reported per row; other datasets continue.
std::vector<HfaRow> hfa_table(const std::vector<std::pair<std::string, std::string>>& datasets,
                              const HfaConfig& cfg);

struct AdversarialConfig {
  int m_teams = 50;
  int games_per_team = 12;
  double sigma_g2 = 225.0;
  double sigma2 = 529.0;
  int n_candidates = 5000;
  int n_sims = 1000;
  std::uint64_t seed = 1;
};

struct AdversarialPerSim {
  double mixed = 0.0;
  double fixed = 0.0;
  double diff = 0.0;
  double internal_bias = 0.0;
  bool ok = false;
};

struct AdversarialSimResult {
  double mixed_mean = 0.0, mixed_ci_lo = 0.0, mixed_ci_hi = 0.0;
  double fixed_mean = 0.0, fixed_ci_lo = 0.0, fixed_ci_hi = 0.0;
  double selected_nu_eta = 0.0;
  double corr_diff_vs_internal = 0.0;
  int selected_index = 0;
  int n_failed = 0;
  std::vector<AdversarialPerSim> per_sim;
  AdversarialConfig config;
};

// Draws eta once, picks the candidate schedule maximizing nu_k'eta, then
// simulates seasons with true HFA 0 and fits both models.
AdversarialSimResult adversarial_sim(const AdversarialConfig& cfg);

struct PowerScenario {
  double p_s = 0.0;
  bool shuffle_schedule = false;
};

struct PowerConfig {
  Matrix base_Z;
  Vector eta_hat;   // from a prior mixed fit of the base schedule
  double sigma2 = 1.0;
  std::vector<PowerScenario> scenarios;
  int n_sims = 2000;
  long n_perms = 10000;
  double alpha = 0.05;
  std::uint64_t seed = 1;
};

struct PowerRow {
  double p_s = 0.0;
  bool shuffle_schedule = false;
  double rejection_rate = 0.0;
  double mean_beta = 0.0;           // mean HFA estimate; equals bias (truth is 0)
  double mean_internal_bias = 0.0;  // mean nu_k'eta_hat
  int n_sims = 0;
};

// Simulates zero-HFA seasons per scenario and inverts the two-sided level
// alpha randomization test at the 100*alpha/2 and 100*(1-alpha/2) percentiles.
std::vector<PowerRow> power_study(const PowerConfig& cfg);

// Histogram of the permutation distribution as a standalone SVG: solid line
// at the observed value, dotted line at 0, dashed lines at the 0.5 and 99.5
// sample percentiles.
void emit_permutation_plot(const PermutationResult& result, const std::string& path);

void write_hfa_csv(const std::vector<HfaRow>& rows, std::ostream& out);
void write_power_csv(const std::vector<PowerRow>& rows, std::ostream& out);

}  // namespace lmmdiag
