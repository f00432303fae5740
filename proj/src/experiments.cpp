#include "lmmdiag/experiments.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>

namespace lmmdiag {

namespace {

double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

double sd_of(const std::vector<double>& v, double mean) {
  if (v.size() < 2) return 0.0;
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return std::sqrt(ss / static_cast<double>(v.size() - 1));
}

double pearson(const std::vector<double>& a, const std::vector<double>& b) {
  double ma = mean_of(a), mb = mean_of(b);
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  double denom = std::sqrt(saa * sbb);
  return denom > 0.0 ? sab / denom : 0.0;
}

// nu_k'eta for an intercept-only design at a fixed theta, shared by the
// candidate search
double intercept_nu_eta(const Matrix& z, const Vector& eta, double theta) {
  Matrix x = Matrix::Ones(z.rows(), 1);
  VOps ops(z, Vector());
  Matrix vix = ops.solve(theta, x);
  double a = (x.transpose() * vix)(0, 0);
  Vector nu = (z.transpose() * vix) / a;
  return nu.dot(eta);
}

}  // namespace

std::vector<HfaRow> hfa_table(const std::vector<std::pair<std::string, std::string>>& datasets,
                              const HfaConfig& cfg) {
  std::vector<HfaRow> rows;
  for (std::size_t i = 0; i < datasets.size(); ++i) {
    HfaRow row;
    row.label = datasets[i].first;
    try {
      Design d = build_design(parse_games_file(datasets[i].second));
      const Vector& y = d.schedule.margins;
      Eigen::Index m = d.spec.m();
      Vector k = Vector::Ones(1);
      Vector k_star = Vector::Zero(1 + m);
      k_star[0] = 1.0;

      FixedFit fixed = fit_fixed(d.spec, y);
      row.fixed_est = blue(fixed, d.spec, k_star).estimate;
      MixedFit mixed = fit_mixed(d.spec, y);
      row.mixed_est = k.dot(mixed.beta_hat);
      row.mixed_se = mixed_se(mixed, k);
      row.diff = hausman_diff(mixed, fixed, k);
      NuVector nu = nu_k(mixed, d.spec, k);
      row.internal_bias = internal_bias(nu, mixed.eta_hat);
      std::uint64_t perm_seed = Rng::stream(cfg.seed, 2 * i).next_u64();
      PermutationResult perm = permutation_test(nu, mixed.eta_hat,
                                                FactorCov::diagonal(static_cast<int>(m)),
                                                cfg.n_perms, perm_seed);
      row.percentile = perm.percentile;
      std::uint64_t sim_seed = Rng::stream(cfg.seed, 2 * i + 1).next_u64();
      SimBiasResult sim = sim_bias(mixed, d.spec, k, cfg.n_sims, sim_seed,
                                   TargetSource::fixed_beta, &fixed);
      row.sim_mean = sim.mean_estimate;
      row.sim_bias = sim.bias;
      row.ok = true;
    } catch (const std::exception& e) {
      row.ok = false;
      row.error = e.what();
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

AdversarialSimResult adversarial_sim(const AdversarialConfig& cfg) {
  if (cfg.m_teams < 2 || cfg.n_candidates < 1 || cfg.n_sims < 2 || cfg.sigma2 <= 0.0 ||
      cfg.sigma_g2 < 0.0)
    throw InvalidInput("adversarial_sim: invalid config");

  Rng eta_rng = Rng::stream(cfg.seed, 0);
  Vector eta(cfg.m_teams);
  double sd_g = std::sqrt(cfg.sigma_g2);
  for (int i = 0; i < cfg.m_teams; ++i) eta[i] = sd_g * eta_rng.next_normal();

  // candidates are evaluated streaming (regenerable from their stream index)
  // rather than materialized
  const double theta = cfg.sigma_g2 / cfg.sigma2;
  std::vector<double> values(cfg.n_candidates);
#pragma omp parallel for schedule(dynamic)
  for (int c = 0; c < cfg.n_candidates; ++c) {
    Rng rng = Rng::stream(cfg.seed + 1, static_cast<std::uint64_t>(c));
    Matrix z = gen_random_schedule(cfg.m_teams, cfg.games_per_team, rng);
    values[c] = intercept_nu_eta(z, eta, theta);
  }
  AdversarialSimResult out;
  out.config = cfg;
  out.selected_index = 0;
  out.selected_nu_eta = values[0];
  for (int c = 1; c < cfg.n_candidates; ++c) {
    if (values[c] > out.selected_nu_eta) {
      out.selected_index = c;
      out.selected_nu_eta = values[c];
    }
  }
  Rng sel_rng = Rng::stream(cfg.seed + 1, static_cast<std::uint64_t>(out.selected_index));
  Matrix zs = gen_random_schedule(cfg.m_teams, cfg.games_per_team, sel_rng);

  ModelSpec spec;
  spec.X = Matrix::Ones(zs.rows(), 1);
  spec.Z = zs;
  Vector k = Vector::Ones(1);
  double sd_e = std::sqrt(cfg.sigma2);

  out.per_sim.resize(cfg.n_sims);
#pragma omp parallel for schedule(dynamic)
  for (int s = 0; s < cfg.n_sims; ++s) {
    Rng rng = Rng::stream(cfg.seed + 2, static_cast<std::uint64_t>(s));
    Vector y = zs * eta;  // true HFA is 0
    for (Eigen::Index i = 0; i < y.size(); ++i) y[i] += sd_e * rng.next_normal();
    AdversarialPerSim rec;
    try {
      MixedFit mixed = fit_mixed(spec, y);
      FixedFit fixed = fit_fixed(spec, y);
      rec.mixed = mixed.beta_hat[0];
      rec.fixed = fixed.beta_star[0];
      rec.diff = hausman_diff(mixed, fixed, k);
      rec.internal_bias = internal_bias(nu_k(mixed, spec, k), mixed.eta_hat);
      rec.ok = true;
    } catch (const Error&) {
      rec.ok = false;
    }
    out.per_sim[s] = rec;
  }

  std::vector<double> mixed_v, fixed_v, diff_v, internal_v;
  for (const auto& r : out.per_sim) {
    if (!r.ok) continue;
    mixed_v.push_back(r.mixed);
    fixed_v.push_back(r.fixed);
    diff_v.push_back(r.diff);
    internal_v.push_back(r.internal_bias);
  }
  out.n_failed = cfg.n_sims - static_cast<int>(mixed_v.size());
  if (mixed_v.size() < 2) throw SimulationUnstable("adversarial_sim: too many failed fits");
  double n = static_cast<double>(mixed_v.size());
  out.mixed_mean = mean_of(mixed_v);
  double half = 1.96 * sd_of(mixed_v, out.mixed_mean) / std::sqrt(n);
  out.mixed_ci_lo = out.mixed_mean - half;
  out.mixed_ci_hi = out.mixed_mean + half;
  out.fixed_mean = mean_of(fixed_v);
  half = 1.96 * sd_of(fixed_v, out.fixed_mean) / std::sqrt(n);
  out.fixed_ci_lo = out.fixed_mean - half;
  out.fixed_ci_hi = out.fixed_mean + half;
  out.corr_diff_vs_internal = pearson(diff_v, internal_v);
  return out;
}

std::vector<PowerRow> power_study(const PowerConfig& cfg) {
  if (cfg.base_Z.cols() != cfg.eta_hat.size())
    throw InvalidInput("power_study: base schedule / eta_hat mismatch");
  if (cfg.n_sims < 1 || cfg.n_perms < 100 || cfg.sigma2 <= 0.0)
    throw InvalidInput("power_study: invalid config");

  const Vector k = Vector::Ones(1);
  const double sd_e = std::sqrt(cfg.sigma2);
  const double lo_pct = 100.0 * cfg.alpha / 2.0;
  const double hi_pct = 100.0 - lo_pct;
  const int m = static_cast<int>(cfg.base_Z.cols());
  const FactorCov g = FactorCov::diagonal(m);

  std::vector<PowerRow> rows;
  for (std::size_t sc = 0; sc < cfg.scenarios.size(); ++sc) {
    const PowerScenario& scen = cfg.scenarios[sc];
    std::uint64_t scen_seed = Rng::stream(cfg.seed, sc).next_u64();

    std::vector<char> reject(cfg.n_sims, 0), ok(cfg.n_sims, 0);
    std::vector<double> beta(cfg.n_sims, 0.0), internal(cfg.n_sims, 0.0);
#pragma omp parallel for schedule(dynamic)
    for (int s = 0; s < cfg.n_sims; ++s) {
      Rng rng = Rng::stream(scen_seed, static_cast<std::uint64_t>(s));
      try {
        Matrix zs = switch_homes(cfg.base_Z, scen.p_s, rng);
        Vector eta_s = scen.shuffle_schedule ? shuffle_eta(cfg.eta_hat, rng) : cfg.eta_hat;
        Vector y = zs * eta_s;  // lambda = 0 season
        for (Eigen::Index i = 0; i < y.size(); ++i) y[i] += sd_e * rng.next_normal();
        ModelSpec spec;
        spec.X = Matrix::Ones(zs.rows(), 1);
        spec.Z = std::move(zs);
        MixedFit fit = fit_mixed(spec, y);
        NuVector nu = nu_k(fit, spec, k);
        double obs = internal_bias(nu, fit.eta_hat);
        std::uint64_t perm_seed = rng.next_u64();
        std::vector<double> values(static_cast<std::size_t>(cfg.n_perms));
        sample_permutation_values_serial(nu, fit.eta_hat, g, perm_seed, values);
        PermutationResult perm = summarize_permutations(obs, values, perm_seed);
        beta[s] = fit.beta_hat[0];
        internal[s] = obs;
        reject[s] = (perm.percentile < lo_pct || perm.percentile > hi_pct) ? 1 : 0;
        ok[s] = 1;
      } catch (const Error&) {
        ok[s] = 0;
      }
    }

    PowerRow row;
    row.p_s = scen.p_s;
    row.shuffle_schedule = scen.shuffle_schedule;
    int n_ok = 0;
    double sum_rej = 0.0, sum_beta = 0.0, sum_int = 0.0;
    for (int s = 0; s < cfg.n_sims; ++s) {
      if (!ok[s]) continue;
      ++n_ok;
      sum_rej += reject[s];
      sum_beta += beta[s];
      sum_int += internal[s];
    }
    if (n_ok == 0) throw SimulationUnstable("power_study: all fits failed in a scenario");
    row.rejection_rate = sum_rej / n_ok;
    row.mean_beta = sum_beta / n_ok;
    row.mean_internal_bias = sum_int / n_ok;
    row.n_sims = n_ok;
    rows.push_back(row);
  }
  return rows;
}

namespace {

// value at the q-th percentile of the binned sample, linear within bins
double histogram_percentile(const PermutationResult& r, double q) {
  if (r.hist_hi <= r.hist_lo) return r.hist_lo;
  double target = q / 100.0 * static_cast<double>(r.n_perms);
  double width = (r.hist_hi - r.hist_lo) / static_cast<double>(r.histogram.size());
  double cum = 0.0;
  for (std::size_t b = 0; b < r.histogram.size(); ++b) {
    double c = static_cast<double>(r.histogram[b]);
    if (cum + c >= target && c > 0.0)
      return r.hist_lo + width * (static_cast<double>(b) + (target - cum) / c);
    cum += c;
  }
  return r.hist_hi;
}

}  // namespace

void emit_permutation_plot(const PermutationResult& result, const std::string& path) {
  const double width = 640.0, height = 400.0, ml = 50.0, mr = 20.0, mt = 20.0, mb = 40.0;
  const double plot_w = width - ml - mr, plot_h = height - mt - mb;

  double xmin = std::min({result.hist_lo, result.observed, 0.0});
  double xmax = std::max({result.hist_hi, result.observed, 0.0});
  if (xmax <= xmin) {
    xmin -= 1.0;
    xmax += 1.0;
  }
  double span = xmax - xmin;
  xmin -= 0.05 * span;
  xmax += 0.05 * span;
  auto sx = [&](double v) { return ml + (v - xmin) / (xmax - xmin) * plot_w; };

  long max_count = 1;
  for (long c : result.histogram) max_count = std::max(max_count, c);

  std::ofstream out(path);
  if (!out) throw IoError("emit_permutation_plot: cannot write " + path);
  out << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
      << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\""
      << height << "\" viewBox=\"0 0 " << width << " " << height << "\">\n"
      << "<rect width=\"" << width << "\" height=\"" << height << "\" fill=\"white\"/>\n";

  double bin_w = result.hist_hi > result.hist_lo
                     ? (result.hist_hi - result.hist_lo) / static_cast<double>(result.histogram.size())
                     : 0.0;
  for (std::size_t b = 0; b < result.histogram.size(); ++b) {
    if (result.histogram[b] == 0) continue;
    double h = plot_h * static_cast<double>(result.histogram[b]) / static_cast<double>(max_count);
    double x0 = bin_w > 0.0 ? sx(result.hist_lo + bin_w * static_cast<double>(b)) : sx(result.hist_lo) - 2.0;
    double x1 = bin_w > 0.0 ? sx(result.hist_lo + bin_w * static_cast<double>(b + 1)) : sx(result.hist_lo) + 2.0;
    out << "<rect x=\"" << x0 << "\" y=\"" << mt + plot_h - h << "\" width=\""
        << std::max(x1 - x0, 0.5) << "\" height=\"" << h << "\" fill=\"#b0c4de\"/>\n";
  }

  auto vline = [&](double v, const char* color, const char* dash) {
    out << "<line x1=\"" << sx(v) << "\" y1=\"" << mt << "\" x2=\"" << sx(v) << "\" y2=\""
        << mt + plot_h << "\" stroke=\"" << color << "\" stroke-width=\"1.5\"";
    if (dash) out << " stroke-dasharray=\"" << dash << "\"";
    out << "/>\n";
  };
  vline(histogram_percentile(result, 0.5), "red", "6,4");
  vline(histogram_percentile(result, 99.5), "red", "6,4");
  vline(0.0, "black", "2,3");
  vline(result.observed, "blue", nullptr);

  out << "<line x1=\"" << ml << "\" y1=\"" << mt + plot_h << "\" x2=\"" << ml + plot_w
      << "\" y2=\"" << mt + plot_h << "\" stroke=\"black\"/>\n";
  for (int t = 0; t <= 4; ++t) {
    double v = xmin + (xmax - xmin) * t / 4.0;
    out << "<text x=\"" << sx(v) << "\" y=\"" << height - 12.0
        << "\" font-size=\"12\" text-anchor=\"middle\">" << std::setprecision(4) << v
        << "</text>\n";
  }
  out << "</svg>\n";
  if (!out) throw IoError("emit_permutation_plot: write failed for " + path);
}

void write_hfa_csv(const std::vector<HfaRow>& rows, std::ostream& out) {
  out << "label,fixed,mixed,mixed_se,diff,internal_bias,percentile,sim_mean,sim_bias,error\n";
  out << std::setprecision(10);
  for (const auto& r : rows) {
    out << r.label << ',';
    if (r.ok) {
      out << r.fixed_est << ',' << r.mixed_est << ',' << r.mixed_se << ',' << r.diff << ','
          << r.internal_bias << ',' << r.percentile << ',' << r.sim_mean << ',' << r.sim_bias
          << ",\n";
    } else {
      out << ",,,,,,,," << r.error << "\n";
    }
  }
}

void write_power_csv(const std::vector<PowerRow>& rows, std::ostream& out) {
  out << "p_s,shuffle_schedule,rejection_rate,mean_beta,mean_internal_bias,n_sims\n";
  out << std::setprecision(10);
  for (const auto& r : rows) {
    out << r.p_s << ',' << (r.shuffle_schedule ? "true" : "false") << ',' << r.rejection_rate
        << ',' << r.mean_beta << ',' << r.mean_internal_bias << ',' << r.n_sims << "\n";
  }
}

}  // namespace lmmdiag
