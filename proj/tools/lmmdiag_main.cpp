#include <algorithm>
#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "CLI11.hpp"
#include "json.hpp"

#include "lmmdiag/diagnostics.hpp"
#include "lmmdiag/experiments.hpp"
#include "lmmdiag/schedules.hpp"

using namespace lmmdiag;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

// exit codes: 0 ok, 2 usage, 3 io, 4 parse, 5 numeric/model, 6 invalid input
enum ExitCode { ok = 0, usage_error = 2, io_error = 3, parse_error = 4, model_error = 5,
                input_error = 6 };

struct Options {
  std::vector<std::string> inputs;
  std::string out_dir = ".";
  std::uint64_t seed = 1;
  long n_perms = 100000;
  int n_sims = 1000;
  double theta = -1.0;  // < 0 means estimate by REML
  std::string k_file;
  std::vector<double> p_s;
  bool shuffle = false;
  int workers = 0;
  bool paper_scale = false;
};

json config_json(const Options& o, const std::string& command) {
  json cfg;
  cfg["command"] = command;
  cfg["inputs"] = o.inputs;
  cfg["out"] = o.out_dir;
  cfg["seed"] = o.seed;
  cfg["perms"] = o.n_perms;
  cfg["sims"] = o.n_sims;
  if (o.theta >= 0.0) cfg["theta"] = o.theta;
  if (!o.k_file.empty()) cfg["k_file"] = o.k_file;
  if (!o.p_s.empty()) cfg["p_s"] = o.p_s;
  cfg["shuffle"] = o.shuffle;
  cfg["workers"] = o.workers;
  cfg["paper_scale"] = o.paper_scale;
  return cfg;
}

json result_envelope(const Options& o, const std::string& command) {
  json out;
  out["version"] = LMMDIAG_VERSION;
  out["seed"] = o.seed;
  out["config"] = config_json(o, command);
  return out;
}

void write_json(const json& j, const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << j.dump(2) << "\n";
  if (!out) throw IoError("write failed for " + path.string());
}

void write_text(const std::string& text, const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("write failed for " + path.string());
}

Vector load_k(const Options& o, Eigen::Index p) {
  if (o.k_file.empty()) {
    Vector k = Vector::Zero(p);
    k[0] = 1.0;  // the intercept, i.e. the home-field advantage
    return k;
  }
  std::ifstream in(o.k_file);
  if (!in) throw IoError("cannot open k file " + o.k_file);
  std::vector<double> vals;
  double v;
  while (in >> v) vals.push_back(v);
  if (static_cast<Eigen::Index>(vals.size()) != p)
    throw InvalidInput("k file has " + std::to_string(vals.size()) + " entries, expected " +
                       std::to_string(p));
  return Eigen::Map<Vector>(vals.data(), static_cast<Eigen::Index>(vals.size()));
}

Design load_design(const Options& o) {
  if (o.inputs.size() != 1) throw InvalidInput("exactly one --input required");
  return build_design(parse_games_file(o.inputs[0]));
}

json vector_json(const Vector& v) {
  return std::vector<double>(v.data(), v.data() + v.size());
}

const char* flag_name(BiasFlag f) {
  switch (f) {
    case BiasFlag::negative_bias: return "negative_bias";
    case BiasFlag::positive_bias: return "positive_bias";
    default: return "none";
  }
}

struct FitBundle {
  Design design;
  FixedFit fixed;
  MixedFit mixed;
  Vector k;
  double fixed_estimate = 0.0;
};

FitBundle run_fits(const Options& o) {
  FitBundle b{load_design(o), {}, {}, {}, 0.0};
  const Vector& y = b.design.schedule.margins;
  b.fixed = fit_fixed(b.design.spec, y);
  if (o.theta >= 0.0)
    b.mixed = fit_mixed(b.design.spec, y, o.theta);
  else
    b.mixed = fit_mixed(b.design.spec, y);
  b.k = load_k(o, b.design.spec.p());
  Eigen::Index m = b.design.spec.m();
  Vector k_star = Vector::Zero(b.k.size() + m);
  k_star.head(b.k.size()) = b.k;
  b.fixed_estimate = blue(b.fixed, b.design.spec, k_star).estimate;
  return b;
}

int cmd_fit(const Options& o) {
  FitBundle b = run_fits(o);
  json out = result_envelope(o, "fit");
  out["teams"] = b.design.schedule.teams;
  out["n_games"] = b.design.spec.n();
  json fixed;
  fixed["estimate"] = b.fixed_estimate;
  fixed["sigma2_hat"] = b.fixed.sigma2_hat;
  fixed["beta_star"] = vector_json(b.fixed.beta_star);
  out["fixed"] = fixed;
  json mixed;
  mixed["estimate"] = b.k.dot(b.mixed.beta_hat);
  mixed["se"] = mixed_se(b.mixed, b.k);
  mixed["theta_hat"] = b.mixed.theta_hat;
  mixed["sigma2_hat"] = b.mixed.sigma2_hat;
  mixed["converged"] = b.mixed.converged;
  mixed["beta_hat"] = vector_json(b.mixed.beta_hat);
  mixed["eta_hat"] = vector_json(b.mixed.eta_hat);
  out["mixed"] = mixed;
  write_json(out, fs::path(o.out_dir) / "fit.json");
  return ok;
}

int cmd_diagnose(const Options& o) {
  FitBundle b = run_fits(o);
  NuVector nu = nu_k(b.mixed, b.design.spec, b.k);
  double bias = internal_bias(nu, b.mixed.eta_hat);
  int m = static_cast<int>(b.design.spec.m());
  PermutationResult perm = permutation_test(nu, b.mixed.eta_hat, FactorCov::diagonal(m),
                                            o.n_perms, o.seed);
  json out = result_envelope(o, "diagnose");
  out["mixed_estimate"] = b.k.dot(b.mixed.beta_hat);
  out["mixed_se"] = mixed_se(b.mixed, b.k);
  out["fixed_estimate"] = b.fixed_estimate;
  out["difference"] = hausman_diff(b.mixed, b.fixed, b.k);
  out["internal_bias"] = bias;
  out["nu"] = vector_json(nu.nu);
  out["theta_hat"] = b.mixed.theta_hat;
  json p;
  p["observed"] = perm.observed;
  p["n_perms"] = perm.n_perms;
  p["percentile"] = perm.percentile;
  p["dist_mean"] = perm.dist_mean;
  p["dist_sd"] = perm.dist_sd;
  p["flag"] = flag_name(perm.flag);
  out["permutation"] = p;
  write_json(out, fs::path(o.out_dir) / "diagnostic.json");
  emit_permutation_plot(perm, (fs::path(o.out_dir) / "permdist.svg").string());
  std::printf("mixed %.4f (se %.4f), fixed %.4f, estimated bias %.4f, percentile %.2f, flag %s\n",
              b.k.dot(b.mixed.beta_hat), mixed_se(b.mixed, b.k), b.fixed_estimate, bias,
              perm.percentile, flag_name(perm.flag));
  return ok;
}

int cmd_simulate(const Options& o) {
  FitBundle b = run_fits(o);
  SimBiasResult sim = sim_bias(b.mixed, b.design.spec, b.k, o.n_sims, o.seed,
                               TargetSource::fixed_beta, &b.fixed);
  json out = result_envelope(o, "simulate");
  out["n_sims"] = sim.n_sims;
  out["n_failed"] = sim.n_failed;
  out["target"] = sim.target;
  out["target_source"] = "fixed_beta";
  out["mean_estimate"] = sim.mean_estimate;
  out["bias"] = sim.bias;
  out["mc_se"] = sim.mc_se;
  write_json(out, fs::path(o.out_dir) / "simulation.json");
  return ok;
}

// five-number-summary box plot for the per-sim mixed and fixed estimates
std::string box_plot_svg(const std::vector<double>& mixed, const std::vector<double>& fixed_v,
                         double nu_eta) {
  auto quartiles = [](std::vector<double> v) {
    std::sort(v.begin(), v.end());
    auto q = [&](double p) {
      double idx = p * static_cast<double>(v.size() - 1);
      std::size_t lo = static_cast<std::size_t>(idx);
      double frac = idx - static_cast<double>(lo);
      return lo + 1 < v.size() ? v[lo] * (1.0 - frac) + v[lo + 1] * frac : v[lo];
    };
    return std::array<double, 5>{v.front(), q(0.25), q(0.5), q(0.75), v.back()};
  };
  auto mq = quartiles(mixed);
  auto fq = quartiles(fixed_v);
  double lo = std::min({mq[0], fq[0], 0.0, nu_eta});
  double hi = std::max({mq[4], fq[4], 0.0, nu_eta});
  double span = hi - lo;
  lo -= 0.05 * span;
  hi += 0.05 * span;
  const double w = 420.0, h = 300.0, mt = 20.0, mb = 40.0;
  auto sy = [&](double v) { return mt + (hi - v) / (hi - lo) * (h - mt - mb); };
  std::ostringstream svg;
  svg << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n<svg xmlns=\"http://www.w3.org/2000/svg\" "
      << "width=\"" << w << "\" height=\"" << h << "\" viewBox=\"0 0 " << w << " " << h
      << "\">\n<rect width=\"" << w << "\" height=\"" << h << "\" fill=\"white\"/>\n";
  double centers[2] = {140.0, 300.0};
  const std::array<double, 5>* qs[2] = {&mq, &fq};
  const char* labels[2] = {"mixed", "fixed"};
  for (int i = 0; i < 2; ++i) {
    const auto& q = *qs[i];
    double c = centers[i], half = 40.0;
    svg << "<line x1=\"" << c << "\" y1=\"" << sy(q[0]) << "\" x2=\"" << c << "\" y2=\""
        << sy(q[4]) << "\" stroke=\"black\"/>\n";
    svg << "<rect x=\"" << c - half << "\" y=\"" << sy(q[3]) << "\" width=\"" << 2 * half
        << "\" height=\"" << sy(q[1]) - sy(q[3]) << "\" fill=\"#b0c4de\" stroke=\"black\"/>\n";
    svg << "<line x1=\"" << c - half << "\" y1=\"" << sy(q[2]) << "\" x2=\"" << c + half
        << "\" y2=\"" << sy(q[2]) << "\" stroke=\"black\" stroke-width=\"2\"/>\n";
    svg << "<text x=\"" << c << "\" y=\"" << h - 12.0
        << "\" font-size=\"13\" text-anchor=\"middle\">" << labels[i] << "</text>\n";
  }
  svg << "<line x1=\"60\" y1=\"" << sy(0.0) << "\" x2=\"" << w - 20 << "\" y2=\"" << sy(0.0)
      << "\" stroke=\"black\" stroke-dasharray=\"2,3\"/>\n";
  svg << "<line x1=\"60\" y1=\"" << sy(nu_eta) << "\" x2=\"" << w - 20 << "\" y2=\""
      << sy(nu_eta) << "\" stroke=\"red\" stroke-dasharray=\"6,4\"/>\n";
  svg << "</svg>\n";
  return svg.str();
}

int cmd_adversarial(const Options& o) {
  AdversarialConfig cfg;
  cfg.seed = o.seed;
  cfg.n_candidates = o.paper_scale ? 5000 : 1000;
  cfg.n_sims = o.n_sims;
  AdversarialSimResult r = adversarial_sim(cfg);
  json out = result_envelope(o, "adversarial");
  out["m_teams"] = cfg.m_teams;
  out["games_per_team"] = cfg.games_per_team;
  out["n_candidates"] = cfg.n_candidates;
  out["n_sims"] = cfg.n_sims;
  out["selected_index"] = r.selected_index;
  out["selected_nu_eta"] = r.selected_nu_eta;
  out["mixed_mean"] = r.mixed_mean;
  out["mixed_ci"] = {r.mixed_ci_lo, r.mixed_ci_hi};
  out["fixed_mean"] = r.fixed_mean;
  out["fixed_ci"] = {r.fixed_ci_lo, r.fixed_ci_hi};
  out["corr_diff_vs_internal"] = r.corr_diff_vs_internal;
  out["n_failed"] = r.n_failed;
  write_json(out, fs::path(o.out_dir) / "adversarial.json");
  std::vector<double> mixed, fixed_v;
  for (const auto& s : r.per_sim)
    if (s.ok) {
      mixed.push_back(s.mixed);
      fixed_v.push_back(s.fixed);
    }
  write_text(box_plot_svg(mixed, fixed_v, r.selected_nu_eta),
             fs::path(o.out_dir) / "adversarial_box.svg");
  return ok;
}

int cmd_power(const Options& o) {
  AdversarialConfig acfg;
  acfg.seed = o.seed;
  acfg.n_candidates = o.paper_scale ? 5000 : 1000;
  acfg.n_sims = 2;  // only the schedule selection is reused here
  AdversarialSimResult sel = adversarial_sim(acfg);

  // rebuild the selected schedule and the eta draw the same way adversarial_sim does
  Rng eta_rng = Rng::stream(o.seed, 0);
  Vector eta(acfg.m_teams);
  for (int i = 0; i < acfg.m_teams; ++i) eta[i] = std::sqrt(acfg.sigma_g2) * eta_rng.next_normal();
  Rng sel_rng = Rng::stream(o.seed + 1, static_cast<std::uint64_t>(sel.selected_index));
  Matrix z = gen_random_schedule(acfg.m_teams, acfg.games_per_team, sel_rng);

  PowerConfig cfg;
  cfg.base_Z = z;
  cfg.eta_hat = eta;
  cfg.sigma2 = acfg.sigma2;
  cfg.n_sims = o.n_sims;
  cfg.n_perms = o.n_perms;
  cfg.seed = o.seed + 10;
  std::vector<double> ps = o.p_s.empty() ? std::vector<double>{0.0, 0.1, 0.25, 0.5} : o.p_s;
  for (double p : ps) cfg.scenarios.push_back({p, false});
  if (o.shuffle) cfg.scenarios.insert(cfg.scenarios.begin(), {0.0, true});
  auto rows = power_study(cfg);

  std::ostringstream csv;
  csv << "# version=" << LMMDIAG_VERSION << " seed=" << o.seed << " config="
      << config_json(o, "power").dump() << "\n";
  write_power_csv(rows, csv);
  write_text(csv.str(), fs::path(o.out_dir) / "table.csv");
  for (const auto& r : rows)
    std::printf("p_s=%.2f shuffle=%d rejection=%.4f mean_beta=%.4f mean_internal=%.4f\n", r.p_s,
                r.shuffle_schedule ? 1 : 0, r.rejection_rate, r.mean_beta,
                r.mean_internal_bias);
  return ok;
}

int cmd_table(const Options& o) {
  if (o.inputs.empty()) throw InvalidInput("table: at least one --input label=path required");
  std::vector<std::pair<std::string, std::string>> datasets;
  for (const std::string& spec : o.inputs) {
    auto eq = spec.find('=');
    if (eq == std::string::npos)
      datasets.emplace_back(fs::path(spec).stem().string(), spec);
    else
      datasets.emplace_back(spec.substr(0, eq), spec.substr(eq + 1));
  }
  HfaConfig cfg;
  cfg.n_perms = o.n_perms;
  cfg.n_sims = o.n_sims;
  cfg.seed = o.seed;
  auto rows = hfa_table(datasets, cfg);
  std::ostringstream csv;
  csv << "# version=" << LMMDIAG_VERSION << " seed=" << o.seed << " config="
      << config_json(o, "table").dump() << "\n";
  write_hfa_csv(rows, csv);
  write_text(csv.str(), fs::path(o.out_dir) / "table.csv");
  int bad = 0;
  for (const auto& r : rows) {
    if (r.ok)
      std::printf("%s: fixed %.2f mixed %.2f (se %.2f) diff %.2f bias %.2f pct %.1f\n",
                  r.label.c_str(), r.fixed_est, r.mixed_est, r.mixed_se, r.diff,
                  r.internal_bias, r.percentile);
    else {
      std::printf("%s: ERROR %s\n", r.label.c_str(), r.error.c_str());
      ++bad;
    }
  }
  return bad == 0 ? ok : model_error;
}

void emit_error(const std::string& type, const std::string& message, int code) {
  json err;
  err["error"] = type;
  err["message"] = message;
  err["exit_code"] = code;
  std::cout << err.dump() << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Linear mixed model bias diagnostics for schedule data"};
  app.set_version_flag("--version", std::string(LMMDIAG_VERSION));
  app.require_subcommand(1);

  Options o;
  std::string command;
  for (const char* name : {"fit", "diagnose", "simulate", "adversarial", "power", "table"}) {
    CLI::App* sub = app.add_subcommand(name);
    sub->add_option("--input", o.inputs, "input games CSV (label=path allowed for table)");
    sub->add_option("--out", o.out_dir, "output directory");
    sub->add_option("--seed", o.seed, "RNG seed");
    sub->add_option("--perms", o.n_perms, "permutation draws");
    sub->add_option("--sims", o.n_sims, "simulation replicates");
    sub->add_option("--theta", o.theta, "fix the variance ratio instead of estimating it");
    sub->add_option("--k-file", o.k_file, "whitespace-separated coefficient vector");
    sub->add_option("--p-s", o.p_s, "home switch probabilities (power)");
    sub->add_flag("--shuffle", o.shuffle, "include a shuffled-ratings scenario (power)");
    sub->add_option("--workers", o.workers, "thread count (0 = default)");
    sub->add_flag("--paper-scale", o.paper_scale, "full-size experiment configuration");
    sub->callback([&command, name] { command = name; });
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);
    if (rc == 0) return 0;  // --help / --version
    emit_error("usage", e.what(), usage_error);
    return usage_error;
  }

#ifdef _OPENMP
  if (o.workers > 0) omp_set_num_threads(o.workers);
#endif
  if (!fs::exists(o.out_dir)) {
    std::error_code ec;
    fs::create_directories(o.out_dir, ec);
  }

  try {
    if (command == "fit") return cmd_fit(o);
    if (command == "diagnose") return cmd_diagnose(o);
    if (command == "simulate") return cmd_simulate(o);
    if (command == "adversarial") return cmd_adversarial(o);
    if (command == "power") return cmd_power(o);
    if (command == "table") return cmd_table(o);
    emit_error("usage", "unknown command", usage_error);
    return usage_error;
  } catch (const ParseError& e) {
    emit_error("parse", e.what(), parse_error);
    return parse_error;
  } catch (const IoError& e) {
    emit_error("io", e.what(), io_error);
    return io_error;
  } catch (const InvalidInput& e) {
    emit_error("invalid_input", e.what(), input_error);
    return input_error;
  } catch (const Error& e) {
    emit_error("model", e.what(), model_error);
    return model_error;
  } catch (const std::exception& e) {
    emit_error("internal", e.what(), 1);
    return 1;
  }
}
