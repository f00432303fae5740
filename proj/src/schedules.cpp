#include "lmmdiag/schedules.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <unordered_map>

namespace lmmdiag {

namespace {

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      fields.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  fields.push_back(cur);
  return fields;
}

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return s;
}

double parse_score(const std::string& s, long line) {
  try {
    std::size_t pos = 0;
    double v = std::stod(s, &pos);
    if (pos != s.size() || !std::isfinite(v)) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw ParseError("invalid score '" + s + "'", line);
  }
}

}  // namespace

std::vector<GameRecord> parse_games(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw ParseError("missing header row", 1);
  auto header = split_csv(line);
  const std::vector<std::string> expected = {"home_team", "away_team", "home_score",
                                             "away_score", "neutral"};
  if (header.size() != expected.size()) throw ParseError("unexpected header", 1);
  for (std::size_t i = 0; i < expected.size(); ++i)
    if (lower(header[i]) != expected[i]) throw ParseError("unexpected header", 1);

  std::vector<GameRecord> games;
  long line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    auto fields = split_csv(line);
    if (fields.size() != 5) throw ParseError("expected 5 fields", line_no);
    GameRecord g;
    g.home_team = fields[0];
    g.away_team = fields[1];
    if (g.home_team.empty() || g.away_team.empty())
      throw ParseError("empty team id", line_no);
    if (g.home_team == g.away_team)
      throw ParseError("home and away team are identical", line_no);
    g.home_score = parse_score(fields[2], line_no);
    g.away_score = parse_score(fields[3], line_no);
    std::string flag = lower(fields[4]);
    if (flag == "true") g.neutral = true;
    else if (flag == "false") g.neutral = false;
    else throw ParseError("neutral must be true or false", line_no);
    games.push_back(std::move(g));
  }
  return games;
}

std::vector<GameRecord> parse_games_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  return parse_games(in);
}

Design build_design(const std::vector<GameRecord>& games, bool exclude_neutral) {
  std::vector<const GameRecord*> used;
  for (const auto& g : games)
    if (!(exclude_neutral && g.neutral)) used.push_back(&g);
  if (used.empty()) throw EmptyDesign("build_design: no usable games");

  // team columns in first-appearance order
  std::unordered_map<std::string, int> col;
  std::vector<std::string> teams;
  for (const auto* g : used) {
    for (const std::string* t : {&g->home_team, &g->away_team}) {
      if (col.emplace(*t, static_cast<int>(teams.size())).second) teams.push_back(*t);
    }
  }

  Eigen::Index n = static_cast<Eigen::Index>(used.size());
  Eigen::Index m = static_cast<Eigen::Index>(teams.size());
  Design d;
  d.schedule.Z = Matrix::Zero(n, m);
  d.schedule.margins = Vector(n);
  d.schedule.teams = std::move(teams);
  for (Eigen::Index i = 0; i < n; ++i) {
    d.schedule.Z(i, col[used[i]->home_team]) = 1.0;
    d.schedule.Z(i, col[used[i]->away_team]) = -1.0;
    d.schedule.margins[i] = used[i]->home_score - used[i]->away_score;
  }
  d.spec.X = Matrix::Ones(n, 1);
  d.spec.Z = d.schedule.Z;
  d.spec.factor_of.assign(static_cast<std::size_t>(m), 0);
  return d;
}

Matrix gen_random_schedule(int m_teams, int games_per_team, Rng& rng) {
  if (m_teams < 2 || games_per_team < 1)
    throw InvalidInput("gen_random_schedule: need at least 2 teams and 1 game");
  long total = static_cast<long>(m_teams) * games_per_team;
  if (total % 2 != 0)
    throw InvalidInput("gen_random_schedule: m_teams * games_per_team must be even");

  // team multiset, shuffled and paired off; self-pairs repaired by swaps
  std::vector<int> slots(static_cast<std::size_t>(total));
  for (long i = 0; i < total; ++i) slots[i] = static_cast<int>(i % m_teams);
  long n_games = total / 2;
  for (int attempt = 0; attempt < 1000; ++attempt) {
    if (attempt == 0) rng.shuffle(slots);
    bool clean = true;
    for (long g = 0; g < n_games; ++g) {
      if (slots[2 * g] != slots[2 * g + 1]) continue;
      bool fixed = false;
      for (int t = 0; t < 200 && !fixed; ++t) {
        long j = static_cast<long>(rng.next_below(static_cast<std::uint64_t>(total)));
        long gj = j / 2;
        if (gj == g) continue;
        long partner = (j % 2 == 0) ? j + 1 : j - 1;
        if (slots[j] != slots[2 * g] && slots[partner] != slots[2 * g + 1]) {
          std::swap(slots[2 * g + 1], slots[j]);
          fixed = true;
        }
      }
      if (!fixed) clean = false;
    }
    if (clean) break;
    if (attempt == 999) throw InvalidInput("gen_random_schedule: could not avoid self-pairings");
  }

  Matrix z = Matrix::Zero(n_games, m_teams);
  for (long g = 0; g < n_games; ++g) {
    int a = slots[2 * g], b = slots[2 * g + 1];
    if (rng.next_below(2) == 1) std::swap(a, b);  // uniform home/away
    z(g, a) = 1.0;
    z(g, b) = -1.0;
  }
  return z;
}

AdvSelect adversarial_select(const std::vector<Matrix>& candidates, const Vector& eta,
                             const Vector& k, double theta, const Vector& R_diag) {
  if (candidates.empty()) throw InvalidInput("adversarial_select: no candidates");
  if (k.size() != 1) throw InvalidInput("adversarial_select: intercept-only design, k must be scalar");
  const int n_cand = static_cast<int>(candidates.size());
  std::vector<double> values(n_cand);
#pragma omp parallel for schedule(dynamic)
  for (int c = 0; c < n_cand; ++c) {
    const Matrix& z = candidates[c];
    Matrix x = Matrix::Ones(z.rows(), 1);
    VOps ops(z, R_diag);
    Matrix vix = ops.solve(theta, x);
    Matrix a = x.transpose() * vix;
    Vector nu = z.transpose() * (vix * (pinv_psd(a).ginv * k));
    values[c] = nu.dot(eta);
  }
  AdvSelect out{0, values[0]};
  for (int c = 1; c < n_cand; ++c) {
    if (values[c] > out.nu_eta_value) {
      out.index = c;
      out.nu_eta_value = values[c];
    }
  }
  return out;
}

Matrix switch_homes(const Matrix& Z, double p_s, Rng& rng) {
  if (p_s < 0.0 || p_s > 1.0) throw InvalidInput("switch_homes: p_s must be in [0, 1]");
  Eigen::Index n = Z.rows();
  long n_switch = std::lround(p_s * static_cast<double>(n));
  std::vector<Eigen::Index> rows(static_cast<std::size_t>(n));
  std::iota(rows.begin(), rows.end(), Eigen::Index{0});
  // partial Fisher-Yates: first n_switch entries are a uniform subset
  for (long i = 0; i < n_switch; ++i) {
    long j = i + static_cast<long>(rng.next_below(static_cast<std::uint64_t>(n - i)));
    std::swap(rows[i], rows[j]);
  }
  Matrix out = Z;
  for (long i = 0; i < n_switch; ++i) out.row(rows[i]) = -Z.row(rows[i]);
  return out;
}

Vector shuffle_eta(const Vector& eta, Rng& rng) {
  std::vector<double> v(eta.data(), eta.data() + eta.size());
  rng.shuffle(v);
  return Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size()));
}

}  // namespace lmmdiag
