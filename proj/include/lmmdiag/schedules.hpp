#pragma once

#include <istream>
#include <string>
#include <vector>

#include "lmmdiag/model.hpp"
#include "lmmdiag/rng.hpp"

namespace lmmdiag {

struct GameRecord {
  std::string home_team;
  std::string away_team;
  double home_score = 0.0;
  double away_score = 0.0;
  bool neutral = false;
};

// Schedule matrix: each row has a +1 for the home team and a -1 for the away
// team; margins are home score minus away score.
struct Schedule {
  Matrix Z;
  std::vector<std::string> teams;  // column index -> team id
  Vector margins;
};

struct Design {
  Schedule schedule;
  ModelSpec spec;  // X = intercept column, Z = schedule matrix
};

// CSV with header home_team,away_team,home_score,away_score,neutral
std::vector<GameRecord> parse_games(std::istream& in);
std::vector<GameRecord> parse_games_file(const std::string& path);

Design build_design(const std::vector<GameRecord>& games, bool exclude_neutral = true);

// Uniform random pairings, games_per_team per team; the only restriction is
// that a team cannot play itself.  Home/away orientation is uniform, so home
// counts are not balanced.
Matrix gen_random_schedule(int m_teams, int games_per_team, Rng& rng);

struct AdvSelect {
  int index = 0;
  double nu_eta_value = 0.0;
};

// Picks the candidate Z maximizing nu_k'eta at the supplied theta; ties go to
// the lowest index.
AdvSelect adversarial_select(const std::vector<Matrix>& candidates, const Vector& eta,
                             const Vector& k, double theta, const Vector& R_diag = Vector());

// Negates round(p_s * n) distinct rows chosen uniformly at random.
Matrix switch_homes(const Matrix& Z, double p_s, Rng& rng);

Vector shuffle_eta(const Vector& eta, Rng& rng);

}  // namespace lmmdiag
