// Copyright 2026 The softbellman Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Affine Markov game data model.
//
// Each player i owns an independent MDP with n_i states and m_i actions. The
// players' state-action frequencies are stacked into one vector y of length
// l = sum_i n_i * m_i. Within a player's slice the ordering is state-major:
// index s * m + a (0-based) holds the pair (state s, action a). Rewards are
// affine in y: R = b + C * y.

#pragma once

#include <cmath>
#include <cstddef>
#include <sstream>
#include <string>
#include <vector>

#include "softbellman/errors.hpp"
#include "softbellman/linalg.hpp"

namespace softbellman {

inline constexpr double kStochasticTolerance = 1e-12;
inline constexpr double kNsdTolerance = 1e-10;

/// One player's MDP dynamics.
///
/// The transition kernel is stored as an (n*m) x n matrix whose row s*m + a is
/// the next-state distribution for taking action a in state s.
struct PlayerMdp {
  Index n = 0;
  Index m = 0;
  Vector q;
  Matrix T;

  double transition(Index s, Index a, Index next) const { return T(s * m + a, next); }
  Index pairs() const { return n * m; }
};

struct AffineRewardParams {
  Vector b;
  Matrix C;
};

struct AffineGame {
  std::vector<PlayerMdp> players;
  double gamma = 0.99;
  AffineRewardParams params;

  Index num_pairs() const {
    Index l = 0;
    for (const auto& p : players) l += p.pairs();
    return l;
  }
  Index num_states() const {
    Index r = 0;
    for (const auto& p : players) r += p.n;
    return r;
  }
};

/// Where a player's block starts inside the stacked state (length r) and
/// state-action (length l) vectors.
struct PlayerOffset {
  Index state = 0;
  Index pair = 0;
  Index n = 0;
  Index m = 0;

  Index pairs() const { return n * m; }
};

inline std::vector<PlayerOffset> player_offsets(const std::vector<PlayerMdp>& players) {
  std::vector<PlayerOffset> out;
  out.reserve(players.size());
  Index s = 0, sa = 0;
  for (const auto& p : players) {
    out.push_back({s, sa, p.n, p.m});
    s += p.n;
    sa += p.pairs();
  }
  return out;
}

/// Precomputed block matrices shared by the forward and inverse solvers.
///
///   H = blkdiag(D_i - gamma * E_i)   (r x l)
///   K = blkdiag(D_i^T D_i)           (l x l)
///
/// D_i has a one in row s for every column belonging to state s; column j of
/// E_i is the next-state distribution of the pair that column j indexes.
struct StackedGame {
  Matrix H;
  Matrix K;
  Vector q;
  std::vector<PlayerOffset> offsets;
  double gamma = 0.0;
  /// Per-player kernels in PlayerMdp::T layout, kept for best-response starts.
  std::vector<Matrix> transitions;

  Index l() const { return H.cols(); }
  Index r() const { return H.rows(); }
  std::size_t num_players() const { return offsets.size(); }

  /// K * y computed from per-state sums instead of a dense product.
  Vector state_marginals(const Vector& y) const {
    Vector out(y.size());
    for (const auto& o : offsets) {
      for (Index s = 0; s < o.n; ++s) {
        const Index begin = o.pair + s * o.m;
        out.segment(begin, o.m).setConstant(y.segment(begin, o.m).sum());
      }
    }
    return out;
  }
};

struct Violation {
  std::string invariant;
  std::string location;
};

struct ValidationReport {
  std::vector<Violation> violations;

  bool ok() const { return violations.empty(); }
  std::string to_string() const {
    std::ostringstream os;
    for (const auto& v : violations) os << v.invariant << " at " << v.location << "\n";
    return os.str();
  }
};

/// Which of the existence/uniqueness hypotheses validate_game checks on C.
enum class Hypotheses {
  kNone,        // shapes and stochasticity only
  kExistence,   // plus every diagonal block C_ii negative semidefinite
  kUniqueness,  // plus C + C^T negative semidefinite
};

namespace detail {

inline std::string player_loc(std::size_t i) { return "player " + std::to_string(i); }

inline void check_distribution(const Eigen::Ref<const Vector>& p, const std::string& what,
                               const std::string& where, ValidationReport& report) {
  if (p.size() == 0) {
    report.violations.push_back({what + " is empty", where});
    return;
  }
  if (!p.allFinite()) {
    report.violations.push_back({what + " has non-finite entries", where});
    return;
  }
  if (p.minCoeff() < 0.0) report.violations.push_back({what + " has negative entries", where});
  const double sum = p.sum();
  if (std::abs(sum - 1.0) > kStochasticTolerance) {
    std::ostringstream os;
    os << what << " sums to " << sum << " instead of 1";
    report.violations.push_back({os.str(), where});
  }
}

}  // namespace detail

/// Checks every invariant of the game and reports all violations found.
inline ValidationReport validate_game(const AffineGame& game,
                                      Hypotheses hypotheses = Hypotheses::kUniqueness) {
  ValidationReport report;
  if (game.players.empty()) report.violations.push_back({"game has no players", "game"});
  if (!(game.gamma >= 0.0 && game.gamma < 1.0)) {
    report.violations.push_back({"gamma must lie in [0, 1)", "gamma=" + std::to_string(game.gamma)});
  }

  bool shapes_ok = true;
  for (std::size_t i = 0; i < game.players.size(); ++i) {
    const auto& p = game.players[i];
    const auto loc = detail::player_loc(i);
    if (p.n <= 0 || p.m <= 0) {
      report.violations.push_back({"state and action counts must be positive", loc});
      shapes_ok = false;
      continue;
    }
    if (p.q.size() != p.n) {
      report.violations.push_back({"initial distribution length != n", loc});
      shapes_ok = false;
    } else {
      detail::check_distribution(p.q, "initial distribution", loc, report);
    }
    if (p.T.rows() != p.n * p.m || p.T.cols() != p.n) {
      report.violations.push_back({"transition kernel shape != (n*m) x n", loc});
      shapes_ok = false;
      continue;
    }
    for (Index s = 0; s < p.n; ++s) {
      for (Index a = 0; a < p.m; ++a) {
        std::ostringstream where;
        where << loc << ", state " << s + 1 << ", action " << a + 1;
        detail::check_distribution(p.T.row(s * p.m + a).transpose(), "transition row", where.str(),
                                   report);
      }
    }
  }
  if (!shapes_ok) return report;

  const Index l = game.num_pairs();
  const auto& params = game.params;
  if (params.b.size() != l || params.C.rows() != l || params.C.cols() != l) {
    std::ostringstream os;
    os << "reward parameters must have b of length " << l << " and C of shape " << l << "x" << l;
    report.violations.push_back({os.str(), "params"});
    return report;
  }
  if (!params.b.allFinite() || !params.C.allFinite()) {
    report.violations.push_back({"reward parameters have non-finite entries", "params"});
    return report;
  }

  if (hypotheses == Hypotheses::kNone) return report;
  const auto offsets = player_offsets(game.players);
  for (std::size_t i = 0; i < offsets.size(); ++i) {
    const auto& o = offsets[i];
    const double lambda =
        max_symmetric_eigenvalue(params.C.block(o.pair, o.pair, o.pairs(), o.pairs()));
    if (lambda > kNsdTolerance) {
      std::ostringstream os;
      os << "diagonal coupling block is not negative semidefinite (max eigenvalue " << lambda
         << ")";
      report.violations.push_back({os.str(), detail::player_loc(i)});
    }
  }
  if (hypotheses == Hypotheses::kUniqueness) {
    const double lambda = 2.0 * max_symmetric_eigenvalue(params.C);
    if (lambda > kNsdTolerance) {
      std::ostringstream os;
      os << "C + C^T is not negative semidefinite (max eigenvalue " << lambda << ")";
      report.violations.push_back({os.str(), "params.C"});
    }
  }
  return report;
}

/// Builds H, K and the stacked initial distribution. Requires stochastic
/// dynamics; reward parameters only need matching dimensions.
inline StackedGame build_stacked(const AffineGame& game) {
  const auto report = validate_game(game, Hypotheses::kNone);
  if (!report.ok()) {
    const auto& first = report.violations.front();
    if (first.location == "params") throw DimensionError(first.invariant);
    throw ValidationError(report.to_string());
  }

  StackedGame out;
  out.gamma = game.gamma;
  out.offsets = player_offsets(game.players);
  const Index l = game.num_pairs();
  const Index r = game.num_states();
  out.H = Matrix::Zero(r, l);
  out.K = Matrix::Zero(l, l);
  out.q.resize(r);

  for (std::size_t i = 0; i < game.players.size(); ++i) {
    const auto& p = game.players[i];
    const auto& o = out.offsets[i];
    out.q.segment(o.state, p.n) = p.q;
    out.transitions.push_back(p.T);
    for (Index s = 0; s < p.n; ++s) {
      for (Index a = 0; a < p.m; ++a) {
        const Index col = o.pair + s * p.m + a;
        // D - gamma * E
        out.H.block(o.state, col, p.n, 1) = -game.gamma * p.T.row(s * p.m + a).transpose();
        out.H(o.state + s, col) += 1.0;
      }
      out.K.block(o.pair + s * p.m, o.pair + s * p.m, p.m, p.m).setOnes();
    }
  }
  return out;
}

/// R = b + C * y, the stacked reward vector.
inline Vector reward_from_frequencies(const AffineRewardParams& params, const Vector& y) {
  if (y.size() != params.b.size() || params.C.cols() != y.size()) {
    throw DimensionError("frequency vector length " + std::to_string(y.size()) +
                         " does not match reward parameters of length " +
                         std::to_string(params.b.size()));
  }
  return params.b + params.C * y;
}

inline Vector reward_from_frequencies(const AffineGame& game, const Vector& y) {
  return reward_from_frequencies(game.params, y);
}

/// Player i's n x m block of a stacked state-action vector.
inline Matrix player_matrix(const Vector& stacked, const PlayerOffset& o) {
  Matrix out(o.n, o.m);
  for (Index s = 0; s < o.n; ++s) out.row(s) = stacked.segment(o.pair + s * o.m, o.m).transpose();
  return out;
}

/// Inverse of player_matrix: writes an n x m block into a stacked vector.
inline void set_player_matrix(Vector& stacked, const PlayerOffset& o, const Matrix& block) {
  for (Index s = 0; s < o.n; ++s) stacked.segment(o.pair + s * o.m, o.m) = block.row(s).transpose();
}

}  // namespace softbellman
