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

// Predator-prey gridworld: per-player MDPs over own-cell states, a coupled
// affine reward construction, and a seeded trajectory sampler.

#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "softbellman/errors.hpp"
#include "softbellman/game_model.hpp"
#include "softbellman/inverse.hpp"
#include "softbellman/linalg.hpp"
#include "softbellman/trajectories.hpp"

namespace softbellman::gridworld {

enum class Role { kPredator, kPrey };

enum Action : int { kLeft = 0, kRight = 1, kUp = 2, kDown = 3, kStop = 4 };
inline constexpr int kNumActions = 5;
inline constexpr std::array<const char*, kNumActions> kActionNames = {"left", "right", "up",
                                                                       "down", "stop"};

struct GridSpec {
  int width = 5;
  int height = 5;
  int predators = 2;
  int preys = 1;
  double slip = 0.1;
  int catch_radius = 1;

  int num_cells() const { return width * height; }
  int num_players() const { return predators + preys; }
  Role role(int player) const { return player < predators ? Role::kPredator : Role::kPrey; }

  void validate() const {
    if (width <= 0 || height <= 0) throw ValidationError("grid dimensions must be positive");
    if (predators < 0 || preys < 0 || predators + preys == 0) {
      throw ValidationError("grid needs at least one player");
    }
    if (!(slip >= 0.0 && slip < 1.0)) throw ValidationError("slip must lie in [0, 1)");
    if (catch_radius < 0) throw ValidationError("catch radius must be nonnegative");
  }
};

struct Cell {
  int row = 0;
  int col = 0;
  bool operator==(const Cell&) const = default;
};

/// Row-major, 0-based.
inline int cell_index(const GridSpec& spec, Cell c) { return c.row * spec.width + c.col; }
inline Cell cell_of(const GridSpec& spec, int index) {
  return {index / spec.width, index % spec.width};
}

inline int manhattan(const GridSpec& spec, int a, int b) {
  const Cell ca = cell_of(spec, a), cb = cell_of(spec, b);
  return std::abs(ca.row - cb.row) + std::abs(ca.col - cb.col);
}

/// Deterministic move with wall clipping.
inline int move(const GridSpec& spec, int state, int action) {
  Cell c = cell_of(spec, state);
  switch (action) {
    case kLeft: c.col = std::max(0, c.col - 1); break;
    case kRight: c.col = std::min(spec.width - 1, c.col + 1); break;
    case kUp: c.row = std::max(0, c.row - 1); break;
    case kDown: c.row = std::min(spec.height - 1, c.row + 1); break;
    default: break;
  }
  return cell_index(spec, c);
}

/// With probability `slip` the chosen action is replaced by a uniformly random
/// one; the initial cell is uniform.
inline PlayerMdp build_player_mdp(const GridSpec& spec) {
  spec.validate();
  PlayerMdp mdp;
  mdp.n = spec.num_cells();
  mdp.m = kNumActions;
  mdp.q = Vector::Constant(mdp.n, 1.0 / mdp.n);
  mdp.T = Matrix::Zero(mdp.n * mdp.m, mdp.n);
  for (int s = 0; s < mdp.n; ++s) {
    for (int a = 0; a < kNumActions; ++a) {
      auto row = mdp.T.row(s * mdp.m + a);
      row[move(spec, s, a)] += 1.0 - spec.slip;
      for (int other = 0; other < kNumActions; ++other) {
        row[move(spec, s, other)] += spec.slip / kNumActions;
      }
    }
  }
  return mdp;
}

struct CouplingOptions {
  /// Strength of the predator/prey proximity coupling.
  double kappa = 0.05;
  /// Diagonal blocks are -eta * I.
  double eta = 1e-3;
  /// Largest center-attraction reward given to predators.
  double center_reward = 0.1;
};

/// 1 on the same cell, 0.5 one step away, 0 otherwise.
inline double proximity(const GridSpec& spec, int a, int b) {
  const int d = manhattan(spec, a, b);
  if (d == 0) return 1.0;
  if (d <= spec.catch_radius) return 0.5;
  return 0.0;
}

/// Coupled rewards for the predator-prey game.
///
/// Predators earn kappa * proximity to the prey's frequencies and the prey
/// pays the same amount, so the off-diagonal coupling is skew-symmetric and
/// C + C^T = -2 * eta * I.
inline AffineRewardParams build_coupled_rewards(const GridSpec& spec,
                                                const std::vector<PlayerOffset>& offsets,
                                                const CouplingOptions& options = {}) {
  spec.validate();
  if (static_cast<int>(offsets.size()) != spec.num_players()) {
    throw DimensionError("offsets do not match the grid's player count");
  }
  const int n = spec.num_cells();
  Index l = 0;
  for (const auto& o : offsets) {
    if (o.n != n || o.m != kNumActions) throw DimensionError("player dims do not match the grid");
    l += o.pairs();
  }

  AffineRewardParams params{Vector::Zero(l), Matrix::Zero(l, l)};
  const double cr = 0.5 * (spec.height - 1), cc = 0.5 * (spec.width - 1);
  const double max_distance = std::max(cr + cc, 1.0);

  for (int i = 0; i < spec.num_players(); ++i) {
    const auto& oi = offsets[i];
    if (spec.role(i) == Role::kPredator) {
      for (int s = 0; s < n; ++s) {
        const Cell c = cell_of(spec, s);
        const double distance = std::abs(c.row - cr) + std::abs(c.col - cc);
        params.b.segment(oi.pair + s * kNumActions, kNumActions)
            .setConstant(options.center_reward * (1.0 - distance / max_distance));
      }
    }
    params.C.block(oi.pair, oi.pair, oi.pairs(), oi.pairs()).diagonal().setConstant(-options.eta);
  }

  Matrix block(n * kNumActions, n * kNumActions);
  for (int s = 0; s < n; ++s) {
    for (int t = 0; t < n; ++t) {
      block.block(s * kNumActions, t * kNumActions, kNumActions, kNumActions)
          .setConstant(options.kappa * proximity(spec, s, t));
    }
  }
  for (int i = 0; i < spec.num_players(); ++i) {
    if (spec.role(i) != Role::kPredator) continue;
    for (int j = 0; j < spec.num_players(); ++j) {
      if (spec.role(j) != Role::kPrey) continue;
      const auto& oi = offsets[i];
      const auto& oj = offsets[j];
      params.C.block(oi.pair, oj.pair, oi.pairs(), oj.pairs()) = block;
      params.C.block(oj.pair, oi.pair, oj.pairs(), oi.pairs()) = -block.transpose();
    }
  }
  params.C = project_C(params.C, CSet::nsd_symmetric());
  return params;
}

/// All players' MDPs with the coupled rewards.
inline AffineGame build_game(const GridSpec& spec, double gamma,
                             const CouplingOptions& options = {}) {
  AffineGame game;
  game.gamma = gamma;
  const PlayerMdp mdp = build_player_mdp(spec);
  game.players.assign(spec.num_players(), mdp);
  game.params = build_coupled_rewards(spec, player_offsets(game.players), options);
  return game;
}

/// True when every predator's catch region contains some prey.
inline bool captured(const GridSpec& spec, const std::vector<int>& states) {
  if (spec.predators == 0 || spec.preys == 0) return false;
  for (int j = spec.predators; j < spec.num_players(); ++j) {
    bool all = true;
    for (int i = 0; i < spec.predators; ++i) {
      if (manhattan(spec, states[i], states[j]) > spec.catch_radius) {
        all = false;
        break;
      }
    }
    if (all) return true;
  }
  return false;
}

struct SamplingOptions {
  int count = 100;
  int max_len = 10;
  std::uint64_t seed = 1;
  /// Stop an episode once the prey sits in every predator's catch region.
  bool stop_on_capture = true;
};

/// Chooses player `player`'s action given all players' current states.
using JointPolicy = std::function<int(int player, const std::vector<int>& states, std::mt19937_64&)>;

inline std::mt19937_64 episode_rng(std::uint64_t seed, std::uint64_t episode) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(episode), static_cast<std::uint32_t>(episode >> 32)};
  return std::mt19937_64(seq);
}

namespace detail {

inline int sample_row(const Eigen::Ref<const Eigen::RowVectorXd>& p, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double u = unit(rng) * p.sum();
  double acc = 0.0;
  for (Index k = 0; k < p.size(); ++k) {
    acc += p[k];
    if (u < acc) return static_cast<int>(k);
  }
  // Rounding fallback: last entry with positive mass.
  for (Index k = p.size() - 1; k >= 0; --k) {
    if (p[k] > 0.0) return static_cast<int>(k);
  }
  return 0;
}

}  // namespace detail

/// Simulates independent player chains. Episode e uses the stream derived
/// from (seed, e) so results do not depend on evaluation order.
inline std::vector<Trajectory> sample_trajectories(const AffineGame& game, const JointPolicy& policy,
                                                   const SamplingOptions& options,
                                                   const GridSpec* spec = nullptr) {
  if (options.count < 0 || options.max_len < 1) {
    throw ValidationError("need count >= 0 and max_len >= 1");
  }
  const int p = static_cast<int>(game.players.size());
  std::vector<Trajectory> out;
  out.reserve(options.count);
  for (int e = 0; e < options.count; ++e) {
    auto rng = episode_rng(options.seed, static_cast<std::uint64_t>(e));
    Trajectory traj;
    traj.players.resize(p);
    std::vector<int> states(p);
    for (int i = 0; i < p; ++i) states[i] = detail::sample_row(game.players[i].q.transpose(), rng);
    for (int t = 0; t < options.max_len; ++t) {
      std::vector<int> next(p);
      for (int i = 0; i < p; ++i) {
        const auto& mdp = game.players[i];
        const int a = policy(i, states, rng);
        traj.players[i].push_back({states[i], a});
        next[i] = detail::sample_row(mdp.T.row(states[i] * mdp.m + a), rng);
      }
      states = std::move(next);
      if (spec && options.stop_on_capture && captured(*spec, states)) break;
    }
    out.push_back(std::move(traj));
  }
  return out;
}

/// Each player acts from its own state-only policy matrix.
inline std::vector<Trajectory> sample_trajectories(const AffineGame& game,
                                                   const std::vector<Matrix>& policies,
                                                   const SamplingOptions& options,
                                                   const GridSpec* spec = nullptr) {
  if (policies.size() != game.players.size()) throw DimensionError("one policy per player");
  for (std::size_t i = 0; i < policies.size(); ++i) {
    const auto& mdp = game.players[i];
    if (policies[i].rows() != mdp.n || policies[i].cols() != mdp.m) {
      throw DimensionError("policy " + std::to_string(i) + " must be n x m");
    }
  }
  JointPolicy joint = [&policies](int player, const std::vector<int>& states,
                                  std::mt19937_64& rng) {
    return detail::sample_row(policies[player].row(states[player]), rng);
  };
  return sample_trajectories(game, joint, options, spec);
}

/// Scripted behavior outside the affine model class: predators step toward
/// the nearest prey with probability 1 - noise, the prey wanders but never
/// steps into a predator's catch region voluntarily.
inline JointPolicy scripted_pursuit(const GridSpec& spec, double noise = 0.2) {
  return [spec, noise](int player, const std::vector<int>& states, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::uniform_int_distribution<int> any(0, kNumActions - 1);
    const int here = states[player];
    if (spec.role(player) == Role::kPredator) {
      if (unit(rng) < noise) return any(rng);
      int target = -1, best = 1 << 30;
      for (int j = spec.predators; j < spec.num_players(); ++j) {
        const int d = manhattan(spec, here, states[j]);
        if (d < best) best = d, target = states[j];
      }
      if (target < 0) return static_cast<int>(kStop);
      int best_action = kStop, best_distance = manhattan(spec, here, target);
      for (int a = 0; a < kNumActions; ++a) {
        const int d = manhattan(spec, move(spec, here, a), target);
        if (d < best_distance) best_distance = d, best_action = a;
      }
      return best_action;
    }
    std::vector<int> safe;
    for (int a = 0; a < kNumActions; ++a) {
      const int to = move(spec, here, a);
      bool ok = true;
      for (int i = 0; i < spec.predators; ++i) {
        if (manhattan(spec, to, states[i]) <= spec.catch_radius && to != here) ok = false;
      }
      if (ok) safe.push_back(a);
    }
    if (safe.empty()) return static_cast<int>(kStop);
    std::uniform_int_distribution<std::size_t> pick(0, safe.size() - 1);
    return safe[pick(rng)];
  };
}

}  // namespace softbellman::gridworld
