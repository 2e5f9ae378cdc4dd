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

// Trajectory preprocessing and empirical estimates of the observed
// frequencies, initial distributions and transition kernels.

#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "softbellman/errors.hpp"
#include "softbellman/game_model.hpp"
#include "softbellman/linalg.hpp"

namespace softbellman {

/// 0-based indices in memory; files use 1-based indices.
struct StateAction {
  int state = 0;
  int action = 0;
  bool operator==(const StateAction&) const = default;
};

/// Synchronized per-player state-action sequences of one episode.
struct Trajectory {
  std::vector<std::vector<StateAction>> players;

  std::size_t length() const { return players.empty() ? 0 : players.front().size(); }
  bool operator==(const Trajectory&) const = default;
};

struct PlayerDims {
  Index n = 0;
  Index m = 0;
};

inline std::vector<PlayerDims> dims_of(const std::vector<PlayerMdp>& players) {
  std::vector<PlayerDims> out;
  for (const auto& p : players) out.push_back({p.n, p.m});
  return out;
}

inline std::vector<PlayerOffset> offsets_of(const std::vector<PlayerDims>& dims) {
  std::vector<PlayerOffset> out;
  Index s = 0, sa = 0;
  for (const auto& d : dims) {
    out.push_back({s, sa, d.n, d.m});
    s += d.n;
    sa += d.n * d.m;
  }
  return out;
}

/// Throws DimensionError unless every trajectory matches `dims`.
inline void check_trajectories(const std::vector<Trajectory>& trajectories,
                               const std::vector<PlayerDims>& dims) {
  for (std::size_t k = 0; k < trajectories.size(); ++k) {
    const auto& traj = trajectories[k];
    if (traj.players.size() != dims.size()) {
      throw DimensionError("trajectory " + std::to_string(k) + " has the wrong player count");
    }
    for (std::size_t i = 0; i < dims.size(); ++i) {
      if (traj.players[i].size() != traj.length()) {
        throw DimensionError("trajectory " + std::to_string(k) + " has unequal player lengths");
      }
      for (const auto& sa : traj.players[i]) {
        if (sa.state < 0 || sa.state >= dims[i].n || sa.action < 0 || sa.action >= dims[i].m) {
          throw DimensionError("trajectory " + std::to_string(k) + ", player " +
                               std::to_string(i) + ": index out of range");
        }
      }
    }
  }
}

struct PrunedTrajectories {
  std::vector<Trajectory> trajectories;
  int capped_length = 0;
};

/// Drops trajectories shorter than the (lower) median length and truncates
/// the rest to the shortest survivor.
inline PrunedTrajectories prune_and_cap(std::vector<Trajectory> trajectories) {
  if (trajectories.empty()) throw ValidationError("prune_and_cap: no trajectories");
  std::vector<std::size_t> lengths;
  for (const auto& t : trajectories) lengths.push_back(t.length());
  std::sort(lengths.begin(), lengths.end());
  const std::size_t median = lengths[(lengths.size() - 1) / 2];

  PrunedTrajectories out;
  std::size_t cap = 0;
  for (auto& t : trajectories) {
    if (t.length() < median) continue;
    cap = out.trajectories.empty() ? t.length() : std::min(cap, t.length());
    out.trajectories.push_back(std::move(t));
  }
  for (auto& t : out.trajectories) {
    for (auto& seq : t.players) seq.resize(cap);
  }
  out.capped_length = static_cast<int>(cap);
  return out;
}

/// Geometric mass of a horizon-L episode: sum_{t<L} gamma^t.
inline double truncated_mass(double gamma, int horizon) {
  double mass = 0.0, w = 1.0;
  for (int t = 0; t < horizon; ++t, w *= gamma) mass += w;
  return mass;
}

/// Empirical discounted frequencies averaged over trajectories, stacked like
/// y. With `rescale` the per-player mass is scaled from sum_{t<L} gamma^t to
/// the infinite-horizon 1 / (1 - gamma).
inline Vector estimate_frequencies(const std::vector<Trajectory>& trajectories, double gamma,
                                   const std::vector<PlayerDims>& dims, bool rescale = false) {
  check_trajectories(trajectories, dims);
  const auto offsets = offsets_of(dims);
  Index l = 0;
  for (const auto& o : offsets) l += o.pairs();
  Vector y = Vector::Zero(l);
  if (trajectories.empty()) return y;

  const double inv_count = 1.0 / static_cast<double>(trajectories.size());
  std::size_t horizon = trajectories.front().length();
  for (const auto& traj : trajectories) {
    horizon = std::max(horizon, traj.length());
    for (std::size_t i = 0; i < dims.size(); ++i) {
      double w = inv_count;
      for (const auto& sa : traj.players[i]) {
        y[offsets[i].pair + sa.state * offsets[i].m + sa.action] += w;
        w *= gamma;
      }
    }
  }
  if (rescale) {
    y /= truncated_mass(gamma, static_cast<int>(horizon)) * (1.0 - gamma);
  }
  return y;
}

struct DynamicsEstimate {
  std::vector<Vector> q;
  std::vector<Matrix> T;  // (n*m) x n, same layout as PlayerMdp::T
};

/// q from first-state counts; T with additive smoothing, and the uniform
/// distribution for never-visited (state, action) pairs.
inline DynamicsEstimate estimate_dynamics(const std::vector<Trajectory>& trajectories,
                                          const std::vector<PlayerDims>& dims,
                                          double smoothing = 1e-3) {
  check_trajectories(trajectories, dims);
  if (smoothing < 0.0) throw ValidationError("smoothing must be nonnegative");
  DynamicsEstimate out;
  for (std::size_t i = 0; i < dims.size(); ++i) {
    const Index n = dims[i].n, m = dims[i].m;
    Vector q = Vector::Zero(n);
    Matrix counts = Matrix::Zero(n * m, n);
    for (const auto& traj : trajectories) {
      const auto& seq = traj.players[i];
      if (seq.empty()) continue;
      q[seq.front().state] += 1.0;
      for (std::size_t t = 0; t + 1 < seq.size(); ++t) {
        counts(seq[t].state * m + seq[t].action, seq[t + 1].state) += 1.0;
      }
    }
    if (q.sum() > 0.0) {
      q /= q.sum();
    } else {
      q.setConstant(1.0 / n);
    }
    Matrix T(n * m, n);
    for (Index k = 0; k < n * m; ++k) {
      const double total = counts.row(k).sum();
      if (total <= 0.0) {
        T.row(k).setConstant(1.0 / n);
      } else {
        T.row(k) = (counts.row(k).array() + smoothing) / (total + smoothing * n);
      }
    }
    out.q.push_back(std::move(q));
    out.T.push_back(std::move(T));
  }
  return out;
}

/// Observed data ready for the inverse solver.
struct ObservationSet {
  std::vector<PlayerDims> dims;
  double gamma = 0.99;
  Vector y_hat;
  Vector q_hat;
  std::vector<Matrix> T_hat;
  int trajectory_count = 0;
  int capped_length = 0;
  bool rescaled = true;
};

struct EstimateOptions {
  double smoothing = 1e-3;
  bool rescale = true;
};

/// prune_and_cap, then frequencies and dynamics from the survivors.
inline ObservationSet estimate_observations(std::vector<Trajectory> trajectories, double gamma,
                                            const std::vector<PlayerDims>& dims,
                                            const EstimateOptions& options = {}) {
  check_trajectories(trajectories, dims);
  auto pruned = prune_and_cap(std::move(trajectories));
  ObservationSet obs;
  obs.dims = dims;
  obs.gamma = gamma;
  obs.trajectory_count = static_cast<int>(pruned.trajectories.size());
  obs.capped_length = pruned.capped_length;
  obs.rescaled = options.rescale;
  obs.y_hat = estimate_frequencies(pruned.trajectories, gamma, dims, options.rescale);
  auto dyn = estimate_dynamics(pruned.trajectories, dims, options.smoothing);
  Index r = 0;
  for (const auto& d : dims) r += d.n;
  obs.q_hat.resize(r);
  Index at = 0;
  for (const auto& q : dyn.q) {
    obs.q_hat.segment(at, q.size()) = q;
    at += q.size();
  }
  obs.T_hat = std::move(dyn.T);
  return obs;
}

/// Game with the estimated dynamics and zero rewards.
inline AffineGame game_from_observations(const ObservationSet& obs) {
  AffineGame game;
  game.gamma = obs.gamma;
  const auto offsets = offsets_of(obs.dims);
  for (std::size_t i = 0; i < obs.dims.size(); ++i) {
    PlayerMdp mdp;
    mdp.n = obs.dims[i].n;
    mdp.m = obs.dims[i].m;
    mdp.q = obs.q_hat.segment(offsets[i].state, mdp.n);
    mdp.T = obs.T_hat[i];
    game.players.push_back(std::move(mdp));
  }
  const Index l = game.num_pairs();
  game.params = {Vector::Zero(l), Matrix::Zero(l, l)};
  return game;
}

/// Observed per-player policies; states never visited get the uniform row.
inline std::vector<Matrix> observed_policies(const Vector& y_hat,
                                             const std::vector<PlayerOffset>& offsets) {
  std::vector<Matrix> out;
  for (const auto& o : offsets) {
    Matrix pi = player_matrix(y_hat, o);
    for (Index s = 0; s < o.n; ++s) {
      const double total = pi.row(s).sum();
      if (total > 0.0) {
        pi.row(s) /= total;
      } else {
        pi.row(s).setConstant(1.0 / o.m);
      }
    }
    out.push_back(std::move(pi));
  }
  return out;
}

}  // namespace softbellman
