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

// Forward problem: the soft-Bellman equilibrium of an affine Markov game.
//
// The equilibrium (y, v) zeroes the residual
//
//   F1 = log(K y) + b + C y - H^T v - log(y)      (length l)
//   F2 = H y - q                                  (length r)
//
// solve_forward minimizes |F|^2 with a Levenberg-Marquardt iteration over
// (z, v) where y = exp(z), which keeps y strictly positive without bounds.

#pragma once

#include <Eigen/Cholesky>
#include <Eigen/LU>
#include <Eigen/QR>

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "softbellman/errors.hpp"
#include "softbellman/game_model.hpp"
#include "softbellman/linalg.hpp"

namespace softbellman {

struct EquilibriumSolution {
  Vector y;
  Vector v;
  std::vector<Matrix> policies;
  std::vector<Matrix> q_values;
  /// Euclidean norm of the stacked KKT residual; the least-squares objective
  /// is its square.
  double residual_norm = 0.0;
  int iterations = 0;

  double objective() const { return residual_norm * residual_norm; }
};

struct ForwardOptions {
  double tol = 1e-8;
  int max_iterations = 500;
  double initial_damping = 1e-3;
  double damping_increase = 4.0;
  double damping_decrease = 2.0;
  /// Damping above this value means the iteration has stalled.
  double max_damping = 1e20;
  /// How the default starting point is built when no full (y, v) is given.
  enum class Start {
    kBestResponse,  // each player's soft-optimal response to R = b + C * y_ref
    kUniform,       // uniform-policy occupancy with v = 0
  };
  Start start = Start::kBestResponse;
  /// Fall back to switching the coupling on gradually when the direct
  /// iteration fails.
  bool continuation = true;
};

/// Starting point for solve_forward. With an empty v, y only serves as the
/// reference point for ForwardOptions::start. With a full (y, v) under
/// Start::kBestResponse, the best response to y is also tried and the point
/// with the smaller residual is used.
struct ForwardInit {
  Vector y;
  Vector v;
};

namespace detail {

inline void require_positive(const Vector& y, const char* what) {
  for (Index k = 0; k < y.size(); ++k) {
    if (!(y[k] > 0.0)) {
      throw DomainError(std::string(what) + " entry " + std::to_string(k) +
                        " must be strictly positive, got " + std::to_string(y[k]));
    }
  }
}

inline void require_dims(const StackedGame& stacked, const AffineRewardParams& params) {
  const Index l = stacked.l();
  if (params.b.size() != l || params.C.rows() != l || params.C.cols() != l) {
    throw DimensionError("reward parameters do not match stacked game with l = " +
                         std::to_string(l));
  }
}

}  // namespace detail

/// Stacked KKT residual (F1, F2) at (y, v).
inline Vector kkt_residual(const StackedGame& stacked, const AffineRewardParams& params,
                           const Vector& y, const Vector& v) {
  detail::require_dims(stacked, params);
  const Index l = stacked.l(), r = stacked.r();
  if (y.size() != l || v.size() != r) throw DimensionError("kkt_residual: (y, v) has wrong length");
  detail::require_positive(y, "y");

  Vector out(l + r);
  out.head(l) = stacked.state_marginals(y).array().log() - y.array().log();
  out.head(l) += params.b + params.C * y - stacked.H.transpose() * v;
  out.tail(r) = stacked.H * y - stacked.q;
  return out;
}

/// Pi_sa = Y_sa / sum_a' Y_sa' for each player.
inline std::vector<Matrix> policy_from_frequencies(const Vector& y,
                                                   const std::vector<PlayerOffset>& offsets) {
  std::vector<Matrix> out;
  out.reserve(offsets.size());
  for (const auto& o : offsets) {
    if (o.pair + o.pairs() > y.size()) throw DimensionError("policy_from_frequencies: y too short");
    Matrix pi = player_matrix(y, o);
    for (Index s = 0; s < o.n; ++s) {
      if ((pi.row(s).array() < 0.0).any()) {
        throw DomainError("negative frequency in state " + std::to_string(s + 1));
      }
      const double total = pi.row(s).sum();
      if (!(total > 0.0)) {
        throw DomainError("zero state marginal in state " + std::to_string(s + 1));
      }
      pi.row(s) /= total;
    }
    out.push_back(std::move(pi));
  }
  return out;
}

struct SoftValueResult {
  Matrix Q;
  Vector v;
  Matrix policy;
  int iterations = 0;
};

/// Single-player soft value iteration for a fixed reward matrix R (n x m):
///   Q_sa = R_sa + gamma * sum_j T_saj v_j,   v_s = logsumexp_a Q_sa.
inline SoftValueResult soft_value_iteration(const PlayerMdp& mdp, const Matrix& R, double gamma,
                                            double tol = 1e-13, int max_iterations = 1000000) {
  if (R.rows() != mdp.n || R.cols() != mdp.m) {
    throw DimensionError("soft_value_iteration: reward must be n x m");
  }
  if (!(gamma >= 0.0 && gamma < 1.0)) throw DomainError("gamma must lie in [0, 1)");

  SoftValueResult out;
  out.v = Vector::Zero(mdp.n);
  out.Q.resize(mdp.n, mdp.m);
  Vector next(mdp.n);
  for (int it = 1; it <= max_iterations; ++it) {
    const Vector expected = mdp.T * out.v;  // (n*m) vector, row s*m + a
    for (Index s = 0; s < mdp.n; ++s) {
      out.Q.row(s) = R.row(s) + gamma * expected.segment(s * mdp.m, mdp.m).transpose();
      next[s] = log_sum_exp(out.Q.row(s));
    }
    const double change = (next - out.v).lpNorm<Eigen::Infinity>();
    out.v = next;
    out.iterations = it;
    if (change <= tol) break;
  }
  const Vector expected = mdp.T * out.v;
  out.policy.resize(mdp.n, mdp.m);
  for (Index s = 0; s < mdp.n; ++s) {
    out.Q.row(s) = R.row(s) + gamma * expected.segment(s * mdp.m, mdp.m).transpose();
    const double lse = log_sum_exp(out.Q.row(s));
    out.policy.row(s) = (out.Q.row(s).array() - lse).exp().matrix();
  }
  return out;
}

namespace detail {

/// Policy-induced state transition matrix P[s][j] = sum_a Pi_sa T_saj.
inline Matrix policy_transition(const PlayerMdp& mdp, const Matrix& policy) {
  Matrix P = Matrix::Zero(mdp.n, mdp.n);
  for (Index s = 0; s < mdp.n; ++s) {
    for (Index a = 0; a < mdp.m; ++a) P.row(s) += policy(s, a) * mdp.T.row(s * mdp.m + a);
  }
  return P;
}

inline void check_policy(const PlayerMdp& mdp, const Matrix& policy) {
  if (policy.rows() != mdp.n || policy.cols() != mdp.m) {
    throw DimensionError("policy must be n x m");
  }
  for (Index s = 0; s < mdp.n; ++s) {
    if (policy.row(s).minCoeff() < 0.0 || std::abs(policy.row(s).sum() - 1.0) > 1e-9) {
      throw DomainError("policy row " + std::to_string(s + 1) + " is not a distribution");
    }
  }
}

}  // namespace detail

/// Discounted state-action occupancy Y_sa = mu_s * Pi_sa where
/// mu = q + gamma * P_Pi^T mu.
inline Matrix occupancy_from_policy(const PlayerMdp& mdp, const Matrix& policy, double gamma) {
  detail::check_policy(mdp, policy);
  if (!(gamma >= 0.0 && gamma < 1.0)) throw DomainError("gamma must lie in [0, 1)");
  const Matrix system =
      Matrix::Identity(mdp.n, mdp.n) - gamma * detail::policy_transition(mdp, policy).transpose();
  const Vector mu = system.partialPivLu().solve(mdp.q);
  return mu.asDiagonal() * policy;
}

/// Occupancy truncated to the first `horizon` steps:
/// Y_sa = sum_{t < horizon} gamma^t P(S_t = s) Pi_sa.
inline Matrix finite_horizon_occupancy(const PlayerMdp& mdp, const Matrix& policy, double gamma,
                                       int horizon) {
  detail::check_policy(mdp, policy);
  const Matrix Pt = detail::policy_transition(mdp, policy).transpose();
  Vector dist = mdp.q;
  Vector mu = Vector::Zero(mdp.n);
  double weight = 1.0;
  for (int t = 0; t < horizon; ++t) {
    mu += weight * dist;
    dist = Pt * dist;
    weight *= gamma;
  }
  return mu.asDiagonal() * policy;
}

/// Soft policy iteration: alternate exact soft policy evaluation with the
/// softmax improvement step. Converges in a handful of sweeps, also for large
/// rewards where value iteration at gamma near 1 is slow.
inline SoftValueResult soft_policy_iteration(const PlayerMdp& mdp, const Matrix& R, double gamma,
                                             double tol = 1e-12, int max_iterations = 200) {
  if (R.rows() != mdp.n || R.cols() != mdp.m) {
    throw DimensionError("soft_policy_iteration: reward must be n x m");
  }
  if (!(gamma >= 0.0 && gamma < 1.0)) throw DomainError("gamma must lie in [0, 1)");
  SoftValueResult out;
  Matrix log_pi = Matrix::Constant(mdp.n, mdp.m, -std::log(double(mdp.m)));
  out.v = Vector::Zero(mdp.n);
  out.Q = R;
  for (int it = 1; it <= max_iterations; ++it) {
    const Matrix pi = log_pi.array().exp();
    // v = r_pi + gamma * P_pi v with the entropy bonus folded into r_pi.
    const Vector r_pi = (pi.array() * (R - log_pi).array()).rowwise().sum();
    const Matrix system =
        Matrix::Identity(mdp.n, mdp.n) - gamma * detail::policy_transition(mdp, pi);
    const Vector v = system.partialPivLu().solve(r_pi);
    const Vector expected = mdp.T * v;
    double change = 0.0;
    for (Index s = 0; s < mdp.n; ++s) {
      out.Q.row(s) = R.row(s) + gamma * expected.segment(s * mdp.m, mdp.m).transpose();
      const double lse = log_sum_exp(out.Q.row(s));
      change = std::max(change, std::abs(lse - v[s]));
      log_pi.row(s) = out.Q.row(s).array() - lse;
    }
    out.v = v;
    out.iterations = it;
    if (change <= tol * (1.0 + v.lpNorm<Eigen::Infinity>())) break;
  }
  out.policy = log_pi.array().exp();
  return out;
}

/// Occupancy of the uniform policy for every player, computed from H alone.
inline Vector uniform_policy_occupancy(const StackedGame& stacked) {
  Vector y(stacked.l());
  for (const auto& o : stacked.offsets) {
    // y_sa = mu_s / m, so H_i * P mu = q_i with P mapping states to pairs.
    Matrix system = Matrix::Zero(o.n, o.n);
    for (Index s = 0; s < o.n; ++s) {
      for (Index a = 0; a < o.m; ++a) {
        system.col(s) += stacked.H.block(o.state, o.pair + s * o.m + a, o.n, 1) / double(o.m);
      }
    }
    const Vector mu = system.partialPivLu().solve(stacked.q.segment(o.state, o.n));
    for (Index s = 0; s < o.n; ++s) y.segment(o.pair + s * o.m, o.m).setConstant(mu[s] / o.m);
  }
  return y;
}

/// Fills policies and soft Q-values from an equilibrium (y, v).
inline EquilibriumSolution make_solution(const StackedGame& stacked,
                                         const AffineRewardParams& params, Vector y, Vector v,
                                         double residual_norm, int iterations) {
  EquilibriumSolution sol;
  sol.policies = policy_from_frequencies(y, stacked.offsets);
  // Q = R + gamma * E^T v, and H^T v = D^T v - gamma * E^T v.
  const Vector reward = reward_from_frequencies(params, y);
  Vector dv(stacked.l());
  for (const auto& o : stacked.offsets) {
    for (Index s = 0; s < o.n; ++s) dv.segment(o.pair + s * o.m, o.m).setConstant(v[o.state + s]);
  }
  const Vector q_stacked = reward + dv - stacked.H.transpose() * v;
  for (const auto& o : stacked.offsets) sol.q_values.push_back(player_matrix(q_stacked, o));
  sol.y = std::move(y);
  sol.v = std::move(v);
  sol.residual_norm = residual_norm;
  sol.iterations = iterations;
  return sol;
}

namespace detail {

/// Jacobian of the residual with respect to (z, v) where y = exp(z).
inline Matrix log_space_jacobian(const StackedGame& stacked, const AffineRewardParams& params,
                                 const Vector& y) {
  const Index l = stacked.l(), r = stacked.r();
  const Vector ky = stacked.state_marginals(y);
  Matrix J = Matrix::Zero(l + r, l + r);
  // d/dz [log(Ky) - z + C y] = K diag(y / Ky) - I + C diag(y)
  J.topLeftCorner(l, l) = params.C * y.asDiagonal();
  for (const auto& o : stacked.offsets) {
    for (Index s = 0; s < o.n; ++s) {
      const Index begin = o.pair + s * o.m;
      for (Index a = 0; a < o.m; ++a) {
        J.block(begin, begin + a, o.m, 1).array() += y[begin + a] / ky[begin];
      }
    }
  }
  J.topLeftCorner(l, l).diagonal().array() -= 1.0;
  J.topRightCorner(l, r) = -stacked.H.transpose();
  J.bottomLeftCorner(r, l) = stacked.H * y.asDiagonal();
  return J;
}

/// Log-frequencies and soft values of every player's best response to the
/// fixed reward b + C * y_ref.
inline std::pair<Vector, Vector> best_response_start(const StackedGame& stacked,
                                                     const AffineRewardParams& params,
                                                     const Vector& y_ref) {
  const Vector reward = reward_from_frequencies(params, y_ref);
  Vector z(stacked.l()), v(stacked.r());
  for (std::size_t i = 0; i < stacked.num_players(); ++i) {
    const auto& o = stacked.offsets[i];
    PlayerMdp mdp{o.n, o.m, stacked.q.segment(o.state, o.n), stacked.transitions[i]};
    const auto br = soft_policy_iteration(mdp, player_matrix(reward, o), stacked.gamma);
    const Matrix system = Matrix::Identity(o.n, o.n) -
                          stacked.gamma * policy_transition(mdp, br.policy).transpose();
    const Vector mu = system.partialPivLu().solve(mdp.q).cwiseMax(1e-300);
    for (Index s = 0; s < o.n; ++s) {
      const double lse = log_sum_exp(br.Q.row(s));
      for (Index a = 0; a < o.m; ++a) {
        z[o.pair + s * o.m + a] = std::log(mu[s]) + br.Q(s, a) - lse;
      }
    }
    v.segment(o.state, o.n) = br.v;
  }
  return {z, v};
}

inline std::optional<Vector> try_residual(const StackedGame& stacked,
                                          const AffineRewardParams& params, const Vector& z,
                                          const Vector& v) {
  if (!z.allFinite() || !v.allFinite() || z.maxCoeff() > kMaxExpArgument) return std::nullopt;
  const Vector y = z.array().exp();
  if ((y.array() <= 0.0).any()) return std::nullopt;
  Vector F = kkt_residual(stacked, params, y, v);
  if (!F.allFinite()) return std::nullopt;
  return F;
}

}  // namespace detail

namespace detail {

struct LmState {
  Vector z;
  Vector v;
  double cost = 0.0;
  int iterations = 0;
};

/// Levenberg-Marquardt on |F(exp(z), v)|^2 from (z, v). Returns the final
/// state whether or not the target was reached.
inline LmState levenberg_marquardt(const StackedGame& stacked, const AffineRewardParams& params,
                                   Vector z, Vector v, int max_iterations,
                                   const ForwardOptions& options) {
  const Index l = stacked.l(), r = stacked.r();
  auto F = try_residual(stacked, params, z, v);
  if (!F) throw DomainError("solve_forward: residual is not finite at the initial point");
  double cost = F->squaredNorm();
  const double target = options.tol * options.tol;
  double damping = options.initial_damping;

  int it = 0;
  for (; it < max_iterations && cost > target; ++it) {
    const Vector y = z.array().exp();
    const Matrix J = log_space_jacobian(stacked, params, y);
    Matrix normal = Matrix::Zero(l + r, l + r);
    normal.selfadjointView<Eigen::Lower>().rankUpdate(J.transpose());
    const Vector gradient = J.transpose() * (*F);
    const Vector scale = normal.diagonal().cwiseMax(1e-12);

    bool accepted = false;
    while (!accepted && it < max_iterations) {
      Matrix damped = normal;
      damped.diagonal() += damping * scale;
      const Vector step = damped.selfadjointView<Eigen::Lower>().ldlt().solve(-gradient);
      const Vector z_trial = z + step.head(l);
      const Vector v_trial = v + step.tail(r);
      auto F_trial = try_residual(stacked, params, z_trial, v_trial);
      if (F_trial && F_trial->squaredNorm() < cost) {
        z = z_trial;
        v = v_trial;
        F = std::move(F_trial);
        cost = F->squaredNorm();
        damping = std::max(damping / options.damping_decrease, 1e-15);
        accepted = true;
      } else {
        damping *= options.damping_increase;
        if (damping > options.max_damping) break;
        ++it;
      }
    }
    if (!accepted) break;
  }
  return {std::move(z), std::move(v), cost, it};
}

/// Continuation in the coupling strength: solves at C scaled by t for t
/// increasing from 0 to 1, warm-starting each stage from the previous one.
inline std::optional<LmState> continuation_solve(const StackedGame& stacked,
                                                 const AffineRewardParams& params,
                                                 const ForwardOptions& options) {
  const double target = options.tol * options.tol;
  const int stage_iterations = std::max(1, options.max_iterations / 5);
  AffineRewardParams scaled{params.b, Matrix::Zero(params.C.rows(), params.C.cols())};
  auto [z0, v0] = best_response_start(stacked, scaled, uniform_policy_occupancy(stacked));
  LmState state = levenberg_marquardt(stacked, scaled, z0, v0, stage_iterations, options);
  if (state.cost > target) return std::nullopt;

  int total = state.iterations;
  double t = 0.0, dt = 0.1;
  while (t < 1.0) {
    if (dt < 1e-6 || total > 20 * options.max_iterations) return std::nullopt;
    const double next = std::min(1.0, t + dt);
    scaled.C = next * params.C;
    LmState trial;
    try {
      trial = levenberg_marquardt(stacked, scaled, state.z, state.v, stage_iterations, options);
    } catch (const DomainError&) {
      trial.cost = std::numeric_limits<double>::infinity();
    }
    total += trial.iterations;
    if (trial.cost <= target) {
      state = std::move(trial);
      t = next;
      dt *= 1.5;
    } else {
      dt *= 0.5;
    }
  }
  state.iterations = total;
  return state;
}

}  // namespace detail

/// Computes the soft-Bellman equilibrium by driving the KKT residual to zero.
///
/// Without `init`, starts from each player's best response to the rewards
/// induced by the uniform-policy occupancy (or from that occupancy itself
/// with v = 0 under Start::kUniform). See ForwardInit for warm starts. If
/// the direct iteration fails and options.continuation is set, the coupling
/// is switched on gradually instead.
/// Throws ConvergenceError (carrying the best residual norm) when the
/// squared residual does not reach tol^2.
inline EquilibriumSolution solve_forward(const StackedGame& stacked,
                                         const AffineRewardParams& params,
                                         const std::optional<ForwardInit>& init = std::nullopt,
                                         const ForwardOptions& options = {}) {
  detail::require_dims(stacked, params);
  const Index l = stacked.l(), r = stacked.r();

  Vector z, v;
  if (init) {
    if (init->y.size() != l || (init->v.size() != r && init->v.size() != 0)) {
      throw DimensionError("solve_forward: initial (y, v) has wrong length");
    }
    detail::require_positive(init->y, "initial y");
    if (init->v.size()) {
      z = init->y.array().log();
      v = init->v;
      if (options.start == ForwardOptions::Start::kBestResponse) {
        // keep whichever of the given point and the best response fits better
        auto given = detail::try_residual(stacked, params, z, v);
        auto [z_br, v_br] = detail::best_response_start(stacked, params, init->y);
        auto br = detail::try_residual(stacked, params, z_br, v_br);
        if (br && (!given || br->squaredNorm() < given->squaredNorm())) {
          z = std::move(z_br);
          v = std::move(v_br);
        }
      }
    } else if (options.start == ForwardOptions::Start::kBestResponse) {
      std::tie(z, v) = detail::best_response_start(stacked, params, init->y);
    } else {
      z = init->y.array().log();
      v = Vector::Zero(r);
    }
  } else if (options.start == ForwardOptions::Start::kBestResponse) {
    std::tie(z, v) = detail::best_response_start(stacked, params, uniform_policy_occupancy(stacked));
  } else {
    z = uniform_policy_occupancy(stacked).array().log();
    v = Vector::Zero(r);
  }

  const double target = options.tol * options.tol;
  std::optional<detail::LmState> state;
  double best_cost = std::numeric_limits<double>::infinity();
  try {
    state = detail::levenberg_marquardt(stacked, params, std::move(z), std::move(v),
                                        options.max_iterations, options);
    best_cost = state->cost;
  } catch (const DomainError&) {
    if (!options.continuation) throw;
  }
  if ((!state || state->cost > target) && options.continuation && params.C.size() > 0 &&
      !params.C.isZero(0.0)) {
    auto continued = detail::continuation_solve(stacked, params, options);
    if (continued) state = std::move(continued);
  }
  if (!state || !(state->cost <= target)) {
    throw ConvergenceError("solve_forward: squared residual " + std::to_string(best_cost) +
                               " above target after " + std::to_string(options.max_iterations) +
                               " iterations",
                           std::sqrt(best_cost));
  }
  Vector y = state->z.array().exp();
  return make_solution(stacked, params, std::move(y), std::move(state->v),
                       std::sqrt(state->cost), state->iterations);
}

}  // namespace softbellman
