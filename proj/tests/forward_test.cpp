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

#include <gtest/gtest.h>

#include <cmath>

#include "test_support.hpp"

namespace softbellman {
namespace {

using testing::random_game;
using testing::random_mdp;

// Plain loop soft value iteration, kept separate from the library.
struct Oracle {
  std::vector<std::vector<double>> Q;
  std::vector<double> v;
  std::vector<std::vector<double>> pi;
};

Oracle oracle_soft_vi(const PlayerMdp& mdp, const Matrix& R, double gamma) {
  const int n = static_cast<int>(mdp.n), m = static_cast<int>(mdp.m);
  Oracle o;
  o.v.assign(n, 0.0);
  o.Q.assign(n, std::vector<double>(m, 0.0));
  for (int it = 0; it < 100000; ++it) {
    std::vector<double> next(n);
    for (int s = 0; s < n; ++s) {
      double hi = -1e300;
      for (int a = 0; a < m; ++a) {
        double ev = 0.0;
        for (int j = 0; j < n; ++j) ev += mdp.transition(s, a, j) * o.v[j];
        o.Q[s][a] = R(s, a) + gamma * ev;
        hi = std::max(hi, o.Q[s][a]);
      }
      double sum = 0.0;
      for (int a = 0; a < m; ++a) sum += std::exp(o.Q[s][a] - hi);
      next[s] = hi + std::log(sum);
    }
    double change = 0.0;
    for (int s = 0; s < n; ++s) change = std::max(change, std::abs(next[s] - o.v[s]));
    o.v = next;
    if (change < 1e-14) break;
  }
  o.pi.assign(n, std::vector<double>(m, 0.0));
  for (int s = 0; s < n; ++s) {
    for (int a = 0; a < m; ++a) {
      double ev = 0.0;
      for (int j = 0; j < n; ++j) ev += mdp.transition(s, a, j) * o.v[j];
      o.Q[s][a] = R(s, a) + gamma * ev;
      o.pi[s][a] = std::exp(o.Q[s][a] - o.v[s]);
    }
  }
  return o;
}

AffineGame single_state_game(double gamma) {
  AffineGame g;
  g.gamma = gamma;
  g.players.push_back({1, 1, Vector::Ones(1), Matrix::Ones(1, 1)});
  g.params = {Vector::Zero(1), Matrix::Zero(1, 1)};
  return g;
}

Matrix reward_block(const AffineGame& g) {
  return player_matrix(g.params.b, player_offsets(g.players)[0]);
}

TEST(KktResidual, SingleStateAtClosedForm) {
  const auto g = single_state_game(0.99);
  const auto st = build_stacked(g);
  const Vector F = kkt_residual(st, g.params, Vector::Constant(1, 100.0), Vector::Zero(1));
  EXPECT_NEAR(F[0], 0.0, 1e-12);
  EXPECT_NEAR(F[1], 0.0, 1e-12);
}

TEST(KktResidual, SingleStateShiftedValue) {
  // F1 = log(Ky) - log(y) - H^T v = -0.01 * v.
  const auto g = single_state_game(0.99);
  const auto st = build_stacked(g);
  const Vector F = kkt_residual(st, g.params, Vector::Constant(1, 100.0), Vector::Ones(1));
  EXPECT_NEAR(F[0], -0.01, 1e-12);
  EXPECT_NEAR(F[1], 0.0, 1e-12);
  EXPECT_NEAR(F.norm(), 0.01, 1e-12);
}

TEST(KktResidual, VanishesAtOracleSolution) {
  std::mt19937_64 rng(11);
  const auto g = random_game({{3, 2}}, 0.9, 1.0, 0.0, rng);
  const auto st = build_stacked(g);
  const auto o = oracle_soft_vi(g.players[0], reward_block(g), g.gamma);
  Matrix pi(3, 2);
  for (int s = 0; s < 3; ++s)
    for (int a = 0; a < 2; ++a) pi(s, a) = o.pi[s][a];
  const Matrix Y = occupancy_from_policy(g.players[0], pi, g.gamma);
  Vector y(6);
  set_player_matrix(y, st.offsets[0], Y);
  const Vector v = Eigen::Map<const Vector>(o.v.data(), 3);
  EXPECT_LE(kkt_residual(st, g.params, y, v).lpNorm<Eigen::Infinity>(), 1e-8);
}

TEST(KktResidual, NonPositiveYIsDomainError) {
  const auto g = single_state_game(0.9);
  const auto st = build_stacked(g);
  EXPECT_THROW(kkt_residual(st, g.params, Vector::Zero(1), Vector::Zero(1)), DomainError);
}

TEST(SolveForward, SingleStateClosedForm) {
  const auto g = single_state_game(0.99);
  const auto sol = solve_forward(build_stacked(g), g.params);
  EXPECT_NEAR(sol.y[0], 100.0, 1e-8);
  EXPECT_NEAR(sol.v[0], 0.0, 1e-8);
  EXPECT_NEAR(sol.policies[0](0, 0), 1.0, 1e-15);
}

TEST(SolveForward, MatchesOracleForSinglePlayer) {
  std::mt19937_64 rng(12);
  for (int trial = 0; trial < 5; ++trial) {
    const auto g = random_game({{4, 3}}, 0.9, 2.0, 0.0, rng);
    const auto sol = solve_forward(build_stacked(g), g.params);
    const auto o = oracle_soft_vi(g.players[0], reward_block(g), g.gamma);
    for (int s = 0; s < 4; ++s) {
      for (int a = 0; a < 3; ++a) {
        EXPECT_NEAR(sol.policies[0](s, a), o.pi[s][a], 1e-6);
        EXPECT_NEAR(sol.q_values[0](s, a), o.Q[s][a], 1e-6);
      }
      EXPECT_NEAR(sol.v[s], o.v[s], 1e-6);
    }
  }
}

TEST(SolveForward, SolutionInvariants) {
  std::mt19937_64 rng(13);
  const auto g = random_game({{3, 2}, {4, 3}, {2, 2}}, 0.95, 1.0, 1.0, rng);
  const auto st = build_stacked(g);
  const auto sol = solve_forward(st, g.params);
  EXPECT_LE(sol.objective(), 1e-16);
  EXPECT_GT(sol.y.minCoeff(), 0.0);
  EXPECT_LE((st.H * sol.y - st.q).lpNorm<Eigen::Infinity>(), 1e-8);
  for (std::size_t i = 0; i < sol.policies.size(); ++i) {
    const auto& o = st.offsets[i];
    EXPECT_NEAR(sol.y.segment(o.pair, o.pairs()).sum(), 1.0 / (1.0 - g.gamma), 1e-8);
    const Matrix& pi = sol.policies[i];
    EXPECT_GE(pi.minCoeff(), 0.0);
    for (Index s = 0; s < pi.rows(); ++s) {
      EXPECT_NEAR(pi.row(s).sum(), 1.0, 1e-9);
      const double lse = log_sum_exp(sol.q_values[i].row(s));
      for (Index a = 0; a < pi.cols(); ++a) {
        EXPECT_NEAR(pi(s, a), std::exp(sol.q_values[i](s, a) - lse), 1e-6);
      }
    }
  }
}

TEST(SolveForward, BestResponseSelfConsistency) {
  // Each player's policy is the soft-optimal response to R = b + C y.
  std::mt19937_64 rng(14);
  const auto g = random_game({{3, 2}, {3, 3}}, 0.9, 1.0, 1.0, rng);
  const auto st = build_stacked(g);
  const auto sol = solve_forward(st, g.params);
  const Vector R = reward_from_frequencies(g, sol.y);
  for (std::size_t i = 0; i < g.players.size(); ++i) {
    const auto o = oracle_soft_vi(g.players[i], player_matrix(R, st.offsets[i]), g.gamma);
    for (Index s = 0; s < g.players[i].n; ++s)
      for (Index a = 0; a < g.players[i].m; ++a) EXPECT_NEAR(sol.policies[i](s, a), o.pi[s][a], 1e-5);
  }
}

TEST(SolveForward, UniqueAcrossStarts) {
  std::mt19937_64 rng(15);
  const auto g = random_game({{3, 2}, {2, 3}}, 0.9, 1.0, 1.0, rng);
  const auto st = build_stacked(g);
  const auto ref = solve_forward(st, g.params);
  for (int k = 0; k < 4; ++k) {
    ForwardInit init{testing::random_positive(st.l(), rng, 0.5, 5.0), testing::random_positive(st.r(), rng, -3.0, 3.0)};
    ForwardOptions opts;
    opts.start = ForwardOptions::Start::kUniform;
    const auto sol = solve_forward(st, g.params, init, opts);
    EXPECT_LE(testing::rel_inf(ref.y, sol.y), 1e-5);
  }
}

TEST(SolveForward, UniformStartAlsoConverges) {
  std::mt19937_64 rng(16);
  const auto g = random_game({{3, 2}, {2, 2}}, 0.9, 1.0, 0.5, rng);
  const auto st = build_stacked(g);
  ForwardOptions opts;
  opts.start = ForwardOptions::Start::kUniform;
  const auto a = solve_forward(st, g.params, std::nullopt, opts);
  const auto b = solve_forward(st, g.params);
  EXPECT_LE(testing::rel_inf(a.y, b.y), 1e-6);
}

TEST(SolveForward, StrongCouplingNeedsContinuation) {
  std::mt19937_64 rng(17);
  const auto g = random_game({{5, 3}, {5, 3}, {5, 3}}, 0.99, 1.0, 3.0, rng);
  const auto st = build_stacked(g);
  ForwardOptions direct;
  direct.continuation = false;
  EXPECT_THROW(solve_forward(st, g.params, std::nullopt, direct), ConvergenceError);
  const auto sol = solve_forward(st, g.params);
  EXPECT_LE(sol.objective(), 1e-16);
  EXPECT_LE(kkt_residual(st, g.params, sol.y, sol.v).norm(), 1e-8);
}

TEST(SolveForward, NonConvergenceCarriesResidual) {
  std::mt19937_64 rng(18);
  const auto g = random_game({{3, 2}, {2, 2}}, 0.9, 1.0, 1.0, rng);
  ForwardOptions opts;
  opts.max_iterations = 1;
  opts.start = ForwardOptions::Start::kUniform;
  opts.continuation = false;
  try {
    solve_forward(build_stacked(g), g.params, std::nullopt, opts);
    FAIL() << "expected ConvergenceError";
  } catch (const ConvergenceError& e) {
    EXPECT_GT(e.best_residual(), 1e-8);
    EXPECT_TRUE(std::isfinite(e.best_residual()));
  }
}

TEST(SolveForward, InvalidInitIsDomainError) {
  const auto g = single_state_game(0.9);
  EXPECT_THROW(solve_forward(build_stacked(g), g.params, ForwardInit{Vector::Zero(1), Vector::Zero(1)}),
               DomainError);
}

TEST(PolicyFromFrequencies, Examples) {
  const std::vector<PlayerOffset> offsets{{0, 0, 2, 2}};
  Vector y(4);
  y << 0.5, 0.5, 3.0, 1.0;
  const auto pi = policy_from_frequencies(y, offsets);
  EXPECT_DOUBLE_EQ(pi[0](0, 0), 0.5);
  EXPECT_DOUBLE_EQ(pi[0](1, 0), 0.75);
  EXPECT_DOUBLE_EQ(pi[0](1, 1), 0.25);
  y << 0.0, 0.0, 1.0, 1.0;
  EXPECT_THROW(policy_from_frequencies(y, offsets), DomainError);
}

TEST(SoftValueIteration, UniformWhenActionsAreIdentical) {
  PlayerMdp mdp{3, 4, Vector::Constant(3, 1.0 / 3), Matrix(12, 3)};
  std::mt19937_64 rng(19);
  const Matrix rows = testing::random_stochastic(3, 3, rng);
  for (Index s = 0; s < 3; ++s)
    for (Index a = 0; a < 4; ++a) mdp.T.row(s * 4 + a) = rows.row(s);
  const auto res = soft_value_iteration(mdp, Matrix::Zero(3, 4), 0.9);
  EXPECT_LE((res.policy.array() - 0.25).abs().maxCoeff(), 1e-12);
  EXPECT_LE((res.v.array() - std::log(4.0) / 0.1).abs().maxCoeff(), 1e-9);
}

TEST(SoftValueIteration, TwoActionsOneState) {
  PlayerMdp mdp{1, 2, Vector::Ones(1), Matrix::Ones(2, 1)};
  const auto res = soft_value_iteration(mdp, Matrix::Zero(1, 2), 0.5);
  EXPECT_NEAR(res.v[0], 2.0 * std::log(2.0), 1e-12);
  EXPECT_NEAR(res.policy(0, 0), 0.5, 1e-12);
}

TEST(SoftValueIteration, FixedPointResidual) {
  std::mt19937_64 rng(20);
  const auto mdp = random_mdp(2, 2, rng);
  Matrix R = Matrix::Random(2, 2);
  const auto res = soft_value_iteration(mdp, R, 0.9);
  const Vector ev = mdp.T * res.v;
  for (Index s = 0; s < 2; ++s) {
    Eigen::RowVectorXd q(2);
    for (Index a = 0; a < 2; ++a) q[a] = R(s, a) + 0.9 * ev[s * 2 + a];
    EXPECT_LE((q - res.Q.row(s)).lpNorm<Eigen::Infinity>(), 1e-12);
    EXPECT_NEAR(log_sum_exp(q), res.v[s], 1e-12);
  }
}

TEST(SoftPolicyIteration, AgreesWithValueIteration) {
  std::mt19937_64 rng(21);
  const auto mdp = random_mdp(5, 3, rng);
  const Matrix R = 3.0 * Matrix::Random(5, 3);
  const auto a = soft_value_iteration(mdp, R, 0.95);
  const auto b = soft_policy_iteration(mdp, R, 0.95);
  EXPECT_LE((a.policy - b.policy).lpNorm<Eigen::Infinity>(), 1e-9);
  EXPECT_LE((a.v - b.v).lpNorm<Eigen::Infinity>(), 1e-8);
}

TEST(OccupancyFromPolicy, SingleState) {
  PlayerMdp mdp{1, 1, Vector::Ones(1), Matrix::Ones(1, 1)};
  EXPECT_NEAR(occupancy_from_policy(mdp, Matrix::Ones(1, 1), 0.99)(0, 0), 100.0, 1e-10);
}

TEST(OccupancyFromPolicy, TotalMassAndFiniteHorizonLimit) {
  std::mt19937_64 rng(22);
  const auto mdp = random_mdp(4, 3, rng);
  const Matrix pi = testing::random_stochastic(4, 3, rng);
  const Matrix Y = occupancy_from_policy(mdp, pi, 0.9);
  EXPECT_NEAR(Y.sum(), 10.0, 1e-9);
  const Matrix Yl = finite_horizon_occupancy(mdp, pi, 0.9, 2000);
  EXPECT_LE((Y - Yl).lpNorm<Eigen::Infinity>(), 1e-10);
  EXPECT_NEAR(finite_horizon_occupancy(mdp, pi, 0.9, 6).sum(), (1 - std::pow(0.9, 6)) / 0.1, 1e-12);
}

TEST(OccupancyFromPolicy, RejectsBadPolicy) {
  std::mt19937_64 rng(23);
  const auto mdp = random_mdp(2, 2, rng);
  EXPECT_THROW(occupancy_from_policy(mdp, Matrix::Ones(2, 2), 0.9), DomainError);
  EXPECT_THROW(occupancy_from_policy(mdp, Matrix::Ones(3, 2) / 2, 0.9), DimensionError);
}

}  // namespace
}  // namespace softbellman
