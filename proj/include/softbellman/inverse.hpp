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

// Inverse game: fit (b, C) so that the equilibrium frequencies y(b, C) match
// observed frequencies y_hat, by projected gradient descent on |y - y_hat|^2
// with gradients from implicit differentiation of the KKT system.

#pragma once

#include <Eigen/LU>
#include <Eigen/SVD>

#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "softbellman/errors.hpp"
#include "softbellman/forward.hpp"
#include "softbellman/game_model.hpp"
#include "softbellman/linalg.hpp"

namespace softbellman {

/// Convex constraint set for the individual reward vector b.
struct BSet {
  enum class Kind { kUnconstrained, kBox, kBall };

  Kind kind = Kind::kUnconstrained;
  double lo = -std::numeric_limits<double>::infinity();
  double hi = std::numeric_limits<double>::infinity();
  double radius = std::numeric_limits<double>::infinity();

  static BSet unconstrained() { return {}; }
  static BSet box(double lo, double hi) { return {Kind::kBox, lo, hi, 0.0}; }
  static BSet ball(double radius) {
    BSet s;
    s.kind = Kind::kBall;
    s.radius = radius;
    return s;
  }
};

/// Convex constraint set for the coupling matrix C.
struct CSet {
  enum class Kind {
    kZero,          // C = 0, the decoupled baseline
    kNsdSymmetric,  // C + C^T negative semidefinite
    kMaskedNsd,     // C + C^T negative semidefinite and zero outside `mask`
  };

  Kind kind = Kind::kNsdSymmetric;
  /// l x l, 1 where entries are free. Used by kMaskedNsd only.
  Matrix mask;

  static CSet zero() { return {Kind::kZero, {}}; }
  static CSet nsd_symmetric() { return {Kind::kNsdSymmetric, {}}; }

  /// Expands a p x p player-block pattern into an entry mask. Diagonal
  /// blocks are always free.
  static CSet block_mask(const std::vector<PlayerOffset>& offsets,
                         const std::vector<std::vector<bool>>& coupled) {
    if (coupled.size() != offsets.size()) throw DimensionError("block mask must be p x p");
    Index l = 0;
    for (const auto& o : offsets) l += o.pairs();
    CSet out{Kind::kMaskedNsd, Matrix::Zero(l, l)};
    for (std::size_t i = 0; i < offsets.size(); ++i) {
      if (coupled[i].size() != offsets.size()) throw DimensionError("block mask must be p x p");
      for (std::size_t j = 0; j < offsets.size(); ++j) {
        if (i == j || coupled[i][j]) {
          out.mask.block(offsets[i].pair, offsets[j].pair, offsets[i].pairs(), offsets[j].pairs())
              .setOnes();
        }
      }
    }
    return out;
  }
};

inline Vector project_b(const Vector& b, const BSet& set) {
  switch (set.kind) {
    case BSet::Kind::kUnconstrained:
      return b;
    case BSet::Kind::kBox:
      if (!(set.lo <= set.hi)) throw DimensionError("box set needs lo <= hi");
      return b.cwiseMax(set.lo).cwiseMin(set.hi);
    case BSet::Kind::kBall: {
      if (!(set.radius >= 0.0)) throw DimensionError("ball set needs a nonnegative radius");
      const double norm = b.norm();
      if (norm <= set.radius) return b;
      return b * (set.radius / norm);
    }
  }
  throw DimensionError("unknown b set kind");
}

namespace detail {

/// Frobenius projection onto {C : C + C^T <= 0}: clip the positive spectrum
/// of the symmetric part and keep the skew part.
inline Matrix project_nsd_symmetric_part(const Matrix& C) {
  const Matrix sym = 0.5 * (C + C.transpose());
  Eigen::SelfAdjointEigenSolver<Matrix> es(sym);
  if (es.info() != Eigen::Success) throw DomainError("eigendecomposition failed in project_C");
  const Vector clipped = es.eigenvalues().cwiseMin(0.0);
  Matrix out = es.eigenvectors() * clipped.asDiagonal() * es.eigenvectors().transpose();
  out += 0.5 * (C - C.transpose());
  return out;
}

}  // namespace detail

/// Euclidean (Frobenius) projection of C onto the coupling set.
///
/// The masked set is the intersection of a subspace and the NSD cone; it is
/// projected onto by alternating projections, then any leftover positive
/// eigenvalue is removed by a diagonal shift so the result is always
/// feasible.
inline Matrix project_C(const Matrix& C, const CSet& set) {
  if (C.rows() != C.cols()) throw DimensionError("project_C: C must be square");
  switch (set.kind) {
    case CSet::Kind::kZero:
      return Matrix::Zero(C.rows(), C.cols());
    case CSet::Kind::kNsdSymmetric:
      return detail::project_nsd_symmetric_part(C);
    case CSet::Kind::kMaskedNsd: {
      if (set.mask.rows() != C.rows() || set.mask.cols() != C.cols()) {
        throw DimensionError("project_C: mask shape does not match C");
      }
      // Dykstra's method; the subspace step needs no correction term.
      Matrix x = C.cwiseProduct(set.mask);
      Matrix correction = Matrix::Zero(C.rows(), C.cols());
      for (int it = 0; it < 500; ++it) {
        const Matrix masked = x.cwiseProduct(set.mask);
        const Matrix shifted = masked + correction;
        x = detail::project_nsd_symmetric_part(shifted);
        correction = shifted - x;
        if ((x - x.cwiseProduct(set.mask)).norm() <= 1e-13 * (1.0 + x.norm())) break;
      }
      x = x.cwiseProduct(set.mask);
      const double lambda = max_symmetric_eigenvalue(x);
      if (lambda > 0.0) x.diagonal().array() -= lambda;
      return x;
    }
  }
  throw DimensionError("unknown C set kind");
}

/// KKT Jacobian with respect to (y, v):
///   [ K diag(Ky)^-1 - diag(y)^-1 + C   -H^T ]
///   [ H                                  0  ]
inline Matrix assemble_jacobian(const StackedGame& stacked, const AffineRewardParams& params,
                                const Vector& y) {
  detail::require_dims(stacked, params);
  if (y.size() != stacked.l()) throw DimensionError("assemble_jacobian: y has wrong length");
  detail::require_positive(y, "y");
  const Index l = stacked.l(), r = stacked.r();
  const Vector ky = stacked.state_marginals(y);

  Matrix J = Matrix::Zero(l + r, l + r);
  J.topLeftCorner(l, l) = stacked.K * ky.cwiseInverse().asDiagonal();
  J.topLeftCorner(l, l).diagonal() -= y.cwiseInverse();
  J.topLeftCorner(l, l) += params.C;
  J.topRightCorner(l, r) = -stacked.H.transpose();
  J.bottomLeftCorner(r, l) = stacked.H;
  return J;
}

enum class GradientMethod {
  kPseudoinverse,  // SVD with singular values below 1e-10 * sigma_max dropped
  kDirectSolve,    // LU solve; requires a nonsingular Jacobian
};

inline constexpr double kPseudoinverseCutoff = 1e-10;

/// grad_b = -2 [I 0] (J^+)^T [y - y_hat; 0].
inline Vector implicit_gradient_b(const StackedGame& stacked, const AffineRewardParams& params,
                                  const Vector& y, const Vector& y_hat,
                                  GradientMethod method = GradientMethod::kPseudoinverse) {
  const Index l = stacked.l(), r = stacked.r();
  if (y_hat.size() != l) throw DimensionError("implicit_gradient: y_hat has wrong length");
  if (y.size() != l) throw DimensionError("implicit_gradient: y has wrong length");
  detail::require_positive(y, "y");
  if ((y - y_hat).isZero(0.0)) return Vector::Zero(l);

  // The y-columns of J carry -1/y terms, so J is badly scaled once some
  // frequencies are tiny. Work with J_z = J * diag(y, I), the Jacobian in
  // z = log y: (J^T)^{-1} w = (J_z^T)^{-1} diag(y, I) w.
  const Matrix Jz = detail::log_space_jacobian(stacked, params, y);
  Vector w = Vector::Zero(l + r);
  w.head(l) = y.cwiseProduct(y - y_hat);

  Vector solved;
  if (method == GradientMethod::kPseudoinverse) {
    // (J_z^+)^T = U S^+ V^T for J_z = U S V^T.
    Eigen::BDCSVD<Matrix> svd(Jz, Eigen::ComputeThinU | Eigen::ComputeThinV);
    const Vector& sigma = svd.singularValues();
    const double cutoff = kPseudoinverseCutoff * (sigma.size() ? sigma[0] : 0.0);
    Vector coeffs = svd.matrixV().transpose() * w;
    for (Index k = 0; k < sigma.size(); ++k) coeffs[k] = sigma[k] > cutoff ? coeffs[k] / sigma[k] : 0.0;
    solved = svd.matrixU() * coeffs;
  } else {
    solved = Jz.transpose().partialPivLu().solve(w);
  }
  return -2.0 * solved.head(l);
}

struct ImplicitGradient {
  Vector b;
  Matrix C;
};

/// Gradients of |y - y_hat|^2 with respect to b and C. The C gradient is the
/// outer product grad_b * y^T.
inline ImplicitGradient implicit_gradient(const StackedGame& stacked,
                                          const AffineRewardParams& params, const Vector& y,
                                          const Vector& y_hat,
                                          GradientMethod method = GradientMethod::kPseudoinverse) {
  ImplicitGradient g;
  g.b = implicit_gradient_b(stacked, params, y, y_hat, method);
  g.C = g.b * y.transpose();
  return g;
}

struct InverseProblem {
  StackedGame stacked;
  Vector y_hat;
  BSet b_set;
  CSet c_set;
};

struct InverseOptions {
  double alpha0 = 1.0;
  int k_max = 100;
  double epsilon = 0.005;
  double armijo_c1 = 1e-4;
  double min_step = 1e-12;
  GradientMethod gradient = GradientMethod::kPseudoinverse;
  ForwardOptions forward;
  /// Iteration cap for the forward solves of line-search trials; a trial
  /// whose equilibrium is not found within it is rejected.
  int trial_max_iterations = 100;
  /// Called after every outer iteration with (iteration, loss).
  std::function<void(int, double)> on_iteration;
};

struct IterationRecord {
  int iteration = 0;
  double loss = 0.0;
  double step = 0.0;
  bool accepted = false;
};

enum class Termination { kTolerance, kMaxIterations, kLineSearchFailure };

inline const char* to_string(Termination t) {
  switch (t) {
    case Termination::kTolerance: return "tolerance";
    case Termination::kMaxIterations: return "max_iterations";
    case Termination::kLineSearchFailure: return "line_search_failure";
  }
  return "unknown";
}

struct InverseResult {
  Vector b;
  Matrix C;
  /// One accepted row per iterate plus one rejected row per failed
  /// line-search trial. Row `iteration` k holds the loss of iterate k.
  std::vector<IterationRecord> history;
  int iterations_used = 0;
  Termination terminated_by = Termination::kMaxIterations;
  EquilibriumSolution equilibrium;
  int c_gradient_evaluations = 0;

  double final_loss() const {
    const auto curve = loss_curve();
    return curve.empty() ? std::numeric_limits<double>::quiet_NaN() : curve.back().second;
  }

  /// (iteration, loss) of the accepted iterates in order.
  std::vector<std::pair<int, double>> loss_curve() const {
    std::vector<std::pair<int, double>> out;
    for (const auto& h : history) {
      if (h.accepted) out.emplace_back(h.iteration, h.loss);
    }
    return out;
  }
};

/// Forward failure inside the inverse loop; keeps the iterations done so far.
class InverseError : public std::runtime_error {
 public:
  InverseError(const std::string& what, std::vector<IterationRecord> history)
      : std::runtime_error(what), history_(std::move(history)) {}
  const std::vector<IterationRecord>& history() const noexcept { return history_; }

 private:
  std::vector<IterationRecord> history_;
};

namespace detail {

/// First-order prediction of how the incumbent equilibrium (y, v) moves
/// when the parameters change by (db, dC).
class TangentPredictor {
 public:
  TangentPredictor(const StackedGame& stacked, const AffineRewardParams& params,
                   const EquilibriumSolution& sol)
      : y_(sol.y), v_(sol.v), l_(stacked.l()) {
    lu_.compute(log_space_jacobian(stacked, params, sol.y));
  }

  ForwardInit predict(const Vector& db, const Matrix* dC) const {
    Vector rhs = Vector::Zero(lu_.rows());
    rhs.head(l_) = db;
    if (dC) rhs.head(l_) += *dC * y_;
    const Vector dw = lu_.solve(-rhs);
    ForwardInit out{y_, v_};
    if (!dw.allFinite()) return out;
    const Vector z = y_.array().log() + dw.head(l_).array();
    if (z.maxCoeff() > kMaxExpArgument) return out;
    out.y = z.array().exp();
    if ((out.y.array() <= 0.0).any()) return ForwardInit{y_, v_};
    out.v = v_ + dw.tail(dw.size() - l_);
    return out;
  }

 private:
  Vector y_, v_;
  Index l_;
  Eigen::PartialPivLU<Matrix> lu_;
};

inline std::optional<EquilibriumSolution> try_forward(const StackedGame& stacked,
                                                      const AffineRewardParams& params,
                                                      const ForwardInit& start,
                                                      const ForwardOptions& options) {
  try {
    return solve_forward(stacked, params, start, options);
  } catch (const ConvergenceError&) {
  } catch (const DomainError&) {
  }
  return std::nullopt;
}

inline InverseResult run_projected_gradient(const InverseProblem& problem, Vector b, Matrix C,
                                            const InverseOptions& options, bool update_c) {
  const auto& stacked = problem.stacked;
  const Index l = stacked.l();
  if (b.size() != l || C.rows() != l || C.cols() != l || problem.y_hat.size() != l) {
    throw DimensionError("solve_inverse: b, C and y_hat must match l = " + std::to_string(l));
  }
  if (options.k_max < 1) throw DimensionError("solve_inverse: k_max must be positive");

  InverseResult result;
  ForwardOptions trial_forward = options.forward;
  trial_forward.max_iterations = options.trial_max_iterations;
  trial_forward.continuation = false;
  AffineRewardParams params{project_b(b, problem.b_set), project_C(C, problem.c_set)};

  EquilibriumSolution sol;
  try {
    sol = solve_forward(stacked, params, std::nullopt, options.forward);
  } catch (const std::exception& e) {
    throw InverseError(std::string("forward solve failed at iteration 1: ") + e.what(), {});
  }
  double loss = (sol.y - problem.y_hat).squaredNorm();
  double previous = 0.0;
  int k = 1;
  result.history.push_back({k, loss, 0.0, true});
  if (options.on_iteration) options.on_iteration(k, loss);

  while (true) {
    if (std::abs(loss - previous) < options.epsilon) {
      result.terminated_by = Termination::kTolerance;
      break;
    }
    if (k >= options.k_max) {
      result.terminated_by = Termination::kMaxIterations;
      break;
    }

    const Vector grad_b =
        implicit_gradient_b(stacked, params, sol.y, problem.y_hat, options.gradient);
    Matrix grad_c;
    if (update_c) {
      grad_c = grad_b * sol.y.transpose();
      ++result.c_gradient_evaluations;
    }

    const TangentPredictor predictor(stacked, params, sol);
    double alpha = options.alpha0;
    bool accepted = false;
    while (alpha >= options.min_step) {
      AffineRewardParams trial;
      trial.b = project_b(params.b - alpha * grad_b, problem.b_set);
      trial.C = update_c ? project_C(params.C - alpha * grad_c, problem.c_set) : params.C;
      double decrease = grad_b.dot(trial.b - params.b);
      if (update_c) decrease += (grad_c.array() * (trial.C - params.C).array()).sum();

      const Vector db = trial.b - params.b;
      const Matrix dC = update_c ? Matrix(trial.C - params.C) : Matrix();
      auto trial_sol = try_forward(stacked, trial, predictor.predict(db, update_c ? &dC : nullptr),
                                   trial_forward);
      const double trial_loss = trial_sol
                                    ? (trial_sol->y - problem.y_hat).squaredNorm()
                                    : std::numeric_limits<double>::infinity();
      if (trial_loss <= loss + options.armijo_c1 * decrease) {
        params = std::move(trial);
        sol = std::move(*trial_sol);
        previous = loss;
        loss = trial_loss;
        ++k;
        result.history.push_back({k, loss, alpha, true});
        accepted = true;
        break;
      }
      result.history.push_back({k + 1, trial_loss, alpha, false});
      alpha *= 0.5;
    }
    if (!accepted) {
      result.terminated_by = Termination::kLineSearchFailure;
      break;
    }
    if (options.on_iteration) options.on_iteration(k, loss);
  }

  result.iterations_used = k;
  result.b = std::move(params.b);
  result.C = std::move(params.C);
  result.equilibrium = std::move(sol);
  return result;
}

}  // namespace detail

/// Projected-gradient inverse solve over (b, C) with Armijo backtracking.
inline InverseResult solve_inverse(const InverseProblem& problem, const Vector& b_init,
                                   const Matrix& C_init, const InverseOptions& options = {}) {
  return detail::run_projected_gradient(problem, b_init, C_init, options,
                                        problem.c_set.kind != CSet::Kind::kZero);
}

/// Decoupled baseline: C is pinned to zero and only b is updated.
inline InverseResult solve_inverse_baseline(const InverseProblem& problem, const Vector& b_init,
                                            const InverseOptions& options = {}) {
  InverseProblem decoupled = problem;
  decoupled.c_set = CSet::zero();
  const Index l = problem.stacked.l();
  return detail::run_projected_gradient(decoupled, b_init, Matrix::Zero(l, l), options, false);
}

}  // namespace softbellman
