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

#pragma once

#include <Eigen/Core>
#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "softbellman/errors.hpp"

namespace softbellman {

using Index = Eigen::Index;
using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Largest argument accepted by checked_exp before reporting overflow.
inline constexpr double kMaxExpArgument = 700.0;

inline double checked_exp(double x) {
  if (x > kMaxExpArgument) {
    throw DomainError("exp argument " + std::to_string(x) + " exceeds " +
                      std::to_string(kMaxExpArgument));
  }
  return std::exp(x);
}

/// Max-shifted log(sum(exp(x))).
template <typename Derived>
double log_sum_exp(const Eigen::DenseBase<Derived>& x) {
  const double shift = x.maxCoeff();
  if (!std::isfinite(shift)) return shift;
  return shift + std::log((x.derived().array() - shift).exp().sum());
}

/// Largest eigenvalue of the symmetric part (A + A^T) / 2.
inline double max_symmetric_eigenvalue(const Matrix& a) {
  if (a.size() == 0) return -std::numeric_limits<double>::infinity();
  const Matrix sym = 0.5 * (a + a.transpose());
  Eigen::SelfAdjointEigenSolver<Matrix> es(sym, Eigen::EigenvaluesOnly);
  return es.eigenvalues().maxCoeff();
}

}  // namespace softbellman
