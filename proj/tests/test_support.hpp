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

// Random game generators shared by the test binaries.

#pragma once

#include <random>
#include <vector>

#include "softbellman.hpp"

namespace softbellman::testing {

inline Matrix random_stochastic(Index rows, Index cols, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unif(0.05, 1.0);
  Matrix out(rows, cols);
  for (Index i = 0; i < rows; ++i) {
    for (Index j = 0; j < cols; ++j) out(i, j) = unif(rng);
    out.row(i) /= out.row(i).sum();
  }
  return out;
}

inline PlayerMdp random_mdp(Index n, Index m, std::mt19937_64& rng) {
  PlayerMdp p;
  p.n = n;
  p.m = m;
  p.q = random_stochastic(1, n, rng).row(0).transpose();
  p.T = random_stochastic(n * m, n, rng);
  return p;
}

/// Entries of b uniform in [-b_scale, b_scale]; C uniform in
/// [-c_scale, c_scale] and projected so that C + C^T is NSD.
inline AffineGame random_game(const std::vector<std::pair<Index, Index>>& dims, double gamma,
                              double b_scale, double c_scale, std::mt19937_64& rng) {
  AffineGame game;
  game.gamma = gamma;
  for (auto [n, m] : dims) game.players.push_back(random_mdp(n, m, rng));
  const Index l = game.num_pairs();
  std::uniform_real_distribution<double> unif(-1.0, 1.0);
  game.params.b.resize(l);
  for (Index k = 0; k < l; ++k) game.params.b[k] = b_scale * unif(rng);
  Matrix C(l, l);
  for (Index i = 0; i < l; ++i) {
    for (Index j = 0; j < l; ++j) C(i, j) = c_scale * unif(rng);
  }
  game.params.C = project_C(C, CSet::nsd_symmetric());
  return game;
}

inline Vector random_positive(Index size, std::mt19937_64& rng, double lo = 0.1, double hi = 2.0) {
  std::uniform_real_distribution<double> unif(lo, hi);
  Vector out(size);
  for (Index k = 0; k < size; ++k) out[k] = unif(rng);
  return out;
}

/// Relative infinity-norm distance |a - b| / |a|.
inline double rel_inf(const Vector& a, const Vector& b) {
  return (a - b).lpNorm<Eigen::Infinity>() / a.lpNorm<Eigen::Infinity>();
}

}  // namespace softbellman::testing
