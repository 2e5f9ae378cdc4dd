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

// Multi-seed inverse experiments and their metrics: per-state KL divergence,
// loss curves, summary tables and heatmap grids.

#pragma once

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <numeric>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "softbellman/errors.hpp"
#include "softbellman/forward.hpp"
#include "softbellman/gridworld.hpp"
#include "softbellman/inverse.hpp"
#include "softbellman/io.hpp"
#include "softbellman/trajectories.hpp"

namespace softbellman {

inline constexpr double kDefaultKlFloor = 1e-9;

/// D_s = sum_a pi[s][a] * log(pi[s][a] / max(pi_hat[s][a], floor)).
inline Vector kl_divergence_per_state(const Matrix& pi, const Matrix& pi_hat,
                                      double floor = kDefaultKlFloor) {
  if (pi.rows() != pi_hat.rows() || pi.cols() != pi_hat.cols()) {
    throw DimensionError("kl_divergence_per_state: policy shapes differ");
  }
  if (!(floor > 0.0)) throw ValidationError("kl_divergence_per_state: floor must be positive");
  for (const Matrix* p : {&pi, &pi_hat}) {
    for (Index s = 0; s < p->rows(); ++s) {
      if (p->row(s).minCoeff() < 0.0 || std::abs(p->row(s).sum() - 1.0) > 1e-6) {
        throw ValidationError("kl_divergence_per_state: row " + std::to_string(s + 1) +
                              " is not a distribution");
      }
    }
  }
  Vector out = Vector::Zero(pi.rows());
  for (Index s = 0; s < pi.rows(); ++s) {
    for (Index a = 0; a < pi.cols(); ++a) {
      const double p = pi(s, a);
      if (p > 0.0) out[s] += p * std::log(p / std::max(pi_hat(s, a), floor));
    }
  }
  return out;
}

enum class ExperimentMode { kProposed, kBaseline };

inline const char* to_string(ExperimentMode m) {
  return m == ExperimentMode::kProposed ? "proposed" : "baseline";
}

struct ExperimentConfig {
  std::vector<int> seeds = {1, 2, 3, 4, 5, 6, 7, 8, 9, 10};
  double alpha0 = 1.0;
  double epsilon = 0.005;
  int k_max = 100;
  double gamma = 0.99;
  std::string game_path;          // ground-truth or dynamics game
  std::string observations_path;  // ObservationSet JSON
  std::string output_dir;
  /// Initial parameters are uniform[-scale, scale] per entry, then projected.
  double b_init_scale = 1.0;
  double c_init_scale = 1.0;
  BSet b_set = BSet::unconstrained();
  CSet::Kind c_kind = CSet::Kind::kNsdSymmetric;
  /// p x p player coupling pattern for the masked C set.
  std::vector<std::vector<bool>> c_mask;
  int trial_max_iterations = 30;
  std::vector<ExperimentMode> modes = {ExperimentMode::kProposed, ExperimentMode::kBaseline};
  /// Used when neither a game nor observations are given.
  gridworld::GridSpec grid;
  gridworld::CouplingOptions coupling;

  void validate() const {
    if (seeds.empty()) throw ValidationError("config: seeds must be non-empty");
    if (!(epsilon > 0.0)) throw ValidationError("config: epsilon must be positive");
    if (!(gamma >= 0.0 && gamma < 1.0)) throw ValidationError("config: gamma must lie in [0, 1)");
    if (!(alpha0 > 0.0)) throw ValidationError("config: alpha0 must be positive");
    if (k_max < 1) throw ValidationError("config: k_max must be positive");
    if (trial_max_iterations < 1) throw ValidationError("config: trial_max_iterations must be positive");
    if (modes.empty()) throw ValidationError("config: modes must be non-empty");
    grid.validate();
  }
};

inline BSet parse_bset(const std::string& text) {
  // "unconstrained", "box:LO:HI" or "ball:R"
  if (text == "unconstrained") return BSet::unconstrained();
  double x = 0.0, y = 0.0;
  if (std::sscanf(text.c_str(), "box:%lf:%lf", &x, &y) == 2) return BSet::box(x, y);
  if (std::sscanf(text.c_str(), "ball:%lf", &x) == 1) return BSet::ball(x);
  throw ValidationError("unknown b constraint set '" + text + "'");
}

inline CSet::Kind parse_cset(const std::string& text) {
  if (text == "nsd") return CSet::Kind::kNsdSymmetric;
  if (text == "zero") return CSet::Kind::kZero;
  if (text == "masked") return CSet::Kind::kMaskedNsd;
  throw ValidationError("unknown C constraint set '" + text + "'");
}

inline ExperimentMode parse_mode(const std::string& text) {
  if (text == "proposed") return ExperimentMode::kProposed;
  if (text == "baseline") return ExperimentMode::kBaseline;
  throw ValidationError("unknown mode '" + text + "'");
}

/// Reads the keys present in `j` on top of the defaults.
inline ExperimentConfig config_from_json(const io::Json& j) {
  ExperimentConfig cfg;
  try {
    if (j.contains("seeds")) {
      const auto& s = j.at("seeds");
      cfg.seeds.clear();
      if (s.is_object()) {
        for (int k = s.at("first").get<int>(); k <= s.at("last").get<int>(); ++k) cfg.seeds.push_back(k);
      } else {
        cfg.seeds = s.get<std::vector<int>>();
      }
    }
    cfg.alpha0 = j.value("alpha0", cfg.alpha0);
    cfg.epsilon = j.value("epsilon", cfg.epsilon);
    cfg.k_max = j.value("k_max", cfg.k_max);
    cfg.gamma = j.value("gamma", cfg.gamma);
    cfg.game_path = j.value("game", cfg.game_path);
    cfg.observations_path = j.value("observations", cfg.observations_path);
    cfg.output_dir = j.value("output", cfg.output_dir);
    cfg.b_init_scale = j.value("b_init_scale", cfg.b_init_scale);
    cfg.c_init_scale = j.value("c_init_scale", cfg.c_init_scale);
    if (j.contains("bset")) cfg.b_set = parse_bset(j.at("bset").get<std::string>());
    if (j.contains("cset")) cfg.c_kind = parse_cset(j.at("cset").get<std::string>());
    if (j.contains("cset_mask")) cfg.c_mask = j.at("cset_mask").get<std::vector<std::vector<bool>>>();
    cfg.trial_max_iterations = j.value("trial_max_iterations", cfg.trial_max_iterations);
    if (j.contains("modes")) {
      cfg.modes.clear();
      for (const auto& m : j.at("modes")) cfg.modes.push_back(parse_mode(m.get<std::string>()));
    }
    if (j.contains("gridworld")) {
      const auto& g = j.at("gridworld");
      cfg.grid.width = g.value("width", cfg.grid.width);
      cfg.grid.height = g.value("height", cfg.grid.height);
      cfg.grid.predators = g.value("predators", cfg.grid.predators);
      cfg.grid.preys = g.value("preys", cfg.grid.preys);
      cfg.grid.slip = g.value("slip", cfg.grid.slip);
      cfg.grid.catch_radius = g.value("catch_radius", cfg.grid.catch_radius);
      cfg.coupling.kappa = g.value("kappa", cfg.coupling.kappa);
      cfg.coupling.eta = g.value("eta", cfg.coupling.eta);
      cfg.coupling.center_reward = g.value("center_reward", cfg.coupling.center_reward);
    }
  } catch (const io::Json::exception& e) {
    throw ValidationError(std::string("config: ") + e.what());
  }
  cfg.validate();
  return cfg;
}

/// Dynamics and observations an experiment runs on.
struct ExperimentData {
  StackedGame stacked;
  Vector y_hat;
  std::vector<Matrix> observed_policies;
  /// Set when every player's states are the cells of this grid.
  std::optional<gridworld::GridSpec> grid;
};

/// Observations file if given; else the equilibrium of the game file; else
/// the equilibrium of the configured gridworld.
inline ExperimentData load_experiment_data(const ExperimentConfig& cfg) {
  ExperimentData data;
  AffineGame game;
  bool have_y = false;
  if (!cfg.observations_path.empty()) {
    const auto obs = io::observations_from_json(io::read_json(cfg.observations_path));
    game = game_from_observations(obs);
    data.y_hat = obs.y_hat;
    have_y = true;
  } else if (!cfg.game_path.empty()) {
    game = io::read_game(cfg.game_path);
  } else {
    game = gridworld::build_game(cfg.grid, cfg.gamma, cfg.coupling);
    data.grid = cfg.grid;
  }
  game.gamma = cfg.gamma;
  data.stacked = build_stacked(game);
  if (!have_y) {
    const auto report = validate_game(game, Hypotheses::kExistence);
    if (!report.ok()) throw ValidationError(report.to_string());
    data.y_hat = solve_forward(data.stacked, game.params).y;
  }
  if (data.y_hat.size() != data.stacked.l()) {
    throw DimensionError("observations do not match the game dimensions");
  }
  data.observed_policies = observed_policies(data.y_hat, data.stacked.offsets);
  if (!data.grid) {
    bool all_cells = true;
    for (const auto& o : data.stacked.offsets) {
      all_cells = all_cells && o.n == cfg.grid.num_cells() && o.m == gridworld::kNumActions;
    }
    if (all_cells) data.grid = cfg.grid;
  }
  return data;
}

/// Seeded initial (b, C): uniform entries, unprojected.
inline std::pair<Vector, Matrix> initial_parameters(int seed, Index l, double b_scale,
                                                    double c_scale) {
  std::mt19937_64 rng(static_cast<std::uint64_t>(seed));
  std::uniform_real_distribution<double> unif(-1.0, 1.0);
  Vector b(l);
  for (Index k = 0; k < l; ++k) b[k] = b_scale * unif(rng);
  Matrix C(l, l);
  for (Index i = 0; i < l; ++i) {
    for (Index j = 0; j < l; ++j) C(i, j) = c_scale * unif(rng);
  }
  return {b, C};
}

struct SeedOutcome {
  int seed = 0;
  bool ok = false;
  std::string error;
  InverseResult result;
  std::vector<Vector> kl;  // per player, per state
  double mean_kl = 0.0;
};

struct Stat {
  double mean = 0.0;
  double std = 0.0;  // sample (n - 1) deviation; 0 with fewer than two values
};

inline Stat mean_std(const std::vector<double>& xs) {
  Stat s;
  if (xs.empty()) return s;
  s.mean = std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
  if (xs.size() > 1) {
    double ss = 0.0;
    for (double x : xs) ss += (x - s.mean) * (x - s.mean);
    s.std = std::sqrt(ss / static_cast<double>(xs.size() - 1));
  }
  return s;
}

struct ExperimentSummary {
  ExperimentMode mode = ExperimentMode::kProposed;
  std::vector<SeedOutcome> seeds;
  Stat iterations;
  Stat final_loss;
  Stat kl;
};

inline double mean_of(const std::vector<Vector>& vs) {
  double total = 0.0;
  Index count = 0;
  for (const auto& v : vs) {
    total += v.sum();
    count += v.size();
  }
  return count ? total / static_cast<double>(count) : 0.0;
}

/// Runs every configured seed in one mode. A seed that fails is recorded and
/// the remaining seeds still run.
inline ExperimentSummary run_experiment(const ExperimentData& data, const ExperimentConfig& cfg,
                                        ExperimentMode mode,
                                        const std::function<void(const SeedOutcome&)>& on_seed = {}) {
  cfg.validate();
  ExperimentSummary summary;
  summary.mode = mode;
  const Index l = data.stacked.l();

  InverseOptions options;
  options.alpha0 = cfg.alpha0;
  options.epsilon = cfg.epsilon;
  options.k_max = cfg.k_max;
  options.trial_max_iterations = cfg.trial_max_iterations;

  CSet c_set = CSet::nsd_symmetric();
  if (cfg.c_kind == CSet::Kind::kZero) c_set = CSet::zero();
  if (cfg.c_kind == CSet::Kind::kMaskedNsd) c_set = CSet::block_mask(data.stacked.offsets, cfg.c_mask);
  const InverseProblem problem{data.stacked, data.y_hat, cfg.b_set, c_set};

  std::vector<double> iterations, losses, kls;
  for (int seed : cfg.seeds) {
    SeedOutcome outcome;
    outcome.seed = seed;
    auto [b0, C0] = initial_parameters(seed, l, cfg.b_init_scale, cfg.c_init_scale);
    try {
      outcome.result = mode == ExperimentMode::kProposed
                           ? solve_inverse(problem, b0, C0, options)
                           : solve_inverse_baseline(problem, b0, options);
      for (std::size_t i = 0; i < data.stacked.num_players(); ++i) {
        outcome.kl.push_back(kl_divergence_per_state(outcome.result.equilibrium.policies[i],
                                                     data.observed_policies[i]));
      }
      outcome.mean_kl = mean_of(outcome.kl);
      outcome.ok = true;
      iterations.push_back(outcome.result.iterations_used);
      losses.push_back(outcome.result.final_loss());
      kls.push_back(outcome.mean_kl);
    } catch (const InverseError& e) {
      outcome.error = e.what();
      outcome.result.history = e.history();
    } catch (const std::exception& e) {
      outcome.error = e.what();
    }
    if (on_seed) on_seed(outcome);
    summary.seeds.push_back(std::move(outcome));
  }
  summary.iterations = mean_std(iterations);
  summary.final_loss = mean_std(losses);
  summary.kl = mean_std(kls);
  return summary;
}

/// One row per seed and a final `aggregate` row of means, with sample
/// standard deviations in the *_std columns.
inline std::string summary_csv(const ExperimentSummary& s) {
  using io::format_number;
  std::ostringstream os;
  os << "seed,status,terminated_by,iterations,final_loss,mean_kl,iterations_std,final_loss_std,"
        "mean_kl_std\n";
  for (const auto& o : s.seeds) {
    os << o.seed << "," << (o.ok ? "ok" : "failed") << ",";
    if (o.ok) {
      os << to_string(o.result.terminated_by) << "," << o.result.iterations_used << ","
         << format_number(o.result.final_loss()) << "," << format_number(o.mean_kl);
    } else {
      os << ",,,";
    }
    os << ",,,\n";
  }
  os << "aggregate,,," << format_number(s.iterations.mean) << "," << format_number(s.final_loss.mean)
     << "," << format_number(s.kl.mean) << "," << format_number(s.iterations.std) << ","
     << format_number(s.final_loss.std) << "," << format_number(s.kl.std) << "\n";
  return os.str();
}

inline io::Json summary_to_json(const ExperimentSummary& s) {
  io::Json j;
  j["mode"] = to_string(s.mode);
  j["iterations"] = {{"mean", s.iterations.mean}, {"std", s.iterations.std}};
  j["final_loss"] = {{"mean", s.final_loss.mean}, {"std", s.final_loss.std}};
  j["mean_kl"] = {{"mean", s.kl.mean}, {"std", s.kl.std}};
  j["seeds"] = io::Json::array();
  for (const auto& o : s.seeds) {
    io::Json sj;
    sj["seed"] = o.seed;
    sj["ok"] = o.ok;
    if (!o.ok) {
      sj["error"] = o.error;
    } else {
      sj["terminated_by"] = to_string(o.result.terminated_by);
      sj["iterations"] = o.result.iterations_used;
      sj["final_loss"] = o.result.final_loss();
      sj["mean_kl"] = o.mean_kl;
      sj["kl"] = io::Json::array();
      for (const auto& v : o.kl) sj["kl"].push_back(io::to_json(v));
    }
    j["seeds"].push_back(std::move(sj));
  }
  return j;
}

/// height x width grid of one player's per-cell values.
inline Matrix heatmap_grid(const Vector& values, const gridworld::GridSpec& grid) {
  if (values.size() != grid.num_cells()) {
    throw DimensionError("heatmap: " + std::to_string(values.size()) + " values for a " +
                         std::to_string(grid.width) + "x" + std::to_string(grid.height) + " grid");
  }
  Matrix out(grid.height, grid.width);
  for (int k = 0; k < grid.num_cells(); ++k) {
    const auto c = gridworld::cell_of(grid, k);
    out(c.row, c.col) = values[k];
  }
  return out;
}

inline std::string rounded_csv(const Matrix& m) {
  std::ostringstream os;
  char buf[64];
  for (Index i = 0; i < m.rows(); ++i) {
    for (Index j = 0; j < m.cols(); ++j) {
      std::snprintf(buf, sizeof(buf), "%.2f", m(i, j));
      os << (j ? "," : "") << buf;
    }
    os << "\n";
  }
  return os.str();
}

/// Writes `<prefix>player<i>.csv` (two decimals) and `<prefix>player<i>_full.csv`
/// (exact) per player. Returns the written paths.
inline std::vector<std::filesystem::path> emit_heatmap_data(const std::vector<Vector>& kl,
                                                            const gridworld::GridSpec& grid,
                                                            const std::filesystem::path& dir,
                                                            const std::string& prefix = "kl_") {
  std::vector<Matrix> grids;
  for (const auto& v : kl) grids.push_back(heatmap_grid(v, grid));
  std::vector<std::filesystem::path> paths;
  for (std::size_t i = 0; i < grids.size(); ++i) {
    const auto base = prefix + "player" + std::to_string(i + 1);
    paths.push_back(dir / (base + ".csv"));
    io::write_text(paths.back(), rounded_csv(grids[i]));
    paths.push_back(dir / (base + "_full.csv"));
    io::write_text(paths.back(), io::matrix_to_csv(grids[i]));
  }
  return paths;
}

/// Per-player KL averaged over the successful seeds.
inline std::vector<Vector> seed_averaged_kl(const ExperimentSummary& s) {
  std::vector<Vector> out;
  int count = 0;
  for (const auto& o : s.seeds) {
    if (!o.ok) continue;
    if (out.empty()) {
      out = o.kl;
    } else {
      for (std::size_t i = 0; i < out.size(); ++i) out[i] += o.kl[i];
    }
    ++count;
  }
  for (auto& v : out) v /= static_cast<double>(count);
  return out;
}

/// Loss curves, summary table/JSON and (for grid games) KL heatmaps.
inline void write_experiment_outputs(const ExperimentSummary& s, const ExperimentData& data,
                                     const std::filesystem::path& dir) {
  const std::string mode = to_string(s.mode);
  for (const auto& o : s.seeds) {
    io::write_text(dir / ("loss_" + mode + "_seed" + std::to_string(o.seed) + ".csv"),
                   io::loss_curve_csv(o.result));
  }
  io::write_text(dir / ("summary_" + mode + ".csv"), summary_csv(s));
  io::write_json(dir / ("summary_" + mode + ".json"), summary_to_json(s));
  const auto kl = seed_averaged_kl(s);
  if (data.grid && !kl.empty()) emit_heatmap_data(kl, *data.grid, dir, "kl_" + mode + "_");
}

}  // namespace softbellman
