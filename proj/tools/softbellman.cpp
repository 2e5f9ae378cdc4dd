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

// softbellman command line: simulate, estimate, forward, inverse, evaluate,
// experiment. Exit codes: 0 ok, 2 invalid input, 3 solver did not converge.

#include <cstdio>
#include <filesystem>
#include <string>

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "softbellman.hpp"

namespace fs = std::filesystem;
using namespace softbellman;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitInvalid = 2;
constexpr int kExitNoConvergence = 3;

struct Globals {
  std::string config;
  std::string out = ".";
  std::string log_level = "info";
};

ExperimentConfig load_config(const Globals& g) {
  if (g.config.empty()) return ExperimentConfig{};
  return config_from_json(io::read_json(g.config));
}

gridworld::GridSpec parse_grid(const std::string& text, gridworld::GridSpec spec) {
  int w = 0, h = 0;
  if (std::sscanf(text.c_str(), "%dx%d", &w, &h) != 2) {
    throw ValidationError("--grid expects WxH, got '" + text + "'");
  }
  spec.width = w;
  spec.height = h;
  return spec;
}

// ---- simulate ----

struct SimulateArgs {
  std::string grid = "5x5";
  int predators = 2;
  int preys = 1;
  double slip = 0.1;
  int episodes = 100;
  int maxlen = 10;
  std::uint64_t seed = 1;
  std::string policy = "equilibrium";
  double kappa = 0.05;
  bool no_capture_stop = false;
};

int run_simulate(const Globals& g, const SimulateArgs& a) {
  const auto cfg = load_config(g);
  auto spec = parse_grid(a.grid, cfg.grid);
  spec.predators = a.predators;
  spec.preys = a.preys;
  spec.slip = a.slip;
  spec.validate();
  auto coupling = cfg.coupling;
  coupling.kappa = a.kappa;
  const auto game = gridworld::build_game(spec, cfg.gamma, coupling);

  gridworld::SamplingOptions opts;
  opts.count = a.episodes;
  opts.max_len = a.maxlen;
  opts.seed = a.seed;
  opts.stop_on_capture = !a.no_capture_stop;

  std::vector<Trajectory> trajectories;
  if (a.policy == "equilibrium") {
    const auto sol = solve_forward(build_stacked(game), game.params);
    spdlog::info("equilibrium found in {} iterations, residual {:.3e}", sol.iterations,
                 sol.residual_norm);
    trajectories = gridworld::sample_trajectories(game, sol.policies, opts, &spec);
  } else if (a.policy == "scripted") {
    trajectories = gridworld::sample_trajectories(game, gridworld::scripted_pursuit(spec), opts, &spec);
  } else {
    throw ValidationError("--policy must be equilibrium or scripted");
  }
  const fs::path out(g.out);
  io::write_text(out / "trajectories.jsonl",
                 io::trajectories_to_jsonl(trajectories, dims_of(game.players)));
  io::write_json(out / "game.json", io::game_to_json(game));
  spdlog::info("wrote {} trajectories to {}", trajectories.size(), (out / "trajectories.jsonl").string());
  return kExitOk;
}

// ---- estimate ----

struct EstimateArgs {
  std::string trajectories;
  double gamma = -1.0;
  double smoothing = 1e-3;
  bool no_rescale = false;
};

int run_estimate(const Globals& g, const EstimateArgs& a) {
  const auto cfg = load_config(g);
  const double gamma = a.gamma >= 0.0 ? a.gamma : cfg.gamma;
  auto file = io::read_trajectories(a.trajectories);
  EstimateOptions opts;
  opts.smoothing = a.smoothing;
  opts.rescale = !a.no_rescale;
  const auto obs = estimate_observations(std::move(file.trajectories), gamma, file.dims, opts);
  spdlog::info("{} trajectories kept, capped at length {}", obs.trajectory_count, obs.capped_length);
  io::write_json(fs::path(g.out) / "observations.json", io::observations_to_json(obs));
  return kExitOk;
}

// ---- forward ----

struct ForwardArgs {
  std::string game;
  bool policy_csv = false;
};

int run_forward(const Globals& g, const ForwardArgs& a) {
  const auto game = io::read_game(a.game);
  const auto report = validate_game(game, Hypotheses::kUniqueness);
  if (!report.ok()) spdlog::warn("uniqueness hypotheses fail:\n{}", report.to_string());
  const auto sol = solve_forward(build_stacked(game), game.params);
  spdlog::info("converged in {} iterations, residual {:.3e}", sol.iterations, sol.residual_norm);
  const fs::path out(g.out);
  io::write_json(out / "solution.json", io::solution_to_json(sol));
  if (a.policy_csv) {
    for (std::size_t i = 0; i < sol.policies.size(); ++i) {
      io::write_text(out / ("policy_player" + std::to_string(i + 1) + ".csv"),
                     io::matrix_to_csv(sol.policies[i]));
    }
  }
  return kExitOk;
}

// ---- inverse ----

struct InverseArgs {
  std::string observations;
  std::string dynamics;
  int seed = 1;
  double alpha0 = -1.0;
  double epsilon = -1.0;
  int kmax = -1;
  std::string bset;
  std::string cset;
  bool baseline = false;
};

/// Dynamics from --dynamics when given, else estimated from the observations.
StackedGame inverse_dynamics(const ObservationSet& obs, const std::string& dynamics, double gamma) {
  AffineGame game = dynamics.empty() ? game_from_observations(obs) : io::read_game(dynamics);
  game.gamma = gamma;
  return build_stacked(game);
}

int run_inverse(const Globals& g, const InverseArgs& a) {
  auto cfg = load_config(g);
  if (a.alpha0 > 0.0) cfg.alpha0 = a.alpha0;
  if (a.epsilon > 0.0) cfg.epsilon = a.epsilon;
  if (a.kmax > 0) cfg.k_max = a.kmax;
  if (!a.bset.empty()) cfg.b_set = parse_bset(a.bset);
  if (!a.cset.empty()) cfg.c_kind = parse_cset(a.cset);
  cfg.seeds = {a.seed};
  cfg.modes = {a.baseline ? ExperimentMode::kBaseline : ExperimentMode::kProposed};
  cfg.validate();

  const auto obs = io::observations_from_json(io::read_json(a.observations));
  ExperimentData data;
  data.stacked = inverse_dynamics(obs, a.dynamics, obs.gamma);
  if (obs.y_hat.size() != data.stacked.l()) throw DimensionError("observations do not match dynamics");
  data.y_hat = obs.y_hat;
  data.observed_policies = observed_policies(obs.y_hat, data.stacked.offsets);

  const auto summary = run_experiment(data, cfg, cfg.modes.front());
  const auto& o = summary.seeds.front();
  const fs::path out(g.out);
  const auto tag = std::string(to_string(cfg.modes.front())) + "_seed" + std::to_string(a.seed);
  io::write_text(out / ("loss_" + tag + ".csv"), io::loss_curve_csv(o.result));
  if (!o.ok) {
    spdlog::error("{}", o.error);
    return kExitNoConvergence;
  }
  io::write_json(out / ("inverse_" + tag + ".json"), io::inverse_result_to_json(o.result));
  spdlog::info("{} after {} iterations, final loss {:.6g}", to_string(o.result.terminated_by),
               o.result.iterations_used, o.result.final_loss());
  return kExitOk;
}

// ---- evaluate ----

struct EvaluateArgs {
  std::string observations;
  std::string dynamics;
  std::string params;
};

int run_evaluate(const Globals& g, const EvaluateArgs& a) {
  const auto cfg = load_config(g);
  const auto obs = io::observations_from_json(io::read_json(a.observations));
  const auto stacked = inverse_dynamics(obs, a.dynamics, obs.gamma);
  const auto pj = io::read_json(a.params);
  AffineRewardParams params{io::vector_from_json(pj.at("b"), "b"), io::matrix_from_json(pj.at("C"), "C")};
  const auto sol = solve_forward(stacked, params);
  const auto observed = observed_policies(obs.y_hat, stacked.offsets);

  io::Json j;
  j["loss"] = (sol.y - obs.y_hat).squaredNorm();
  j["kl"] = io::Json::array();
  std::vector<Vector> kl;
  for (std::size_t i = 0; i < stacked.num_players(); ++i) {
    kl.push_back(kl_divergence_per_state(sol.policies[i], observed[i]));
    j["kl"].push_back(io::to_json(kl.back()));
  }
  j["mean_kl"] = mean_of(kl);
  const fs::path out(g.out);
  io::write_json(out / "evaluation.json", j);
  bool grid = true;
  for (const auto& o : stacked.offsets) grid = grid && o.n == cfg.grid.num_cells();
  if (grid) emit_heatmap_data(kl, cfg.grid, out);
  spdlog::info("loss {:.6g}, mean KL {:.6g}", j["loss"].get<double>(), j["mean_kl"].get<double>());
  return kExitOk;
}

// ---- experiment ----

int run_experiment_cmd(const Globals& g) {
  const auto cfg = load_config(g);
  const fs::path out = cfg.output_dir.empty() ? fs::path(g.out) : fs::path(cfg.output_dir);
  const auto data = load_experiment_data(cfg);
  for (const auto mode : cfg.modes) {
    const auto summary = run_experiment(data, cfg, mode, [mode](const SeedOutcome& o) {
      if (o.ok) {
        spdlog::info("{} seed {}: {} after {} iterations, loss {:.6g}, mean KL {:.6g}", to_string(mode),
                     o.seed, to_string(o.result.terminated_by), o.result.iterations_used,
                     o.result.final_loss(), o.mean_kl);
      } else {
        spdlog::warn("{} seed {} failed: {}", to_string(mode), o.seed, o.error);
      }
    });
    write_experiment_outputs(summary, data, out);
    spdlog::info("{}: iterations {:.1f} +- {:.1f}, final loss {:.6g} +- {:.3g}", to_string(mode),
                 summary.iterations.mean, summary.iterations.std, summary.final_loss.mean,
                 summary.final_loss.std);
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Soft-Bellman equilibria of affine Markov games: forward and inverse solvers"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--config", g.config, "JSON configuration file");
  app.add_option("--out", g.out, "output directory");
  app.add_option("--log-level", g.log_level, "trace, debug, info, warn, error or off");

  SimulateArgs sim;
  auto* simulate = app.add_subcommand("simulate", "sample gridworld trajectories");
  simulate->add_option("--grid", sim.grid, "grid size WxH");
  simulate->add_option("--predators", sim.predators);
  simulate->add_option("--preys", sim.preys);
  simulate->add_option("--slip", sim.slip);
  simulate->add_option("--episodes", sim.episodes);
  simulate->add_option("--maxlen", sim.maxlen);
  simulate->add_option("--seed", sim.seed);
  simulate->add_option("--policy", sim.policy, "equilibrium or scripted")
      ->check(CLI::IsMember({"equilibrium", "scripted"}));
  simulate->add_option("--kappa", sim.kappa, "predator-prey coupling strength");
  simulate->add_flag("--no-capture-stop", sim.no_capture_stop, "run every episode to --maxlen");

  EstimateArgs est;
  auto* estimate = app.add_subcommand("estimate", "estimate observations from trajectories");
  estimate->add_option("--trajectories", est.trajectories)->required();
  estimate->add_option("--gamma", est.gamma);
  estimate->add_option("--smoothing", est.smoothing);
  estimate->add_flag("--no-rescale", est.no_rescale, "keep the truncated-horizon mass");

  ForwardArgs fwd;
  auto* forward = app.add_subcommand("forward", "solve for the equilibrium of a game");
  forward->add_option("--game", fwd.game)->required();
  forward->add_flag("--policy-csv", fwd.policy_csv, "also write per-player policy CSVs");

  InverseArgs inv;
  auto* inverse = app.add_subcommand("inverse", "fit reward parameters to observations");
  inverse->add_option("--observations", inv.observations)->required();
  inverse->add_option("--dynamics", inv.dynamics, "game file whose dynamics replace the estimates");
  inverse->add_option("--seed", inv.seed);
  inverse->add_option("--alpha0", inv.alpha0);
  inverse->add_option("--epsilon", inv.epsilon);
  inverse->add_option("--kmax", inv.kmax);
  inverse->add_option("--bset", inv.bset, "unconstrained, box:LO:HI or ball:R");
  inverse->add_option("--cset", inv.cset, "nsd, zero or masked");
  inverse->add_flag("--baseline", inv.baseline, "pin C to zero");

  EvaluateArgs ev;
  auto* evaluate = app.add_subcommand("evaluate", "loss and per-state KL of fitted parameters");
  evaluate->add_option("--observations", ev.observations)->required();
  evaluate->add_option("--params", ev.params, "JSON with b and C, e.g. an inverse result")->required();
  evaluate->add_option("--dynamics", ev.dynamics);

  auto* experiment = app.add_subcommand("experiment", "multi-seed proposed vs baseline runs");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitInvalid;
  }

  auto logger = spdlog::stderr_color_mt("softbellman");
  spdlog::set_default_logger(logger);
  spdlog::set_pattern("[%l] %v");
  const auto level = spdlog::level::from_str(g.log_level);
  if (level == spdlog::level::off && g.log_level != "off") {
    spdlog::error("unknown log level '{}'", g.log_level);
    return kExitInvalid;
  }
  spdlog::set_level(level);

  try {
    if (*simulate) return run_simulate(g, sim);
    if (*estimate) return run_estimate(g, est);
    if (*forward) return run_forward(g, fwd);
    if (*inverse) return run_inverse(g, inv);
    if (*evaluate) return run_evaluate(g, ev);
    if (*experiment) return run_experiment_cmd(g);
  } catch (const ConvergenceError& e) {
    spdlog::error("{} (best residual {:.3e})", e.what(), e.best_residual());
    return kExitNoConvergence;
  } catch (const InverseError& e) {
    spdlog::error("{}", e.what());
    return kExitNoConvergence;
  } catch (const ValidationError& e) {
    spdlog::error("{}", e.what());
    return kExitInvalid;
  } catch (const DimensionError& e) {
    spdlog::error("{}", e.what());
    return kExitInvalid;
  } catch (const DomainError& e) {
    spdlog::error("{}", e.what());
    return kExitInvalid;
  } catch (const io::Json::exception& e) {
    spdlog::error("{}", e.what());
    return kExitInvalid;
  }
  return kExitInvalid;
}
