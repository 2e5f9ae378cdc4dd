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

// File formats: game and observation JSON, trajectory JSON lines, solver
// outputs and CSV tables. Indices in files are 1-based.

#pragma once

#include <charconv>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "softbellman/errors.hpp"
#include "softbellman/forward.hpp"
#include "softbellman/game_model.hpp"
#include "softbellman/inverse.hpp"
#include "softbellman/trajectories.hpp"

namespace softbellman::io {

using Json = nlohmann::json;

/// Shortest decimal string that parses back to exactly `x`.
inline std::string format_number(double x) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), x);
  return std::string(buf, res.ptr);
}

inline Json to_json(const Vector& v) {
  Json out = Json::array();
  for (Index k = 0; k < v.size(); ++k) out.push_back(v[k]);
  return out;
}

inline Json to_json(const Matrix& m) {
  Json out = Json::array();
  for (Index i = 0; i < m.rows(); ++i) {
    Json row = Json::array();
    for (Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    out.push_back(std::move(row));
  }
  return out;
}

inline Vector vector_from_json(const Json& j, const std::string& what) {
  if (!j.is_array()) throw ValidationError(what + ": expected an array");
  Vector out(static_cast<Index>(j.size()));
  for (std::size_t k = 0; k < j.size(); ++k) {
    if (!j[k].is_number()) throw ValidationError(what + ": expected numbers");
    out[static_cast<Index>(k)] = j[k].get<double>();
  }
  return out;
}

inline Matrix matrix_from_json(const Json& j, const std::string& what) {
  if (!j.is_array()) throw ValidationError(what + ": expected an array of rows");
  const Index rows = static_cast<Index>(j.size());
  const Index cols = rows ? static_cast<Index>(j[0].size()) : 0;
  Matrix out(rows, cols);
  for (Index i = 0; i < rows; ++i) {
    const Vector row = vector_from_json(j[i], what);
    if (row.size() != cols) throw ValidationError(what + ": ragged rows");
    out.row(i) = row.transpose();
  }
  return out;
}

inline Json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open " + path.string());
  try {
    return Json::parse(in);
  } catch (const Json::parse_error& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot write " + path.string());
  out << text;
}

inline void write_json(const std::filesystem::path& path, const Json& j) {
  write_text(path, j.dump(2) + "\n");
}

template <class F>
Json field(const Json& j, const char* key, F&& convert) {
  if (!j.contains(key)) throw ValidationError(std::string("missing field '") + key + "'");
  return convert(j.at(key));
}

// ---- game ----

inline Json game_to_json(const AffineGame& game) {
  Json j;
  j["gamma"] = game.gamma;
  j["players"] = Json::array();
  for (const auto& p : game.players) {
    Json pj;
    pj["n"] = p.n;
    pj["m"] = p.m;
    pj["q"] = to_json(p.q);
    Json T = Json::array();
    for (Index s = 0; s < p.n; ++s) {
      Json rows = Json::array();
      for (Index a = 0; a < p.m; ++a) rows.push_back(to_json(Vector(p.T.row(s * p.m + a).transpose())));
      T.push_back(std::move(rows));
    }
    pj["T"] = std::move(T);
    j["players"].push_back(std::move(pj));
  }
  j["b"] = to_json(game.params.b);
  j["C"] = to_json(game.params.C);
  return j;
}

/// Parses and validates (shapes, stochasticity) a game document.
inline AffineGame game_from_json(const Json& j) {
  AffineGame game;
  try {
    game.gamma = j.at("gamma").get<double>();
    for (const auto& pj : j.at("players")) {
      PlayerMdp p;
      p.n = pj.at("n").get<Index>();
      p.m = pj.at("m").get<Index>();
      if (p.n <= 0 || p.m <= 0) throw ValidationError("player n and m must be positive");
      p.q = vector_from_json(pj.at("q"), "q");
      const auto& T = pj.at("T");
      if (!T.is_array() || static_cast<Index>(T.size()) != p.n) {
        throw ValidationError("T must have n state blocks");
      }
      p.T.resize(p.n * p.m, p.n);
      for (Index s = 0; s < p.n; ++s) {
        if (static_cast<Index>(T[s].size()) != p.m) throw ValidationError("T[s] must have m rows");
        for (Index a = 0; a < p.m; ++a) {
          const Vector row = vector_from_json(T[s][a], "T");
          if (row.size() != p.n) throw ValidationError("T[s][a] must have n entries");
          p.T.row(s * p.m + a) = row.transpose();
        }
      }
      game.players.push_back(std::move(p));
    }
    game.params.b = vector_from_json(j.at("b"), "b");
    game.params.C = matrix_from_json(j.at("C"), "C");
  } catch (const Json::exception& e) {
    throw ValidationError(std::string("game file: ") + e.what());
  }
  const auto report = validate_game(game, Hypotheses::kNone);
  if (!report.ok()) throw ValidationError("game file: " + report.to_string());
  return game;
}

inline AffineGame read_game(const std::filesystem::path& path) {
  return game_from_json(read_json(path));
}

// ---- trajectories ----

/// Line 1 is {"dims": [[n, m], ...]}; each further line is one trajectory
/// {"players": [[[s, a], ...], ...]}.
inline std::string trajectories_to_jsonl(const std::vector<Trajectory>& trajectories,
                                         const std::vector<PlayerDims>& dims) {
  std::ostringstream os;
  Json header;
  header["dims"] = Json::array();
  for (const auto& d : dims) header["dims"].push_back({d.n, d.m});
  os << header.dump() << "\n";
  for (const auto& t : trajectories) {
    Json j;
    j["players"] = Json::array();
    for (const auto& seq : t.players) {
      Json pj = Json::array();
      for (const auto& sa : seq) pj.push_back({sa.state + 1, sa.action + 1});
      j["players"].push_back(std::move(pj));
    }
    os << j.dump() << "\n";
  }
  return os.str();
}

struct TrajectoryFile {
  std::vector<PlayerDims> dims;
  std::vector<Trajectory> trajectories;
};

inline TrajectoryFile trajectories_from_jsonl(std::istream& in) {
  TrajectoryFile out;
  std::string line;
  int lineno = 0;
  try {
    if (!std::getline(in, line)) throw ValidationError("trajectory file is empty");
    ++lineno;
    const Json header = Json::parse(line);
    for (const auto& d : header.at("dims")) {
      out.dims.push_back({d.at(0).get<Index>(), d.at(1).get<Index>()});
    }
    while (std::getline(in, line)) {
      ++lineno;
      if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
      const Json j = Json::parse(line);
      Trajectory t;
      for (const auto& pj : j.at("players")) {
        std::vector<StateAction> seq;
        for (const auto& sa : pj) seq.push_back({sa.at(0).get<int>() - 1, sa.at(1).get<int>() - 1});
        t.players.push_back(std::move(seq));
      }
      out.trajectories.push_back(std::move(t));
    }
  } catch (const Json::exception& e) {
    throw ValidationError("trajectory file line " + std::to_string(lineno) + ": " + e.what());
  }
  check_trajectories(out.trajectories, out.dims);
  return out;
}

inline TrajectoryFile read_trajectories(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open " + path.string());
  return trajectories_from_jsonl(in);
}

// ---- observations ----

inline Json observations_to_json(const ObservationSet& obs) {
  Json j;
  j["dims"] = Json::array();
  for (const auto& d : obs.dims) j["dims"].push_back({d.n, d.m});
  j["gamma"] = obs.gamma;
  j["y_hat"] = to_json(obs.y_hat);
  j["q_hat"] = to_json(obs.q_hat);
  j["T_hat"] = Json::array();
  for (const auto& T : obs.T_hat) j["T_hat"].push_back(to_json(T));
  j["trajectory_count"] = obs.trajectory_count;
  j["capped_length"] = obs.capped_length;
  j["rescaled"] = obs.rescaled;
  return j;
}

inline ObservationSet observations_from_json(const Json& j) {
  ObservationSet obs;
  try {
    for (const auto& d : j.at("dims")) obs.dims.push_back({d.at(0).get<Index>(), d.at(1).get<Index>()});
    obs.gamma = j.at("gamma").get<double>();
    obs.y_hat = vector_from_json(j.at("y_hat"), "y_hat");
    obs.q_hat = vector_from_json(j.at("q_hat"), "q_hat");
    for (const auto& T : j.at("T_hat")) obs.T_hat.push_back(matrix_from_json(T, "T_hat"));
    obs.trajectory_count = j.value("trajectory_count", 0);
    obs.capped_length = j.value("capped_length", 0);
    obs.rescaled = j.value("rescaled", true);
  } catch (const Json::exception& e) {
    throw ValidationError(std::string("observation file: ") + e.what());
  }
  Index l = 0, r = 0;
  for (const auto& d : obs.dims) {
    l += d.n * d.m;
    r += d.n;
  }
  if (obs.y_hat.size() != l || obs.q_hat.size() != r || obs.T_hat.size() != obs.dims.size()) {
    throw DimensionError("observation file: sizes do not match dims");
  }
  return obs;
}

// ---- solver outputs ----

inline Json solution_to_json(const EquilibriumSolution& sol) {
  Json j;
  j["y"] = to_json(sol.y);
  j["v"] = to_json(sol.v);
  j["policies"] = Json::array();
  for (const auto& pi : sol.policies) j["policies"].push_back(to_json(pi));
  j["residual_norm"] = sol.residual_norm;
  j["iterations"] = sol.iterations;
  return j;
}

inline Json inverse_result_to_json(const InverseResult& res) {
  Json j;
  j["b"] = to_json(res.b);
  j["C"] = to_json(res.C);
  j["iterations_used"] = res.iterations_used;
  j["terminated_by"] = to_string(res.terminated_by);
  j["final_loss"] = res.final_loss();
  j["c_gradient_evaluations"] = res.c_gradient_evaluations;
  j["history"] = Json::array();
  for (const auto& h : res.history) {
    j["history"].push_back(
        {{"iteration", h.iteration}, {"loss", h.loss}, {"step", h.step}, {"accepted", h.accepted}});
  }
  return j;
}

// ---- CSV ----

inline std::string matrix_to_csv(const Matrix& m) {
  std::ostringstream os;
  for (Index i = 0; i < m.rows(); ++i) {
    for (Index j = 0; j < m.cols(); ++j) os << (j ? "," : "") << format_number(m(i, j));
    os << "\n";
  }
  return os.str();
}

/// `iter,loss`, one row per accepted iterate.
inline std::string loss_curve_csv(const InverseResult& res) {
  std::ostringstream os;
  os << "iter,loss\n";
  for (const auto& h : res.history) {
    if (h.accepted) os << h.iteration << "," << format_number(h.loss) << "\n";
  }
  return os.str();
}

inline Matrix read_csv_matrix(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open " + path.string());
  std::vector<std::vector<double>> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<double> row;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      double x = 0.0;
      auto res = std::from_chars(cell.data(), cell.data() + cell.size(), x);
      if (res.ec != std::errc()) throw ValidationError("bad number '" + cell + "' in " + path.string());
      row.push_back(x);
    }
    rows.push_back(std::move(row));
  }
  Matrix out(static_cast<Index>(rows.size()), rows.empty() ? 0 : static_cast<Index>(rows[0].size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (static_cast<Index>(rows[i].size()) != out.cols()) throw ValidationError("ragged CSV " + path.string());
    for (std::size_t j = 0; j < rows[i].size(); ++j) out(i, j) = rows[i][j];
  }
  return out;
}

}  // namespace softbellman::io
