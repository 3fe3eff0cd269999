#pragma once

#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "ocn/common.hpp"

namespace ocn {

/// One sampled trajectory: row i holds the state at t0 + i*dt.
struct Trajectory {
  double t0 = 0.0;
  Mat states;  // (n+1) x d
};

struct DatasetMeta {
  std::string system;
  std::uint64_t seed = 0;
  std::string method = "dopri5";
  double rtol = 1e-10;
  double atol = 1e-12;
};

/// Uniformly sampled trajectories sharing d, n and dt.
struct Dataset {
  std::vector<Trajectory> trajectories;
  double dt = 0.0;
  DatasetMeta meta;

  int dim() const {
    return trajectories.empty() ? 0 : static_cast<int>(trajectories.front().states.cols());
  }
  /// Number of observation intervals per trajectory (points - 1).
  int steps() const {
    return trajectories.empty() ? 0 : static_cast<int>(trajectories.front().states.rows()) - 1;
  }
  double horizon() const { return steps() * dt; }
  int trajectory_count() const { return static_cast<int>(trajectories.size()); }

  void validate() const {
    require_config(dt > 0.0, "dataset dt must be positive");
    require_config(!trajectories.empty(), "dataset has no trajectories");
    const Eigen::Index rows = trajectories.front().states.rows();
    const Eigen::Index cols = trajectories.front().states.cols();
    require_config(rows >= 2, "each trajectory needs at least two samples");
    for (const Trajectory& tr : trajectories) {
      require_config(tr.states.rows() == rows && tr.states.cols() == cols,
                     "all trajectories must share n and d");
      if (!tr.states.allFinite()) throw NumericError("dataset contains non-finite states");
    }
  }
};

/// CSV: header `traj_id,t,x1,...,xd`, one row per sample, 17-significant-digit
/// decimals. A JSON sidecar carries dt and provenance.
inline void save_dataset_csv(const Dataset& ds, const std::string& csv_path,
                             const std::string& meta_path) {
  ds.validate();
  std::ofstream os(csv_path);
  if (!os) throw ConfigError("cannot open dataset CSV for writing: " + csv_path);
  os << "traj_id,t";
  for (int k = 1; k <= ds.dim(); ++k) os << ",x" << k;
  os << "\n";
  for (int j = 0; j < ds.trajectory_count(); ++j) {
    const Trajectory& tr = ds.trajectories[j];
    for (Eigen::Index i = 0; i < tr.states.rows(); ++i) {
      os << j << "," << fmt_g17(tr.t0 + static_cast<double>(i) * ds.dt);
      for (Eigen::Index k = 0; k < tr.states.cols(); ++k) os << "," << fmt_g17(tr.states(i, k));
      os << "\n";
    }
  }
  if (!os) throw ConfigError("failed writing dataset CSV: " + csv_path);

  std::ofstream ms(meta_path);
  if (!ms) throw ConfigError("cannot open dataset sidecar for writing: " + meta_path);
  ms << "{\n"
     << "  \"system\": \"" << ds.meta.system << "\",\n"
     << "  \"d\": " << ds.dim() << ",\n"
     << "  \"m\": " << ds.trajectory_count() << ",\n"
     << "  \"n\": " << ds.steps() << ",\n"
     << "  \"dt\": " << fmt_g17(ds.dt) << ",\n"
     << "  \"T\": " << fmt_g17(ds.horizon()) << ",\n"
     << "  \"seed\": " << ds.meta.seed << ",\n"
     << "  \"generator\": {\"method\": \"" << ds.meta.method << "\", \"rtol\": "
     << fmt_g17(ds.meta.rtol) << ", \"atol\": " << fmt_g17(ds.meta.atol) << "}\n"
     << "}\n";
  if (!ms) throw ConfigError("failed writing dataset sidecar: " + meta_path);
}

inline Dataset load_dataset_csv(const std::string& csv_path, const std::string& meta_path) {
  std::ifstream ms(meta_path);
  if (!ms) throw ConfigError("cannot open dataset sidecar: " + meta_path);
  nlohmann::json meta;
  try {
    ms >> meta;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("malformed dataset sidecar (" + meta_path + "): " + e.what());
  }
  for (const char* key : {"d", "m", "n", "dt"})
    if (!meta.contains(key)) throw ConfigError(std::string("dataset sidecar missing '") + key + "'");

  Dataset ds;
  ds.dt = meta["dt"].get<double>();
  require_config(ds.dt > 0.0, "dataset sidecar dt must be positive");
  const int d = meta["d"].get<int>();
  const int m = meta["m"].get<int>();
  const int n = meta["n"].get<int>();
  ds.meta.system = meta.value("system", "");
  ds.meta.seed = meta.value("seed", 0ull);
  if (meta.contains("generator")) {
    const auto& gen = meta["generator"];
    ds.meta.method = gen.value("method", "dopri5");
    ds.meta.rtol = gen.value("rtol", 1e-10);
    ds.meta.atol = gen.value("atol", 1e-12);
  }

  std::ifstream is(csv_path);
  if (!is) throw ConfigError("cannot open dataset CSV: " + csv_path);
  std::string line;
  if (!std::getline(is, line)) throw ConfigError("empty dataset CSV: " + csv_path);
  {
    std::string expect = "traj_id,t";
    for (int k = 1; k <= d; ++k) expect += ",x" + std::to_string(k);
    require_config(line == expect, "dataset CSV header mismatch (got '" + line + "')");
  }

  ds.trajectories.assign(m, Trajectory{0.0, Mat::Zero(n + 1, d)});
  std::vector<int> row_count(m, 0);
  long lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    auto next = [&](const char* what) {
      if (!std::getline(ss, cell, ','))
        throw ConfigError("dataset CSV line " + std::to_string(lineno) + ": missing " + what);
      return cell;
    };
    const int tid = std::stoi(next("traj_id"));
    require_config(tid >= 0 && tid < m, "dataset CSV line " + std::to_string(lineno) +
                                            ": traj_id out of range");
    const double t = std::stod(next("t"));
    const int i = row_count[tid]++;
    require_config(i <= n, "dataset CSV has too many rows for trajectory " + std::to_string(tid));
    Trajectory& tr = ds.trajectories[tid];
    if (i == 0) tr.t0 = t;
    // The lattice must be uniform: reject rows off the t0 + i*dt grid.
    require_config(std::abs(t - (tr.t0 + i * ds.dt)) <= 1e-9 * std::max(1.0, std::abs(t)),
                   "dataset CSV line " + std::to_string(lineno) +
                       ": non-uniform sample time (expected t0 + i*dt)");
    for (int k = 0; k < d; ++k) tr.states(i, k) = std::stod(next("state"));
  }
  for (int j = 0; j < m; ++j)
    require_config(row_count[j] == n + 1, "trajectory " + std::to_string(j) + " has " +
                                              std::to_string(row_count[j]) + " rows, expected " +
                                              std::to_string(n + 1));
  ds.validate();
  return ds;
}

}  // namespace ocn
