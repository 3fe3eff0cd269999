#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "ocn/dataset.hpp"
#include "ocn/field.hpp"
#include "ocn/solver.hpp"

namespace ocn {

/// Ground-truth dynamics used to generate data and score learned fields.
struct SystemSpec {
  std::string name;
  int dim = 0;
  DriftFn drift;
  std::function<double(const Vec&)> potential;  // empty unless a gradient flow

  bool has_potential() const { return static_cast<bool>(potential); }
};

inline const SystemSpec& system_by_name(const std::string& name) {
  static const std::vector<SystemSpec> registry = [] {
    std::vector<SystemSpec> sys;

    // Gradient flow of f = x1^2 + x1 x2 + x2^2; stable node at the origin.
    sys.push_back({"linear-gf", 2,
                   [](const Vec& x) {
                     Vec d(2);
                     d << -2.0 * x(0) - x(1), -x(0) - 2.0 * x(1);
                     return d;
                   },
                   [](const Vec& x) { return x(0) * x(0) + x(0) * x(1) + x(1) * x(1); }});

    // Gradient flow of f = sin(x1) cos(x2); staggered stable/unstable/saddle nodes.
    sys.push_back({"nonlinear-gf", 2,
                   [](const Vec& x) {
                     Vec d(2);
                     d << -std::cos(x(0)) * std::cos(x(1)), std::sin(x(0)) * std::sin(x(1));
                     return d;
                   },
                   [](const Vec& x) { return std::sin(x(0)) * std::cos(x(1)); }});

    // Damped pendulum; dissipates E = x2^2/2 + 8.91 (1 - cos x1).
    sys.push_back({"pendulum", 2,
                   [](const Vec& x) {
                     Vec d(2);
                     d << x(1), -0.2 * x(1) - 8.91 * std::sin(x(0));
                     return d;
                   },
                   nullptr});

    // Lorenz with (sigma, rho, beta) = (10, 28, 8/3).
    sys.push_back({"lorenz", 3,
                   [](const Vec& x) {
                     constexpr double sigma = 10.0, rho = 28.0, beta = 8.0 / 3.0;
                     Vec d(3);
                     d << sigma * (x(1) - x(0)), x(0) * (rho - x(2)) - x(1),
                         x(0) * x(1) - beta * x(2);
                     return d;
                   },
                   nullptr});
    return sys;
  }();
  for (const SystemSpec& s : registry)
    if (s.name == name) return s;
  throw ConfigError("unknown system '" + name + "'");
}

inline Vec true_drift(const SystemSpec& sys, const Vec& x) {
  require_config(static_cast<int>(x.size()) == sys.dim, "state dimension mismatch");
  require_finite(x, "system state");
  return sys.drift(x);
}

inline double true_potential(const SystemSpec& sys, const Vec& x) {
  require_config(sys.has_potential(), "system '" + sys.name + "' is not a gradient flow");
  require_config(static_cast<int>(x.size()) == sys.dim, "state dimension mismatch");
  return sys.potential(x);
}

/// i.i.d. uniform samples over an axis-aligned box given as d x 2 (lo, hi).
inline std::vector<Vec> sample_initials(const Mat& box, int m, std::uint64_t seed) {
  require_config(m >= 1, "need at least one initial point");
  require_config(box.cols() == 2 && box.rows() >= 1, "box must be d x 2");
  for (Eigen::Index i = 0; i < box.rows(); ++i)
    require_config(box(i, 0) < box(i, 1), "degenerate sampling box");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::vector<Vec> pts(m, Vec(box.rows()));
  for (Vec& p : pts)
    for (Eigen::Index i = 0; i < box.rows(); ++i)
      p(i) = box(i, 0) + (box(i, 1) - box(i, 0)) * unif(rng);
  return pts;
}

/// Uniform samples in a closed ball, by rejection from the bounding box.
inline std::vector<Vec> sample_ball(const Vec& center, double radius, int m,
                                    std::uint64_t seed) {
  require_config(m >= 1, "need at least one initial point");
  require_config(radius > 0.0, "ball radius must be positive");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unif(-1.0, 1.0);
  std::vector<Vec> pts;
  pts.reserve(m);
  Vec u(center.size());
  while (static_cast<int>(pts.size()) < m) {
    for (Eigen::Index i = 0; i < u.size(); ++i) u(i) = unif(rng);
    if (u.squaredNorm() <= 1.0) pts.push_back(center + radius * u);
  }
  return pts;
}

/// Tolerances for ground-truth trajectory generation. Tight enough that data
/// error is negligible next to training error.
struct GenControl {
  double rtol = 1e-10;
  double atol = 1e-12;
};

/// Integrates the true system with adaptive Dopri5 and records states exactly
/// at multiples of dt.
inline Dataset generate_dataset(const SystemSpec& sys, const std::vector<Vec>& initials,
                                double T, double dt, const GenControl& gen = {},
                                std::uint64_t seed = 0) {
  require_config(dt > 0.0 && T > 0.0, "T and dt must be positive");
  const long n = std::lround(T / dt);
  require_config(n >= 1 && std::abs(n * dt - T) <= 1e-9 * std::max(1.0, T),
                 "T must be an integer multiple of dt");
  require_config(!initials.empty(), "need at least one initial point");

  Dataset ds;
  ds.dt = dt;
  ds.meta.system = sys.name;
  ds.meta.seed = seed;
  ds.meta.rtol = gen.rtol;
  ds.meta.atol = gen.atol;
  const ButcherTableau tb = ButcherTableau::dopri5();
  StepControl ctrl = StepControl::adaptive(gen.rtol, gen.atol);

  for (size_t j = 0; j < initials.size(); ++j) {
    const Vec& x0 = initials[j];
    require_config(static_cast<int>(x0.size()) == sys.dim, "initial point dimension mismatch");
    Trajectory tr;
    tr.t0 = 0.0;
    tr.states = Mat::Zero(n + 1, sys.dim);
    tr.states.row(0) = x0.transpose();
    Vec y = x0;
    for (long i = 0; i < n; ++i) {
      try {
        ForwardTape tape = integrate_forward(sys.drift, y, i * dt, (i + 1) * dt, tb, ctrl);
        y = tape.y_end;
      } catch (const NumericError& e) {
        throw NumericError("generating trajectory " + std::to_string(j) + ": " + e.what());
      }
      tr.states.row(i + 1) = y.transpose();
    }
    ds.trajectories.push_back(std::move(tr));
  }
  ds.validate();
  return ds;
}

/// Named experiment setups at the scales used throughout: data source,
/// network shape and a training solver step.
struct ExperimentPreset {
  std::string name;
  std::string system;
  int m = 1;
  double T = 0.0;
  double dt = 0.0;
  std::uint64_t seed = 42;
  std::vector<Vec> initials;  // fixed starting points, if nonempty
  Mat box;                    // else uniform box...
  Vec ball_center;            // ...or ball sampling
  double ball_radius = 0.0;
  std::vector<int> net_dims;
  FieldMode net_mode = FieldMode::Scalar;

  std::vector<Vec> make_initials() const {
    if (!initials.empty()) return initials;
    if (ball_radius > 0.0) return sample_ball(ball_center, ball_radius, m, seed);
    return sample_initials(box, m, seed);
  }
};

inline const ExperimentPreset& preset_by_name(const std::string& name) {
  static const std::vector<ExperimentPreset> presets = [] {
    std::vector<ExperimentPreset> ps;
    auto box2 = [](double ax, double bx, double ay, double by) {
      Mat b(2, 2);
      b << ax, bx, ay, by;
      return b;
    };
    auto point = [](std::initializer_list<double> xs) {
      Vec v(static_cast<Eigen::Index>(xs.size()));
      Eigen::Index i = 0;
      for (double x : xs) v(i++) = x;
      return v;
    };

    ExperimentPreset lin;
    lin.name = "linear-gf";
    lin.system = "linear-gf";
    lin.m = 8;
    lin.T = 5.0;
    lin.dt = 0.05;
    lin.box = box2(-2, 2, -2, 2);
    lin.net_dims = {2, 50, 50, 1};
    ps.push_back(lin);

    ExperimentPreset non;
    non.name = "nonlinear-gf";
    non.system = "nonlinear-gf";
    non.m = 24;
    non.T = 8.0;
    non.dt = 0.05;
    non.box = box2(-6, 6, -4, 6);
    non.net_dims = {2, 200, 200, 1};
    ps.push_back(non);

    ExperimentPreset pen;
    pen.name = "pendulum";
    pen.system = "pendulum";
    pen.m = 1;
    pen.T = 5.0;
    pen.dt = 0.05;
    pen.initials = {point({-1.0, -1.0})};
    pen.net_dims = {2, 100, 2};
    pen.net_mode = FieldMode::Vector;
    ps.push_back(pen);

    ExperimentPreset lshort;
    lshort.name = "lorenz-short";
    lshort.system = "lorenz";
    lshort.m = 1;
    lshort.T = 1.5;
    lshort.dt = 0.01;
    lshort.initials = {point({10.0, 15.0, 17.0})};
    lshort.net_dims = {3, 300, 300, 300, 3};
    lshort.net_mode = FieldMode::Vector;
    ps.push_back(lshort);

    ExperimentPreset llong = lshort;
    llong.name = "lorenz-long";
    llong.T = 20.0;
    llong.initials = {point({-8.0, 8.0, 27.0})};
    ps.push_back(llong);

    ExperimentPreset lball = lshort;
    lball.name = "lorenz-ball";
    lball.m = 3;
    lball.T = 3.0;
    lball.initials.clear();
    lball.ball_center = point({10.0, 15.0, 17.0});
    lball.ball_radius = 1.0;
    ps.push_back(lball);
    return ps;
  }();
  for (const ExperimentPreset& p : presets)
    if (p.name == name) return p;
  throw ConfigError("unknown preset '" + name +
                    "' (expected linear-gf|nonlinear-gf|pendulum|lorenz-short|lorenz-long|"
                    "lorenz-ball)");
}

}  // namespace ocn
