#pragma once

#include <optional>
#include <string>

#include "ocn/common.hpp"

namespace ocn {

/// Explicit Runge-Kutta coefficients. `a` is strictly lower triangular,
/// `b_hat` (when present) is the embedded lower-order rule used for step
/// control, `order` the classical order of the `b` rule.
struct ButcherTableau {
  std::string name;
  int stages = 0;
  Mat a;
  Vec b;
  Vec c;
  std::optional<Vec> b_hat;
  int order = 1;

  void validate() const {
    require_config(stages >= 1 && a.rows() == stages && a.cols() == stages &&
                       b.size() == stages && c.size() == stages,
                   "tableau shape mismatch");
    for (int i = 0; i < stages; ++i)
      for (int j = i; j < stages; ++j)
        require_config(a(i, j) == 0.0, "tableau must be explicit (a strictly lower triangular)");
    require_config(std::abs(b.sum() - 1.0) <= 1e-14, "tableau weights must sum to 1");
    if (b_hat) require_config(b_hat->size() == stages, "embedded weights length mismatch");
  }

  static ButcherTableau euler() {
    ButcherTableau t;
    t.name = "euler";
    t.stages = 1;
    t.a = Mat::Zero(1, 1);
    t.b = Vec::Ones(1);
    t.c = Vec::Zero(1);
    t.order = 1;
    return t;
  }

  static ButcherTableau rk4() {
    ButcherTableau t;
    t.name = "rk4";
    t.stages = 4;
    t.a = Mat::Zero(4, 4);
    t.a(1, 0) = 0.5;
    t.a(2, 1) = 0.5;
    t.a(3, 2) = 1.0;
    t.b = Vec(4);
    t.b << 1.0 / 6, 1.0 / 3, 1.0 / 3, 1.0 / 6;
    t.c = Vec(4);
    t.c << 0.0, 0.5, 0.5, 1.0;
    t.order = 4;
    return t;
  }

  /// Dormand-Prince 5(4): s = 7, b2 = b7 = 0, first-same-as-last structure.
  static ButcherTableau dopri5() {
    ButcherTableau t;
    t.name = "dopri5";
    t.stages = 7;
    t.a = Mat::Zero(7, 7);
    t.a(1, 0) = 1.0 / 5;
    t.a(2, 0) = 3.0 / 40;
    t.a(2, 1) = 9.0 / 40;
    t.a(3, 0) = 44.0 / 45;
    t.a(3, 1) = -56.0 / 15;
    t.a(3, 2) = 32.0 / 9;
    t.a(4, 0) = 19372.0 / 6561;
    t.a(4, 1) = -25360.0 / 2187;
    t.a(4, 2) = 64448.0 / 6561;
    t.a(4, 3) = -212.0 / 729;
    t.a(5, 0) = 9017.0 / 3168;
    t.a(5, 1) = -355.0 / 33;
    t.a(5, 2) = 46732.0 / 5247;
    t.a(5, 3) = 49.0 / 176;
    t.a(5, 4) = -5103.0 / 18656;
    t.a(6, 0) = 35.0 / 384;
    t.a(6, 1) = 0.0;
    t.a(6, 2) = 500.0 / 1113;
    t.a(6, 3) = 125.0 / 192;
    t.a(6, 4) = -2187.0 / 6784;
    t.a(6, 5) = 11.0 / 84;
    t.b = Vec(7);
    t.b << 35.0 / 384, 0.0, 500.0 / 1113, 125.0 / 192, -2187.0 / 6784, 11.0 / 84, 0.0;
    t.c = Vec(7);
    t.c << 0.0, 1.0 / 5, 3.0 / 10, 4.0 / 5, 8.0 / 9, 1.0, 1.0;
    Vec bh(7);
    bh << 5179.0 / 57600, 0.0, 7571.0 / 16695, 393.0 / 640, -92097.0 / 339200,
        187.0 / 2100, 1.0 / 40;
    t.b_hat = bh;
    t.order = 5;
    return t;
  }

  static ButcherTableau by_name(const std::string& name) {
    if (name == "euler") return euler();
    if (name == "rk4") return rk4();
    if (name == "dopri5") return dopri5();
    throw ConfigError("unknown integrator '" + name + "' (expected euler|rk4|dopri5)");
  }
};

}  // namespace ocn
