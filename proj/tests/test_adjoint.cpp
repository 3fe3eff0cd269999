#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>

#include "ocn/solver.hpp"

using ocn::AdjointResult;
using ocn::ButcherTableau;
using ocn::FieldMode;
using ocn::ForwardTape;
using ocn::Mat;
using ocn::MlpField;
using ocn::Vec;

namespace {

Vec randvec(int d, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> g(0.0, scale);
  Vec v(d);
  for (int i = 0; i < d; ++i) v(i) = g(rng);
  return v;
}

ForwardTape taped(const MlpField& f, const Vec& y0, double t1, double h,
                  const ButcherTableau& tb = ButcherTableau::dopri5()) {
  return ocn::integrate_fixed(f.drift_fn(), y0, 0.0, t1, tb, h);
}

}  // namespace

TEST_CASE("adjoint sweep: zero terminal co-state stays zero") {
  MlpField f = MlpField::init({2, 8, 1}, FieldMode::Scalar, 5);
  Vec y0(2);
  y0 << 0.4, -0.3;
  ForwardTape tape = taped(f, y0, 0.5, 0.1);
  AdjointResult res = ocn::adjoint_sweep(tape, f, Vec::Zero(2));
  CHECK(res.p_start.isZero(0.0));
  CHECK(res.grad.isZero(0.0));
}

TEST_CASE("adjoint sweep: linear potential has constant co-state") {
  // G = w.y + b: drift = -w everywhere, the backward system is trivial and
  // the gradient integrand is constant.
  MlpField f({2, 1}, FieldMode::Scalar);
  f.weight(0)(0, 0) = 0.7;
  f.weight(0)(1, 0) = -1.3;
  Vec y0(2);
  y0 << 1.0, 2.0;
  const double T = 0.8;
  ForwardTape tape = taped(f, y0, T, 0.1);
  Vec p_end(2);
  p_end << 2.0, -0.5;
  AdjointResult res = ocn::adjoint_sweep(tape, f, p_end);
  CHECK(res.p_start == p_end);
  for (const Vec& p : res.p_boundary) CHECK(p == p_end);
  // w-slots: -(sum of step sizes) * p_end; bias slot zero.
  CHECK(res.grad(0) == Catch::Approx(-T * p_end(0)).epsilon(1e-14));
  CHECK(res.grad(1) == Catch::Approx(-T * p_end(1)).epsilon(1e-14));
  CHECK(res.grad(2) == 0.0);
}

TEST_CASE("adjoint gradient equals finite differences of the discrete map") {
  // The sweep must differentiate the *discrete* flow map exactly, so compare
  // <y_end(theta), p_end> against central differences through the same
  // fixed-step integrator.
  struct Case {
    std::vector<int> dims;
    FieldMode mode;
    double t1;
    double h;
  };
  for (const Case& c : {Case{{2, 8, 1}, FieldMode::Scalar, 0.3, 0.3},
                        Case{{2, 8, 1}, FieldMode::Scalar, 0.5, 0.1},
                        Case{{2, 6, 2}, FieldMode::Vector, 0.5, 0.1},
                        Case{{3, 5, 1}, FieldMode::Scalar, 0.4, 0.1}}) {
    MlpField f = MlpField::init(c.dims, c.mode, 99);
    std::mt19937_64 rng(17);
    Vec y0 = randvec(c.dims.front(), rng);
    Vec p_end = randvec(c.dims.front(), rng);

    ForwardTape tape = taped(f, y0, c.t1, c.h);
    AdjointResult res = ocn::adjoint_sweep(tape, f, p_end);

    const double eps = 1e-5;
    Vec theta0 = f.params();
    MlpField probe = f;
    double worst = 0.0;
    for (Eigen::Index i = 0; i < theta0.size(); ++i) {
      Vec tp = theta0, tm = theta0;
      tp(i) += eps;
      tm(i) -= eps;
      probe.set_params(tp);
      double up = taped(probe, y0, c.t1, c.h).y_end.dot(p_end);
      probe.set_params(tm);
      double dn = taped(probe, y0, c.t1, c.h).y_end.dot(p_end);
      double fd = (up - dn) / (2.0 * eps);
      double den = std::max({std::abs(fd), std::abs(res.grad(i)), 1e-8});
      worst = std::max(worst, std::abs(fd - res.grad(i)) / den);
    }
    INFO("dims " << c.dims[0] << "-" << c.dims[1] << "-" << c.dims.back());
    CHECK(worst < 1e-7);

    // p_start must likewise be the exact pullback through the initial state.
    double worst_p = 0.0;
    for (int i = 0; i < c.dims.front(); ++i) {
      Vec yp = y0, ym = y0;
      yp(i) += eps;
      ym(i) -= eps;
      double fd = (taped(f, yp, c.t1, c.h).y_end.dot(p_end) -
                   taped(f, ym, c.t1, c.h).y_end.dot(p_end)) /
                  (2.0 * eps);
      double den = std::max({std::abs(fd), std::abs(res.p_start(i)), 1e-8});
      worst_p = std::max(worst_p, std::abs(fd - res.p_start(i)) / den);
    }
    CHECK(worst_p < 1e-7);
  }
}

TEST_CASE("variational sweep: constant-drift potential keeps delta frozen") {
  MlpField f({2, 1}, FieldMode::Scalar);
  f.weight(0)(0, 0) = 1.0;
  f.weight(0)(1, 0) = 1.0;
  Vec y0(2);
  y0 << 0.2, 0.3;
  ForwardTape tape = taped(f, y0, 1.0, 0.25);
  Mat delta0 = Mat::Identity(2, 2);
  auto res = ocn::variational_sweep(tape, f, delta0);
  for (const Mat& d : res.delta_boundary) CHECK(d == delta0);
}

TEST_CASE("variational sweep: linear dynamics share the state recursion") {
  // Vector-mode net with one linear layer: drift(y) = -lambda y. delta obeys
  // the same one-step amplification as y itself.
  const double lambda = 1.7;
  MlpField f({1, 1}, FieldMode::Vector);
  f.weight(0)(0, 0) = -lambda;
  Vec y0(1);
  y0 << 2.0;
  ForwardTape tape = taped(f, y0, 1.0, 0.2);
  auto deltas = ocn::variational_sweep_vector(tape, f, Vec(Vec::Ones(1)));
  REQUIRE(deltas.size() == static_cast<size_t>(tape.step_count() + 1));
  for (long l = 0; l < tape.step_count(); ++l) {
    double y_ratio = ((l + 1 < tape.step_count()) ? tape.steps[l + 1].y(0) : tape.y_end(0)) /
                     y0(0);
    CHECK(deltas[l + 1](0) == Catch::Approx(y_ratio).epsilon(1e-14));
  }
}

TEST_CASE("variational sweep matches finite differences of the flow map") {
  MlpField f = MlpField::init({1, 8, 1}, FieldMode::Scalar, 31);
  Vec y0(1);
  y0 << 0.6;
  const double t1 = 0.7, h = 0.1, eps = 1e-5;
  ForwardTape tape = taped(f, y0, t1, h);
  auto deltas = ocn::variational_sweep_vector(tape, f, Vec(Vec::Ones(1)));
  double fd = (taped(f, Vec(y0.array() + eps), t1, h).y_end(0) -
               taped(f, Vec(y0.array() - eps), t1, h).y_end(0)) /
              (2.0 * eps);
  CHECK(deltas.back()(0) == Catch::Approx(fd).epsilon(1e-6));
}

TEST_CASE("bilinear invariant delta^T p is conserved along the tape") {
  std::mt19937_64 rng(7);
  for (int d : {1, 2, 3}) {
    for (int rep = 0; rep < 6; ++rep) {
      const bool vector_mode = rep % 2 == 1;
      std::vector<int> dims = vector_mode ? std::vector<int>{d, 8, d} : std::vector<int>{d, 8, 1};
      MlpField f = MlpField::init(dims, vector_mode ? FieldMode::Vector : FieldMode::Scalar,
                                  1000 + 10 * d + rep);
      Vec y0 = randvec(d, rng);
      ForwardTape tape = taped(f, y0, 1.0, 0.05);  // 20 fixed dopri5 steps
      Vec p_end = randvec(d, rng);
      Vec delta0 = randvec(d, rng);

      AdjointResult adj = ocn::adjoint_sweep(tape, f, p_end, /*want_param_grad=*/false);
      auto deltas = ocn::variational_sweep_vector(tape, f, delta0);
      REQUIRE(adj.p_boundary.size() == deltas.size());

      double s0 = deltas.front().dot(adj.p_boundary.front());
      double worst = 0.0;
      for (size_t l = 0; l < deltas.size(); ++l) {
        double sl = deltas[l].dot(adj.p_boundary[l]);
        worst = std::max(worst, std::abs(sl - s0));
      }
      CHECK(worst / std::max(1.0, std::abs(s0)) <= 1e-10);
    }
  }
}

TEST_CASE("sweeps reject mismatched dimensions") {
  MlpField f2 = MlpField::init({2, 4, 1}, FieldMode::Scalar, 1);
  MlpField f3 = MlpField::init({3, 4, 1}, FieldMode::Scalar, 1);
  Vec y0(2);
  y0 << 0.1, 0.2;
  ForwardTape tape = taped(f2, y0, 0.2, 0.1);
  CHECK_THROWS_AS(ocn::adjoint_sweep(tape, f3, Vec::Zero(3)), ocn::ConfigError);
  CHECK_THROWS_AS(ocn::adjoint_sweep(tape, f2, Vec::Zero(3)), ocn::ConfigError);
  CHECK_THROWS_AS(ocn::variational_sweep(tape, f3, Mat::Identity(3, 3)), ocn::ConfigError);
}
