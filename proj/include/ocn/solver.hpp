#pragma once

#include <algorithm>
#include <functional>
#include <limits>
#include <vector>

#include "ocn/common.hpp"
#include "ocn/field.hpp"
#include "ocn/tableau.hpp"

namespace ocn {

using DriftFn = std::function<Vec(const Vec&)>;

/// Step-size policy for the forward integrator.
struct StepControl {
  enum class Mode { Adaptive, Fixed };
  Mode mode = Mode::Adaptive;
  double rtol = 1e-6;
  double atol = 1e-8;
  double h = 0.0;  // fixed-step size
  double h_min = 0.0;
  double h_max = std::numeric_limits<double>::infinity();
  double safety = 0.9;
  long max_steps = 100000;

  static StepControl fixed(double step) {
    StepControl c;
    c.mode = Mode::Fixed;
    c.h = step;
    return c;
  }
  static StepControl adaptive(double rt, double at) {
    StepControl c;
    c.rtol = rt;
    c.atol = at;
    return c;
  }
};

/// One recorded forward step: start time, step size, start state, and all
/// stage states y_li. Stage derivatives are recomputable as drift(y_li).
struct TapeStep {
  double t = 0.0;
  double tau = 0.0;
  Vec y;
  std::vector<Vec> stages;
};

/// Record of a forward integration over one time segment, in step order,
/// together with the tableau that produced it. Written once by the
/// integrator, read-only afterwards.
struct ForwardTape {
  double t_begin = 0.0;
  double t_end = 0.0;
  Vec y_end;
  std::vector<TapeStep> steps;
  ButcherTableau tableau;

  int dim() const { return static_cast<int>(y_end.size()); }
  long step_count() const { return static_cast<long>(steps.size()); }
};

namespace detail {

/// One explicit RK step from y with size tau. Fills the stage states, returns
/// y_next; err_out (optional) receives the embedded error estimate.
inline Vec rk_step(const DriftFn& f, const Vec& y, double tau, const ButcherTableau& tb,
                   std::vector<Vec>& stages_out, Vec* err_out = nullptr) {
  const int s = tb.stages;
  stages_out.resize(s);
  std::vector<Vec> g(s);
  for (int i = 0; i < s; ++i) {
    Vec yi = y;
    for (int j = 0; j < i; ++j)
      if (tb.a(i, j) != 0.0) yi += (tau * tb.a(i, j)) * g[j];
    stages_out[i] = yi;
    g[i] = f(yi);
  }
  Vec ynext = y;
  for (int i = 0; i < s; ++i)
    if (tb.b(i) != 0.0) ynext += (tau * tb.b(i)) * g[i];
  if (err_out) {
    const Vec& bh = *tb.b_hat;
    Vec e = Vec::Zero(y.size());
    for (int i = 0; i < s; ++i) {
      double w = tb.b(i) - bh(i);
      if (w != 0.0) e += (tau * w) * g[i];
    }
    *err_out = e;
  }
  return ynext;
}

inline double error_norm(const Vec& e, const Vec& y0, const Vec& y1, double atol, double rtol) {
  double acc = 0.0;
  for (Eigen::Index i = 0; i < e.size(); ++i) {
    double sc = atol + rtol * std::max(std::abs(y0(i)), std::abs(y1(i)));
    acc += sq(e(i) / sc);
  }
  return std::sqrt(acc / static_cast<double>(e.size()));
}

}  // namespace detail

/// Recompute one recorded step from its stored stages; bit-identical to the
/// integrator's own update.
inline Vec replay_step(const DriftFn& f, const TapeStep& st, const ButcherTableau& tb) {
  Vec ynext = st.y;
  for (int i = 0; i < tb.stages; ++i)
    if (tb.b(i) != 0.0) ynext += (st.tau * tb.b(i)) * f(st.stages[i]);
  return ynext;
}

/// Fixed-step integration; h must divide the span length. The final step
/// absorbs roundoff so the tape lands exactly on t_b.
inline ForwardTape integrate_fixed(const DriftFn& f, const Vec& y0, double t_a, double t_b,
                                   const ButcherTableau& tb, double h) {
  require_config(t_b > t_a, "integration span must be forward in time");
  require_config(h > 0.0, "fixed step size must be positive");
  const double span = t_b - t_a;
  const long n = std::lround(span / h);
  require_config(n >= 1 && std::abs(n * h - span) <= 1e-9 * std::max(1.0, std::abs(span)),
                 "fixed step size must divide the time span");
  require_finite(y0, "initial state");

  ForwardTape tape;
  tape.tableau = tb;
  tape.t_begin = t_a;
  tape.steps.reserve(n);
  Vec y = y0;
  double t = t_a;
  for (long l = 0; l < n; ++l) {
    TapeStep st;
    st.t = t;
    st.tau = (l == n - 1) ? (t_b - t) : h;
    st.y = y;
    y = detail::rk_step(f, y, st.tau, tb, st.stages);
    if (!y.allFinite()) throw NumericError("state blew up at t=" + fmt_g17(t + st.tau));
    t = st.t + st.tau;
    tape.steps.push_back(std::move(st));
  }
  tape.t_end = t;
  tape.y_end = std::move(y);
  return tape;
}

/// Forward integration with stage recording. Adaptive mode uses the embedded
/// error estimate: err = RMS(e_i / (atol + rtol*max|y_i|)), accept iff
/// err <= 1, next step = tau * clamp(0.9 * err^(-1/5), 0.2, 5). The last step
/// is clipped to land exactly on t_b.
inline ForwardTape integrate_forward(const DriftFn& f, const Vec& y0, double t_a, double t_b,
                                     const ButcherTableau& tb, const StepControl& ctrl) {
  if (ctrl.mode == StepControl::Mode::Fixed) return integrate_fixed(f, y0, t_a, t_b, tb, ctrl.h);
  require_config(t_b > t_a, "integration span must be forward in time");
  require_config(ctrl.rtol > 0.0 && ctrl.atol > 0.0, "tolerances must be positive");
  require_config(tb.b_hat.has_value(), "adaptive stepping needs an embedded error rule");
  require_finite(y0, "initial state");

  const double span = t_b - t_a;
  const double h_floor = std::max(ctrl.h_min, 1e-14 * span);
  ForwardTape tape;
  tape.tableau = tb;
  tape.t_begin = t_a;
  Vec y = y0;
  double t = t_a;
  double h = std::min(ctrl.h_max, span);
  long attempts = 0;

  while (t < t_b) {
    if (++attempts > ctrl.max_steps)
      throw NumericError("step limit exceeded (" + std::to_string(ctrl.max_steps) + ")");
    bool clipped = false;
    if (t + h >= t_b) {
      h = t_b - t;
      clipped = true;
    }
    TapeStep st;
    st.t = t;
    st.tau = h;
    st.y = y;
    Vec err;
    Vec ynext = detail::rk_step(f, y, h, tb, st.stages, &err);
    if (!ynext.allFinite()) {
      // Blown step: retry smaller rather than giving up immediately.
      h *= 0.2;
      if (h < h_floor) throw NumericError("state blew up at t=" + fmt_g17(t));
      continue;
    }
    double en = detail::error_norm(err, y, ynext, ctrl.atol, ctrl.rtol);
    double factor =
        (en == 0.0) ? 5.0 : std::clamp(ctrl.safety * std::pow(en, -1.0 / tb.order), 0.2, 5.0);
    if (en <= 1.0) {
      y = std::move(ynext);
      t = st.t + st.tau;
      tape.steps.push_back(std::move(st));
      if (clipped) break;
      h = std::min({h * factor, ctrl.h_max, span});
    } else {
      h *= factor;
      if (h < h_floor)
        throw NumericError("step size underflow at t=" + fmt_g17(t) + " (error estimate " +
                           fmt_g17(en) + ")");
    }
  }
  tape.t_end = t;
  tape.y_end = std::move(y);
  return tape;
}

/// Result of the backward co-state sweep over one tape. p_boundary[l] is the
/// co-state at the start time of step l; p_boundary.back() = p_end.
struct AdjointResult {
  Vec p_start;
  Vec grad;
  std::vector<Vec> p_boundary;
};

/// Walks the tape in reverse with the modified backward scheme. Stage weights
/// are b~_i = b_i when b_i != 0 and b~_i = tau otherwise; stage co-states
///   p_i = p_{l+1} - (tau/b_i) * sum_j b~_j a_ji h_j   (b_i != 0)
///   p_i = -sum_j b~_j a_ji h_j                        (b_i == 0)
/// with h_i = -(d drift/dy)^T p_i, then
///   p_l = p_{l+1} - tau * sum_i b~_i h_i,
///   grad += tau * sum_i b~_i (d drift/d theta)^T p_i.
/// Because a is strictly lower triangular the stages resolve in the order
/// i = s..1. The returned gradient is the exact derivative of the discrete
/// forward map contracted with p_end.
inline AdjointResult adjoint_sweep(const ForwardTape& tape, const MlpField& field,
                                   const Vec& p_end, bool want_param_grad = true) {
  require_config(tape.dim() == field.dim(), "tape/field dimension mismatch");
  require_config(static_cast<int>(p_end.size()) == field.dim(), "co-state dimension mismatch");
  const ButcherTableau& tb = tape.tableau;
  const int s = tb.stages;

  AdjointResult res;
  if (want_param_grad) res.grad = Vec::Zero(field.param_count());
  res.p_boundary.resize(tape.steps.size() + 1);
  Vec p = p_end;
  res.p_boundary.back() = p;

  std::vector<Vec> h(s), pstage(s);
  std::vector<double> btilde(s);
  for (long l = tape.step_count() - 1; l >= 0; --l) {
    const TapeStep& st = tape.steps[l];
    const double tau = st.tau;
    for (int i = 0; i < s; ++i) btilde[i] = (tb.b(i) != 0.0) ? tb.b(i) : tau;

    for (int i = s - 1; i >= 0; --i) {
      Vec corr = Vec::Zero(p.size());
      for (int j = i + 1; j < s; ++j)
        if (tb.a(j, i) != 0.0) corr += (btilde[j] * tb.a(j, i)) * h[j];
      if (tb.b(i) != 0.0)
        pstage[i] = p - (tau / tb.b(i)) * corr;
      else
        pstage[i] = -corr;
      h[i] = -field.drift_jacobian_transpose_apply(st.stages[i], pstage[i]);
    }

    Vec pnew = p;
    for (int i = 0; i < s; ++i) pnew -= (tau * btilde[i]) * h[i];
    p = std::move(pnew);
    res.p_boundary[l] = p;

    if (want_param_grad)
      for (int i = 0; i < s; ++i)
        field.drift_param_grad_apply_add(st.stages[i], pstage[i], tau * btilde[i], res.grad);
  }
  res.p_start = p;
  return res;
}

/// delta at every step boundary (delta_boundary[0] = delta0, .back() = at
/// t_end). Columns propagate through the linearized dynamics with the same
/// tableau as the forward pass:
///   d_i = (d drift/dy)(y_li) delta_i,  delta_li = delta_l + tau sum_j a_ij d_j,
///   delta_{l+1} = delta_l + tau sum_i b_i d_i.
struct VariationalResult {
  std::vector<Mat> delta_boundary;
};

inline VariationalResult variational_sweep(const ForwardTape& tape, const MlpField& field,
                                           const Mat& delta0) {
  require_config(tape.dim() == field.dim(), "tape/field dimension mismatch");
  require_config(static_cast<int>(delta0.rows()) == field.dim(),
                 "variational state row dimension mismatch");
  const ButcherTableau& tb = tape.tableau;
  const int s = tb.stages;
  const Eigen::Index k = delta0.cols();

  VariationalResult res;
  res.delta_boundary.reserve(tape.steps.size() + 1);
  res.delta_boundary.push_back(delta0);
  Mat delta = delta0;
  std::vector<Mat> d(s);
  for (const TapeStep& st : tape.steps) {
    const double tau = st.tau;
    for (int i = 0; i < s; ++i) {
      Mat di = delta;
      for (int j = 0; j < i; ++j)
        if (tb.a(i, j) != 0.0) di += (tau * tb.a(i, j)) * d[j];
      d[i].resize(delta.rows(), k);
      for (Eigen::Index c = 0; c < k; ++c)
        d[i].col(c) = field.drift_jacobian_apply(st.stages[i], di.col(c));
    }
    for (int i = 0; i < s; ++i)
      if (tb.b(i) != 0.0) delta += (tau * tb.b(i)) * d[i];
    res.delta_boundary.push_back(delta);
  }
  return res;
}

/// Single-direction convenience wrapper around the matrix sweep.
inline std::vector<Vec> variational_sweep_vector(const ForwardTape& tape, const MlpField& field,
                                                 const Vec& delta0) {
  VariationalResult r = variational_sweep(tape, field, Mat(delta0));
  std::vector<Vec> out;
  out.reserve(r.delta_boundary.size());
  for (const Mat& m : r.delta_boundary) out.push_back(m.col(0));
  return out;
}

}  // namespace ocn
