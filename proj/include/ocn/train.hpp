#pragma once

#include <chrono>
#include <cstdint>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "ocn/dataset.hpp"
#include "ocn/field.hpp"
#include "ocn/solver.hpp"

namespace ocn {

enum class LossKind { Standard, Augmented };

/// Standard: sum of squared state mismatches at observation times.
/// Augmented: adds omega * sum_i || (x_i - x_{i-1})/dt - drift(y(t_{i-1})) ||^2.
struct LossSpec {
  LossKind kind = LossKind::Standard;
  double omega = 0.0;

  void validate() const {
    if (kind == LossKind::Augmented)
      require_config(omega > 0.0, "augmented loss needs omega > 0");
  }
};

enum class OptKind { Gd, Adam };

struct OptimizerSpec {
  OptKind kind = OptKind::Adam;
  double eta = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  long iters = 1000;

  void validate() const {
    require_config(eta > 0.0, "step size must be positive");
    require_config(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0,
                   "adam moment decays must lie in [0,1)");
    require_config(iters >= 0, "iteration budget must be nonnegative");
  }
};

struct TrainConfig {
  std::vector<int> net_dims;
  FieldMode net_mode = FieldMode::Scalar;
  int batch_len = 2;
  LossSpec loss;
  OptimizerSpec opt;
  ButcherTableau tableau = ButcherTableau::dopri5();
  StepControl ctrl;  // training solver; fixed-step keeps runs reproducible
  std::uint64_t seed = 0;
  double stop_threshold = -1.0;  // < 0: default 1e-8 * (residual count)
  int log_every = 0;             // 0 = silent
};

/// Splits points 0..n into overlapping segments of batch_len points stepping
/// by batch_len - 1; a shorter final segment absorbs the remainder. Returned
/// pairs are inclusive (first, last) indices; consecutive segments share an
/// endpoint.
inline std::vector<std::pair<int, int>> batch_split(int n_points, int batch_len) {
  require_config(batch_len >= 2, "batch length must be at least 2");
  require_config(n_points >= 2, "need at least two points to form a batch");
  std::vector<std::pair<int, int>> segs;
  const int n = n_points - 1;
  for (int first = 0; first < n; first += batch_len - 1)
    segs.emplace_back(first, std::min(first + batch_len - 1, n));
  return segs;
}

namespace detail {

/// Shared forward/backward pass over every (trajectory, batch). J accumulates
/// in canonical order: trajectory, then batch, then time; gradients, when
/// requested, accumulate along the same walk so loss values agree bit-for-bit
/// between the two entry points.
inline double eval_loss(const MlpField& field, const Dataset& ds, int batch_len,
                        const LossSpec& loss, const ButcherTableau& tb,
                        const StepControl& ctrl, Vec* grad_out) {
  ds.validate();
  loss.validate();
  require_config(field.dim() == ds.dim(), "field/dataset dimension mismatch");
  const auto segs = batch_split(ds.steps() + 1, batch_len);
  const double dt = ds.dt;
  const bool augmented = loss.kind == LossKind::Augmented;
  const DriftFn drift = field.drift_fn();

  if (grad_out) grad_out->setZero(field.param_count());
  double J = 0.0;

  for (int tj = 0; tj < ds.trajectory_count(); ++tj) {
    const Trajectory& tr = ds.trajectories[tj];
    for (const auto& [i0, i1] : segs) {
      // Forward across the batch, one tape per observation interval.
      std::vector<ForwardTape> tapes;
      std::vector<Vec> ystates;  // y(t_i) for i = i0..i1 along the learned flow
      tapes.reserve(i1 - i0);
      ystates.reserve(i1 - i0 + 1);
      Vec y = tr.states.row(i0).transpose();
      ystates.push_back(y);
      for (int i = i0; i < i1; ++i) {
        double ta = tr.t0 + i * dt, tb_time = tr.t0 + (i + 1) * dt;
        try {
          ForwardTape tape = integrate_forward(drift, y, ta, tb_time, tb, ctrl);
          y = tape.y_end;
          if (grad_out) tapes.push_back(std::move(tape));
        } catch (const NumericError& e) {
          throw NumericError("trajectory " + std::to_string(tj) + ", batch [" +
                             std::to_string(i0) + "," + std::to_string(i1) + "]: " + e.what());
        }
        ystates.push_back(y);
      }

      // Loss terms in time order.
      for (int i = i0 + 1; i <= i1; ++i) {
        Vec r = ystates[i - i0] - tr.states.row(i).transpose();
        J += r.squaredNorm();
        if (augmented) {
          Vec quot = (tr.states.row(i) - tr.states.row(i - 1)).transpose() / dt;
          Vec ar = quot - drift(ystates[i - 1 - i0]);
          J += loss.omega * ar.squaredNorm();
        }
      }
      if (!grad_out) continue;

      // Backward sweep with jump conditions. The terminal co-state is the
      // derivative of the last residual; interior observations add jumps, and
      // the augmented penalty contributes a direct parameter term plus a
      // co-state jump where it reads the state.
      Vec p = 2.0 * (ystates.back() - tr.states.row(i1).transpose());
      for (int i = i1 - 1; i >= i0; --i) {
        AdjointResult res = adjoint_sweep(tapes[i - i0], field, p);
        *grad_out += res.grad;
        p = std::move(res.p_start);
        if (augmented) {
          const Vec& yi = ystates[i - i0];
          Vec quot = (tr.states.row(i + 1) - tr.states.row(i)).transpose() / dt;
          Vec ar = drift(yi) - quot;  // d/d(drift) of the penalty, up to 2*omega
          field.drift_param_grad_apply_add(yi, ar, 2.0 * loss.omega, *grad_out);
          if (i > i0)
            p += 2.0 * loss.omega * field.drift_jacobian_transpose_apply(yi, ar);
        }
        if (i > i0) p += 2.0 * (ystates[i - i0] - tr.states.row(i).transpose());
      }
    }
  }
  return J;
}

}  // namespace detail

inline double loss_only(const MlpField& field, const Dataset& ds, int batch_len,
                        const LossSpec& loss, const ButcherTableau& tb,
                        const StepControl& ctrl) {
  return detail::eval_loss(field, ds, batch_len, loss, tb, ctrl, nullptr);
}

struct LossGrad {
  double J = 0.0;
  Vec grad;
};

inline LossGrad loss_and_gradient(const MlpField& field, const Dataset& ds, int batch_len,
                                  const LossSpec& loss, const ButcherTableau& tb,
                                  const StepControl& ctrl) {
  LossGrad out;
  out.grad = Vec::Zero(field.param_count());
  out.J = detail::eval_loss(field, ds, batch_len, loss, tb, ctrl, &out.grad);
  return out;
}

struct AdamState {
  Vec m, v;
  long t = 0;
};

/// GD: theta' = theta - eta * grad. Adam: bias-corrected first/second moments.
inline void optimizer_step(Vec& params, const Vec& grad, const OptimizerSpec& spec,
                           AdamState& state) {
  require_config(params.size() == grad.size(), "parameter/gradient length mismatch");
  if (!grad.allFinite()) throw NumericError("non-finite gradient in optimizer step");
  if (spec.kind == OptKind::Gd) {
    params -= spec.eta * grad;
    return;
  }
  if (state.m.size() != params.size()) {
    state.m = Vec::Zero(params.size());
    state.v = Vec::Zero(params.size());
    state.t = 0;
  }
  ++state.t;
  state.m = spec.beta1 * state.m + (1.0 - spec.beta1) * grad;
  state.v = spec.beta2 * state.v + (1.0 - spec.beta2) * grad.cwiseProduct(grad);
  const double bc1 = 1.0 - std::pow(spec.beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(spec.beta2, static_cast<double>(state.t));
  Vec denom = (state.v / bc2).cwiseSqrt() + Vec::Constant(params.size(), spec.eps);
  params -= spec.eta * (state.m / bc1).cwiseQuotient(denom);
}

struct HistoryRow {
  long iter = 0;
  double J = 0.0;
  double grad_norm = 0.0;
  double wall_ms = 0.0;
};

struct TrainResult {
  MlpField field;
  std::vector<HistoryRow> history;
};

/// Full-batch iteration: every batch of every trajectory contributes to each
/// gradient step. Stops early once J falls below the threshold. Deterministic
/// given the seed and a fixed-step solver.
inline TrainResult train_from(MlpField field, const TrainConfig& cfg, const Dataset& ds) {
  cfg.opt.validate();
  cfg.loss.validate();
  double threshold = cfg.stop_threshold;
  if (threshold < 0.0)
    threshold = 1e-8 * static_cast<double>(ds.trajectory_count()) * ds.steps();

  TrainResult out{std::move(field), {}};
  out.history.reserve(cfg.opt.iters);
  Vec params = out.field.params();
  AdamState adam;
  const auto t0 = std::chrono::steady_clock::now();

  for (long k = 0; k < cfg.opt.iters; ++k) {
    LossGrad lg;
    try {
      lg = loss_and_gradient(out.field, ds, cfg.batch_len, cfg.loss, cfg.tableau, cfg.ctrl);
    } catch (const NumericError& e) {
      throw NumericError("iteration " + std::to_string(k) + ": " + e.what());
    }
    const double wall =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0)
            .count();
    out.history.push_back({k, lg.J, lg.grad.norm(), wall});
    if (cfg.log_every > 0 && k % cfg.log_every == 0)
      std::fprintf(stderr, "iter %ld  J=%.6e  |g|=%.3e\n", k, lg.J, lg.grad.norm());
    if (lg.J <= threshold) break;
    try {
      optimizer_step(params, lg.grad, cfg.opt, adam);
    } catch (const NumericError& e) {
      throw NumericError("iteration " + std::to_string(k) + ": " + e.what());
    }
    out.field.set_params(params);
  }
  return out;
}

inline TrainResult train(const TrainConfig& cfg, const Dataset& ds) {
  return train_from(MlpField::init(cfg.net_dims, cfg.net_mode, cfg.seed), cfg, ds);
}

/// History CSV: iteration, J, grad_norm, wall_ms.
inline void save_history_csv(const std::string& path, const std::vector<HistoryRow>& rows) {
  std::ofstream os(path);
  if (!os) throw ConfigError("cannot open history CSV for writing: " + path);
  os << "iteration,J,grad_norm,wall_ms\n";
  for (const HistoryRow& r : rows)
    os << r.iter << "," << fmt_g17(r.J) << "," << fmt_g17(r.grad_norm) << ","
       << fmt_g17(r.wall_ms) << "\n";
  if (!os) throw ConfigError("failed writing history CSV: " + path);
}

}  // namespace ocn
