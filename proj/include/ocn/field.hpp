#pragma once

#include <cstdint>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "ocn/common.hpp"

namespace ocn {

/// How the network output is turned into a drift field.
/// Scalar: G: R^d -> R is a potential, drift(y) = -grad_y G(y).
/// Vector: G: R^d -> R^d is the drift itself, drift(y) = G(y).
enum class FieldMode { Scalar, Vector };

inline std::string to_string(FieldMode m) {
  return m == FieldMode::Scalar ? "scalar" : "vector";
}

inline FieldMode field_mode_from_string(const std::string& s) {
  if (s == "scalar") return FieldMode::Scalar;
  if (s == "vector") return FieldMode::Vector;
  throw ConfigError("unknown field mode '" + s + "' (expected scalar|vector)");
}

/// Fully connected network with tanh hidden activations and a linear output
/// layer, plus the exact first- and second-order derivative operators the
/// adjoint sweep needs. Weight matrix j has shape N_j x N_{j+1}; a layer maps
/// a -> W^T a + b. Parameters flatten layer by layer, each weight matrix in
/// row-major order followed by its bias.
///
/// Evaluation methods are const and allocate their own scratch; a single
/// instance may be evaluated from many threads at once. Mutation (set_params,
/// bias edits) needs exclusive access.
class MlpField {
 public:
  MlpField(std::vector<int> layer_dims, FieldMode mode)
      : dims_(std::move(layer_dims)), mode_(mode) {
    validate_dims(dims_, mode_);
    const int L = layer_count();
    weights_.reserve(L);
    biases_.reserve(L);
    for (int j = 0; j < L; ++j) {
      weights_.push_back(Mat::Zero(dims_[j], dims_[j + 1]));
      biases_.push_back(Vec::Zero(dims_[j + 1]));
    }
  }

  /// Weights ~ Gaussian(0, 1/N_j) per layer (std = 1/sqrt(fan-in)), biases zero.
  static MlpField init(const std::vector<int>& layer_dims, FieldMode mode, std::uint64_t seed) {
    MlpField f(layer_dims, mode);
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    for (int j = 0; j < f.layer_count(); ++j) {
      const double std_dev = 1.0 / std::sqrt(static_cast<double>(f.dims_[j]));
      Mat& w = f.weights_[j];
      for (Eigen::Index r = 0; r < w.rows(); ++r)
        for (Eigen::Index c = 0; c < w.cols(); ++c) w(r, c) = std_dev * gauss(rng);
    }
    return f;
  }

  int dim() const { return dims_.front(); }
  int out_dim() const { return dims_.back(); }
  int layer_count() const { return static_cast<int>(dims_.size()) - 1; }
  const std::vector<int>& layer_dims() const { return dims_; }
  FieldMode mode() const { return mode_; }

  int param_count() const {
    int n = 0;
    for (int j = 0; j < layer_count(); ++j) n += (dims_[j] + 1) * dims_[j + 1];
    return n;
  }

  const Mat& weight(int j) const { return weights_[j]; }
  const Vec& bias(int j) const { return biases_[j]; }
  Mat& weight(int j) { return weights_[j]; }
  Vec& bias(int j) { return biases_[j]; }

  /// G(y): the scalar potential value. Scalar mode only.
  double potential(const Vec& y) const {
    if (mode_ != FieldMode::Scalar)
      throw ConfigError("potential() requires scalar-potential mode");
    check_input(y);
    Trace tr = forward(y);
    return tr.act.back()(0);
  }

  /// The learned vector field: -grad_y G in scalar mode, G itself in vector mode.
  Vec drift(const Vec& y) const {
    check_input(y);
    Trace tr = forward(y);
    if (mode_ == FieldMode::Vector) return tr.act.back();
    Vec seed = Vec::Ones(1);
    return -reverse_input_grad(tr, seed);
  }

  /// (d drift/dy)^T v. Scalar mode: -(hessian of G) v, exact.
  Vec drift_jacobian_transpose_apply(const Vec& y, const Vec& v) const {
    check_input(y);
    check_input(v);
    Trace tr = forward(y);
    if (mode_ == FieldMode::Vector) return reverse_input_grad(tr, v);
    return -hessian_apply(tr, v);
  }

  /// (d drift/dy) v, the forward-mode directional derivative. Coincides with
  /// the transpose form in scalar mode (symmetric Hessian); in vector mode it
  /// is the plain Jacobian-vector product the variational sweep needs.
  Vec drift_jacobian_apply(const Vec& y, const Vec& v) const {
    check_input(y);
    check_input(v);
    Trace tr = forward(y);
    if (mode_ == FieldMode::Vector) {
      TangentTrace tt = tangent(tr, v);
      return tt.t.back();
    }
    return -hessian_apply(tr, v);
  }

  /// accum += scale * (d drift/d theta)^T v, flat parameter order.
  void drift_param_grad_apply_add(const Vec& y, const Vec& v, double scale, Vec& accum) const {
    check_input(y);
    check_input(v);
    if (accum.size() != param_count())
      throw ConfigError("param-grad accumulator length mismatch");
    Trace tr = forward(y);
    if (mode_ == FieldMode::Vector) {
      param_vjp_add(tr, v, scale, accum);
    } else {
      mixed_grad_add(tr, v, -scale, accum);
    }
  }

  /// (d drift/d theta)^T v as a fresh flat vector of length N.
  Vec drift_param_grad_apply(const Vec& y, const Vec& v) const {
    Vec g = Vec::Zero(param_count());
    drift_param_grad_apply_add(y, v, 1.0, g);
    return g;
  }

  /// Flatten all parameters (layer-major, weights row-major then bias).
  Vec params() const {
    Vec p(param_count());
    Eigen::Index k = 0;
    for (int j = 0; j < layer_count(); ++j) {
      const Mat& w = weights_[j];
      for (Eigen::Index r = 0; r < w.rows(); ++r)
        for (Eigen::Index c = 0; c < w.cols(); ++c) p(k++) = w(r, c);
      for (Eigen::Index i = 0; i < biases_[j].size(); ++i) p(k++) = biases_[j](i);
    }
    return p;
  }

  void set_params(const Vec& p) {
    if (p.size() != param_count())
      throw ConfigError("parameter vector length " + std::to_string(p.size()) +
                        " != expected " + std::to_string(param_count()));
    Eigen::Index k = 0;
    for (int j = 0; j < layer_count(); ++j) {
      Mat& w = weights_[j];
      for (Eigen::Index r = 0; r < w.rows(); ++r)
        for (Eigen::Index c = 0; c < w.cols(); ++c) w(r, c) = p(k++);
      for (Eigen::Index i = 0; i < biases_[j].size(); ++i) biases_[j](i) = p(k++);
    }
  }

  /// Closure adapter for solver routines.
  std::function<Vec(const Vec&)> drift_fn() const {
    return [this](const Vec& y) { return drift(y); };
  }

  /// Checkpoint: {"layer_dims": [...], "mode": "scalar"|"vector", "params": [...]},
  /// numbers written with 17 significant digits for exact round trip.
  void save_json(const std::string& path) const {
    std::ofstream os(path);
    if (!os) throw ConfigError("cannot open checkpoint for writing: " + path);
    os << "{\n  \"layer_dims\": [";
    for (size_t i = 0; i < dims_.size(); ++i) os << (i ? ", " : "") << dims_[i];
    os << "],\n  \"mode\": \"" << to_string(mode_) << "\",\n  \"params\": [";
    const Vec p = params();
    for (Eigen::Index i = 0; i < p.size(); ++i) {
      if (i) os << ",";
      os << (i % 4 == 0 ? "\n    " : " ") << fmt_g17(p(i));
    }
    os << "\n  ]\n}\n";
    if (!os) throw ConfigError("failed writing checkpoint: " + path);
  }

  static MlpField load_json(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot open checkpoint: " + path);
    nlohmann::json doc;
    try {
      is >> doc;
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("malformed checkpoint JSON (" + path + "): " + e.what());
    }
    for (const auto& [key, _] : doc.items())
      if (key != "layer_dims" && key != "mode" && key != "params")
        throw ConfigError("unknown checkpoint key '" + key + "'");
    if (!doc.contains("layer_dims") || !doc.contains("mode") || !doc.contains("params"))
      throw ConfigError("checkpoint missing layer_dims/mode/params");
    std::vector<int> dims = doc["layer_dims"].get<std::vector<int>>();
    MlpField f(dims, field_mode_from_string(doc["mode"].get<std::string>()));
    std::vector<double> vals = doc["params"].get<std::vector<double>>();
    if (static_cast<int>(vals.size()) != f.param_count())
      throw ConfigError("checkpoint params length " + std::to_string(vals.size()) +
                        " != expected " + std::to_string(f.param_count()));
    f.set_params(Eigen::Map<const Vec>(vals.data(), vals.size()));
    return f;
  }

 private:
  // Forward pass record: act[0] = y, act[L] = output; sp[j] = sigma'(z_j) for
  // hidden layers (1 - act[j+1]^2 with tanh).
  struct Trace {
    std::vector<Vec> act;
    std::vector<Vec> sp;
  };
  // Tangent of a forward pass under an input direction: t[j] pairs with
  // act[j], tz[j] is the tangent of the pre-activation z_j.
  struct TangentTrace {
    std::vector<Vec> t;
    std::vector<Vec> tz;
  };

  static void validate_dims(const std::vector<int>& dims, FieldMode mode) {
    require_config(dims.size() >= 2, "layer_dims needs at least input and output layers");
    for (int d : dims) require_config(d > 0, "layer widths must be positive");
    if (mode == FieldMode::Scalar)
      require_config(dims.back() == 1, "scalar-potential mode requires output width 1");
    else
      require_config(dims.back() == dims.front(),
                     "vector-field mode requires output width d");
  }

  void check_input(const Vec& y) const {
    if (y.size() != dim())
      throw ConfigError("state length " + std::to_string(y.size()) +
                        " != field dimension " + std::to_string(dim()));
    require_finite(y, "field input");
  }

  Trace forward(const Vec& y) const {
    const int L = layer_count();
    Trace tr;
    tr.act.resize(L + 1);
    tr.sp.resize(L > 0 ? L - 1 : 0);
    tr.act[0] = y;
    for (int j = 0; j < L; ++j) {
      Vec z = weights_[j].transpose() * tr.act[j] + biases_[j];
      if (j < L - 1) {
        tr.act[j + 1] = z.array().tanh();
        tr.sp[j] = 1.0 - tr.act[j + 1].array().square();
      } else {
        tr.act[j + 1] = std::move(z);
      }
    }
    return tr;
  }

  // Reverse pass: returns (d out / d y)^T seed.
  Vec reverse_input_grad(const Trace& tr, const Vec& seed) const {
    const int L = layer_count();
    Vec u = seed;
    for (int j = L - 1; j >= 0; --j) {
      Vec w = (j == L - 1) ? u : Vec(tr.sp[j].cwiseProduct(u));
      u = weights_[j] * w;
    }
    return u;
  }

  TangentTrace tangent(const Trace& tr, const Vec& v) const {
    const int L = layer_count();
    TangentTrace tt;
    tt.t.resize(L + 1);
    tt.tz.resize(L);
    tt.t[0] = v;
    for (int j = 0; j < L; ++j) {
      tt.tz[j] = weights_[j].transpose() * tt.t[j];
      tt.t[j + 1] = (j < L - 1) ? Vec(tr.sp[j].cwiseProduct(tt.tz[j])) : tt.tz[j];
    }
    return tt;
  }

  // Scalar mode: (hessian of G) v by forward-over-reverse.
  Vec hessian_apply(const Trace& tr, const Vec& v) const {
    const int L = layer_count();
    TangentTrace tt = tangent(tr, v);
    Vec u = Vec::Ones(1);
    Vec du = Vec::Zero(1);
    for (int j = L - 1; j >= 0; --j) {
      Vec w, dw;
      if (j == L - 1) {
        w = u;
        dw = du;
      } else {
        w = tr.sp[j].cwiseProduct(u);
        dw = tr.sp[j].cwiseProduct(du) -
             2.0 * tr.act[j + 1].cwiseProduct(tt.t[j + 1]).cwiseProduct(u);
      }
      u = weights_[j] * w;
      du = weights_[j] * dw;
    }
    return du;
  }

  // Vector mode: accum += scale * (d G / d theta)^T seed.
  void param_vjp_add(const Trace& tr, const Vec& seed, double scale, Vec& accum) const {
    const int L = layer_count();
    std::vector<Eigen::Index> offs = layer_offsets();
    Vec u = seed;
    for (int j = L - 1; j >= 0; --j) {
      Vec w = (j == L - 1) ? u : Vec(tr.sp[j].cwiseProduct(u));
      add_layer_grad(accum, offs[j], tr.act[j], w, scale);
      u = weights_[j] * w;
    }
  }

  // Scalar mode: accum += scale * d/d theta <grad_y G(y), v>. The quantity
  // differentiated is the tangent output of the forward pass under input
  // tangent v, so the reverse pass runs over both the primal and tangent
  // computation.
  void mixed_grad_add(const Trace& tr, const Vec& v, double scale, Vec& accum) const {
    const int L = layer_count();
    TangentTrace tt = tangent(tr, v);
    std::vector<Eigen::Index> offs = layer_offsets();
    Vec abar = Vec::Zero(1);
    Vec tbar = Vec::Ones(1);
    for (int j = L - 1; j >= 0; --j) {
      Vec zbar, zetabar;
      if (j == L - 1) {
        zbar = abar;
        zetabar = tbar;
      } else {
        zbar = tr.sp[j].cwiseProduct(abar) -
               2.0 * tr.act[j + 1].cwiseProduct(tr.sp[j])
                         .cwiseProduct(tt.tz[j])
                         .cwiseProduct(tbar);
        zetabar = tr.sp[j].cwiseProduct(tbar);
      }
      add_layer_grad(accum, offs[j], tr.act[j], zbar, scale);
      add_layer_weight_grad(accum, offs[j], tt.t[j], zetabar, scale);
      abar = weights_[j] * zbar;
      tbar = weights_[j] * zetabar;
    }
  }

  // Flat offsets of each layer's (weights, bias) block.
  std::vector<Eigen::Index> layer_offsets() const {
    std::vector<Eigen::Index> offs(layer_count());
    Eigen::Index k = 0;
    for (int j = 0; j < layer_count(); ++j) {
      offs[j] = k;
      k += static_cast<Eigen::Index>(dims_[j] + 1) * dims_[j + 1];
    }
    return offs;
  }

  // accum[W_j block] += scale * in * out^T (row-major); accum[b_j] += scale * out.
  void add_layer_grad(Vec& accum, Eigen::Index off, const Vec& in, const Vec& out,
                      double scale) const {
    add_layer_weight_grad(accum, off, in, out, scale);
    const Eigen::Index nb = out.size();
    accum.segment(off + in.size() * nb, nb) += scale * out;
  }

  void add_layer_weight_grad(Vec& accum, Eigen::Index off, const Vec& in, const Vec& out,
                             double scale) const {
    const Eigen::Index ni = in.size(), no = out.size();
    for (Eigen::Index r = 0; r < ni; ++r)
      accum.segment(off + r * no, no) += (scale * in(r)) * out;
  }

  std::vector<int> dims_;
  FieldMode mode_;
  std::vector<Mat> weights_;
  std::vector<Vec> biases_;
};

}  // namespace ocn
