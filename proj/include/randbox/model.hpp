#pragma once

/// Trainable head over synthesized ROI features: affine classification to
/// |K|+2 logits ([known..., "unknown", "BG"]) and affine box-delta
/// regression, with analytic gradients and a decoupled-weight-decay adaptive
/// optimizer. An optional single ReLU hidden layer is available for
/// sensitivity checks; the default head is linear.

#include <cmath>
#include <cstdint>
#include <vector>

#include "randbox/common.hpp"
#include "randbox/geometry.hpp"
#include "randbox/rng.hpp"

namespace randbox {

struct DetectorParams {
  int feature_dim = 0;
  int n_known = 0;
  int hidden_dim = 0;  // 0 = linear head
  std::vector<int> known_ids;  // catalog ids, logit order

  std::vector<double> w_hidden;  // [feature_dim x hidden_dim]
  std::vector<double> b_hidden;  // [hidden_dim]
  std::vector<double> w_cls;     // [in_dim x n_logits], row-major by input
  std::vector<double> b_cls;     // [n_logits]
  std::vector<double> w_reg;     // [in_dim x 4]
  std::vector<double> b_reg;     // [4]

  int n_logits() const { return n_known + 2; }
  int unknown_index() const { return n_known; }
  int bg_index() const { return n_known + 1; }
  int head_in_dim() const { return hidden_dim > 0 ? hidden_dim : feature_dim; }
};

/// fg_bias seeds every foreground logit (known classes + "unknown") with a
/// negative prior so one-vs-all training starts from "nothing is foreground";
/// the BG bias stays at zero.
inline DetectorParams init_detector(int feature_dim, const std::vector<int>& known_ids,
                                    int hidden_dim, std::uint64_t seed,
                                    double init_sigma = 0.01, double fg_bias = 0.0) {
  DetectorParams p;
  p.feature_dim = feature_dim;
  p.n_known = static_cast<int>(known_ids.size());
  p.hidden_dim = hidden_dim;
  p.known_ids = known_ids;
  Rng rng(derive_stream(seed, 0x9a0d));
  auto fill = [&](std::vector<double>& v, size_t n) {
    v.assign(n, 0.0);
    for (double& x : v) x = init_sigma * rng.gaussian();
  };
  if (hidden_dim > 0) {
    fill(p.w_hidden, static_cast<size_t>(feature_dim) * hidden_dim);
    p.b_hidden.assign(hidden_dim, 0.0);
  }
  const int in = p.head_in_dim();
  fill(p.w_cls, static_cast<size_t>(in) * p.n_logits());
  p.b_cls.assign(p.n_logits(), 0.0);
  for (int c = 0; c <= p.unknown_index(); ++c) p.b_cls[c] = fg_bias;
  fill(p.w_reg, static_cast<size_t>(in) * 4);
  p.b_reg.assign(4, 0.0);
  return p;
}

/// Activations for a batch of features; kept around for the backward pass.
struct ForwardBatch {
  int n = 0;
  std::vector<double> hidden;  // [n x hidden_dim] post-ReLU (empty if linear)
  std::vector<double> logits;  // [n x n_logits]
  std::vector<double> deltas;  // [n x 4]

  BoxDelta delta(int i) const {
    return BoxDelta{deltas[4 * i], deltas[4 * i + 1], deltas[4 * i + 2],
                    deltas[4 * i + 3]};
  }
};

inline ForwardBatch forward_batch(const DetectorParams& p, const double* features,
                                  int n) {
  const int d = p.feature_dim;
  const int C = p.n_logits();
  ForwardBatch out;
  out.n = n;
  out.logits.resize(static_cast<size_t>(n) * C);
  out.deltas.resize(static_cast<size_t>(n) * 4);

  const double* head_in = features;
  if (p.hidden_dim > 0) {
    const int H = p.hidden_dim;
    out.hidden.assign(static_cast<size_t>(n) * H, 0.0);
    for (int s = 0; s < n; ++s) {
      const double* x = features + static_cast<size_t>(s) * d;
      double* h = out.hidden.data() + static_cast<size_t>(s) * H;
      for (int j = 0; j < H; ++j) h[j] = p.b_hidden[j];
      for (int i = 0; i < d; ++i) {
        const double xi = x[i];
        const double* wrow = p.w_hidden.data() + static_cast<size_t>(i) * H;
        for (int j = 0; j < H; ++j) h[j] += xi * wrow[j];
      }
      for (int j = 0; j < H; ++j) h[j] = std::max(0.0, h[j]);
    }
    head_in = out.hidden.data();
  }

  const int in = p.head_in_dim();
  for (int s = 0; s < n; ++s) {
    const double* x = head_in + static_cast<size_t>(s) * in;
    double* z = out.logits.data() + static_cast<size_t>(s) * C;
    double* t = out.deltas.data() + static_cast<size_t>(s) * 4;
    for (int c = 0; c < C; ++c) z[c] = p.b_cls[c];
    for (int k = 0; k < 4; ++k) t[k] = p.b_reg[k];
    for (int i = 0; i < in; ++i) {
      const double xi = x[i];
      const double* wc = p.w_cls.data() + static_cast<size_t>(i) * C;
      for (int c = 0; c < C; ++c) z[c] += xi * wc[c];
      const double* wr = p.w_reg.data() + static_cast<size_t>(i) * 4;
      for (int k = 0; k < 4; ++k) t[k] += xi * wr[k];
    }
  }
  return out;
}

/// Single-feature forward.
inline std::pair<std::vector<double>, BoxDelta> forward(const DetectorParams& p,
                                                        const std::vector<double>& x) {
  RB_CHECK_MSG(static_cast<int>(x.size()) == p.feature_dim,
               "forward: feature dimension mismatch");
  const ForwardBatch fb = forward_batch(p, x.data(), 1);
  return {std::vector<double>(fb.logits.begin(), fb.logits.end()), fb.delta(0)};
}

struct ParamGrads {
  std::vector<double> w_hidden, b_hidden, w_cls, b_cls, w_reg, b_reg;

  static ParamGrads zeros_like(const DetectorParams& p) {
    ParamGrads g;
    g.w_hidden.assign(p.w_hidden.size(), 0.0);
    g.b_hidden.assign(p.b_hidden.size(), 0.0);
    g.w_cls.assign(p.w_cls.size(), 0.0);
    g.b_cls.assign(p.b_cls.size(), 0.0);
    g.w_reg.assign(p.w_reg.size(), 0.0);
    g.b_reg.assign(p.b_reg.size(), 0.0);
    return g;
  }
  void scale(double a) {
    for (auto* v : {&w_hidden, &b_hidden, &w_cls, &b_cls, &w_reg, &b_reg})
      for (double& x : *v) x *= a;
  }
  void add(const ParamGrads& o) {
    auto acc = [](std::vector<double>& dst, const std::vector<double>& src) {
      for (size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
    };
    acc(w_hidden, o.w_hidden);
    acc(b_hidden, o.b_hidden);
    acc(w_cls, o.w_cls);
    acc(b_cls, o.b_cls);
    acc(w_reg, o.w_reg);
    acc(b_reg, o.b_reg);
  }
};

/// Accumulate parameter gradients from per-sample output gradients.
inline void backward_batch(const DetectorParams& p, const double* features, int n,
                           const ForwardBatch& fwd, const std::vector<double>& dlogits,
                           const std::vector<double>& ddeltas, ParamGrads& grads) {
  const int d = p.feature_dim;
  const int C = p.n_logits();
  const int in = p.head_in_dim();
  const double* head_in = (p.hidden_dim > 0) ? fwd.hidden.data() : features;

  std::vector<double> dhid;
  if (p.hidden_dim > 0) dhid.assign(static_cast<size_t>(n) * p.hidden_dim, 0.0);

  for (int s = 0; s < n; ++s) {
    const double* x = head_in + static_cast<size_t>(s) * in;
    const double* dz = dlogits.data() + static_cast<size_t>(s) * C;
    const double* dt = ddeltas.data() + static_cast<size_t>(s) * 4;
    for (int c = 0; c < C; ++c) grads.b_cls[c] += dz[c];
    for (int k = 0; k < 4; ++k) grads.b_reg[k] += dt[k];
    for (int i = 0; i < in; ++i) {
      const double xi = x[i];
      if (xi != 0.0) {
        double* gwc = grads.w_cls.data() + static_cast<size_t>(i) * C;
        for (int c = 0; c < C; ++c) gwc[c] += xi * dz[c];
        double* gwr = grads.w_reg.data() + static_cast<size_t>(i) * 4;
        for (int k = 0; k < 4; ++k) gwr[k] += xi * dt[k];
      }
    }
    if (p.hidden_dim > 0) {
      const int H = p.hidden_dim;
      double* dh = dhid.data() + static_cast<size_t>(s) * H;
      for (int j = 0; j < H; ++j) {
        if (fwd.hidden[static_cast<size_t>(s) * H + j] <= 0.0) continue;  // ReLU mask
        double acc = 0.0;
        const double* wc = p.w_cls.data() + static_cast<size_t>(j) * C;
        for (int c = 0; c < C; ++c) acc += wc[c] * dz[c];
        const double* wr = p.w_reg.data() + static_cast<size_t>(j) * 4;
        for (int k = 0; k < 4; ++k) acc += wr[k] * dt[k];
        dh[j] = acc;
      }
    }
  }

  if (p.hidden_dim > 0) {
    const int H = p.hidden_dim;
    for (int s = 0; s < n; ++s) {
      const double* x = features + static_cast<size_t>(s) * d;
      const double* dh = dhid.data() + static_cast<size_t>(s) * H;
      for (int j = 0; j < H; ++j) grads.b_hidden[j] += dh[j];
      for (int i = 0; i < d; ++i) {
        const double xi = x[i];
        if (xi == 0.0) continue;
        double* gw = grads.w_hidden.data() + static_cast<size_t>(i) * H;
        for (int j = 0; j < H; ++j) gw[j] += xi * dh[j];
      }
    }
  }
}

// ---------------------------------------------------------------------------
// Optimizer
// ---------------------------------------------------------------------------

struct OptimizerConfig {
  double learning_rate = 1e-2;  // toy-scale default; see experiment config
  double weight_decay = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct OptimizerState {
  OptimizerConfig cfg;
  long step = 0;
  ParamGrads m, v;  // first/second moment accumulators, param-shaped

  static OptimizerState init(const DetectorParams& p, const OptimizerConfig& cfg) {
    OptimizerState s;
    s.cfg = cfg;
    s.m = ParamGrads::zeros_like(p);
    s.v = ParamGrads::zeros_like(p);
    return s;
  }
};

namespace detail {
inline void adamw_update(std::vector<double>& param, const std::vector<double>& grad,
                         std::vector<double>& m, std::vector<double>& v,
                         const OptimizerConfig& c, double bc1, double bc2,
                         double weight_decay) {
  for (size_t i = 0; i < param.size(); ++i) {
    const double g = grad[i];
    if (!std::isfinite(g)) throw ContractError("optimizer: non-finite gradient");
    m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g;
    v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g * g;
    const double mhat = m[i] / bc1;
    const double vhat = v[i] / bc2;
    param[i] -= c.learning_rate * (mhat / (std::sqrt(vhat) + c.eps) + weight_decay * param[i]);
  }
}
}  // namespace detail

/// Decoupled weight decay applies to weight matrices only; biases are free
/// to drift (the background/unknown logits need strongly negative biases).
inline void apply_gradients(DetectorParams& p, const ParamGrads& g, OptimizerState& s) {
  ++s.step;
  const double bc1 = 1.0 - std::pow(s.cfg.beta1, static_cast<double>(s.step));
  const double bc2 = 1.0 - std::pow(s.cfg.beta2, static_cast<double>(s.step));
  const double wd = s.cfg.weight_decay;
  detail::adamw_update(p.w_hidden, g.w_hidden, s.m.w_hidden, s.v.w_hidden, s.cfg, bc1, bc2, wd);
  detail::adamw_update(p.b_hidden, g.b_hidden, s.m.b_hidden, s.v.b_hidden, s.cfg, bc1, bc2, 0.0);
  detail::adamw_update(p.w_cls, g.w_cls, s.m.w_cls, s.v.w_cls, s.cfg, bc1, bc2, wd);
  detail::adamw_update(p.b_cls, g.b_cls, s.m.b_cls, s.v.b_cls, s.cfg, bc1, bc2, 0.0);
  detail::adamw_update(p.w_reg, g.w_reg, s.m.w_reg, s.v.w_reg, s.cfg, bc1, bc2, wd);
  detail::adamw_update(p.b_reg, g.b_reg, s.m.b_reg, s.v.b_reg, s.cfg, bc1, bc2, 0.0);
}

/// Insert n_new zero-initialized logit columns immediately before the
/// "unknown" column; existing known, unknown and BG columns are preserved.
inline DetectorParams grow_known_classes(const DetectorParams& p, int n_new,
                                         const std::vector<int>& new_ids) {
  RB_CHECK_MSG(n_new >= 0, "grow: n_new must be >= 0");
  RB_CHECK_MSG(static_cast<int>(new_ids.size()) == n_new, "grow: id count mismatch");
  if (n_new == 0) return p;
  DetectorParams q = p;
  q.n_known = p.n_known + n_new;
  q.known_ids.insert(q.known_ids.end(), new_ids.begin(), new_ids.end());

  const int in = p.head_in_dim();
  const int oldC = p.n_logits();
  const int newC = q.n_logits();
  q.w_cls.assign(static_cast<size_t>(in) * newC, 0.0);
  q.b_cls.assign(newC, 0.0);
  for (int i = 0; i < in; ++i) {
    const double* src = p.w_cls.data() + static_cast<size_t>(i) * oldC;
    double* dst = q.w_cls.data() + static_cast<size_t>(i) * newC;
    for (int c = 0; c < p.n_known; ++c) dst[c] = src[c];
    dst[q.unknown_index()] = src[p.unknown_index()];
    dst[q.bg_index()] = src[p.bg_index()];
  }
  for (int c = 0; c < p.n_known; ++c) q.b_cls[c] = p.b_cls[c];
  q.b_cls[q.unknown_index()] = p.b_cls[p.unknown_index()];
  q.b_cls[q.bg_index()] = p.b_cls[p.bg_index()];
  return q;
}

}  // namespace randbox
