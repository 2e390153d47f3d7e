#pragma once

/// Classification (multi-label sigmoid BCE / focal) and regression
/// (smooth L1 + GIoU) losses, the three-subset loss assembly and analytic
/// gradients wrt logits and deltas. Unknown-FG and BG proposals receive no
/// regression supervision.

#include <cmath>
#include <span>
#include <vector>

#include "randbox/common.hpp"
#include "randbox/geometry.hpp"
#include "randbox/matching.hpp"

namespace randbox {

enum class ClsMode { kBce, kFocal };

struct LossConfig {
  double lambda_reg = 2.0;   // Known-FG regression weight
  double beta = 0.1;         // Unknown-FG + BG classification weight
  double gamma_focal = 2.0;  // focal focusing parameter
  ClsMode cls_mode = ClsMode::kBce;
  bool mean_reduction = false;  // average the unknown/bg sums over their counts
  double w_iou = 2.0;           // GIoU share of the regression term
};

/// Unweighted per-subset sums; total applies the lambda/beta weights.
struct LossBreakdown {
  double known_cls = 0.0;
  double known_reg = 0.0;
  double unknown_cls = 0.0;
  double bg_cls = 0.0;
  double total = 0.0;

  void assemble(const LossConfig& cfg) {
    total = known_cls + cfg.lambda_reg * known_reg + cfg.beta * (unknown_cls + bg_cls);
  }
};

namespace detail {

/// Value and d/dz of (1 - p_t)^gamma * (-log p_t) with p_t the probability
/// assigned to the correct binary label of this logit; gamma = 0 is plain
/// BCE. Computed in log space so saturated logits stay finite.
inline std::pair<double, double> focal_bce_term(double z, bool positive, double gamma) {
  if (!positive) {
    auto [v, d] = focal_bce_term(-z, true, gamma);
    return {v, -d};
  }
  const double log_p = -softplus(-z);    // log sigmoid(z)
  const double log_1p = -softplus(z);    // log (1 - sigmoid(z))
  const double value = std::exp(gamma * log_1p) * (-log_p);
  const double grad = gamma * std::exp(log_p + gamma * log_1p) * log_p -
                      std::exp((gamma + 1.0) * log_1p);
  return {value, grad};
}

}  // namespace detail

/// One-vs-all classification loss over all logits; the target class carries
/// label 1, every other class label 0. Optionally accumulates wt * d/dz into
/// `grad` (length n_logits).
inline double cls_loss(const double* logits, int n_logits, int target, double gamma_eff,
                       double* grad = nullptr, double wt = 1.0) {
  RB_CHECK_MSG(target >= 0 && target < n_logits, "cls_loss: target index out of range");
  double value = 0.0;
  for (int c = 0; c < n_logits; ++c) {
    const auto [v, d] = detail::focal_bce_term(logits[c], c == target, gamma_eff);
    value += v;
    if (grad) grad[c] += wt * d;
  }
  return value;
}

inline double effective_gamma(const LossConfig& cfg) {
  return cfg.cls_mode == ClsMode::kFocal ? cfg.gamma_focal : 0.0;
}

/// Smooth L1: 0.5 x^2 for |x| < 1, |x| - 0.5 otherwise; returns {value, d/dx}.
inline std::pair<double, double> smooth_l1(double x) {
  if (std::abs(x) < 1.0) return {0.5 * x * x, x};
  return {std::abs(x) - 0.5, x > 0.0 ? 1.0 : -1.0};
}

/// Everything the loss needs to see of a scene's forward pass.
struct ScenePredictions {
  std::span<const BBox> proposals;
  std::span<const double> logits;  // n x n_logits
  std::span<const double> deltas;  // n x 4
  int n = 0;
  int n_logits = 0;
};

struct LossGrads {
  std::vector<double> dlogits;  // n x n_logits
  std::vector<double> ddeltas;  // n x 4
};

namespace detail {

inline LossBreakdown loss_known_impl(const ScenePredictions& pred,
                                     const std::vector<std::pair<int, int>>& known_fg,
                                     const std::vector<GtTarget>& gts,
                                     const LossConfig& cfg, LossGrads* grads) {
  LossBreakdown out;
  const double gamma = effective_gamma(cfg);
  for (const auto& [p, g] : known_fg) {
    const double* z = pred.logits.data() + static_cast<size_t>(p) * pred.n_logits;
    double* dz = grads ? grads->dlogits.data() + static_cast<size_t>(p) * pred.n_logits
                       : nullptr;
    out.known_cls += cls_loss(z, pred.n_logits, gts[g].logit_index, gamma, dz, 1.0);

    const BBox& proposal = pred.proposals[p];
    const BoxDelta d{pred.deltas[4 * p], pred.deltas[4 * p + 1], pred.deltas[4 * p + 2],
                     pred.deltas[4 * p + 3]};
    const BoxDelta t = encode_delta(proposal, gts[g].box);
    const double diff[4] = {d.dx - t.dx, d.dy - t.dy, d.dw - t.dw, d.dh - t.dh};
    double reg = 0.0;
    double dreg[4];
    for (int k = 0; k < 4; ++k) {
      const auto [v, dv] = smooth_l1(diff[k]);
      reg += v;
      dreg[k] = dv;
    }
    // GIoU of the raw (unclipped) decoded box; differentiable everywhere the
    // clamp is inactive
    const auto raw = decode_delta_raw(proposal, d);
    const std::array<double, 4> gb{gts[g].box.cx, gts[g].box.cy, gts[g].box.w,
                                   gts[g].box.h};
    std::array<double, 4> graw{};
    const double gv = giou_value_grad(raw, gb, graw);
    reg += cfg.w_iou * (1.0 - gv);
    if (grads) {
      double* dd = grads->ddeltas.data() + static_cast<size_t>(p) * 4;
      const double wl = cfg.lambda_reg;
      dd[0] += wl * (dreg[0] - cfg.w_iou * graw[0] * proposal.w);
      dd[1] += wl * (dreg[1] - cfg.w_iou * graw[1] * proposal.h);
      const bool ws = std::abs(d.dw) < 16.0;  // exp clamp active -> zero grad
      const bool hs = std::abs(d.dh) < 16.0;
      dd[2] += wl * (dreg[2] - (ws ? cfg.w_iou * graw[2] * raw[2] : 0.0));
      dd[3] += wl * (dreg[3] - (hs ? cfg.w_iou * graw[3] * raw[3] : 0.0));
    }
    out.known_reg += reg;
  }
  return out;
}

inline LossBreakdown loss_unknown_bg_impl(const ScenePredictions& pred,
                                          const std::vector<int>& unknown_fg,
                                          const std::vector<int>& bg,
                                          const LossConfig& cfg, LossGrads* grads) {
  LossBreakdown out;
  const double gamma = effective_gamma(cfg);
  const int unknown_idx = pred.n_logits - 2;
  const int bg_idx = pred.n_logits - 1;
  const double wu =
      cfg.beta * (cfg.mean_reduction && !unknown_fg.empty() ? 1.0 / unknown_fg.size() : 1.0);
  const double wb = cfg.beta * (cfg.mean_reduction && !bg.empty() ? 1.0 / bg.size() : 1.0);
  for (int p : unknown_fg) {
    const double* z = pred.logits.data() + static_cast<size_t>(p) * pred.n_logits;
    double* dz = grads ? grads->dlogits.data() + static_cast<size_t>(p) * pred.n_logits
                       : nullptr;
    out.unknown_cls += cls_loss(z, pred.n_logits, unknown_idx, gamma, dz, wu);
  }
  for (int p : bg) {
    const double* z = pred.logits.data() + static_cast<size_t>(p) * pred.n_logits;
    double* dz = grads ? grads->dlogits.data() + static_cast<size_t>(p) * pred.n_logits
                       : nullptr;
    out.bg_cls += cls_loss(z, pred.n_logits, bg_idx, gamma, dz, wb);
  }
  if (cfg.mean_reduction) {
    if (!unknown_fg.empty()) out.unknown_cls /= unknown_fg.size();
    if (!bg.empty()) out.bg_cls /= bg.size();
  }
  return out;
}

}  // namespace detail

/// Known-FG fragment: classification plus lambda-weighted regression
/// (smooth L1 over delta components + w_iou * (1 - GIoU)).
inline LossBreakdown loss_known(const ScenePredictions& pred,
                                const std::vector<std::pair<int, int>>& known_fg,
                                const std::vector<GtTarget>& gts, const LossConfig& cfg) {
  return detail::loss_known_impl(pred, known_fg, gts, cfg, nullptr);
}

/// Unknown-FG / BG fragment: classification only, no box supervision.
inline LossBreakdown loss_unknown_bg(const ScenePredictions& pred,
                                     const std::vector<int>& unknown_fg,
                                     const std::vector<int>& bg, const LossConfig& cfg) {
  return detail::loss_unknown_bg_impl(pred, unknown_fg, bg, cfg, nullptr);
}

/// Full three-subset loss; the known-cls gradient carries weight 1, the reg
/// gradient lambda, the unknown/bg gradients beta. Gradients flow only to
/// logits and deltas; the head's backward pass maps them onto parameters.
inline LossBreakdown total_loss(const ScenePredictions& pred, const Partition& part,
                                const std::vector<GtTarget>& gts, const LossConfig& cfg,
                                LossGrads* grads = nullptr) {
  if (grads) {
    grads->dlogits.assign(static_cast<size_t>(pred.n) * pred.n_logits, 0.0);
    grads->ddeltas.assign(static_cast<size_t>(pred.n) * 4, 0.0);
  }
  LossBreakdown out = detail::loss_known_impl(pred, part.known_fg, gts, cfg, grads);
  const LossBreakdown ub =
      detail::loss_unknown_bg_impl(pred, part.unknown_fg, part.bg, cfg, grads);
  out.unknown_cls = ub.unknown_cls;
  out.bg_cls = ub.bg_cls;
  out.assemble(cfg);
  if (!std::isfinite(out.total)) throw ContractError("total_loss: non-finite loss");
  return out;
}

}  // namespace randbox
