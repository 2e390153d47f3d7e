#pragma once

/// Box algebra on the unit scene: IoU/GIoU, regression-delta encoding,
/// clipping and class-wise non-maximum suppression. Boxes are stored
/// center-size, all coordinates fractions of the unit square.

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <optional>
#include <vector>

#include "randbox/common.hpp"

namespace randbox {

/// Smallest side length a clipped box may have before it is rejected.
constexpr double kMinBoxSize = 1e-6;

/// Class id carried by detections labelled "unknown".
constexpr int kUnknownClassId = -1;

struct BBox {
  double cx, cy, w, h;

  BBox(double cx_, double cy_, double w_, double h_) : cx(cx_), cy(cy_), w(w_), h(h_) {
    if (!(w > 0.0) || !(h > 0.0))
      throw ContractError("BBox: width/height must be positive");
    if (!(w <= 1.0) || !(h <= 1.0) || !(cx >= 0.0) || !(cx <= 1.0) || !(cy >= 0.0) ||
        !(cy <= 1.0))
      throw ContractError("BBox: center must lie in [0,1]^2 and sides in (0,1]");
  }

  double x1() const { return cx - 0.5 * w; }
  double x2() const { return cx + 0.5 * w; }
  double y1() const { return cy - 0.5 * h; }
  double y2() const { return cy + 0.5 * h; }
  double area() const { return w * h; }
};

inline bool same_box(const BBox& a, const BBox& b, double tol = 1e-12) {
  return std::abs(a.cx - b.cx) <= tol && std::abs(a.cy - b.cy) <= tol &&
         std::abs(a.w - b.w) <= tol && std::abs(a.h - b.h) <= tol;
}

/// Box regression target: center offsets relative to proposal size,
/// log-scale size factors.
struct BoxDelta {
  double dx = 0.0, dy = 0.0, dw = 0.0, dh = 0.0;
};

struct Detection {
  BBox box;
  int class_id;  // catalog class id, or kUnknownClassId
  double score;  // in [0,1]
};

// ---------------------------------------------------------------------------
// IoU / GIoU
// ---------------------------------------------------------------------------

inline double iou(const BBox& a, const BBox& b) {
  const double iw = std::min(a.x2(), b.x2()) - std::max(a.x1(), b.x1());
  const double ih = std::min(a.y2(), b.y2()) - std::max(a.y1(), b.y1());
  if (iw <= 0.0 || ih <= 0.0) return 0.0;
  const double inter = iw * ih;
  const double uni = a.area() + b.area() - inter;
  return inter / uni;
}

inline double giou(const BBox& a, const BBox& b) {
  const double iw = std::max(0.0, std::min(a.x2(), b.x2()) - std::max(a.x1(), b.x1()));
  const double ih = std::max(0.0, std::min(a.y2(), b.y2()) - std::max(a.y1(), b.y1()));
  const double inter = iw * ih;
  const double uni = a.area() + b.area() - inter;
  const double cw = std::max(a.x2(), b.x2()) - std::min(a.x1(), b.x1());
  const double ch = std::max(a.y2(), b.y2()) - std::min(a.y1(), b.y1());
  const double enclose = cw * ch;
  return inter / uni - (enclose - uni) / enclose;
}

/// GIoU of an unconstrained center-size box `a` (4 raw values, sides > 0)
/// against a fixed box `b`, plus its gradient wrt a = (cx, cy, w, h).
/// Used by the regression loss where the predicted box may leave the unit
/// square before clipping; GIoU is well defined for any positive-size boxes.
inline double giou_value_grad(const std::array<double, 4>& a,
                              const std::array<double, 4>& b,
                              std::array<double, 4>& grad_a) {
  const double ax1 = a[0] - 0.5 * a[2], ax2 = a[0] + 0.5 * a[2];
  const double ay1 = a[1] - 0.5 * a[3], ay2 = a[1] + 0.5 * a[3];
  const double bx1 = b[0] - 0.5 * b[2], bx2 = b[0] + 0.5 * b[2];
  const double by1 = b[1] - 0.5 * b[3], by2 = b[1] + 0.5 * b[3];

  const double iw = std::min(ax2, bx2) - std::max(ax1, bx1);
  const double ih = std::min(ay2, by2) - std::max(ay1, by1);
  const double inter = (iw > 0.0 && ih > 0.0) ? iw * ih : 0.0;
  const double area_a = (ax2 - ax1) * (ay2 - ay1);
  const double area_b = (bx2 - bx1) * (by2 - by1);
  const double uni = area_a + area_b - inter;

  const double cw = std::max(ax2, bx2) - std::min(ax1, bx1);
  const double ch = std::max(ay2, by2) - std::min(ay1, by1);
  const double enclose = cw * ch;

  // d(inter)/d(corner of a); only active when a's corner bounds the overlap
  double di_ax1 = 0.0, di_ax2 = 0.0, di_ay1 = 0.0, di_ay2 = 0.0;
  if (inter > 0.0) {
    if (ax1 > bx1) di_ax1 = -ih;
    if (ax2 < bx2) di_ax2 = ih;
    if (ay1 > by1) di_ay1 = -iw;
    if (ay2 < by2) di_ay2 = iw;
  }
  // d(area_a)/d(corner)
  const double da_ax1 = -(ay2 - ay1), da_ax2 = (ay2 - ay1);
  const double da_ay1 = -(ax2 - ax1), da_ay2 = (ax2 - ax1);
  // d(enclose)/d(corner); active when a's corner bounds the hull
  const double dc_ax1 = (ax1 < bx1) ? -ch : 0.0;
  const double dc_ax2 = (ax2 > bx2) ? ch : 0.0;
  const double dc_ay1 = (ay1 < by1) ? -cw : 0.0;
  const double dc_ay2 = (ay2 > by2) ? cw : 0.0;

  const double inv_u = 1.0 / uni;
  const double inv_c = 1.0 / enclose;
  auto corner_grad = [&](double di, double da, double dc) {
    const double du = da - di;
    // d/dx [ I/U - 1 + U/C ] = (I' U - I U')/U^2 + (U' C - U C')/C^2
    return (di * uni - inter * du) * inv_u * inv_u +
           (du * enclose - uni * dc) * inv_c * inv_c;
  };
  const double gx1 = corner_grad(di_ax1, da_ax1, dc_ax1);
  const double gx2 = corner_grad(di_ax2, da_ax2, dc_ax2);
  const double gy1 = corner_grad(di_ay1, da_ay1, dc_ay1);
  const double gy2 = corner_grad(di_ay2, da_ay2, dc_ay2);

  grad_a[0] = gx1 + gx2;
  grad_a[1] = gy1 + gy2;
  grad_a[2] = 0.5 * (gx2 - gx1);
  grad_a[3] = 0.5 * (gy2 - gy1);
  return inter * inv_u - (enclose - uni) * inv_c;
}

// ---------------------------------------------------------------------------
// Clipping
// ---------------------------------------------------------------------------

/// Shrink sides around the fixed center until all corners lie in [0,1]^2.
/// Returns nullopt if a side degenerates (<= kMinBoxSize); callers resample.
inline std::optional<BBox> clip_to_unit(double cx, double cy, double w, double h) {
  RB_CHECK_MSG(cx >= 0.0 && cx <= 1.0 && cy >= 0.0 && cy <= 1.0,
               "clip_to_unit: center outside unit square");
  const double wc = std::min({w, 2.0 * cx, 2.0 * (1.0 - cx)});
  const double hc = std::min({h, 2.0 * cy, 2.0 * (1.0 - cy)});
  if (wc <= kMinBoxSize || hc <= kMinBoxSize) return std::nullopt;
  return BBox(cx, cy, wc, hc);
}

inline std::optional<BBox> clip_to_unit(const BBox& b) {
  return clip_to_unit(b.cx, b.cy, b.w, b.h);
}

// ---------------------------------------------------------------------------
// Regression deltas
// ---------------------------------------------------------------------------

inline BoxDelta encode_delta(const BBox& proposal, const BBox& gt) {
  BoxDelta d;
  d.dx = (gt.cx - proposal.cx) / proposal.w;
  d.dy = (gt.cy - proposal.cy) / proposal.h;
  d.dw = std::log(gt.w / proposal.w);
  d.dh = std::log(gt.h / proposal.h);
  return d;
}

/// Raw decoded center-size values, no clamping. Loss code differentiates
/// through this path; inference goes through decode_delta below.
inline std::array<double, 4> decode_delta_raw(const BBox& proposal, const BoxDelta& d) {
  const double dw = std::clamp(d.dw, -16.0, 16.0);
  const double dh = std::clamp(d.dh, -16.0, 16.0);
  return {proposal.cx + d.dx * proposal.w, proposal.cy + d.dy * proposal.h,
          proposal.w * std::exp(dw), proposal.h * std::exp(dh)};
}

/// Decode and clamp into the unit square. Total: the center is clamped
/// inside [0,1], sides capped at 1 and shrunk to fit, with a kMinBoxSize
/// floor so the result is always a valid BBox.
inline BBox decode_delta(const BBox& proposal, const BoxDelta& d) {
  const auto raw = decode_delta_raw(proposal, d);
  const double half = 0.5 * kMinBoxSize;
  const double cx = std::clamp(raw[0], half, 1.0 - half);
  const double cy = std::clamp(raw[1], half, 1.0 - half);
  double w = std::clamp(raw[2], kMinBoxSize, 1.0);
  double h = std::clamp(raw[3], kMinBoxSize, 1.0);
  w = std::min({w, 2.0 * cx, 2.0 * (1.0 - cx)});
  h = std::min({h, 2.0 * cy, 2.0 * (1.0 - cy)});
  return BBox(cx, cy, w, h);
}

// ---------------------------------------------------------------------------
// Non-maximum suppression
// ---------------------------------------------------------------------------

/// Greedy class-wise NMS. Candidates are visited by (score desc, insertion
/// index asc); a candidate is dropped iff a kept detection of the same class
/// overlaps it with IoU strictly above iou_thresh. Cross-class overlaps are
/// always retained. Output order: score desc, insertion index asc.
inline std::vector<Detection> nms(const std::vector<Detection>& dets, double iou_thresh) {
  RB_CHECK_MSG(iou_thresh > 0.0 && iou_thresh < 1.0, "nms: iou_thresh must be in (0,1)");
  std::vector<int> order(dets.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    if (dets[a].score != dets[b].score) return dets[a].score > dets[b].score;
    return a < b;
  });
  // bucket by class: suppression never crosses classes
  std::vector<int> class_ids;
  std::vector<std::vector<int>> buckets;  // candidate order per class
  for (int idx : order) {
    const auto it = std::find(class_ids.begin(), class_ids.end(), dets[idx].class_id);
    size_t b;
    if (it == class_ids.end()) {
      class_ids.push_back(dets[idx].class_id);
      buckets.emplace_back();
      b = buckets.size() - 1;
    } else {
      b = static_cast<size_t>(it - class_ids.begin());
    }
    buckets[b].push_back(idx);
  }
  std::vector<int> kept_idx;
  for (const auto& bucket : buckets) {
    std::vector<int> kept;
    for (int idx : bucket) {
      bool suppressed = false;
      for (int k : kept)
        if (iou(dets[k].box, dets[idx].box) > iou_thresh) {
          suppressed = true;
          break;
        }
      if (!suppressed) kept.push_back(idx);
    }
    kept_idx.insert(kept_idx.end(), kept.begin(), kept.end());
  }
  std::sort(kept_idx.begin(), kept_idx.end(), [&](int a, int b) {
    if (dets[a].score != dets[b].score) return dets[a].score > dets[b].score;
    return a < b;
  });
  std::vector<Detection> out;
  out.reserve(kept_idx.size());
  for (int idx : kept_idx) out.push_back(dets[idx]);
  return out;
}

}  // namespace randbox
