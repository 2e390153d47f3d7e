#pragma once

/// Prediction partitioning: Known-FG via dynamic-k quota matching (exact
/// minimum-total-cost assignment), Unknown-FG via top-N matching score,
/// everything else BG.

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numeric>
#include <vector>

#include "randbox/common.hpp"
#include "randbox/geometry.hpp"

namespace randbox {

struct MatchConfig {
  int top_n_unknown = 10;
  double w_cls = 2.0;
  double w_l1 = 5.0;
  double w_iou = 2.0;
  double focal_gamma = 2.0;  // modulation of the classification cost term
};

struct PairCost {
  double cls_cost = 0.0;
  double l1_cost = 0.0;
  double iou_cost = 0.0;
  double total(const MatchConfig& mc) const {
    return mc.w_cls * cls_cost + mc.w_l1 * l1_cost + mc.w_iou * iou_cost;
  }
};

struct Partition {
  std::vector<std::pair<int, int>> known_fg;  // (proposal index, gt index)
  std::vector<int> unknown_fg;
  std::vector<int> bg;
};

namespace detail {

inline double softplus(double z) {
  return std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z)));
}

/// IoU / GIoU on raw center-size quadruples (sides > 0, centers anywhere).
inline double iou_raw(const std::array<double, 4>& a, const std::array<double, 4>& b) {
  const double iw = std::min(a[0] + 0.5 * a[2], b[0] + 0.5 * b[2]) -
                    std::max(a[0] - 0.5 * a[2], b[0] - 0.5 * b[2]);
  const double ih = std::min(a[1] + 0.5 * a[3], b[1] + 0.5 * b[3]) -
                    std::max(a[1] - 0.5 * a[3], b[1] - 0.5 * b[3]);
  if (iw <= 0.0 || ih <= 0.0) return 0.0;
  const double inter = iw * ih;
  return inter / (a[2] * a[3] + b[2] * b[3] - inter);
}

inline double giou_raw(const std::array<double, 4>& a, const std::array<double, 4>& b) {
  std::array<double, 4> dummy;
  return giou_value_grad(a, b, dummy);
}

}  // namespace detail

inline double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

/// Foreground score: sum of sigmoids over the known classes and the
/// "unknown" logit; the BG logit (last index) is excluded.
inline double matching_score(const double* logits, int n_logits) {
  double s = 0.0;
  for (int i = 0; i + 1 < n_logits; ++i) s += sigmoid(logits[i]);
  return s;
}

inline double matching_score(const std::vector<double>& logits) {
  return matching_score(logits.data(), static_cast<int>(logits.size()));
}

/// Pair cost of a (decoded box, logits) prediction against a known gt.
/// cls: focal-modulated negative log of the gt-class sigmoid;
/// l1: mean absolute center-size difference; iou: 1 - GIoU.
inline PairCost pair_cost(const std::array<double, 4>& decoded, const double* logits,
                          const std::array<double, 4>& gt_box, int gt_logit_index,
                          const MatchConfig& mc) {
  PairCost pc;
  const double z = logits[gt_logit_index];
  // (1-p)^gamma * (-log p), computed in log space
  pc.cls_cost = std::exp(-mc.focal_gamma * detail::softplus(z)) * detail::softplus(-z);
  pc.l1_cost = 0.25 * (std::abs(decoded[0] - gt_box[0]) + std::abs(decoded[1] - gt_box[1]) +
                       std::abs(decoded[2] - gt_box[2]) + std::abs(decoded[3] - gt_box[3]));
  pc.iou_cost = 1.0 - detail::giou_raw(decoded, gt_box);
  return pc;
}

struct GtTarget {
  BBox box;
  int logit_index;  // position of the class in the logit layout
  int class_id;     // catalog class id (bookkeeping only)
};

namespace detail {

/// Exact min-cost quota assignment by successive shortest augmenting paths.
/// The graph is contracted onto the gt nodes (m is tiny); backward arcs can
/// be negative, so Bellman-Ford supplies exact distances.
inline std::vector<int> quota_assign(const std::vector<double>& cost, int n, int m,
                                     std::vector<int> quota) {
  constexpr double kInf = std::numeric_limits<double>::infinity();
  std::vector<int> owner(n, -1);
  std::vector<int> remaining = std::move(quota);
  const int total = std::accumulate(remaining.begin(), remaining.end(), 0);

  std::vector<double> dist(m);
  std::vector<int> via_p(m), pred_g(m);

  for (int unit = 0; unit < total; ++unit) {
    for (int g = 0; g < m; ++g) {
      dist[g] = remaining[g] > 0 ? 0.0 : kInf;
      via_p[g] = -1;
      pred_g[g] = -1;
    }
    // dist[og] = cheapest cost of freeing one slot at og by rerouting an
    // assigned proposal from og to a reachable gt
    for (int pass = 0; pass < m; ++pass) {
      bool changed = false;
      for (int p = 0; p < n; ++p) {
        const int og = owner[p];
        if (og < 0) continue;
        const double back = cost[static_cast<size_t>(p) * m + og];
        for (int g = 0; g < m; ++g) {
          if (g == og || dist[g] == kInf) continue;
          const double cand = dist[g] + cost[static_cast<size_t>(p) * m + g] - back;
          if (cand < dist[og]) {
            dist[og] = cand;
            via_p[og] = p;
            pred_g[og] = g;
            changed = true;
          }
        }
      }
      if (!changed) break;
    }
    // cheapest free endpoint
    double best = kInf;
    int best_p = -1, best_g = -1;
    for (int g = 0; g < m; ++g) {
      if (dist[g] == kInf) continue;
      for (int p = 0; p < n; ++p) {
        if (owner[p] >= 0) continue;
        const double cand = dist[g] + cost[static_cast<size_t>(p) * m + g];
        if (cand < best) {
          best = cand;
          best_p = p;
          best_g = g;
        }
      }
    }
    RB_CHECK_MSG(best_p >= 0, "dynamic_k_match: no augmenting path");
    owner[best_p] = best_g;
    int g = best_g;
    while (pred_g[g] >= 0) {  // walk reroutes back to a supply gt
      const int p = via_p[g];
      const int from = pred_g[g];
      owner[p] = from;
      g = from;
    }
    RB_CHECK_MSG(remaining[g] > 0, "dynamic_k_match: chain did not reach supply");
    --remaining[g];
  }
  return owner;
}

}  // namespace detail

/// Known-FG matcher. Quotas k_g = max(1, floor(sum_p IoU(decoded_p, gt_g)))
/// (clamped so the quota total never exceeds the proposal count); the
/// returned pairs are the exact minimum of the summed pair costs subject to
/// those quotas, each proposal used at most once.
inline std::vector<std::pair<int, int>> dynamic_k_match(
    const std::vector<std::array<double, 4>>& decoded, const std::vector<double>& logits,
    int n_logits, const std::vector<GtTarget>& gts, const MatchConfig& mc) {
  const int n = static_cast<int>(decoded.size());
  const int m = static_cast<int>(gts.size());
  if (m == 0 || n == 0) return {};

  std::vector<double> cost(static_cast<size_t>(n) * m);
  std::vector<int> quota(m);
  for (int g = 0; g < m; ++g) {
    const std::array<double, 4> gb{gts[g].box.cx, gts[g].box.cy, gts[g].box.w,
                                   gts[g].box.h};
    double iou_sum = 0.0;
    for (int p = 0; p < n; ++p) {
      iou_sum += detail::iou_raw(decoded[p], gb);
      cost[static_cast<size_t>(p) * m + g] =
          pair_cost(decoded[p], logits.data() + static_cast<size_t>(p) * n_logits, gb,
                    gts[g].logit_index, mc)
              .total(mc);
    }
    quota[g] = std::max(1, static_cast<int>(std::floor(iou_sum)));
  }
  // keep quotas feasible: shave the largest until the total fits
  int total = std::accumulate(quota.begin(), quota.end(), 0);
  while (total > n) {
    int gmax = 0;
    for (int g = 1; g < m; ++g)
      if (quota[g] > quota[gmax]) gmax = g;
    --quota[gmax];
    --total;
  }

  const std::vector<int> owner = detail::quota_assign(cost, n, m, quota);
  std::vector<std::pair<int, int>> pairs;
  for (int p = 0; p < n; ++p)
    if (owner[p] >= 0) pairs.emplace_back(p, owner[p]);
  return pairs;
}

/// Rank all proposals by matching score (descending, index ascending on
/// ties), take the top N, drop any already matched as Known-FG.
inline std::vector<int> select_unknown_fg(const std::vector<double>& scores,
                                          const std::vector<std::pair<int, int>>& known_fg,
                                          int top_n) {
  RB_CHECK_MSG(top_n >= 0, "select_unknown_fg: N must be >= 0");
  const int n = static_cast<int>(scores.size());
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return a < b;
  });
  std::vector<char> is_known(n, 0);
  for (const auto& [p, g] : known_fg) is_known[p] = 1;
  std::vector<int> out;
  for (int i = 0; i < std::min(top_n, n); ++i)
    if (!is_known[order[i]]) out.push_back(order[i]);
  return out;
}

/// Assemble and validate the three-way partition: disjoint and exhaustive.
inline Partition make_partition(int n_proposals,
                                std::vector<std::pair<int, int>> known_fg,
                                std::vector<int> unknown_fg) {
  Partition part;
  part.known_fg = std::move(known_fg);
  part.unknown_fg = std::move(unknown_fg);
  std::vector<char> seen(n_proposals, 0);
  for (const auto& [p, g] : part.known_fg) {
    RB_CHECK_MSG(p >= 0 && p < n_proposals && !seen[p], "partition: bad known_fg index");
    seen[p] = 1;
  }
  for (int p : part.unknown_fg) {
    RB_CHECK_MSG(p >= 0 && p < n_proposals && !seen[p], "partition: bad unknown_fg index");
    seen[p] = 1;
  }
  for (int p = 0; p < n_proposals; ++p)
    if (!seen[p]) part.bg.push_back(p);
  return part;
}

}  // namespace randbox
