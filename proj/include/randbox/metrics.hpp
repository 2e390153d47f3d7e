#pragma once

/// Open-world evaluation: per-class AP / K-mAP, unknown recall, wilderness
/// impact, absolute open-set error, U-AP and the score-separability
/// diagnostic. Detections and ground truth are pooled over scenes; matching
/// state never leaks across scenes.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <vector>

#include "randbox/common.hpp"
#include "randbox/geometry.hpp"
#include "randbox/world.hpp"

namespace randbox {

/// Per-scene detections plus full ground truth (unknown labels visible to
/// evaluation only).
struct EvalFixture {
  std::vector<std::vector<Detection>> detections;   // per scene
  std::vector<std::vector<SceneObject>> gt;         // per scene, full labels
  std::vector<int> known_ids;
  std::vector<int> unknown_ids;

  bool is_known_class(int c) const {
    return std::find(known_ids.begin(), known_ids.end(), c) != known_ids.end();
  }
  bool is_unknown_class(int c) const {
    return std::find(unknown_ids.begin(), unknown_ids.end(), c) != unknown_ids.end();
  }
};

struct MetricsReport {
  double k_map50 = 0.0;
  double u_recall50 = 0.0;
  double wi80 = 0.0;  // +inf when the open-set precision vanishes
  long a_ose50 = 0;
  double u_ap = 0.0;
  double u_ap50 = 0.0;
  double u_ap75 = 0.0;
  std::vector<std::pair<int, double>> per_class_ap;  // (class id, AP@0.5)
  double separability_auroc = 0.5;
  int n_scenes = 0;
};

namespace detail {

struct DetRef {
  int scene;
  int index;
  double score;
};

inline std::vector<DetRef> sorted_dets(const EvalFixture& fx, int class_id) {
  std::vector<DetRef> refs;
  for (int s = 0; s < static_cast<int>(fx.detections.size()); ++s)
    for (int i = 0; i < static_cast<int>(fx.detections[s].size()); ++i)
      if (fx.detections[s][i].class_id == class_id)
        refs.push_back({s, i, fx.detections[s][i].score});
  std::sort(refs.begin(), refs.end(), [](const DetRef& a, const DetRef& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.scene != b.scene) return a.scene < b.scene;
    return a.index < b.index;
  });
  return refs;
}

/// All-point interpolated AP from tp flags in score order.
inline double ap_from_flags(const std::vector<char>& tp, long n_gt) {
  if (n_gt == 0) return 0.0;
  std::vector<double> precision, recall;
  long tp_cum = 0, fp_cum = 0;
  for (char f : tp) {
    if (f)
      ++tp_cum;
    else
      ++fp_cum;
    precision.push_back(static_cast<double>(tp_cum) / (tp_cum + fp_cum));
    recall.push_back(static_cast<double>(tp_cum) / n_gt);
  }
  double ap = 0.0;
  double env = 0.0;
  for (int i = static_cast<int>(precision.size()) - 1; i >= 0; --i) {
    env = std::max(env, precision[i]);
    const double r_prev = (i == 0) ? 0.0 : recall[i - 1];
    ap += env * (recall[i] - r_prev);
  }
  return ap;
}

}  // namespace detail

/// AP for one class id (kUnknownClassId pools every unknown-class gt).
/// Greedy best-IoU matching of score-sorted detections to unmatched gts.
/// Returns nullopt when the class has no ground truth.
inline std::optional<double> average_precision(const EvalFixture& fx, int class_id,
                                               double iou_thresh) {
  RB_CHECK_MSG(iou_thresh > 0.0 && iou_thresh < 1.0, "ap: iou_thresh in (0,1)");
  auto gt_selected = [&](const SceneObject& o) {
    return class_id == kUnknownClassId ? fx.is_unknown_class(o.class_id)
                                       : o.class_id == class_id;
  };
  long n_gt = 0;
  std::vector<std::vector<int>> gt_idx(fx.gt.size());
  for (size_t s = 0; s < fx.gt.size(); ++s)
    for (int i = 0; i < static_cast<int>(fx.gt[s].size()); ++i)
      if (gt_selected(fx.gt[s][i])) {
        gt_idx[s].push_back(i);
        ++n_gt;
      }
  if (n_gt == 0) return std::nullopt;

  const auto refs = detail::sorted_dets(fx, class_id);
  std::vector<std::vector<char>> used(fx.gt.size());
  for (size_t s = 0; s < fx.gt.size(); ++s) used[s].assign(gt_idx[s].size(), 0);

  std::vector<char> tp;
  tp.reserve(refs.size());
  for (const auto& r : refs) {
    const Detection& det = fx.detections[r.scene][r.index];
    double best = iou_thresh;
    int best_j = -1;
    for (int j = 0; j < static_cast<int>(gt_idx[r.scene].size()); ++j) {
      if (used[r.scene][j]) continue;
      const double v = iou(det.box, fx.gt[r.scene][gt_idx[r.scene][j]].box);
      if (v >= best && (best_j < 0 || v > best)) {
        best = v;
        best_j = j;
      }
    }
    if (best_j >= 0) {
      used[r.scene][best_j] = 1;
      tp.push_back(1);
    } else {
      tp.push_back(0);
    }
  }
  return detail::ap_from_flags(tp, n_gt);
}

/// Mean AP@0.5 over known classes that have ground truth; classes without
/// gts are excluded from the mean. Also returns the per-class table.
inline double known_map(const EvalFixture& fx, double iou_thresh,
                        std::vector<std::pair<int, double>>* table = nullptr) {
  double acc = 0.0;
  int n = 0;
  for (int c : fx.known_ids) {
    const auto ap = average_precision(fx, c, iou_thresh);
    if (!ap.has_value()) continue;
    if (table) table->emplace_back(c, *ap);
    acc += *ap;
    ++n;
  }
  return n == 0 ? 0.0 : acc / n;
}

/// Fraction of unknown gt boxes covered (IoU >= thresh) by "unknown"
/// detections, one detection per gt: size of the maximum bipartite matching
/// over the total unknown gt count. Undefined (throws) without unknown gts.
inline double unknown_recall(const EvalFixture& fx, double iou_thresh = 0.5) {
  long total = 0, covered = 0;
  for (size_t s = 0; s < fx.gt.size(); ++s) {
    std::vector<int> ugts;
    for (int i = 0; i < static_cast<int>(fx.gt[s].size()); ++i)
      if (fx.is_unknown_class(fx.gt[s][i].class_id)) ugts.push_back(i);
    total += ugts.size();
    if (ugts.empty()) continue;
    std::vector<int> udets;
    for (int i = 0; i < static_cast<int>(fx.detections[s].size()); ++i)
      if (fx.detections[s][i].class_id == kUnknownClassId) udets.push_back(i);

    // Kuhn augmenting paths: exact maximum matching
    std::vector<int> gt_owner(ugts.size(), -1);
    std::vector<char> visited;
    std::function<bool(int)> try_det = [&](int di) -> bool {
      for (int j = 0; j < static_cast<int>(ugts.size()); ++j) {
        if (visited[j]) continue;
        if (iou(fx.detections[s][udets[di]].box, fx.gt[s][ugts[j]].box) < iou_thresh)
          continue;
        visited[j] = 1;
        if (gt_owner[j] < 0 || try_det(gt_owner[j])) {
          gt_owner[j] = di;
          return true;
        }
      }
      return false;
    };
    for (int di = 0; di < static_cast<int>(udets.size()); ++di) {
      visited.assign(ugts.size(), 0);
      try_det(di);
    }
    for (int j = 0; j < static_cast<int>(ugts.size()); ++j)
      if (gt_owner[j] >= 0) ++covered;
  }
  RB_CHECK_MSG(total > 0, "unknown_recall: no unknown ground truth in fixture");
  return static_cast<double>(covered) / static_cast<double>(total);
}

/// Wilderness impact at IoU 0.8: closed-set / open-set precision - 1 over
/// known-labelled detections. Detections landing on unknown gts are ignored
/// by the closed-set precision (or penalized, with penalize_unknown_hits)
/// and counted as false positives by the open-set precision.
inline double wilderness_impact(const EvalFixture& fx, double iou_thresh = 0.8,
                                bool penalize_unknown_hits = false) {
  long tp = 0, fp_other = 0, fp_unknown = 0;
  for (size_t s = 0; s < fx.gt.size(); ++s) {
    std::vector<int> order;
    for (int i = 0; i < static_cast<int>(fx.detections[s].size()); ++i)
      if (fx.is_known_class(fx.detections[s][i].class_id)) order.push_back(i);
    std::sort(order.begin(), order.end(), [&](int a, int b) {
      if (fx.detections[s][a].score != fx.detections[s][b].score)
        return fx.detections[s][a].score > fx.detections[s][b].score;
      return a < b;
    });
    std::vector<char> used(fx.gt[s].size(), 0);
    for (int di : order) {
      const Detection& det = fx.detections[s][di];
      double best = iou_thresh;
      int best_j = -1;
      for (int j = 0; j < static_cast<int>(fx.gt[s].size()); ++j) {
        if (used[j] || fx.gt[s][j].class_id != det.class_id) continue;
        const double v = iou(det.box, fx.gt[s][j].box);
        if (v >= best && (best_j < 0 || v > best)) {
          best = v;
          best_j = j;
        }
      }
      if (best_j >= 0) {
        used[best_j] = 1;
        ++tp;
        continue;
      }
      bool hits_unknown = false;
      for (const auto& o : fx.gt[s])
        if (fx.is_unknown_class(o.class_id) && iou(det.box, o.box) >= iou_thresh) {
          hits_unknown = true;
          break;
        }
      if (hits_unknown)
        ++fp_unknown;
      else
        ++fp_other;
    }
  }
  const long closed_denom = tp + fp_other + (penalize_unknown_hits ? fp_unknown : 0);
  const long open_denom = tp + fp_other + fp_unknown;
  if (open_denom == 0) return 0.0;  // no known-labelled detections at all
  if (tp == 0 && closed_denom == 0) return std::numeric_limits<double>::infinity();
  const double closed = static_cast<double>(tp) / closed_denom;
  const double open = static_cast<double>(tp) / open_denom;
  if (open == 0.0)
    return closed == 0.0 ? 0.0 : std::numeric_limits<double>::infinity();
  return closed / open - 1.0;
}

/// Count of known-labelled detections whose box covers an unknown gt at
/// IoU >= thresh. Counts detections, not unique gts.
inline long absolute_ose(const EvalFixture& fx, double iou_thresh = 0.5) {
  long count = 0;
  for (size_t s = 0; s < fx.gt.size(); ++s)
    for (const auto& det : fx.detections[s]) {
      if (!fx.is_known_class(det.class_id)) continue;
      for (const auto& o : fx.gt[s])
        if (fx.is_unknown_class(o.class_id) && iou(det.box, o.box) >= iou_thresh) {
          ++count;
          break;
        }
    }
  return count;
}

/// Mean unknown-class AP over IoU 0.5:0.05:0.95 plus the 0.5 / 0.75 points.
struct UApResult {
  double mean = 0.0, ap50 = 0.0, ap75 = 0.0;
};

inline UApResult unknown_ap(const EvalFixture& fx) {
  UApResult r;
  double acc = 0.0;
  int n = 0;
  for (int i = 0; i < 10; ++i) {
    const double t = 0.5 + 0.05 * i;
    const double ap = average_precision(fx, kUnknownClassId, t).value_or(0.0);
    acc += ap;
    ++n;
    if (i == 0) r.ap50 = ap;
    if (i == 5) r.ap75 = ap;
  }
  r.mean = acc / n;
  return r;
}

// ---------------------------------------------------------------------------
// Separability diagnostic
// ---------------------------------------------------------------------------

enum class ProposalLabel { kKnown = 0, kUnknown = 1, kBg = 2, kAmbiguous = 3 };

struct SeparabilityRow {
  double score;
  ProposalLabel label;
};

/// Label a proposal by its max-IoU ground truth: >= 0.5 on a known/unknown
/// object, < 0.1 with everything = BG, in between = ambiguous (excluded).
inline ProposalLabel label_proposal(const BBox& proposal,
                                    const std::vector<SceneObject>& gt,
                                    const EvalFixture& fx) {
  double best_known = 0.0, best_unknown = 0.0;
  for (const auto& o : gt) {
    const double v = iou(proposal, o.box);
    if (fx.is_known_class(o.class_id))
      best_known = std::max(best_known, v);
    else if (fx.is_unknown_class(o.class_id))
      best_unknown = std::max(best_unknown, v);
  }
  const double best = std::max(best_known, best_unknown);
  if (best >= 0.5)
    return best_known >= best_unknown ? ProposalLabel::kKnown : ProposalLabel::kUnknown;
  if (best < 0.1) return ProposalLabel::kBg;
  return ProposalLabel::kAmbiguous;
}

/// Rank-based AUROC of positives vs negatives with midrank tie handling.
inline double auroc(const std::vector<double>& pos, const std::vector<double>& neg) {
  if (pos.empty() || neg.empty()) return 0.5;
  std::vector<std::pair<double, int>> all;  // (score, is_positive)
  all.reserve(pos.size() + neg.size());
  for (double v : pos) all.emplace_back(v, 1);
  for (double v : neg) all.emplace_back(v, 0);
  std::sort(all.begin(), all.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });
  double rank_sum = 0.0;
  size_t i = 0;
  while (i < all.size()) {
    size_t j = i;
    while (j < all.size() && all[j].first == all[i].first) ++j;
    const double midrank = 0.5 * (static_cast<double>(i + 1) + static_cast<double>(j));
    for (size_t k = i; k < j; ++k)
      if (all[k].second) rank_sum += midrank;
    i = j;
  }
  const double n1 = static_cast<double>(pos.size());
  const double n2 = static_cast<double>(neg.size());
  return (rank_sum - n1 * (n1 + 1.0) / 2.0) / (n1 * n2);
}

/// Sorted score curve (descending) and the unknown-vs-BG AUROC.
inline std::pair<std::vector<SeparabilityRow>, double> separability_summary(
    std::vector<SeparabilityRow> rows) {
  std::sort(rows.begin(), rows.end(),
            [](const SeparabilityRow& a, const SeparabilityRow& b) {
              return a.score > b.score;
            });
  std::vector<double> pos, neg;
  for (const auto& r : rows) {
    if (r.label == ProposalLabel::kUnknown) pos.push_back(r.score);
    if (r.label == ProposalLabel::kBg) neg.push_back(r.score);
  }
  return {std::move(rows), auroc(pos, neg)};
}

}  // namespace randbox
