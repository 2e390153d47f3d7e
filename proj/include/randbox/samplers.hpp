#pragma once

/// Proposal sources: the randomized training sampler, the deterministic
/// inference grid, and a known-biased sampler used as the comparison arm in
/// the sampler A/B experiment. The randomized sampler takes no scene input
/// at all, so its output distribution cannot depend on scene content.

#include <cstdint>
#include <string>
#include <vector>

#include "randbox/geometry.hpp"
#include "randbox/rng.hpp"

namespace randbox {

enum class ProposalDistribution { kGaussianTruncated, kUniform };

struct SamplerConfig {
  int n_train_proposals = 500;
  ProposalDistribution distribution = ProposalDistribution::kGaussianTruncated;
  std::uint64_t seed = 0;
};

struct GridConfig {
  int n_scales = 10;
  int n_ratios = 10;
  int n_locations = 100;  // must be a perfect square (sqrt x sqrt lattice)
};

namespace detail {
inline double draw_coord(Rng& rng, ProposalDistribution dist) {
  return dist == ProposalDistribution::kGaussianTruncated ? rng.truncated_gaussian_01()
                                                          : rng.uniform();
}
}  // namespace detail

/// Draw n_train_proposals boxes, each coordinate i.i.d. from the configured
/// distribution; boxes are clipped to the unit square and redrawn when the
/// clip degenerates.
inline std::vector<BBox> sample_random_boxes(const SamplerConfig& cfg, Rng& rng) {
  RB_CHECK_MSG(cfg.n_train_proposals >= 1, "sampler: n_train_proposals must be >= 1");
  std::vector<BBox> out;
  out.reserve(cfg.n_train_proposals);
  while (static_cast<int>(out.size()) < cfg.n_train_proposals) {
    const double cx = detail::draw_coord(rng, cfg.distribution);
    const double cy = detail::draw_coord(rng, cfg.distribution);
    const double w = detail::draw_coord(rng, cfg.distribution);
    const double h = detail::draw_coord(rng, cfg.distribution);
    if (w <= 0.0 || h <= 0.0) continue;
    if (auto box = clip_to_unit(cx, cy, w, h)) out.push_back(*box);
  }
  return out;
}

inline int grid_side(int n_locations) {
  int side = static_cast<int>(std::lround(std::sqrt(static_cast<double>(n_locations))));
  RB_CHECK_MSG(side * side == n_locations && n_locations >= 1,
               "grid: n_locations must be a perfect square");
  return side;
}

/// Deterministic inference proposals: scale x ratio x location lattice.
/// Centers sit on cell centers of a sqrt(n) x sqrt(n) grid; scales are
/// geometric in [0.05, 0.95] (side of the equivalent square), aspect ratios
/// log-even in [1/4, 4].
inline std::vector<BBox> build_inference_grid(const GridConfig& cfg) {
  RB_CHECK_MSG(cfg.n_scales >= 1 && cfg.n_ratios >= 1, "grid: counts must be >= 1");
  const int side = grid_side(cfg.n_locations);
  const double stride = 1.0 / side;

  auto geom = [](double lo, double hi, int i, int n) {
    const double t = (n == 1) ? 0.5 : static_cast<double>(i) / (n - 1);
    return lo * std::pow(hi / lo, t);
  };

  std::vector<BBox> boxes;
  boxes.reserve(static_cast<size_t>(cfg.n_scales) * cfg.n_ratios * cfg.n_locations);
  for (int si = 0; si < cfg.n_scales; ++si) {
    const double s = geom(0.05, 0.95, si, cfg.n_scales);
    for (int ri = 0; ri < cfg.n_ratios; ++ri) {
      const double r = geom(0.25, 4.0, ri, cfg.n_ratios);
      const double w = s * std::sqrt(r);
      const double h = s / std::sqrt(r);
      for (int row = 0; row < side; ++row) {
        const double cy = (row + 0.5) * stride;
        for (int col = 0; col < side; ++col) {
          const double cx = (col + 0.5) * stride;
          auto box = clip_to_unit(cx, cy, w, h);
          RB_CHECK_MSG(box.has_value(), "grid: degenerate cell box");
          boxes.push_back(*box);
        }
      }
    }
  }
  return boxes;
}

/// Comparison sampler for the confounding experiment: a `biased_mix`
/// fraction of boxes are Gaussian jitters of uniformly chosen known GT
/// boxes, the rest uniform. Falls back to fully uniform when no known GT
/// boxes exist.
inline std::vector<BBox> sample_biased_boxes(int n, const std::vector<BBox>& gt_boxes,
                                             double jitter_sigma, double biased_mix,
                                             Rng& rng) {
  RB_CHECK_MSG(n >= 0, "sampler: n must be >= 0");
  RB_CHECK_MSG(biased_mix >= 0.0 && biased_mix <= 1.0, "sampler: biased_mix in [0,1]");
  std::vector<BBox> out;
  out.reserve(n);
  while (static_cast<int>(out.size()) < n) {
    double cx, cy, w, h;
    if (!gt_boxes.empty() && rng.uniform() < biased_mix) {
      const BBox& g = gt_boxes[rng.uniform_int(static_cast<int>(gt_boxes.size()))];
      cx = g.cx + jitter_sigma * rng.gaussian();
      cy = g.cy + jitter_sigma * rng.gaussian();
      w = g.w + jitter_sigma * rng.gaussian();
      h = g.h + jitter_sigma * rng.gaussian();
    } else {
      cx = rng.uniform();
      cy = rng.uniform();
      w = rng.uniform();
      h = rng.uniform();
    }
    if (cx < 0.0 || cx > 1.0 || cy < 0.0 || cy > 1.0 || w <= 0.0 || h <= 0.0 || w > 1.0 ||
        h > 1.0)
      continue;
    if (auto box = clip_to_unit(cx, cy, w, h)) out.push_back(*box);
  }
  return out;
}

inline std::string to_string(ProposalDistribution d) {
  return d == ProposalDistribution::kGaussianTruncated ? "gaussian_truncated" : "uniform";
}

}  // namespace randbox
