#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <limits>

#include "randbox/samplers.hpp"

using namespace randbox;

namespace {
double min_dist_to_nearest_center(double px, double py, const std::vector<BBox>& boxes) {
  double best = std::numeric_limits<double>::infinity();
  for (const auto& b : boxes) {
    const double dx = px - b.cx, dy = py - b.cy;
    best = std::min(best, std::sqrt(dx * dx + dy * dy));
  }
  return best;
}

double mean_nearest_gt_iou(const std::vector<BBox>& samples, const std::vector<BBox>& gts) {
  double acc = 0.0;
  for (const auto& s : samples) {
    double best = 0.0;
    for (const auto& g : gts) best = std::max(best, iou(s, g));
    acc += best;
  }
  return acc / samples.size();
}
}  // namespace

TEST_CASE("random boxes: bounds, determinism", "[samplers]") {
  SamplerConfig cfg;
  cfg.n_train_proposals = 2000;
  Rng r1(5), r2(5);
  const auto a = sample_random_boxes(cfg, r1);
  const auto b = sample_random_boxes(cfg, r2);
  REQUIRE(a.size() == 2000);
  REQUIRE(b.size() == 2000);
  for (size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].x1() >= 0.0);
    CHECK(a[i].x2() <= 1.0);
    CHECK(a[i].y1() >= 0.0);
    CHECK(a[i].y2() <= 1.0);
    CHECK(same_box(a[i], b[i]));
  }
}

TEST_CASE("truncated gaussian coordinate mean is 0.5", "[samplers]") {
  // Monte-Carlo oracle: symmetry of the truncated gaussian around 0 maps to
  // symmetry around 0.5 after the affine rescale.
  Rng rng(2024);
  double acc = 0.0;
  const int n = 1000000;
  for (int i = 0; i < n; ++i) acc += rng.truncated_gaussian_01();
  CHECK(acc / n == Catch::Approx(0.5).margin(0.002));

  // box centers are unchanged by clipping, so the same symmetry shows there
  SamplerConfig cfg;
  cfg.n_train_proposals = 200000;
  Rng brng(77);
  const auto boxes = sample_random_boxes(cfg, brng);
  double cx = 0.0, cy = 0.0;
  for (const auto& b : boxes) {
    cx += b.cx;
    cy += b.cy;
  }
  CHECK(cx / boxes.size() == Catch::Approx(0.5).margin(0.004));
  CHECK(cy / boxes.size() == Catch::Approx(0.5).margin(0.004));
}

TEST_CASE("uniform sampler mode", "[samplers]") {
  SamplerConfig cfg;
  cfg.n_train_proposals = 50000;
  cfg.distribution = ProposalDistribution::kUniform;
  Rng rng(3);
  const auto boxes = sample_random_boxes(cfg, rng);
  double cx = 0.0;
  for (const auto& b : boxes) cx += b.cx;
  CHECK(cx / boxes.size() == Catch::Approx(0.5).margin(0.01));
}

TEST_CASE("inference grid contract", "[samplers]") {
  SECTION("default yields exactly 10000 deterministic boxes") {
    const auto g1 = build_inference_grid(GridConfig{});
    const auto g2 = build_inference_grid(GridConfig{});
    REQUIRE(g1.size() == 10000);
    for (size_t i = 0; i < g1.size(); ++i) CHECK(same_box(g1[i], g2[i]));
  }
  SECTION("non-square location count is rejected") {
    CHECK_THROWS_AS(build_inference_grid(GridConfig{5, 5, 20}), ContractError);
  }
  SECTION("lattice covers the unit square within stride/sqrt(2)") {
    const GridConfig cfg{10, 10, 100};
    const auto boxes = build_inference_grid(cfg);
    const double stride = 0.1;
    Rng rng(9);
    for (int i = 0; i < 2000; ++i) {
      const double px = rng.uniform(), py = rng.uniform();
      CHECK(min_dist_to_nearest_center(px, py, boxes) <= stride / std::sqrt(2.0) + 1e-12);
    }
  }
  SECTION("all grid boxes valid and in bounds") {
    for (const auto& b : build_inference_grid(GridConfig{4, 3, 16})) {
      CHECK(b.x1() >= -1e-12);
      CHECK(b.x2() <= 1.0 + 1e-12);
      CHECK(b.w > kMinBoxSize);
    }
  }
}

TEST_CASE("biased sampler", "[samplers]") {
  const std::vector<BBox> gts{BBox(0.4, 0.6, 0.2, 0.3)};
  SECTION("zero jitter: at least 90% land exactly on the gt box") {
    Rng rng(1);
    const auto boxes = sample_biased_boxes(10000, gts, 0.0, 0.9, rng);
    int hits = 0;
    for (const auto& b : boxes)
      if (same_box(b, gts[0])) ++hits;
    CHECK(hits >= 8800);  // binomial(10000, 0.9) minus slack
  }
  SECTION("empty gt list falls back to uniform") {
    Rng rng(2);
    const auto boxes = sample_biased_boxes(50000, {}, 0.05, 0.9, rng);
    double cx = 0.0;
    for (const auto& b : boxes) cx += b.cx;
    CHECK(cx / boxes.size() == Catch::Approx(0.5).margin(0.01));
  }
  SECTION("bias raises mean nearest-gt IoU over the random sampler") {
    // Monte-Carlo comparison; this is exactly the bias the A/B experiment
    // injects.
    Rng r1(10), r2(10);
    const auto biased = sample_biased_boxes(10000, gts, 0.05, 0.9, r1);
    SamplerConfig cfg;
    cfg.n_train_proposals = 10000;
    const auto random_boxes = sample_random_boxes(cfg, r2);
    CHECK(mean_nearest_gt_iou(biased, gts) > mean_nearest_gt_iou(random_boxes, gts) + 0.2);
  }
}
