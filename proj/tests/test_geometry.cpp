#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <vector>

#include "randbox/geometry.hpp"
#include "randbox/rng.hpp"

using namespace randbox;

namespace {

// Raster oracle: fraction of 1000x1000 cell centers covered. Lattice points
// inside an interval are counted in closed form; the count equals the loop
// over cells.
long count_centers(double lo, double hi, long n) {
  // centers at (i + 0.5) / n
  const long first = static_cast<long>(std::ceil(lo * n - 0.5));
  const long last = static_cast<long>(std::floor(hi * n - 0.5));
  const long a = std::max(first, 0L);
  const long b = std::min(last, n - 1);
  return std::max(0L, b - a + 1);
}

double raster_iou(const BBox& a, const BBox& b, long n = 1000) {
  const long na = count_centers(a.x1(), a.x2(), n) * count_centers(a.y1(), a.y2(), n);
  const long nb = count_centers(b.x1(), b.x2(), n) * count_centers(b.y1(), b.y2(), n);
  const long ni = count_centers(std::max(a.x1(), b.x1()), std::min(a.x2(), b.x2()), n) *
                  count_centers(std::max(a.y1(), b.y1()), std::min(a.y2(), b.y2()), n);
  const long nu = na + nb - ni;
  if (nu <= 0) return 0.0;
  return static_cast<double>(ni) / static_cast<double>(nu);
}

// O(n^2) reference suppression: walk the (score desc, index asc) order and
// mark everything a kept box dominates.
std::vector<Detection> brute_nms(const std::vector<Detection>& dets, double thresh) {
  std::vector<int> order(dets.size());
  for (size_t i = 0; i < dets.size(); ++i) order[i] = static_cast<int>(i);
  std::stable_sort(order.begin(), order.end(),
                   [&](int x, int y) { return dets[x].score > dets[y].score; });
  std::vector<bool> dead(dets.size(), false);
  std::vector<Detection> out;
  for (size_t i = 0; i < order.size(); ++i) {
    if (dead[order[i]]) continue;
    out.push_back(dets[order[i]]);
    for (size_t j = i + 1; j < order.size(); ++j) {
      if (dead[order[j]]) continue;
      if (dets[order[i]].class_id == dets[order[j]].class_id &&
          iou(dets[order[i]].box, dets[order[j]].box) > thresh)
        dead[order[j]] = true;
    }
  }
  return out;
}

BBox random_inner_box(Rng& rng) {
  const double w = rng.uniform(0.05, 0.35);
  const double h = rng.uniform(0.05, 0.35);
  const double cx = rng.uniform(0.5 * w + 0.01, 1.0 - 0.5 * w - 0.01);
  const double cy = rng.uniform(0.5 * h + 0.01, 1.0 - 0.5 * h - 0.01);
  return BBox(cx, cy, w, h);
}

}  // namespace

TEST_CASE("iou basics", "[geometry]") {
  const BBox a(0.5, 0.5, 0.4, 0.4);
  CHECK(iou(a, a) == Catch::Approx(1.0));
  CHECK(iou(BBox(0.2, 0.2, 0.2, 0.2), BBox(0.8, 0.8, 0.2, 0.2)) == 0.0);

  const BBox p(0.25, 0.5, 0.5, 0.5), q(0.5, 0.5, 0.5, 0.5);
  // raster oracle on 1000^2: inter 0.125, union 0.375
  CHECK(raster_iou(p, q) == Catch::Approx(1.0 / 3.0).margin(2e-3));
  CHECK(iou(p, q) == Catch::Approx(1.0 / 3.0).epsilon(1e-12));
}

TEST_CASE("iou matches raster oracle and is symmetric", "[geometry]") {
  // box corners drawn on the raster lattice, so the cell-count oracle carries
  // no quantization error of its own and checks the IoU arithmetic directly
  Rng rng(42);
  auto lattice_box = [&] {
    const int w = 50 + rng.uniform_int(400);
    const int h = 50 + rng.uniform_int(400);
    const int x1 = rng.uniform_int(1000 - w);
    const int y1 = rng.uniform_int(1000 - h);
    return BBox((x1 + 0.5 * w) / 1000.0, (y1 + 0.5 * h) / 1000.0, w / 1000.0, h / 1000.0);
  };
  for (int i = 0; i < 1000; ++i) {
    const BBox a = lattice_box();
    const BBox b = lattice_box();
    CHECK(iou(a, b) == iou(b, a));
    CHECK(std::abs(iou(a, b) - raster_iou(a, b)) <= 2e-3);
  }
  // off-lattice spot checks stay within the quantization budget of the grid
  for (int i = 0; i < 50; ++i) {
    const BBox a = random_inner_box(rng);
    const BBox b = random_inner_box(rng);
    CHECK(std::abs(iou(a, b) - raster_iou(a, b)) <= 1e-2);
  }
}

TEST_CASE("giou basics", "[geometry]") {
  const BBox a(0.5, 0.5, 0.4, 0.4);
  CHECK(giou(a, a) == Catch::Approx(1.0));

  // enclosing box equals the union here, so giou == iou
  const BBox p(0.25, 0.5, 0.5, 0.5), q(0.5, 0.5, 0.5, 0.5);
  CHECK(giou(p, q) == Catch::Approx(1.0 / 3.0).epsilon(1e-12));

  // far-apart tiny boxes: enclosure penalty dominates
  CHECK(giou(BBox(0.05, 0.05, 0.02, 0.02), BBox(0.95, 0.95, 0.02, 0.02)) < 0.0);
}

TEST_CASE("giou <= iou, equality when enclosure equals union", "[geometry]") {
  Rng rng(7);
  for (int i = 0; i < 2000; ++i) {
    const BBox a = random_inner_box(rng);
    const BBox b = random_inner_box(rng);
    CHECK(giou(a, b) <= iou(a, b) + 1e-12);
  }
}

TEST_CASE("giou gradient matches finite differences", "[geometry]") {
  Rng rng(11);
  const double eps = 1e-6;
  for (int trial = 0; trial < 200; ++trial) {
    const BBox pa = random_inner_box(rng);
    const BBox pb = random_inner_box(rng);
    std::array<double, 4> a{pa.cx, pa.cy, pa.w, pa.h};
    const std::array<double, 4> b{pb.cx, pb.cy, pb.w, pb.h};
    std::array<double, 4> grad{};
    giou_value_grad(a, b, grad);
    for (int k = 0; k < 4; ++k) {
      auto ap = a, am = a;
      ap[k] += eps;
      am[k] -= eps;
      std::array<double, 4> dummy{};
      const double fp = giou_value_grad(ap, b, dummy);
      const double fm = giou_value_grad(am, b, dummy);
      const double fd = (fp - fm) / (2.0 * eps);
      CHECK(std::abs(fd - grad[k]) <= 1e-5 * std::max({1.0, std::abs(fd), std::abs(grad[k])}));
    }
  }
}

TEST_CASE("delta encode/decode", "[geometry]") {
  const BBox p(0.5, 0.5, 0.2, 0.2);
  SECTION("identity") {
    const BoxDelta z = encode_delta(p, p);
    CHECK(z.dx == Catch::Approx(0.0).margin(1e-15));
    CHECK(z.dw == Catch::Approx(0.0).margin(1e-15));
    CHECK(same_box(decode_delta(p, BoxDelta{}), p, 1e-15));
  }
  SECTION("worked example") {
    const BBox g(0.6, 0.5, 0.4, 0.2);
    const BoxDelta d = encode_delta(p, g);
    CHECK(d.dx == Catch::Approx(0.5).epsilon(1e-12));
    CHECK(d.dy == Catch::Approx(0.0).margin(1e-15));
    CHECK(d.dw == Catch::Approx(std::log(2.0)).epsilon(1e-12));
    CHECK(d.dh == Catch::Approx(0.0).margin(1e-15));
  }
  SECTION("round trip to 1e-9 on 10k random pairs") {
    Rng rng(123);
    for (int i = 0; i < 10000; ++i) {
      const BBox prop = random_inner_box(rng);
      const BBox gt = random_inner_box(rng);
      const BBox back = decode_delta(prop, encode_delta(prop, gt));
      CHECK(same_box(back, gt, 1e-9));
    }
  }
}

TEST_CASE("clip_to_unit", "[geometry]") {
  SECTION("in-bounds box unchanged") {
    const auto c = clip_to_unit(0.5, 0.5, 0.3, 0.3);
    REQUIRE(c.has_value());
    CHECK(same_box(*c, BBox(0.5, 0.5, 0.3, 0.3)));
  }
  SECTION("center on edge degenerates") {
    CHECK_FALSE(clip_to_unit(0.0, 0.5, 0.4, 0.2).has_value());
  }
  SECTION("shrinks minimally, center preserved") {
    const auto c = clip_to_unit(0.1, 0.5, 0.4, 0.2);
    REQUIRE(c.has_value());
    CHECK(same_box(*c, BBox(0.1, 0.5, 0.2, 0.2), 1e-12));
    CHECK(c->x1() >= 0.0);
  }
  SECTION("rejects centers outside the unit square") {
    CHECK_THROWS_AS(clip_to_unit(-0.1, 0.5, 0.2, 0.2), ContractError);
  }
}

TEST_CASE("nms fixtures", "[geometry]") {
  const BBox b(0.3, 0.3, 0.2, 0.2);
  SECTION("same class, identical boxes: keep the higher score") {
    std::vector<Detection> dets{{b, 0, 0.9}, {b, 0, 0.8}};
    const auto kept = nms(dets, 0.6);
    REQUIRE(kept.size() == 1);
    CHECK(kept[0].score == 0.9);
  }
  SECTION("different classes, identical boxes: keep both") {
    std::vector<Detection> dets{{b, 0, 0.9}, {b, 1, 0.8}};
    CHECK(nms(dets, 0.6).size() == 2);
  }
  SECTION("three-box fixture, only the 0.7-overlap lower-score box suppressed") {
    const double side = 0.2 * std::sqrt(0.7);  // nested box with IoU 0.7
    std::vector<Detection> dets{{b, 0, 0.9},
                                {BBox(0.3, 0.3, side, side), 0, 0.8},
                                {BBox(0.7, 0.7, 0.2, 0.2), 0, 0.7}};
    REQUIRE(iou(dets[0].box, dets[1].box) == Catch::Approx(0.7));
    const auto kept = nms(dets, 0.6);
    const auto want = brute_nms(dets, 0.6);
    REQUIRE(kept.size() == 2);
    CHECK(kept[0].score == 0.9);
    CHECK(kept[1].score == 0.7);
    REQUIRE(want.size() == kept.size());
  }
  SECTION("empty input, and threshold validation") {
    CHECK(nms({}, 0.6).empty());
    CHECK_THROWS_AS(nms({}, 0.0), ContractError);
    CHECK_THROWS_AS(nms({}, 1.0), ContractError);
  }
}

TEST_CASE("nms equals brute-force reference on random sets", "[geometry]") {
  Rng rng(99);
  for (int trial = 0; trial < 60; ++trial) {
    const int n = 1 + rng.uniform_int(200);
    std::vector<Detection> dets;
    dets.reserve(n);
    for (int i = 0; i < n; ++i)
      dets.push_back({random_inner_box(rng), rng.uniform_int(3), rng.uniform()});
    const double thresh = rng.uniform(0.3, 0.8);
    const auto got = nms(dets, thresh);
    const auto want = brute_nms(dets, thresh);
    REQUIRE(got.size() == want.size());
    for (size_t i = 0; i < got.size(); ++i) {
      CHECK(got[i].score == want[i].score);
      CHECK(got[i].class_id == want[i].class_id);
      CHECK(same_box(got[i].box, want[i].box));
    }
  }
}

TEST_CASE("bbox validation", "[geometry]") {
  CHECK_THROWS_AS(BBox(0.5, 0.5, 0.0, 0.2), ContractError);
  CHECK_THROWS_AS(BBox(0.5, 0.5, 0.2, -0.1), ContractError);
  CHECK_THROWS_AS(BBox(1.5, 0.5, 0.2, 0.2), ContractError);
}
