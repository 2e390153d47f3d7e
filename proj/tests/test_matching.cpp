#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <set>

#include "randbox/matching.hpp"
#include "randbox/rng.hpp"

using namespace randbox;

namespace {

// Exhaustive oracle: minimum total cost over all ways to hand each gt
// exactly quota[g] distinct proposals. Only feasible for tiny instances.
struct ExhaustiveResult {
  double cost = std::numeric_limits<double>::infinity();
  std::vector<int> owner;
};

void exhaust(const std::vector<double>& cost, int n, int m, const std::vector<int>& quota,
             int g, std::vector<int>& owner, std::vector<int>& left, double acc,
             ExhaustiveResult& best) {
  if (g == m) {
    if (acc < best.cost) {
      best.cost = acc;
      best.owner = owner;
    }
    return;
  }
  // choose quota[g] proposals for gt g from the remaining ones
  std::vector<int> free_ps;
  for (int p = 0; p < n; ++p)
    if (owner[p] < 0) free_ps.push_back(p);
  const int k = quota[g];
  std::vector<int> pick(k);
  std::function<void(int, int, double)> choose = [&](int start, int depth, double a) {
    if (depth == k) {
      exhaust(cost, n, m, quota, g + 1, owner, left, a, best);
      return;
    }
    for (int i = start; i < static_cast<int>(free_ps.size()); ++i) {
      const int p = free_ps[i];
      if (owner[p] >= 0) continue;
      owner[p] = g;
      choose(i + 1, depth + 1, a + cost[static_cast<size_t>(p) * m + g]);
      owner[p] = -1;
    }
  };
  choose(0, 0, acc);
}

std::vector<int> quotas_like_matcher(const std::vector<std::array<double, 4>>& decoded,
                                     const std::vector<GtTarget>& gts, int n) {
  std::vector<int> quota(gts.size());
  for (size_t g = 0; g < gts.size(); ++g) {
    const std::array<double, 4> gb{gts[g].box.cx, gts[g].box.cy, gts[g].box.w,
                                   gts[g].box.h};
    double s = 0.0;
    for (const auto& d : decoded) s += randbox::detail::iou_raw(d, gb);
    quota[g] = std::max(1, static_cast<int>(std::floor(s)));
  }
  int total = 0;
  for (int q : quota) total += q;
  while (total > n) {
    int gmax = 0;
    for (size_t g = 1; g < quota.size(); ++g)
      if (quota[g] > quota[gmax]) gmax = static_cast<int>(g);
    --quota[gmax];
    --total;
  }
  return quota;
}

BBox rand_box(Rng& rng, double min_s = 0.08, double max_s = 0.3) {
  const double w = rng.uniform(min_s, max_s);
  const double h = rng.uniform(min_s, max_s);
  return BBox(rng.uniform(0.5 * w, 1.0 - 0.5 * w), rng.uniform(0.5 * h, 1.0 - 0.5 * h), w,
              h);
}

}  // namespace

TEST_CASE("matching score", "[matching]") {
  SECTION("all-zero logits with |K|=2 give 1.5") {
    const std::vector<double> z{0.0, 0.0, 0.0, 0.0};
    CHECK(matching_score(z) == Catch::Approx(1.5));
  }
  SECTION("saturated-negative foreground logits push the score to 0") {
    const std::vector<double> z{-50.0, -50.0, -50.0, 3.0};
    CHECK(matching_score(z) < 1e-20);
  }
  SECTION("worked example: BG logit ignored") {
    // sigmoid(10) + 2*sigmoid(-10); frozen from direct evaluation
    const std::vector<double> z{10.0, -10.0, -10.0, 0.0};
    const double want = 1.0 / (1.0 + std::exp(-10.0)) + 2.0 / (1.0 + std::exp(10.0));
    CHECK(matching_score(z) == Catch::Approx(want).epsilon(1e-12));
    CHECK(matching_score(z) == Catch::Approx(1.0000454).margin(1e-6));
  }
  SECTION("monotone in foreground logits, constant in BG") {
    Rng rng(5);
    for (int t = 0; t < 200; ++t) {
      std::vector<double> z(5);
      for (double& v : z) v = 3.0 * rng.gaussian();
      const double base = matching_score(z);
      for (int i = 0; i < 4; ++i) {
        auto up = z;
        up[i] += 0.5;
        CHECK(matching_score(up) > base);
      }
      auto bg = z;
      bg[4] += 10.0;
      CHECK(matching_score(bg) == base);
    }
  }
}

TEST_CASE("pair cost", "[matching]") {
  MatchConfig mc;
  const BBox gt(0.5, 0.5, 0.3, 0.3);
  const std::array<double, 4> gt4{0.5, 0.5, 0.3, 0.3};

  SECTION("identical box, zero logits") {
    std::vector<double> z(4, 0.0);
    const auto pc = pair_cost(gt4, z.data(), gt4, 0, mc);
    CHECK(pc.l1_cost == 0.0);
    CHECK(pc.iou_cost == Catch::Approx(0.0).margin(1e-12));
    // (1-0.5)^2 * (-log 0.5)
    CHECK(pc.cls_cost == Catch::Approx(0.25 * std::log(2.0)).epsilon(1e-12));
  }
  SECTION("perfect prediction drives the cost to zero") {
    std::vector<double> z(4, 0.0);
    z[0] = 40.0;
    const auto pc = pair_cost(gt4, z.data(), gt4, 0, mc);
    CHECK(pc.total(mc) < 1e-12);
  }
  SECTION("disjoint far box has iou_cost above 1") {
    const std::array<double, 4> far{0.05, 0.05, 0.04, 0.04};
    std::vector<double> z(4, 0.0);
    const auto pc = pair_cost(far, z.data(), gt4, 0, mc);
    CHECK(pc.iou_cost > 1.0);
  }
  SECTION("total is monotone in each component weight") {
    std::vector<double> z(4, -0.3);
    const std::array<double, 4> off{0.55, 0.45, 0.2, 0.35};
    const auto pc = pair_cost(off, z.data(), gt4, 0, mc);
    MatchConfig heavier = mc;
    heavier.w_l1 += 1.0;
    CHECK(pc.total(heavier) > pc.total(mc));
  }
}

TEST_CASE("dynamic-k fixtures", "[matching]") {
  MatchConfig mc;
  const int C = 4;  // |K|=2

  SECTION("one gt, IoUs {0.6,0.5,0.1}: k=1, best proposal matched") {
    const BBox gt(0.5, 0.5, 0.3, 0.3);
    // nested boxes with controlled IoU: area ratio = IoU for concentric
    auto nested = [&](double target_iou) {
      const double side = 0.3 * std::sqrt(target_iou);
      return std::array<double, 4>{0.5, 0.5, side, side};
    };
    std::vector<std::array<double, 4>> decoded{nested(0.6), nested(0.5), nested(0.1)};
    std::vector<double> logits(3 * C, 0.0);
    const std::vector<GtTarget> gts{{gt, 0, 0}};
    const auto pairs = dynamic_k_match(decoded, logits, C, gts, mc);
    REQUIRE(pairs.size() == 1);  // k = max(1, floor(1.2)) = 1
    CHECK(pairs[0].first == 0);  // highest IoU = lowest cost here
    CHECK(pairs[0].second == 0);
  }
  SECTION("all IoUs zero: still one match per gt") {
    std::vector<std::array<double, 4>> decoded{{0.1, 0.1, 0.05, 0.05},
                                               {0.9, 0.9, 0.05, 0.05}};
    std::vector<double> logits(2 * C, 0.0);
    const std::vector<GtTarget> gts{{BBox(0.5, 0.5, 0.2, 0.2), 0, 0}};
    const auto pairs = dynamic_k_match(decoded, logits, C, gts, mc);
    REQUIRE(pairs.size() == 1);
  }
  SECTION("no gts or no proposals") {
    CHECK(dynamic_k_match({}, {}, C, {}, mc).empty());
  }
}

TEST_CASE("dynamic-k equals exhaustive quota assignment", "[matching]") {
  MatchConfig mc;
  Rng rng(2025);
  const int C = 4;
  for (int trial = 0; trial < 500; ++trial) {
    const int m = 1 + rng.uniform_int(3);
    const int n = std::max(m, 2 + rng.uniform_int(11));  // up to 12
    std::vector<std::array<double, 4>> decoded(n);
    std::vector<double> logits(static_cast<size_t>(n) * C);
    for (int p = 0; p < n; ++p) {
      const BBox b = rand_box(rng);
      decoded[p] = {b.cx, b.cy, b.w, b.h};
      for (int c = 0; c < C; ++c) logits[static_cast<size_t>(p) * C + c] = rng.gaussian();
    }
    std::vector<GtTarget> gts;
    for (int g = 0; g < m; ++g) gts.push_back({rand_box(rng), rng.uniform_int(2), 0});

    const auto got = dynamic_k_match(decoded, logits, C, gts, mc);

    // oracle
    std::vector<double> cost(static_cast<size_t>(n) * m);
    for (int p = 0; p < n; ++p)
      for (int g = 0; g < m; ++g) {
        const std::array<double, 4> gb{gts[g].box.cx, gts[g].box.cy, gts[g].box.w,
                                       gts[g].box.h};
        cost[static_cast<size_t>(p) * m + g] =
            pair_cost(decoded[p], logits.data() + static_cast<size_t>(p) * C, gb,
                      gts[g].logit_index, mc)
                .total(mc);
      }
    const auto quota = quotas_like_matcher(decoded, gts, n);
    ExhaustiveResult best;
    std::vector<int> owner(n, -1), left;
    exhaust(cost, n, m, quota, 0, owner, left, 0.0, best);

    double got_cost = 0.0;
    std::set<std::pair<int, int>> got_set;
    for (const auto& [p, g] : got) {
      got_cost += cost[static_cast<size_t>(p) * m + g];
      got_set.insert({p, g});
    }
    std::set<std::pair<int, int>> want_set;
    for (int p = 0; p < n; ++p)
      if (best.owner[p] >= 0) want_set.insert({p, best.owner[p]});

    REQUIRE(got.size() == want_set.size());
    CHECK(got_cost == Catch::Approx(best.cost).margin(1e-9));
    CHECK(got_set == want_set);
  }
}

TEST_CASE("unknown-fg selection", "[matching]") {
  const std::vector<double> scores{0.9, 0.8, 0.7, 0.6};
  SECTION("N = 0 selects nothing") {
    CHECK(select_unknown_fg(scores, {}, 0).empty());
  }
  SECTION("known members are removed from the top-N") {
    const std::vector<std::pair<int, int>> known{{0, 0}};
    const auto u = select_unknown_fg(scores, known, 2);
    REQUIRE(u.size() == 1);
    CHECK(u[0] == 1);
  }
  SECTION("top-N entirely known leaves unknown empty") {
    const std::vector<std::pair<int, int>> known{{0, 0}, {1, 1}};
    CHECK(select_unknown_fg(scores, known, 2).empty());
  }
}

TEST_CASE("partition is exact", "[matching]") {
  Rng rng(8);
  for (int trial = 0; trial < 100; ++trial) {
    const int n = 5 + rng.uniform_int(40);
    std::vector<std::pair<int, int>> known;
    std::vector<int> unknown;
    std::vector<int> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    for (int i = n - 1; i > 0; --i) std::swap(perm[i], perm[rng.uniform_int(i + 1)]);
    const int nk = rng.uniform_int(n / 2 + 1);
    const int nu = rng.uniform_int(n / 2 + 1);
    for (int i = 0; i < nk; ++i) known.push_back({perm[i], 0});
    for (int i = nk; i < nk + nu; ++i) unknown.push_back(perm[i]);
    const Partition part = make_partition(n, known, unknown);
    std::vector<int> all;
    for (const auto& [p, g] : part.known_fg) all.push_back(p);
    for (int p : part.unknown_fg) all.push_back(p);
    for (int p : part.bg) all.push_back(p);
    std::sort(all.begin(), all.end());
    REQUIRE(static_cast<int>(all.size()) == n);
    for (int i = 0; i < n; ++i) CHECK(all[i] == i);
  }
  SECTION("overlapping sets are rejected") {
    CHECK_THROWS_AS(make_partition(3, {{0, 0}}, {0}), ContractError);
  }
}
