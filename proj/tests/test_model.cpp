#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "randbox/matching.hpp"
#include "randbox/model.hpp"

using namespace randbox;

namespace {
DetectorParams zero_params(int d, int n_known, int hidden = 0) {
  std::vector<int> ids(n_known);
  for (int i = 0; i < n_known; ++i) ids[i] = i;
  DetectorParams p = init_detector(d, ids, hidden, 1, 0.0);
  return p;
}

// naive triple-loop oracle for the affine head
std::vector<double> naive_logits(const DetectorParams& p, const std::vector<double>& x) {
  std::vector<double> z(p.n_logits());
  for (int c = 0; c < p.n_logits(); ++c) {
    double acc = p.b_cls[c];
    for (int i = 0; i < p.feature_dim; ++i) acc += x[i] * p.w_cls[i * p.n_logits() + c];
    z[c] = acc;
  }
  return z;
}
}  // namespace

TEST_CASE("forward basics", "[model]") {
  SECTION("zero params give zero logits, matching score (|K|+1)/2") {
    const auto p = zero_params(8, 3);
    std::vector<double> x(8, 0.7);
    const auto [logits, delta] = forward(p, x);
    for (double z : logits) CHECK(z == 0.0);
    CHECK(matching_score(logits) == Catch::Approx((3 + 1) * 0.5));
    CHECK(delta.dx == 0.0);
  }
  SECTION("x = 0 returns the bias") {
    auto p = zero_params(4, 2);
    p.b_cls = {0.1, -0.2, 0.3, 0.4};
    const auto [logits, delta] = forward(p, std::vector<double>(4, 0.0));
    for (int c = 0; c < 4; ++c) CHECK(logits[c] == p.b_cls[c]);
  }
  SECTION("dimension mismatch is rejected") {
    const auto p = zero_params(4, 2);
    CHECK_THROWS_AS(forward(p, std::vector<double>(5, 0.0)), ContractError);
  }
  SECTION("matches the naive matrix-product oracle to 1e-12") {
    Rng rng(3);
    auto p = zero_params(16, 5);
    for (double& w : p.w_cls) w = rng.gaussian();
    for (double& b : p.b_cls) b = rng.gaussian();
    for (int trial = 0; trial < 20; ++trial) {
      std::vector<double> x(16);
      for (double& v : x) v = rng.gaussian();
      const auto [logits, delta] = forward(p, x);
      const auto want = naive_logits(p, x);
      for (int c = 0; c < p.n_logits(); ++c)
        CHECK(logits[c] == Catch::Approx(want[c]).margin(1e-12));
    }
  }
  SECTION("forward is linear in the feature") {
    Rng rng(4);
    auto p = zero_params(8, 2);
    for (double& w : p.w_cls) w = rng.gaussian();
    for (double& w : p.w_reg) w = rng.gaussian();
    std::vector<double> x1(8), x2(8), mix(8);
    for (int i = 0; i < 8; ++i) {
      x1[i] = rng.gaussian();
      x2[i] = rng.gaussian();
      mix[i] = 0.3 * x1[i] + 1.7 * x2[i];
    }
    // zero biases so linearity (not just affinity) holds exactly
    const auto [za, da] = forward(p, x1);
    const auto [zb, db] = forward(p, x2);
    const auto [zm, dm] = forward(p, mix);
    for (int c = 0; c < p.n_logits(); ++c)
      CHECK(zm[c] == Catch::Approx(0.3 * za[c] + 1.7 * zb[c]).margin(1e-12));
    CHECK(dm.dw == Catch::Approx(0.3 * da.dw + 1.7 * db.dw).margin(1e-12));
  }
}

TEST_CASE("class growth", "[model]") {
  Rng rng(9);
  auto p = init_detector(8, {0, 1, 2}, 0, 5, 0.1);
  std::vector<double> x(8);
  for (double& v : x) v = rng.gaussian();
  const auto [old_logits, old_delta] = forward(p, x);

  SECTION("n_new = 0 returns identical params") {
    const auto q = grow_known_classes(p, 0, {});
    CHECK(q.w_cls == p.w_cls);
    CHECK(q.n_known == p.n_known);
  }
  SECTION("old columns preserved, new columns zero") {
    const auto q = grow_known_classes(p, 2, {7, 8});
    REQUIRE(q.n_logits() == 7);
    const auto [logits, delta] = forward(q, x);
    for (int c = 0; c < 3; ++c) CHECK(logits[c] == Catch::Approx(old_logits[c]).margin(1e-15));
    CHECK(logits[3] == 0.0);  // new class columns
    CHECK(logits[4] == 0.0);
    CHECK(logits[q.unknown_index()] ==
          Catch::Approx(old_logits[p.unknown_index()]).margin(1e-15));
    CHECK(logits[q.bg_index()] == Catch::Approx(old_logits[p.bg_index()]).margin(1e-15));
    CHECK(q.known_ids == std::vector<int>{0, 1, 2, 7, 8});
    // argmax over old classes unchanged
    int old_arg = 0, new_arg = 0;
    for (int c = 1; c < 3; ++c) {
      if (old_logits[c] > old_logits[old_arg]) old_arg = c;
      if (logits[c] > logits[new_arg]) new_arg = c;
    }
    CHECK(old_arg == new_arg);
  }
}

TEST_CASE("optimizer", "[model]") {
  SECTION("zero gradients and zero decay leave params unchanged") {
    auto p = init_detector(4, {0, 1}, 0, 2, 0.1);
    OptimizerConfig oc;
    oc.weight_decay = 0.0;
    auto s = OptimizerState::init(p, oc);
    const auto before = p.w_cls;
    apply_gradients(p, ParamGrads::zeros_like(p), s);
    CHECK(p.w_cls == before);
  }
  SECTION("single step on f(w)=w^2 decreases |w|") {
    auto p = zero_params(1, 0);  // logits layout: [unknown, BG]; use b_cls[0] as w
    p.b_cls[0] = 1.0;
    OptimizerConfig oc;
    oc.weight_decay = 0.0;
    auto s = OptimizerState::init(p, oc);
    ParamGrads g = ParamGrads::zeros_like(p);
    g.b_cls[0] = 2.0 * p.b_cls[0];
    apply_gradients(p, g, s);
    CHECK(std::abs(p.b_cls[0]) < 1.0);
  }
  SECTION("non-finite gradient is rejected") {
    auto p = zero_params(2, 1);
    auto s = OptimizerState::init(p, OptimizerConfig{});
    ParamGrads g = ParamGrads::zeros_like(p);
    g.b_cls[0] = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_AS(apply_gradients(p, g, s), ContractError);
  }
  SECTION("update is deterministic") {
    auto run = [] {
      auto p = init_detector(4, {0}, 0, 3, 0.1);
      auto s = OptimizerState::init(p, OptimizerConfig{});
      Rng rng(12);
      for (int i = 0; i < 20; ++i) {
        ParamGrads g = ParamGrads::zeros_like(p);
        Rng gr(derive_stream(99, i));
        for (double& v : g.w_cls) v = gr.gaussian();
        apply_gradients(p, g, s);
      }
      return p.w_cls;
    };
    CHECK(run() == run());
  }
  SECTION("200 steps separate a 2-class linear toy problem") {
    // logistic-style toy: two gaussian blobs, BCE per class on a 2-known
    // head; convexity of the linear+BCE objective guarantees convergence
    Rng rng(21);
    const int d = 4;
    auto p = init_detector(d, {0, 1}, 0, 7, 0.01);
    OptimizerConfig oc;
    oc.learning_rate = 5e-2;
    oc.weight_decay = 0.0;
    auto s = OptimizerState::init(p, oc);
    std::vector<std::vector<double>> xs;
    std::vector<int> ys;
    for (int i = 0; i < 60; ++i) {
      std::vector<double> x(d);
      const int y = i % 2;
      for (int k = 0; k < d; ++k) x[k] = rng.gaussian() * 0.2 + (y == 0 ? 1.0 : -1.0);
      xs.push_back(x);
      ys.push_back(y);
    }
    double final_loss = 0.0;
    for (int step = 0; step < 200; ++step) {
      ParamGrads g = ParamGrads::zeros_like(p);
      final_loss = 0.0;
      for (size_t i = 0; i < xs.size(); ++i) {
        const auto [z, delta] = forward(p, xs[i]);
        // BCE on the two known logits only
        for (int c = 0; c < 2; ++c) {
          const double t = (ys[i] == c) ? 1.0 : 0.0;
          const double pc = 1.0 / (1.0 + std::exp(-z[c]));
          final_loss += -(t * std::log(std::max(pc, 1e-12)) +
                          (1 - t) * std::log(std::max(1 - pc, 1e-12)));
          const double dz = pc - t;
          for (int k = 0; k < d; ++k) g.w_cls[k * p.n_logits() + c] += xs[i][k] * dz;
          g.b_cls[c] += dz;
        }
      }
      g.scale(1.0 / xs.size());
      final_loss /= xs.size();
      apply_gradients(p, g, s);
    }
    CHECK(final_loss < 0.05);
  }
}
