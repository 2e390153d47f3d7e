#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "randbox/pipeline.hpp"

using namespace randbox;

namespace {

WorldConfig small_world_cfg() {
  WorldConfig w;
  w.n_tasks = 2;
  w.classes_per_task = 3;
  w.n_unknown_forever = 3;
  w.feature_dim = 24;
  w.train_scenes_per_task = 48;
  w.eval_scenes_per_task = 16;
  w.seed = 77;
  return w;
}

ExperimentProfile small_profile() {
  ExperimentProfile p;
  p.sampler.n_train_proposals = 128;
  p.grid = GridConfig{6, 6, 64};
  p.train.iterations = 160;
  p.train.warmup_iters = 20;
  p.train.batch_scenes = 4;
  p.train.finetune_iters = 60;
  p.train.exemplars_per_class = 3;
  p.train.seed = 5;
  p.eval.separability_proposals = 100;
  return p;
}

}  // namespace

TEST_CASE("warmup gates the unknown loss exactly", "[pipeline]") {
  const World world = generate_world(small_world_cfg());
  const ExperimentProfile prof = small_profile();
  RunLog log;
  run_task(std::nullopt, world, 0, prof, &log);
  REQUIRE(static_cast<int>(log.entries.size()) == prof.train.iterations);
  bool any_unknown_after = false;
  for (const auto& e : log.entries) {
    if (e.phase != "train") continue;
    if (e.iter < prof.train.warmup_iters) {
      CHECK(e.loss.unknown_cls == 0.0);
    } else if (e.loss.unknown_cls > 0.0) {
      any_unknown_after = true;
    }
  }
  CHECK(any_unknown_after);
}

TEST_CASE("train_step is deterministic", "[pipeline]") {
  const World world = generate_world(small_world_cfg());
  const ExperimentProfile prof = small_profile();
  const TaskView tv = make_task_view(world.catalog, 0);

  auto run_once = [&] {
    DetectorParams params = init_detector(world.catalog.feature_dim, tv.known_ids, 0,
                                          derive_stream(prof.train.seed, 0x696eu), 0.01);
    OptimizerState opt = OptimizerState::init(params, prof.train.optim);
    TrainContext ctx;
    ctx.world = &world;
    ctx.profile = &prof;
    ctx.allowed_labels = tv.new_ids;
    ctx.warmup = 2;
    std::vector<const Scene*> batch;
    for (int i = 0; i < 4; ++i) batch.push_back(&world.train_scenes[0][i]);
    for (int iter = 0; iter < 5; ++iter) train_step(params, opt, ctx, batch, iter);
    return params.w_cls;
  };
  CHECK(run_once() == run_once());
}

TEST_CASE("training loss decreases", "[pipeline]") {
  const World world = generate_world(small_world_cfg());
  const ExperimentProfile prof = small_profile();
  RunLog log;
  run_task(std::nullopt, world, 0, prof, &log);
  auto avg_total = [&](int lo, int hi) {
    double acc = 0.0;
    int n = 0;
    for (const auto& e : log.entries)
      if (e.phase == "train" && e.iter >= lo && e.iter < hi) {
        acc += e.loss.total;
        ++n;
      }
    return acc / n;
  };
  CHECK(avg_total(prof.train.iterations - 30, prof.train.iterations) <
        avg_total(0, 30));
}

TEST_CASE("incremental protocol grows the head and keeps old columns",
          "[pipeline]") {
  const World world = generate_world(small_world_cfg());
  ExperimentProfile prof = small_profile();
  prof.train.iterations = 60;
  prof.train.warmup_iters = 10;
  prof.train.finetune_iters = 20;
  const auto res = run_incremental_protocol(world, prof);
  REQUIRE(res.checkpoints.size() == 2);
  CHECK(res.checkpoints[0].n_logits() == 3 + 2);
  CHECK(res.checkpoints[1].n_logits() == 6 + 2);
  CHECK(res.per_task.size() == 2);
  // final task: unknown set is the never-known pool only
  const TaskView tv1 = make_task_view(world.catalog, 1);
  CHECK(tv1.unknown_ids == world.catalog.unknown_pool);
}

TEST_CASE("hidden-label discipline is enforced", "[pipeline]") {
  const World world = generate_world(small_world_cfg());
  const ExperimentProfile prof = small_profile();
  const TaskView tv = make_task_view(world.catalog, 0);
  DetectorParams params = init_detector(world.catalog.feature_dim, tv.known_ids, 0, 1, 0.01);
  OptimizerState opt = OptimizerState::init(params, prof.train.optim);
  TrainContext ctx;
  ctx.world = &world;
  ctx.profile = &prof;
  ctx.allowed_labels = tv.unknown_ids;  // deliberately wrong: unknown labels
  ctx.warmup = 0;
  // find a scene that actually contains an unknown object
  const Scene* bad = nullptr;
  for (const auto& s : world.train_scenes[0])
    for (const auto& o : s.objects)
      if (std::find(tv.unknown_ids.begin(), tv.unknown_ids.end(), o.class_id) !=
          tv.unknown_ids.end())
        bad = &s;
  REQUIRE(bad != nullptr);
  CHECK_THROWS_AS(train_step(params, opt, ctx, {bad}, 0), ContractError);
}

TEST_CASE("detect basics", "[pipeline]") {
  const World world = generate_world(small_world_cfg());
  const TaskView tv = make_task_view(world.catalog, 0);
  const auto grid = build_inference_grid(GridConfig{4, 4, 25});
  const Scene& scene = world.eval_scenes[0][0];

  SECTION("conf threshold 1.0 yields nothing") {
    DetectorParams p = init_detector(world.catalog.feature_dim, tv.known_ids, 0, 1, 0.01);
    CHECK(detect(p, scene, world.catalog, world.cfg.feature_noise, grid, 0.6, 1.0).empty());
  }
  SECTION("zero params: every box scores 0.5 and NMS leaves a deterministic skeleton") {
    DetectorParams p = init_detector(world.catalog.feature_dim, tv.known_ids, 0, 1, 0.0);
    const auto d1 = detect(p, scene, world.catalog, world.cfg.feature_noise, grid, 0.6, 0.1);
    const auto d2 = detect(p, scene, world.catalog, world.cfg.feature_noise, grid, 0.6, 0.1);
    REQUIRE_FALSE(d1.empty());
    REQUIRE(d1.size() == d2.size());
    for (size_t i = 0; i < d1.size(); ++i) {
      CHECK(d1[i].score == 0.5);
      CHECK(same_box(d1[i].box, d2[i].box));
    }
  }
}

TEST_CASE("central differences are near-exact on a quadratic", "[pipeline]") {
  auto f = [](double w) { return 3.0 * w * w + 2.0 * w + 1.0; };
  for (double x : {-1.5, -0.2, 0.0, 0.7, 2.0}) {
    const double fd = randbox::detail::central_diff(f, x, 1e-5);
    const double want = 6.0 * x + 2.0;
    CHECK(std::abs(fd - want) <=
          1e-8 * std::max(1.0, std::abs(want)));
  }
}

TEST_CASE("analytic gradients match finite differences on the full loss",
          "[pipeline]") {
  Rng rng(2024);
  for (int trial = 0; trial < 8; ++trial) {
    std::vector<int> ids(3);
    for (int i = 0; i < 3; ++i) ids[i] = i;
    DetectorParams params =
        init_detector(12, ids, 0, derive_stream(100, trial), 0.05);
    LossConfig loss;
    loss.cls_mode = (trial % 2 == 0) ? ClsMode::kBce : ClsMode::kFocal;
    const auto fx = make_gradcheck_fixture(params, rng, 24, 2, loss);
    const double err = check_gradients(params, fx, 1e-5, 600);
    CHECK(err <= 1e-4);
  }
}

TEST_CASE("evaluation produces a full report", "[pipeline]") {
  const World world = generate_world(small_world_cfg());
  ExperimentProfile prof = small_profile();
  prof.train.iterations = 120;
  RunLog log;
  const auto params = run_task(std::nullopt, world, 0, prof, &log);
  const auto ev = evaluate_task(params, world, 0, prof);
  CHECK(ev.report.n_scenes == world.cfg.eval_scenes_per_task);
  CHECK(ev.report.k_map50 >= 0.0);
  CHECK(ev.report.k_map50 <= 1.0);
  CHECK(ev.report.u_recall50 >= 0.0);
  CHECK(ev.report.a_ose50 >= 0);
  CHECK_FALSE(ev.curve.empty());
  CHECK(ev.report.separability_auroc >= 0.0);
  CHECK(ev.report.separability_auroc <= 1.0);
}
