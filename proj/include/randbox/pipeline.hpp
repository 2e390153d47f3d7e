#pragma once

/// Training and inference orchestration: warm-up-gated train steps, the
/// incremental task protocol with exemplar fine-tuning, grid inference with
/// NMS, per-task evaluation, and the finite-difference gradient checker.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "randbox/losses.hpp"
#include "randbox/matching.hpp"
#include "randbox/metrics.hpp"
#include "randbox/model.hpp"
#include "randbox/samplers.hpp"
#include "randbox/world.hpp"

namespace randbox {

enum class SamplerKind { kRandom, kBiased, kGrid };

inline std::string to_string(SamplerKind k) {
  switch (k) {
    case SamplerKind::kRandom: return "random";
    case SamplerKind::kBiased: return "biased";
    default: return "grid";
  }
}

struct TrainConfig {
  int iterations = 2000;
  double warmup_frac = 0.05;  // unknown-loss gate length as a fraction
  int warmup_iters = -1;      // >= 0 overrides the fraction (fidelity mode)
  int batch_scenes = 8;
  SamplerKind sampler = SamplerKind::kRandom;
  std::uint64_t seed = 7;
  OptimizerConfig optim;
  int finetune_iters = 500;
  double finetune_lr_scale = 0.1;  // fine-tuning runs at a reduced rate
  int exemplars_per_class = 5;
  bool replay = true;
  int hidden_dim = 0;
  double init_sigma = 0.01;
  double init_fg_bias = 0.0;  // optional negative prior on foreground logits
};

inline int resolved_warmup(const TrainConfig& t) {
  const int w = t.warmup_iters >= 0
                    ? t.warmup_iters
                    : static_cast<int>(std::lround(t.warmup_frac * t.iterations));
  RB_CHECK_MSG(w < t.iterations, "train: warmup must be shorter than the schedule");
  return w;
}

struct EvalConfig {
  double nms_thresh = 0.6;
  double conf_thresh = 0.1;
  int pre_nms_per_class = 300;  // score cap on candidates entering NMS
  int separability_proposals = 300;
  std::uint64_t seed = 99;
};

/// Everything an experiment arm needs besides the world itself.
struct ExperimentProfile {
  SamplerConfig sampler;      // training-proposal count + distribution
  double jitter_sigma = 0.05; // biased-arm jitter
  double biased_mix = 0.9;    // biased-arm gt-jitter fraction
  GridConfig grid;            // inference grid (and kGrid training sampler)
  MatchConfig match;
  LossConfig loss;
  TrainConfig train;
  EvalConfig eval;
};

struct RunLogEntry {
  std::string phase;  // "train" or "finetune"
  int iter = 0;
  LossBreakdown loss;
};

struct RunLog {
  std::vector<RunLogEntry> entries;
};

namespace detail {

/// Map scene objects to loss targets, keeping only labels in `allowed`.
/// Backstop for the hidden-label discipline: anything that reaches the loss
/// path must own a logit column.
inline std::vector<GtTarget> visible_gts(const Scene& scene,
                                         const std::vector<int>& allowed,
                                         const DetectorParams& params) {
  std::vector<GtTarget> out;
  for (const auto& o : scene.objects) {
    if (std::find(allowed.begin(), allowed.end(), o.class_id) == allowed.end()) continue;
    const auto it =
        std::find(params.known_ids.begin(), params.known_ids.end(), o.class_id);
    RB_CHECK_MSG(it != params.known_ids.end(),
                 "hidden-label discipline: visible label has no logit column");
    out.push_back({o.box, static_cast<int>(it - params.known_ids.begin()), o.class_id});
  }
  return out;
}

}  // namespace detail

struct TrainContext {
  const World* world = nullptr;
  const ExperimentProfile* profile = nullptr;
  std::vector<int> allowed_labels;  // labels this phase may train on
  int warmup = 0;                   // iters with the unknown loss gated off
  std::uint64_t stream_salt = 0;    // task/phase discriminator for rng streams
  const std::vector<BBox>* grid_proposals = nullptr;  // cached for kGrid
};

/// One optimizer step over a scene batch. Proposals are redrawn fresh every
/// call; gradients are averaged over scenes in batch order.
inline LossBreakdown train_step(DetectorParams& params, OptimizerState& opt,
                                const TrainContext& ctx,
                                const std::vector<const Scene*>& batch, int iter) {
  RB_CHECK_MSG(iter >= 0 && !batch.empty(), "train_step: bad batch/iter");
  const ExperimentProfile& prof = *ctx.profile;
  const ClassCatalog& cat = ctx.world->catalog;
  const int d = params.feature_dim;
  const int C = params.n_logits();

  ParamGrads grads = ParamGrads::zeros_like(params);
  LossBreakdown acc;
  std::vector<double> features;
  std::vector<BBox> proposals;

  for (size_t si = 0; si < batch.size(); ++si) {
    const Scene& scene = *batch[si];
    Rng rng(derive_stream(prof.train.seed, 0x5354u, ctx.stream_salt,
                          static_cast<std::uint64_t>(iter), si));
    const auto gts = detail::visible_gts(scene, ctx.allowed_labels, params);

    proposals.clear();
    switch (prof.train.sampler) {
      case SamplerKind::kRandom:
        proposals = sample_random_boxes(prof.sampler, rng);
        break;
      case SamplerKind::kBiased: {
        std::vector<BBox> gt_boxes;
        for (const auto& g : gts) gt_boxes.push_back(g.box);
        proposals = sample_biased_boxes(prof.sampler.n_train_proposals, gt_boxes,
                                        prof.jitter_sigma, prof.biased_mix, rng);
        break;
      }
      case SamplerKind::kGrid:
        RB_CHECK_MSG(ctx.grid_proposals != nullptr, "train_step: grid not prepared");
        proposals = *ctx.grid_proposals;
        break;
    }
    const int n = static_cast<int>(proposals.size());

    features.resize(static_cast<size_t>(n) * d);
    for (int i = 0; i < n; ++i)
      roi_feature(scene, cat, proposals[i], ctx.world->cfg.feature_noise,
                  features.data() + static_cast<size_t>(i) * d);

    const ForwardBatch fwd = forward_batch(params, features.data(), n);
    std::vector<std::array<double, 4>> decoded(n);
    for (int i = 0; i < n; ++i) decoded[i] = decode_delta_raw(proposals[i], fwd.delta(i));

    auto known = dynamic_k_match(decoded, fwd.logits, C, gts, prof.match);
    std::vector<int> unknown;
    if (iter >= ctx.warmup) {
      std::vector<double> scores(n);
      for (int i = 0; i < n; ++i)
        scores[i] = matching_score(fwd.logits.data() + static_cast<size_t>(i) * C, C);
      unknown = select_unknown_fg(scores, known, prof.match.top_n_unknown);
    }
    const Partition part = make_partition(n, std::move(known), std::move(unknown));

    const ScenePredictions pred{std::span<const BBox>(proposals),
                                std::span<const double>(fwd.logits),
                                std::span<const double>(fwd.deltas), n, C};
    LossGrads lg;
    const LossBreakdown lb = total_loss(pred, part, gts, prof.loss, &lg);
    backward_batch(params, features.data(), n, fwd, lg.dlogits, lg.ddeltas, grads);

    acc.known_cls += lb.known_cls;
    acc.known_reg += lb.known_reg;
    acc.unknown_cls += lb.unknown_cls;
    acc.bg_cls += lb.bg_cls;
  }

  const double inv = 1.0 / static_cast<double>(batch.size());
  grads.scale(inv);
  acc.known_cls *= inv;
  acc.known_reg *= inv;
  acc.unknown_cls *= inv;
  acc.bg_cls *= inv;
  acc.assemble(prof.loss);
  apply_gradients(params, grads, opt);
  return acc;
}

namespace detail {

inline void run_phase(DetectorParams& params, OptimizerState& opt, TrainContext& ctx,
                      const std::vector<Scene>& pool, int iterations,
                      const std::string& phase, RunLog* log) {
  RB_CHECK_MSG(!pool.empty(), "run_phase: empty scene pool");
  const int batch_size = ctx.profile->train.batch_scenes;
  std::vector<const Scene*> batch(batch_size);
  for (int iter = 0; iter < iterations; ++iter) {
    for (int j = 0; j < batch_size; ++j)
      batch[j] = &pool[(static_cast<size_t>(iter) * batch_size + j) % pool.size()];
    const LossBreakdown lb = train_step(params, opt, ctx, batch, iter);
    if (log) log->entries.push_back({phase, iter, lb});
  }
}

}  // namespace detail

/// Train on one task: fresh params on the first call, otherwise the head
/// grows zero-initialized columns for the task's new classes. Fine-tuning on
/// a class-balanced exemplar set follows for incremental tasks when replay
/// is enabled.
inline DetectorParams run_task(std::optional<DetectorParams> prev, const World& world,
                               int task_index, const ExperimentProfile& prof,
                               RunLog* log = nullptr) {
  const TaskView tv = make_task_view(world.catalog, task_index);
  DetectorParams params;
  if (!prev.has_value()) {
    RB_CHECK_MSG(task_index == 0, "run_task: continuation requires previous params");
    params = init_detector(world.catalog.feature_dim, tv.known_ids,
                           prof.train.hidden_dim,
                           derive_stream(prof.train.seed, 0x696eu), prof.train.init_sigma,
                           prof.train.init_fg_bias);
  } else {
    std::vector<int> new_ids;
    for (int c : tv.known_ids)
      if (std::find(prev->known_ids.begin(), prev->known_ids.end(), c) ==
          prev->known_ids.end())
        new_ids.push_back(c);
    params = grow_known_classes(*prev, static_cast<int>(new_ids.size()), new_ids);
  }

  std::vector<BBox> grid_cache;
  if (prof.train.sampler == SamplerKind::kGrid) grid_cache = build_inference_grid(prof.grid);

  TrainContext ctx;
  ctx.world = &world;
  ctx.profile = &prof;
  ctx.grid_proposals = grid_cache.empty() ? nullptr : &grid_cache;

  // fresh-data phase: only the task's new classes carry labels
  OptimizerState opt = OptimizerState::init(params, prof.train.optim);
  ctx.allowed_labels = tv.new_ids;
  ctx.warmup = resolved_warmup(prof.train);
  ctx.stream_salt = derive_stream(0x7068u, static_cast<std::uint64_t>(task_index), 0u);
  detail::run_phase(params, opt, ctx, world.train_scenes[task_index],
                    prof.train.iterations, "train", log);

  if (task_index > 0 && prof.train.replay && prof.train.finetune_iters > 0 &&
      prof.train.exemplars_per_class > 0) {
    Rng ex_rng(derive_stream(prof.train.seed, 0x6578u,
                             static_cast<std::uint64_t>(task_index)));
    const auto exemplars =
        make_exemplar_set(world.cfg, prof.train.exemplars_per_class, tv.known_ids,
                          tv.unknown_ids, ex_rng);
    OptimizerConfig ft_optim = prof.train.optim;
    ft_optim.learning_rate *= prof.train.finetune_lr_scale;
    ExperimentProfile ft_prof = prof;
    ft_prof.train.optim = ft_optim;
    TrainContext ft_ctx = ctx;
    ft_ctx.profile = &ft_prof;
    OptimizerState ft_opt = OptimizerState::init(params, ft_optim);
    ft_ctx.allowed_labels = tv.known_ids;  // replay exemplars are fully labelled
    ft_ctx.warmup = 0;
    ft_ctx.stream_salt = derive_stream(0x7068u, static_cast<std::uint64_t>(task_index), 1u);
    detail::run_phase(params, ft_opt, ft_ctx, exemplars, prof.train.finetune_iters,
                      "finetune", log);
  }
  return params;
}

/// Grid inference. Every (box, class) pair over K and "unknown" whose
/// sigmoid reaches conf_thresh becomes a candidate (BG never detects), then
/// class-wise NMS prunes. A box may carry several class hypotheses, which is
/// what lets an unknown-object box surface as "unknown" even when a shared
/// feature also excites a known class.
inline std::vector<Detection> detect(const DetectorParams& params, const Scene& scene,
                                     const ClassCatalog& cat, double feature_noise,
                                     const std::vector<BBox>& grid_boxes,
                                     double nms_thresh, double conf_thresh,
                                     int pre_nms_per_class = 300) {
  const int d = params.feature_dim;
  const int C = params.n_logits();
  const int n = static_cast<int>(grid_boxes.size());
  std::vector<double> features(static_cast<size_t>(n) * d);
  for (int i = 0; i < n; ++i)
    roi_feature(scene, cat, grid_boxes[i], feature_noise,
                features.data() + static_cast<size_t>(i) * d);
  const ForwardBatch fwd = forward_batch(params, features.data(), n);

  // one candidate list per class slot; box decoded lazily per grid box
  std::vector<std::vector<Detection>> per_class(C - 1);
  for (int i = 0; i < n; ++i) {
    const double* z = fwd.logits.data() + static_cast<size_t>(i) * C;
    bool decoded = false;
    BBox box(0.5, 0.5, 1.0, 1.0);
    for (int c = 0; c + 1 < C; ++c) {  // BG excluded
      const double score = sigmoid(z[c]);
      if (score < conf_thresh) continue;
      if (!decoded) {
        box = decode_delta(grid_boxes[i], fwd.delta(i));
        decoded = true;
      }
      const int class_id = c < params.n_known ? params.known_ids[c] : kUnknownClassId;
      per_class[c].push_back({box, class_id, score});
    }
  }
  std::vector<Detection> cands;
  for (auto& bucket : per_class) {
    if (pre_nms_per_class > 0 &&
        static_cast<int>(bucket.size()) > pre_nms_per_class) {
      std::stable_sort(bucket.begin(), bucket.end(),
                       [](const Detection& a, const Detection& b) { return a.score > b.score; });
      bucket.erase(bucket.begin() + pre_nms_per_class, bucket.end());
    }
    cands.insert(cands.end(), bucket.begin(), bucket.end());
  }
  return nms(cands, nms_thresh);
}

struct Evaluation {
  MetricsReport report;
  EvalFixture fixture;
  std::vector<SeparabilityRow> curve;
};

/// Evaluate on a task's held-out scenes: detection metrics plus the
/// matching-score separability diagnostic over a fixed seeded proposal set.
inline Evaluation evaluate_task(const DetectorParams& params, const World& world,
                                int task_index, const ExperimentProfile& prof,
                                const std::vector<BBox>* grid_boxes = nullptr) {
  const TaskView tv = make_task_view(world.catalog, task_index);
  std::vector<BBox> local_grid;
  if (!grid_boxes) {
    local_grid = build_inference_grid(prof.grid);
    grid_boxes = &local_grid;
  }

  Evaluation ev;
  ev.fixture.known_ids = tv.known_ids;
  ev.fixture.unknown_ids = tv.unknown_ids;
  const auto& scenes = world.eval_scenes[task_index];
  const int C = params.n_logits();

  std::vector<double> feat(world.catalog.feature_dim);
  for (size_t s = 0; s < scenes.size(); ++s) {
    ev.fixture.detections.push_back(detect(params, scenes[s], world.catalog,
                                           world.cfg.feature_noise, *grid_boxes,
                                           prof.eval.nms_thresh, prof.eval.conf_thresh,
                                           prof.eval.pre_nms_per_class));
    ev.fixture.gt.push_back(scenes[s].objects);

    // separability probes: one fixed random proposal set per scene
    SamplerConfig sep_cfg;
    sep_cfg.n_train_proposals = prof.eval.separability_proposals;
    Rng rng(derive_stream(prof.eval.seed, 0x7365u, s));
    const auto probes = sample_random_boxes(sep_cfg, rng);
    for (const auto& p : probes) {
      roi_feature(scenes[s], world.catalog, p, world.cfg.feature_noise, feat.data());
      const ForwardBatch f1 = forward_batch(params, feat.data(), 1);
      ev.curve.push_back({matching_score(f1.logits.data(), C),
                          label_proposal(p, scenes[s].objects, ev.fixture)});
    }
  }

  ev.report.n_scenes = static_cast<int>(scenes.size());
  ev.report.k_map50 = known_map(ev.fixture, 0.5, &ev.report.per_class_ap);
  ev.report.u_recall50 = unknown_recall(ev.fixture, 0.5);
  ev.report.wi80 = wilderness_impact(ev.fixture, 0.8);
  ev.report.a_ose50 = absolute_ose(ev.fixture, 0.5);
  const UApResult uap = unknown_ap(ev.fixture);
  ev.report.u_ap = uap.mean;
  ev.report.u_ap50 = uap.ap50;
  ev.report.u_ap75 = uap.ap75;
  auto [curve, auc] = separability_summary(std::move(ev.curve));
  ev.curve = std::move(curve);
  ev.report.separability_auroc = auc;
  return ev;
}

struct ProtocolResult {
  std::vector<MetricsReport> per_task;
  std::vector<RunLog> logs;
  std::vector<DetectorParams> checkpoints;  // one per task
};

/// The incremental protocol: train task 0 from scratch, then per task grow,
/// train on new-class data, optionally fine-tune on exemplars, and evaluate
/// against the updated known/unknown split.
inline ProtocolResult run_incremental_protocol(const World& world,
                                               const ExperimentProfile& prof,
                                               int n_tasks_limit = -1) {
  const int n_tasks = n_tasks_limit > 0
                          ? std::min(n_tasks_limit, world.cfg.n_tasks)
                          : world.cfg.n_tasks;
  ProtocolResult out;
  std::optional<DetectorParams> params;
  const std::vector<BBox> grid = build_inference_grid(prof.grid);
  for (int t = 0; t < n_tasks; ++t) {
    RunLog log;
    params = run_task(params, world, t, prof, &log);
    out.logs.push_back(std::move(log));
    out.per_task.push_back(evaluate_task(*params, world, t, prof, &grid).report);
    out.checkpoints.push_back(*params);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Gradient checking
// ---------------------------------------------------------------------------

namespace detail {
template <class F>
double central_diff(F&& f, double x0, double eps) {
  return (f(x0 + eps) - f(x0 - eps)) / (2.0 * eps);
}
}  // namespace detail

struct GradCheckFixture {
  std::vector<double> features;  // n x d
  std::vector<BBox> proposals;
  std::vector<GtTarget> gts;
  Partition part;  // fixed at the unperturbed params
  LossConfig loss;
  int n = 0;
};

/// Random (features, proposals, gts) batch with the partition frozen from
/// the given params, so the loss is a smooth function of the parameters.
inline GradCheckFixture make_gradcheck_fixture(const DetectorParams& params, Rng& rng,
                                               int n_proposals, int n_gts,
                                               const LossConfig& loss) {
  GradCheckFixture fx;
  fx.loss = loss;
  fx.n = n_proposals;
  const int d = params.feature_dim;
  fx.features.resize(static_cast<size_t>(n_proposals) * d);
  for (double& x : fx.features) x = rng.gaussian();
  auto rand_box = [&] {
    const double w = rng.uniform(0.1, 0.35);
    const double h = rng.uniform(0.1, 0.35);
    return BBox(rng.uniform(0.5 * w, 1.0 - 0.5 * w), rng.uniform(0.5 * h, 1.0 - 0.5 * h),
                w, h);
  };
  for (int i = 0; i < n_proposals; ++i) fx.proposals.push_back(rand_box());
  for (int g = 0; g < n_gts; ++g)
    fx.gts.push_back({rand_box(), rng.uniform_int(std::max(1, params.n_known)), 0});

  const ForwardBatch fwd = forward_batch(params, fx.features.data(), n_proposals);
  std::vector<std::array<double, 4>> decoded(n_proposals);
  for (int i = 0; i < n_proposals; ++i)
    decoded[i] = decode_delta_raw(fx.proposals[i], fwd.delta(i));
  MatchConfig mc;
  auto known = dynamic_k_match(decoded, fwd.logits, params.n_logits(), fx.gts, mc);
  std::vector<double> scores(n_proposals);
  for (int i = 0; i < n_proposals; ++i)
    scores[i] =
        matching_score(fwd.logits.data() + static_cast<size_t>(i) * params.n_logits(),
                       params.n_logits());
  auto unknown = select_unknown_fg(scores, known, 5);
  fx.part = make_partition(n_proposals, std::move(known), std::move(unknown));
  return fx;
}

namespace detail {

inline double fixture_loss(const DetectorParams& params, const GradCheckFixture& fx) {
  const ForwardBatch fwd = forward_batch(params, fx.features.data(), fx.n);
  const ScenePredictions pred{std::span<const BBox>(fx.proposals),
                              std::span<const double>(fwd.logits),
                              std::span<const double>(fwd.deltas), fx.n,
                              params.n_logits()};
  return total_loss(pred, fx.part, fx.gts, fx.loss).total;
}

}  // namespace detail

/// Max relative error between the analytic parameter gradient and central
/// finite differences over a coordinate subsample (>= 500 when available).
/// Regression columns whose smooth-L1 argument sits near the |x|=1 kink are
/// excluded, as are pairs whose GIoU min/max selections sit on a tie.
inline double check_gradients(const DetectorParams& params, const GradCheckFixture& fx,
                              double epsilon, int max_coords = 2000,
                              std::uint64_t sample_seed = 17) {
  RB_CHECK_MSG(epsilon >= 1e-7 && epsilon <= 1e-3, "check_gradients: epsilon range");

  // analytic gradient
  const ForwardBatch fwd = forward_batch(params, fx.features.data(), fx.n);
  const ScenePredictions pred{std::span<const BBox>(fx.proposals),
                              std::span<const double>(fwd.logits),
                              std::span<const double>(fwd.deltas), fx.n,
                              params.n_logits()};
  LossGrads lg;
  total_loss(pred, fx.part, fx.gts, fx.loss, &lg);
  ParamGrads analytic = ParamGrads::zeros_like(params);
  backward_batch(params, fx.features.data(), fx.n, fwd, lg.dlogits, lg.ddeltas, analytic);

  // kink exclusion: delta components close to the smooth-L1 corner, or GIoU
  // corner ties, poison every reg column they touch
  bool reg_excluded[4] = {false, false, false, false};
  for (const auto& [p, g] : fx.part.known_fg) {
    const BoxDelta d = fwd.delta(p);
    const BoxDelta t = encode_delta(fx.proposals[p], fx.gts[g].box);
    const double diff[4] = {d.dx - t.dx, d.dy - t.dy, d.dw - t.dw, d.dh - t.dh};
    for (int k = 0; k < 4; ++k)
      if (std::abs(std::abs(diff[k]) - 1.0) < 1e-3) reg_excluded[k] = true;
    const auto raw = decode_delta_raw(fx.proposals[p], d);
    const BBox& gb = fx.gts[g].box;
    const double ax1 = raw[0] - 0.5 * raw[2], ax2 = raw[0] + 0.5 * raw[2];
    const double ay1 = raw[1] - 0.5 * raw[3], ay2 = raw[1] + 0.5 * raw[3];
    const double ties[4] = {ax1 - gb.x1(), ax2 - gb.x2(), ay1 - gb.y1(), ay2 - gb.y2()};
    for (double v : ties)
      if (std::abs(v) < 1e-5) {
        reg_excluded[0] = reg_excluded[1] = reg_excluded[2] = reg_excluded[3] = true;
      }
    const double iw = std::min(ax2, gb.x2()) - std::max(ax1, gb.x1());
    const double ih = std::min(ay2, gb.y2()) - std::max(ay1, gb.y1());
    if (std::abs(iw) < 1e-5 || std::abs(ih) < 1e-5)
      reg_excluded[0] = reg_excluded[1] = reg_excluded[2] = reg_excluded[3] = true;
  }

  struct Coord {
    std::vector<double> DetectorParams::* member;
    const std::vector<double>* grad;
    size_t index;
  };
  std::vector<Coord> coords;
  auto collect = [&](std::vector<double> DetectorParams::* member,
                     const std::vector<double>& grad, bool is_reg_w, bool is_reg_b) {
    const size_t size = (params.*member).size();
    for (size_t i = 0; i < size; ++i) {
      if (is_reg_w && reg_excluded[i % 4]) continue;
      if (is_reg_b && reg_excluded[i]) continue;
      coords.push_back({member, &grad, i});
    }
  };
  collect(&DetectorParams::w_hidden, analytic.w_hidden, false, false);
  collect(&DetectorParams::b_hidden, analytic.b_hidden, false, false);
  collect(&DetectorParams::w_cls, analytic.w_cls, false, false);
  collect(&DetectorParams::b_cls, analytic.b_cls, false, false);
  collect(&DetectorParams::w_reg, analytic.w_reg, true, false);
  collect(&DetectorParams::b_reg, analytic.b_reg, false, true);

  // deterministic subsample
  Rng rng(sample_seed);
  if (static_cast<int>(coords.size()) > max_coords) {
    for (size_t i = coords.size() - 1; i > 0; --i)
      std::swap(coords[i], coords[rng.uniform_int(static_cast<int>(i) + 1)]);
    coords.resize(max_coords);
  }

  double max_rel = 0.0;
  DetectorParams scratch = params;
  for (const auto& c : coords) {
    double& slot = (scratch.*(c.member))[c.index];
    const double saved = slot;
    slot = saved + epsilon;
    const double fp = detail::fixture_loss(scratch, fx);
    slot = saved - epsilon;
    const double fm = detail::fixture_loss(scratch, fx);
    slot = saved;
    const double fd = (fp - fm) / (2.0 * epsilon);
    const double an = (*c.grad)[c.index];
    const double rel = std::abs(fd - an) / std::max({1e-6, std::abs(fd), std::abs(an)});
    max_rel = std::max(max_rel, rel);
  }
  return max_rel;
}

}  // namespace randbox
