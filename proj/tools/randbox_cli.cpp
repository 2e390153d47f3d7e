// Command-line front end: world generation, training/evaluation of the
// incremental protocol, ablation sweeps and the separability plot. All
// outputs embed the resolved config and the world-file hash.

#include <filesystem>
#include <iostream>
#include <optional>

#include <CLI11.hpp>

#include "randbox/experiment.hpp"
#include "randbox/serialize.hpp"

namespace fs = std::filesystem;
using namespace randbox;

namespace {

ExperimentConfig load_config(const std::string& path, std::optional<std::uint64_t> seed) {
  ExperimentConfig cfg =
      path.empty() ? ExperimentConfig{} : config_from_string(read_file(path));
  if (seed.has_value()) {
    cfg.profile.train.seed = *seed;
    cfg.world.seed = derive_stream(*seed, 0x776fULL);
  }
  return cfg;
}

std::string provenance_line(const ExperimentConfig& cfg, const std::string& world_hash) {
  Json j;
  j["config"] = config_to_json(cfg);
  j["world_hash"] = world_hash;
  return j.dump();
}

World load_world(const std::string& path, std::string* hash_out) {
  const std::string bytes = read_file(path);
  if (hash_out) *hash_out = fnv1a_hex(bytes);
  return world_from_json(Json::parse(bytes));
}

int cmd_gen_world(const ExperimentConfig& cfg, const std::string& out_dir) {
  fs::create_directories(out_dir);
  const World world = generate_world(cfg.world);
  Json j = world_to_json(world);
  j["generator_config"] = config_to_json(cfg);
  const std::string path = (fs::path(out_dir) / "world.json").string();
  write_file(path, j.dump(2) + "\n");
  std::cout << "wrote " << path << " (catalog hash " << catalog_hash(world.catalog)
            << ")\n";
  return 0;
}

int cmd_train(const ExperimentConfig& cfg, const std::string& world_path,
              const std::string& out_dir) {
  fs::create_directories(out_dir);
  std::string world_hash;
  const World world = load_world(world_path, &world_hash);
  const std::string cat_hash = catalog_hash(world.catalog);
  const Json resolved = config_to_json(cfg);

  ProtocolResult res = run_incremental_protocol(world, cfg.profile);

  RunLog merged;
  for (size_t t = 0; t < res.logs.size(); ++t) {
    for (auto e : res.logs[t].entries) {
      e.phase = "task" + std::to_string(t) + ":" + e.phase;
      merged.entries.push_back(e);
    }
  }
  Json log_head;
  log_head["type"] = "header";
  log_head["config"] = resolved;
  log_head["world_hash"] = world_hash;
  write_file((fs::path(out_dir) / "run_log.jsonl").string(),
             log_head.dump() + "\n" + run_log_to_jsonl(merged, res.per_task));

  for (size_t t = 0; t < res.per_task.size(); ++t) {
    Json j;
    j["schema"] = "randbox-metrics/1";
    j["task_index"] = static_cast<int>(t);
    j["metrics"] = metrics_to_json(res.per_task[t]);
    j["config"] = resolved;
    j["world_hash"] = world_hash;
    write_file((fs::path(out_dir) / ("metrics_task_" + std::to_string(t) + ".json")).string(),
               j.dump(2) + "\n");
    write_file(
        (fs::path(out_dir) / ("per_class_ap_task_" + std::to_string(t) + ".csv")).string(),
        per_class_ap_csv(res.per_task[t], provenance_line(cfg, world_hash)));
    write_file(
        (fs::path(out_dir) / ("checkpoint_task_" + std::to_string(t) + ".json")).string(),
        checkpoint_to_json(res.checkpoints[t], static_cast<int>(t), cat_hash, resolved)
                .dump(2) +
            "\n");
  }
  std::cout << "trained " << res.per_task.size() << " tasks; reports in " << out_dir
            << "\n";
  return 0;
}

int cmd_eval(const ExperimentConfig& cfg, const std::string& world_path,
             const std::string& ckpt_path, const std::string& out_dir) {
  fs::create_directories(out_dir);
  std::string world_hash;
  const World world = load_world(world_path, &world_hash);
  const Checkpoint ck = checkpoint_from_json(Json::parse(read_file(ckpt_path)));
  RB_CHECK_MSG(ck.catalog_hash == catalog_hash(world.catalog),
               "eval: checkpoint/world catalog hash mismatch");
  const auto ev = evaluate_task(ck.params, world, ck.task_index, cfg.profile);
  Json j;
  j["schema"] = "randbox-metrics/1";
  j["task_index"] = ck.task_index;
  j["metrics"] = metrics_to_json(ev.report);
  j["config"] = config_to_json(cfg);
  j["world_hash"] = world_hash;
  const std::string path =
      (fs::path(out_dir) / ("metrics_eval_task_" + std::to_string(ck.task_index) + ".json"))
          .string();
  write_file(path, j.dump(2) + "\n");
  std::cout << "wrote " << path << "\n";
  return 0;
}

int cmd_ablate(const ExperimentConfig& cfg, const AblationSpec& spec,
               const std::string& out_dir, int jobs) {
  fs::create_directories(out_dir);
  const auto cells = run_ablation(cfg, spec, jobs);
  const std::string prov = provenance_line(cfg, "none (worlds derived per seed)");
  write_file((fs::path(out_dir) / ("ablation_" + spec.axis + ".csv")).string(),
             ablation_csv(spec.axis, cells, prov));
  const auto rows = summarize_ablation(cells, spec.values);
  write_file((fs::path(out_dir) / ("ablation_" + spec.axis + "_summary.csv")).string(),
             ablation_summary_csv(spec.axis, rows, prov));

  // line plots per metric: mean with +-sd whiskers where the axis is numeric
  const bool numeric_axis = spec.axis == "N" || spec.axis == "beta" ||
                            spec.axis == "proposal_count";
  struct MetricSel {
    const char* name;
    double AblationSummaryRow::* mean;
    double AblationSummaryRow::* sd;
  };
  const MetricSel metrics[] = {
      {"k_map50", &AblationSummaryRow::k_map_mean, &AblationSummaryRow::k_map_sd},
      {"u_recall50", &AblationSummaryRow::u_recall_mean, &AblationSummaryRow::u_recall_sd},
      {"u_ap", &AblationSummaryRow::u_ap_mean, &AblationSummaryRow::u_ap_sd},
      {"auroc", &AblationSummaryRow::auroc_mean, &AblationSummaryRow::auroc_sd},
  };
  for (const auto& m : metrics) {
    SvgSeries mean_line, lo_line, hi_line;
    mean_line.label = std::string(m.name) + " mean";
    lo_line.color = hi_line.color = "#9ecae1";
    lo_line.label = "+-sd";
    for (size_t i = 0; i < rows.size(); ++i) {
      if (rows[i].n_ok == 0) continue;
      const double x = numeric_axis ? std::stod(rows[i].value) : static_cast<double>(i);
      mean_line.x.push_back(x);
      mean_line.y.push_back(rows[i].*(m.mean));
      lo_line.x.push_back(x);
      lo_line.y.push_back(rows[i].*(m.mean) - rows[i].*(m.sd));
      hi_line.x.push_back(x);
      hi_line.y.push_back(rows[i].*(m.mean) + rows[i].*(m.sd));
    }
    write_file((fs::path(out_dir) / ("ablation_" + spec.axis + "_" + m.name + ".svg")).string(),
               svg_plot({mean_line, lo_line, hi_line},
                        "ablation on " + spec.axis + ": " + m.name, spec.axis, m.name,
                        prov));
  }
  int failures = 0;
  for (const auto& c : cells)
    if (!c.outcome.ok) {
      ++failures;
      std::cerr << "cell value=" << c.value << " seed=" << c.seed
                << " failed: " << c.outcome.error << "\n";
    }
  std::cout << "ablation " << spec.axis << ": " << cells.size() - failures << "/"
            << cells.size() << " cells ok; tables in " << out_dir << "\n";
  return failures == 0 ? 0 : 1;
}

int cmd_plot_separability(const ExperimentConfig& cfg, const std::string& world_path,
                          const std::string& ckpt_path, const std::string& out_dir) {
  fs::create_directories(out_dir);
  std::string world_hash;
  const World world = load_world(world_path, &world_hash);
  const Checkpoint ck = checkpoint_from_json(Json::parse(read_file(ckpt_path)));
  RB_CHECK_MSG(ck.catalog_hash == catalog_hash(world.catalog),
               "plot-separability: checkpoint/world catalog hash mismatch");
  const auto ev = evaluate_task(ck.params, world, ck.task_index, cfg.profile);
  const std::string prov = provenance_line(cfg, world_hash);
  write_file((fs::path(out_dir) / "separability.csv").string(),
             separability_csv(ev.curve, prov));
  write_file((fs::path(out_dir) / "separability.svg").string(),
             separability_svg(ev.curve, ev.report.separability_auroc, prov));
  std::cout << "AUROC " << ev.report.separability_auroc << "; plot in " << out_dir << "\n";
  return 0;
}

int cmd_check(const ExperimentConfig& cfg) {
  int failures = 0;
  auto report = [&](const char* name, bool ok, const std::string& detail) {
    std::cout << (ok ? "[ok]   " : "[FAIL] ") << name;
    if (!detail.empty()) std::cout << " (" << detail << ")";
    std::cout << "\n";
    if (!ok) ++failures;
  };

  {  // gradient check, both classification modes
    Rng rng(31);
    double worst = 0.0;
    for (int trial = 0; trial < 10; ++trial) {
      std::vector<int> ids{0, 1, 2};
      DetectorParams params = init_detector(16, ids, 0, derive_stream(50, trial), 0.05);
      LossConfig loss = cfg.profile.loss;
      loss.cls_mode = trial % 2 == 0 ? ClsMode::kBce : ClsMode::kFocal;
      const auto fx = make_gradcheck_fixture(params, rng, 24, 2, loss);
      worst = std::max(worst, check_gradients(params, fx, 1e-5, 500));
    }
    report("gradients vs finite differences", worst <= 1e-4,
           "max rel err " + format_double(worst));
  }
  {  // grid contract
    const auto grid = build_inference_grid(cfg.profile.grid);
    const size_t want = static_cast<size_t>(cfg.profile.grid.n_scales) *
                        cfg.profile.grid.n_ratios * cfg.profile.grid.n_locations;
    report("inference grid size", grid.size() == want,
           std::to_string(grid.size()) + " boxes");
  }
  {  // partition exactness on a random step
    const World world = generate_world(cfg.world);
    const TaskView tv = make_task_view(world.catalog, 0);
    DetectorParams params =
        init_detector(world.catalog.feature_dim, tv.known_ids, 0, 3, 0.01);
    OptimizerState opt = OptimizerState::init(params, cfg.profile.train.optim);
    TrainContext ctx;
    ctx.world = &world;
    ctx.profile = &cfg.profile;
    ctx.allowed_labels = tv.new_ids;
    ctx.warmup = 0;
    bool ok = true;
    try {
      std::vector<const Scene*> batch{&world.train_scenes[0][0], &world.train_scenes[0][1]};
      train_step(params, opt, ctx, batch, 0);  // make_partition asserts exactness
    } catch (const std::exception&) {
      ok = false;
    }
    report("train step partition invariants", ok, "");
  }
  {  // NMS against the quadratic reference on a random set
    Rng rng(7);
    bool equal = true;
    for (int t = 0; t < 20 && equal; ++t) {
      std::vector<Detection> dets;
      const int n = 1 + rng.uniform_int(120);
      for (int i = 0; i < n; ++i) {
        const double w = rng.uniform(0.05, 0.4), h = rng.uniform(0.05, 0.4);
        dets.push_back({BBox(rng.uniform(w / 2, 1 - w / 2), rng.uniform(h / 2, 1 - h / 2),
                             w, h),
                        rng.uniform_int(3), rng.uniform()});
      }
      const auto kept = nms(dets, 0.6);
      // reference: mark-dominated scan
      std::vector<int> order(n);
      std::iota(order.begin(), order.end(), 0);
      std::stable_sort(order.begin(), order.end(),
                       [&](int a, int b) { return dets[a].score > dets[b].score; });
      std::vector<Detection> want;
      std::vector<bool> dead(n, false);
      for (size_t i = 0; i < order.size(); ++i) {
        if (dead[order[i]]) continue;
        want.push_back(dets[order[i]]);
        for (size_t j = i + 1; j < order.size(); ++j)
          if (!dead[order[j]] && dets[order[i]].class_id == dets[order[j]].class_id &&
              iou(dets[order[i]].box, dets[order[j]].box) > 0.6)
            dead[order[j]] = true;
      }
      equal = kept.size() == want.size();
      for (size_t i = 0; equal && i < kept.size(); ++i)
        equal = same_box(kept[i].box, want[i].box) && kept[i].score == want[i].score;
    }
    report("nms equals quadratic reference", equal, "");
  }
  std::cout << (failures == 0 ? "all checks passed\n" : "some checks FAILED\n");
  return failures == 0 ? 0 : 1;
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == ',') {
      if (!cur.empty()) out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"open-world detection sandbox: random-proposal training on a synthetic scene world"};
  app.require_subcommand(1);
  app.fallthrough();

  std::string config_path, out_dir = "out", world_path, ckpt_path;
  std::optional<std::uint64_t> seed;
  int jobs = 1;
  app.add_option("--config", config_path, "experiment config JSON");
  app.add_option("--seed", seed, "override the training seed");
  app.add_option("--out", out_dir, "output directory");
  app.add_option("--jobs", jobs, "parallel workers for sweeps");

  auto* gen = app.add_subcommand("gen-world", "generate and save a synthetic world");
  auto* train = app.add_subcommand("train", "run the incremental training protocol");
  train->add_option("--world", world_path, "world JSON (default <out>/world.json)");
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on its task");
  eval->add_option("--world", world_path, "world JSON");
  eval->add_option("--checkpoint", ckpt_path, "checkpoint JSON")->required();
  auto* ablate = app.add_subcommand("ablate", "sweep one config axis over seeds");
  std::string axis, values_arg, seeds_arg;
  ablate->add_option("--axis", axis, "N | beta | proposal_count | distribution | grid_size | sampler")
      ->required();
  ablate->add_option("--values", values_arg, "comma-separated values")->required();
  ablate->add_option("--seeds", seeds_arg, "comma-separated seeds (default: config seeds)");
  auto* plot = app.add_subcommand("plot-separability", "sorted matching-score curve + AUROC");
  plot->add_option("--world", world_path, "world JSON");
  plot->add_option("--checkpoint", ckpt_path, "checkpoint JSON")->required();
  auto* check = app.add_subcommand("check", "run the invariant and gradient self-checks");

  CLI11_PARSE(app, argc, argv);

  try {
    ExperimentConfig cfg = load_config(config_path, seed);
    if (world_path.empty()) world_path = (fs::path(out_dir) / "world.json").string();

    if (gen->parsed()) return cmd_gen_world(cfg, out_dir);
    if (train->parsed()) return cmd_train(cfg, world_path, out_dir);
    if (eval->parsed()) return cmd_eval(cfg, world_path, ckpt_path, out_dir);
    if (ablate->parsed()) {
      AblationSpec spec;
      spec.axis = axis;
      spec.values = split_list(values_arg);
      if (!seeds_arg.empty())
        for (const auto& s : split_list(seeds_arg)) spec.seeds.push_back(std::stoull(s));
      else
        spec.seeds = cfg.seeds;
      return cmd_ablate(cfg, spec, out_dir, jobs);
    }
    if (plot->parsed()) return cmd_plot_separability(cfg, world_path, ckpt_path, out_dir);
    if (check->parsed()) return cmd_check(cfg);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
