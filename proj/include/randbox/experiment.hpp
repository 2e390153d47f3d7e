#pragma once

/// Experiment drivers shared by the CLI and the acceptance suite: seeded
/// single-cell runs, the paired sampler A/B, and ablation sweeps with a
/// small worker pool. Cells are pure functions of (config, seed), so results
/// are identical however many workers run them.

#include <atomic>
#include <cstdio>
#include <functional>
#include <thread>

#include "randbox/config.hpp"
#include "randbox/stats.hpp"

namespace randbox {

inline void parallel_for(int n, int jobs, const std::function<void(int)>& fn) {
  jobs = std::max(1, jobs);
  if (jobs == 1 || n <= 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::vector<std::thread> pool;
  const int workers = std::min(jobs, n);
  pool.reserve(workers);
  for (int w = 0; w < workers; ++w)
    pool.emplace_back([&] {
      for (int i = next.fetch_add(1); i < n; i = next.fetch_add(1)) fn(i);
    });
  for (auto& t : pool) t.join();
}

/// World + training seeds for the s-th replicate of an experiment.
inline ExperimentConfig seeded_config(ExperimentConfig cfg, std::uint64_t seed) {
  cfg.world.seed = derive_stream(cfg.world.seed, 0xab5eedULL, seed);
  cfg.profile.train.seed = derive_stream(cfg.profile.train.seed, 0x7e5eedULL, seed);
  return cfg;
}

struct CellOutcome {
  bool ok = false;
  std::string error;
  MetricsReport report;
};

/// Train task 0 and evaluate it; the workhorse of the statistical criteria
/// and the single-axis ablations.
inline CellOutcome run_single_task_cell(const ExperimentConfig& base, std::uint64_t seed) {
  CellOutcome out;
  try {
    const ExperimentConfig cfg = seeded_config(base, seed);
    const World world = generate_world(cfg.world);
    const auto params = run_task(std::nullopt, world, 0, cfg.profile, nullptr);
    out.report = evaluate_task(params, world, 0, cfg.profile).report;
    out.ok = true;
  } catch (const std::exception& e) {
    out.error = e.what();
  }
  return out;
}

struct AbPair {
  std::uint64_t seed = 0;
  MetricsReport random_arm;
  MetricsReport biased_arm;
};

/// Paired sampler A/B over the given seeds. The two arm configs are asserted
/// to differ in exactly one leaf: /train/sampler.
inline std::vector<AbPair> run_sampler_ab(const ExperimentConfig& base,
                                          const std::vector<std::uint64_t>& seeds,
                                          int jobs) {
  ExperimentConfig cfg_random = base;
  cfg_random.profile.train.sampler = SamplerKind::kRandom;
  ExperimentConfig cfg_biased = cfg_random;
  cfg_biased.profile.train.sampler = SamplerKind::kBiased;
  const auto diff = json_leaf_diff(config_to_json(cfg_random), config_to_json(cfg_biased));
  RB_CHECK_MSG(diff.size() == 1 && diff[0] == "/train/sampler",
               "sampler A/B: arm configs must differ only in /train/sampler");

  const int n = static_cast<int>(seeds.size());
  std::vector<CellOutcome> random_out(n), biased_out(n);
  parallel_for(2 * n, jobs, [&](int i) {
    const int s = i / 2;
    if (i % 2 == 0)
      random_out[s] = run_single_task_cell(cfg_random, seeds[s]);
    else
      biased_out[s] = run_single_task_cell(cfg_biased, seeds[s]);
  });

  std::vector<AbPair> pairs;
  for (int s = 0; s < n; ++s) {
    RB_CHECK_MSG(random_out[s].ok, "A/B random arm failed: " + random_out[s].error);
    RB_CHECK_MSG(biased_out[s].ok, "A/B biased arm failed: " + biased_out[s].error);
    pairs.push_back({seeds[s], random_out[s].report, biased_out[s].report});
  }
  return pairs;
}

// ---------------------------------------------------------------------------
// ablations
// ---------------------------------------------------------------------------

struct AblationSpec {
  std::string axis;  // N | beta | proposal_count | distribution | grid_size | sampler
  std::vector<std::string> values;
  std::vector<std::uint64_t> seeds;
};

inline GridConfig grid_from_string(const std::string& s) {
  GridConfig g;
  if (std::sscanf(s.c_str(), "%dx%dx%d", &g.n_scales, &g.n_ratios, &g.n_locations) != 3)
    throw ContractError("ablation: grid_size value must look like 10x10x100");
  return g;
}

inline ExperimentConfig apply_axis(ExperimentConfig cfg, const std::string& axis,
                                   const std::string& value) {
  if (axis == "N")
    cfg.profile.match.top_n_unknown = std::stoi(value);
  else if (axis == "beta")
    cfg.profile.loss.beta = std::stod(value);
  else if (axis == "proposal_count")
    cfg.profile.sampler.n_train_proposals = std::stoi(value);
  else if (axis == "distribution")
    cfg.profile.sampler.distribution = distribution_from_string(value);
  else if (axis == "grid_size")
    cfg.profile.grid = grid_from_string(value);
  else if (axis == "sampler")
    cfg.profile.train.sampler = sampler_kind_from_string(value);
  else
    throw ContractError("ablation: unknown axis '" + axis + "'");
  return cfg;
}

struct AblationCell {
  std::string value;
  std::uint64_t seed = 0;
  CellOutcome outcome;
};

inline std::vector<AblationCell> run_ablation(const ExperimentConfig& base,
                                              const AblationSpec& spec, int jobs) {
  RB_CHECK_MSG(!spec.values.empty(), "ablation: need at least one value");
  RB_CHECK_MSG(spec.seeds.size() >= 3,
               "ablation: statistical axes need at least 3 seeds");
  std::vector<AblationCell> cells;
  for (const auto& v : spec.values)
    for (std::uint64_t s : spec.seeds) cells.push_back({v, s, {}});
  parallel_for(static_cast<int>(cells.size()), jobs, [&](int i) {
    try {
      const ExperimentConfig cfg = apply_axis(base, spec.axis, cells[i].value);
      cells[i].outcome = run_single_task_cell(cfg, cells[i].seed);
    } catch (const std::exception& e) {
      cells[i].outcome.ok = false;
      cells[i].outcome.error = e.what();
    }
  });
  return cells;
}

inline std::string ablation_csv(const std::string& axis,
                                const std::vector<AblationCell>& cells,
                                const std::string& provenance) {
  std::ostringstream os;
  os << "# " << provenance << "\n";
  os << "axis,value,seed,k_map50,u_recall50,wi80,a_ose50,u_ap,auroc,status\n";
  for (const auto& c : cells) {
    os << csv_escape(axis) << "," << csv_escape(c.value) << "," << c.seed << ",";
    if (c.outcome.ok) {
      const auto& r = c.outcome.report;
      os << format_double(r.k_map50) << "," << format_double(r.u_recall50) << ","
         << format_double(r.wi80) << "," << r.a_ose50 << "," << format_double(r.u_ap)
         << "," << format_double(r.separability_auroc) << ",ok\n";
    } else {
      os << ",,,,,," << csv_escape("failed: " + c.outcome.error) << "\n";
    }
  }
  return os.str();
}

struct AblationSummaryRow {
  std::string value;
  int n_ok = 0;
  double k_map_mean = 0, k_map_sd = 0;
  double u_recall_mean = 0, u_recall_sd = 0;
  double u_ap_mean = 0, u_ap_sd = 0;
  double auroc_mean = 0, auroc_sd = 0;
};

inline std::vector<AblationSummaryRow> summarize_ablation(
    const std::vector<AblationCell>& cells, const std::vector<std::string>& values) {
  std::vector<AblationSummaryRow> rows;
  for (const auto& v : values) {
    AblationSummaryRow row;
    row.value = v;
    std::vector<double> km, ur, ua, au;
    for (const auto& c : cells) {
      if (c.value != v || !c.outcome.ok) continue;
      km.push_back(c.outcome.report.k_map50);
      ur.push_back(c.outcome.report.u_recall50);
      ua.push_back(c.outcome.report.u_ap);
      au.push_back(c.outcome.report.separability_auroc);
    }
    row.n_ok = static_cast<int>(km.size());
    if (row.n_ok > 0) {
      row.k_map_mean = mean(km);
      row.k_map_sd = sample_stddev(km);
      row.u_recall_mean = mean(ur);
      row.u_recall_sd = sample_stddev(ur);
      row.u_ap_mean = mean(ua);
      row.u_ap_sd = sample_stddev(ua);
      row.auroc_mean = mean(au);
      row.auroc_sd = sample_stddev(au);
    }
    rows.push_back(row);
  }
  return rows;
}

inline std::string ablation_summary_csv(const std::string& axis,
                                        const std::vector<AblationSummaryRow>& rows,
                                        const std::string& provenance) {
  std::ostringstream os;
  os << "# " << provenance << "\n";
  os << "axis,value,n,k_map50_mean,k_map50_sd,u_recall50_mean,u_recall50_sd,"
        "u_ap_mean,u_ap_sd,auroc_mean,auroc_sd\n";
  for (const auto& r : rows) {
    os << csv_escape(axis) << "," << csv_escape(r.value) << "," << r.n_ok << ","
       << format_double(r.k_map_mean) << "," << format_double(r.k_map_sd) << ","
       << format_double(r.u_recall_mean) << "," << format_double(r.u_recall_sd) << ","
       << format_double(r.u_ap_mean) << "," << format_double(r.u_ap_sd) << ","
       << format_double(r.auroc_mean) << "," << format_double(r.auroc_sd) << "\n";
  }
  return os.str();
}

}  // namespace randbox
