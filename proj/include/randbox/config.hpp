#pragma once

/// Experiment configuration: one JSON document covering the world, samplers,
/// grid, matching, losses, training and evaluation. Parsing is strict —
/// unknown keys are rejected so config typos cannot silently fall back to
/// defaults.

#include <set>
#include <string>
#include <vector>

#include "randbox/pipeline.hpp"
#include "randbox/serialize.hpp"

namespace randbox {

struct ExperimentConfig {
  WorldConfig world;
  ExperimentProfile profile;
  std::string output_dir = "out";
  std::vector<std::uint64_t> seeds;  // replicate seeds for sweeps; 20 by default

  ExperimentConfig() {
    // calibrated toy-scale defaults; LossConfig itself keeps the documented
    // module defaults (BCE, gamma 2) for library users
    profile.loss.cls_mode = ClsMode::kFocal;
    profile.loss.gamma_focal = 1.0;
    for (std::uint64_t s = 1; s <= 20; ++s) seeds.push_back(s);
  }
};

namespace detail {

inline void check_keys(const Json& j, const std::set<std::string>& allowed,
                       const std::string& block) {
  RB_CHECK_MSG(j.is_object(), "config: block '" + block + "' must be an object");
  for (const auto& [key, value] : j.items())
    if (!allowed.count(key))
      throw ContractError("config: unknown key '" + key + "' in block '" + block + "'");
}

template <class T>
void get_opt(const Json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace detail

inline ProposalDistribution distribution_from_string(const std::string& s) {
  if (s == "gaussian_truncated") return ProposalDistribution::kGaussianTruncated;
  if (s == "uniform") return ProposalDistribution::kUniform;
  throw ContractError("config: unknown distribution '" + s + "'");
}

inline SamplerKind sampler_kind_from_string(const std::string& s) {
  if (s == "random") return SamplerKind::kRandom;
  if (s == "biased") return SamplerKind::kBiased;
  if (s == "grid") return SamplerKind::kGrid;
  throw ContractError("config: unknown sampler '" + s + "'");
}

inline ClsMode cls_mode_from_string(const std::string& s) {
  if (s == "bce") return ClsMode::kBce;
  if (s == "focal") return ClsMode::kFocal;
  throw ContractError("config: unknown cls_mode '" + s + "'");
}

inline ExperimentConfig config_from_json(const Json& j) {
  detail::check_keys(j, {"world", "sampler", "grid", "matching", "loss", "train", "eval",
                         "output_dir", "seeds"},
                     "<root>");
  ExperimentConfig cfg;
  if (j.contains("world")) {
    const Json& w = j.at("world");
    detail::check_keys(w,
                       {"n_tasks", "classes_per_task", "n_unknown_forever", "feature_dim",
                        "shared_fraction", "feature_noise", "max_objects", "unknown_ratio",
                        "min_object_size", "max_object_size", "train_scenes_per_task",
                        "eval_scenes_per_task", "seed"},
                       "world");
    detail::get_opt(w, "n_tasks", cfg.world.n_tasks);
    detail::get_opt(w, "classes_per_task", cfg.world.classes_per_task);
    detail::get_opt(w, "n_unknown_forever", cfg.world.n_unknown_forever);
    detail::get_opt(w, "feature_dim", cfg.world.feature_dim);
    detail::get_opt(w, "shared_fraction", cfg.world.shared_fraction);
    detail::get_opt(w, "feature_noise", cfg.world.feature_noise);
    detail::get_opt(w, "max_objects", cfg.world.max_objects);
    detail::get_opt(w, "unknown_ratio", cfg.world.unknown_ratio);
    detail::get_opt(w, "min_object_size", cfg.world.min_object_size);
    detail::get_opt(w, "max_object_size", cfg.world.max_object_size);
    detail::get_opt(w, "train_scenes_per_task", cfg.world.train_scenes_per_task);
    detail::get_opt(w, "eval_scenes_per_task", cfg.world.eval_scenes_per_task);
    detail::get_opt(w, "seed", cfg.world.seed);
  }
  if (j.contains("sampler")) {
    const Json& s = j.at("sampler");
    detail::check_keys(s, {"n_train_proposals", "distribution", "jitter_sigma", "biased_mix"},
                       "sampler");
    detail::get_opt(s, "n_train_proposals", cfg.profile.sampler.n_train_proposals);
    if (s.contains("distribution"))
      cfg.profile.sampler.distribution =
          distribution_from_string(s.at("distribution").get<std::string>());
    detail::get_opt(s, "jitter_sigma", cfg.profile.jitter_sigma);
    detail::get_opt(s, "biased_mix", cfg.profile.biased_mix);
  }
  if (j.contains("grid")) {
    const Json& g = j.at("grid");
    detail::check_keys(g, {"n_scales", "n_ratios", "n_locations"}, "grid");
    detail::get_opt(g, "n_scales", cfg.profile.grid.n_scales);
    detail::get_opt(g, "n_ratios", cfg.profile.grid.n_ratios);
    detail::get_opt(g, "n_locations", cfg.profile.grid.n_locations);
  }
  if (j.contains("matching")) {
    const Json& m = j.at("matching");
    detail::check_keys(m, {"top_n_unknown", "w_cls", "w_l1", "w_iou", "focal_gamma"},
                       "matching");
    detail::get_opt(m, "top_n_unknown", cfg.profile.match.top_n_unknown);
    detail::get_opt(m, "w_cls", cfg.profile.match.w_cls);
    detail::get_opt(m, "w_l1", cfg.profile.match.w_l1);
    detail::get_opt(m, "w_iou", cfg.profile.match.w_iou);
    detail::get_opt(m, "focal_gamma", cfg.profile.match.focal_gamma);
  }
  if (j.contains("loss")) {
    const Json& l = j.at("loss");
    detail::check_keys(l, {"lambda_reg", "beta", "gamma_focal", "cls_mode", "mean_reduction"},
                       "loss");
    detail::get_opt(l, "lambda_reg", cfg.profile.loss.lambda_reg);
    detail::get_opt(l, "beta", cfg.profile.loss.beta);
    detail::get_opt(l, "gamma_focal", cfg.profile.loss.gamma_focal);
    if (l.contains("cls_mode"))
      cfg.profile.loss.cls_mode = cls_mode_from_string(l.at("cls_mode").get<std::string>());
    detail::get_opt(l, "mean_reduction", cfg.profile.loss.mean_reduction);
  }
  if (j.contains("train")) {
    const Json& t = j.at("train");
    detail::check_keys(t,
                       {"iterations", "warmup_frac", "warmup_iters", "batch_scenes",
                        "sampler", "seed", "learning_rate", "weight_decay",
                        "finetune_iters", "finetune_lr_scale", "exemplars_per_class", "replay", "hidden_dim",
                        "init_sigma", "init_fg_bias"},
                       "train");
    detail::get_opt(t, "iterations", cfg.profile.train.iterations);
    detail::get_opt(t, "warmup_frac", cfg.profile.train.warmup_frac);
    detail::get_opt(t, "warmup_iters", cfg.profile.train.warmup_iters);
    detail::get_opt(t, "batch_scenes", cfg.profile.train.batch_scenes);
    if (t.contains("sampler"))
      cfg.profile.train.sampler = sampler_kind_from_string(t.at("sampler").get<std::string>());
    detail::get_opt(t, "seed", cfg.profile.train.seed);
    detail::get_opt(t, "learning_rate", cfg.profile.train.optim.learning_rate);
    detail::get_opt(t, "weight_decay", cfg.profile.train.optim.weight_decay);
    detail::get_opt(t, "finetune_iters", cfg.profile.train.finetune_iters);
    detail::get_opt(t, "finetune_lr_scale", cfg.profile.train.finetune_lr_scale);
    detail::get_opt(t, "exemplars_per_class", cfg.profile.train.exemplars_per_class);
    detail::get_opt(t, "replay", cfg.profile.train.replay);
    detail::get_opt(t, "hidden_dim", cfg.profile.train.hidden_dim);
    detail::get_opt(t, "init_sigma", cfg.profile.train.init_sigma);
    detail::get_opt(t, "init_fg_bias", cfg.profile.train.init_fg_bias);
  }
  if (j.contains("eval")) {
    const Json& e = j.at("eval");
    detail::check_keys(e,
                       {"nms_thresh", "conf_thresh", "pre_nms_per_class",
                        "separability_proposals", "seed"},
                       "eval");
    detail::get_opt(e, "nms_thresh", cfg.profile.eval.nms_thresh);
    detail::get_opt(e, "conf_thresh", cfg.profile.eval.conf_thresh);
    detail::get_opt(e, "pre_nms_per_class", cfg.profile.eval.pre_nms_per_class);
    detail::get_opt(e, "separability_proposals", cfg.profile.eval.separability_proposals);
    detail::get_opt(e, "seed", cfg.profile.eval.seed);
  }
  detail::get_opt(j, "output_dir", cfg.output_dir);
  detail::get_opt(j, "seeds", cfg.seeds);

  RB_CHECK_MSG(cfg.profile.sampler.n_train_proposals >= 1, "config: n_train_proposals >= 1");
  RB_CHECK_MSG(cfg.profile.loss.lambda_reg >= 0.0 && cfg.profile.loss.beta >= 0.0 &&
                   cfg.profile.loss.gamma_focal >= 0.0,
               "config: loss weights must be >= 0");
  resolved_warmup(cfg.profile.train);  // validates warmup < iterations
  return cfg;
}

inline ExperimentConfig config_from_string(const std::string& text) {
  return config_from_json(Json::parse(text));
}

/// Fully resolved (defaults applied) config document.
inline Json config_to_json(const ExperimentConfig& cfg) {
  Json j;
  j["world"] = world_config_to_json(cfg.world);
  Json s;
  s["n_train_proposals"] = cfg.profile.sampler.n_train_proposals;
  s["distribution"] = to_string(cfg.profile.sampler.distribution);
  s["jitter_sigma"] = cfg.profile.jitter_sigma;
  s["biased_mix"] = cfg.profile.biased_mix;
  j["sampler"] = s;
  Json g;
  g["n_scales"] = cfg.profile.grid.n_scales;
  g["n_ratios"] = cfg.profile.grid.n_ratios;
  g["n_locations"] = cfg.profile.grid.n_locations;
  j["grid"] = g;
  Json m;
  m["top_n_unknown"] = cfg.profile.match.top_n_unknown;
  m["w_cls"] = cfg.profile.match.w_cls;
  m["w_l1"] = cfg.profile.match.w_l1;
  m["w_iou"] = cfg.profile.match.w_iou;
  m["focal_gamma"] = cfg.profile.match.focal_gamma;
  j["matching"] = m;
  Json l;
  l["lambda_reg"] = cfg.profile.loss.lambda_reg;
  l["beta"] = cfg.profile.loss.beta;
  l["gamma_focal"] = cfg.profile.loss.gamma_focal;
  l["cls_mode"] = cfg.profile.loss.cls_mode == ClsMode::kFocal ? "focal" : "bce";
  l["mean_reduction"] = cfg.profile.loss.mean_reduction;
  j["loss"] = l;
  Json t;
  t["iterations"] = cfg.profile.train.iterations;
  t["warmup_frac"] = cfg.profile.train.warmup_frac;
  t["warmup_iters"] = cfg.profile.train.warmup_iters;
  t["batch_scenes"] = cfg.profile.train.batch_scenes;
  t["sampler"] = to_string(cfg.profile.train.sampler);
  t["seed"] = cfg.profile.train.seed;
  t["learning_rate"] = cfg.profile.train.optim.learning_rate;
  t["weight_decay"] = cfg.profile.train.optim.weight_decay;
  t["finetune_iters"] = cfg.profile.train.finetune_iters;
  t["finetune_lr_scale"] = cfg.profile.train.finetune_lr_scale;
  t["exemplars_per_class"] = cfg.profile.train.exemplars_per_class;
  t["replay"] = cfg.profile.train.replay;
  t["hidden_dim"] = cfg.profile.train.hidden_dim;
  t["init_sigma"] = cfg.profile.train.init_sigma;
  t["init_fg_bias"] = cfg.profile.train.init_fg_bias;
  j["train"] = t;
  Json e;
  e["nms_thresh"] = cfg.profile.eval.nms_thresh;
  e["conf_thresh"] = cfg.profile.eval.conf_thresh;
  e["pre_nms_per_class"] = cfg.profile.eval.pre_nms_per_class;
  e["separability_proposals"] = cfg.profile.eval.separability_proposals;
  e["seed"] = cfg.profile.eval.seed;
  j["eval"] = e;
  j["output_dir"] = cfg.output_dir;
  j["seeds"] = cfg.seeds;
  return j;
}

/// Leaf-level JSON pointer diff; the sampler A/B asserts this returns
/// exactly {"/train/sampler"}.
inline void json_leaf_diff(const Json& a, const Json& b, const std::string& prefix,
                           std::vector<std::string>& out) {
  if (a.is_object() && b.is_object()) {
    std::set<std::string> keys;
    for (const auto& [k, v] : a.items()) keys.insert(k);
    for (const auto& [k, v] : b.items()) keys.insert(k);
    for (const auto& k : keys) {
      if (!a.contains(k) || !b.contains(k))
        out.push_back(prefix + "/" + k);
      else
        json_leaf_diff(a.at(k), b.at(k), prefix + "/" + k, out);
    }
    return;
  }
  if (a != b) out.push_back(prefix.empty() ? "/" : prefix);
}

inline std::vector<std::string> json_leaf_diff(const Json& a, const Json& b) {
  std::vector<std::string> out;
  json_leaf_diff(a, b, "", out);
  return out;
}

}  // namespace randbox
