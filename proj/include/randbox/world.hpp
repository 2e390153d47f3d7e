#pragma once

/// Synthetic scene world: a class catalog with controlled cross-class
/// feature sharing, scene generation with known/unknown objects, ROI feature
/// synthesis, and incremental task views with exemplar sets.
///
/// Feature synthesis replaces a CNN: a region's feature is the IoU-weighted
/// mixture of the attribute vectors of the objects it covers plus a
/// background component, so what a region contains determines its feature.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "randbox/geometry.hpp"
#include "randbox/rng.hpp"

namespace randbox {

struct WorldConfig {
  int n_tasks = 4;
  int classes_per_task = 5;
  int n_unknown_forever = 5;
  int feature_dim = 32;
  double shared_fraction = 0.5;   // attribute coords each unknown class copies
  double feature_noise = 0.05;    // sigma of the additive feature noise
  int max_objects = 6;
  double unknown_ratio = 0.3;     // per-object probability of an unknown class
  double min_object_size = 0.20;  // object side range; keeps objects well
  double max_object_size = 0.48;  // inside the grid's scale/ratio envelope
  int train_scenes_per_task = 160;
  int eval_scenes_per_task = 48;
  std::uint64_t seed = 1234;
};

struct ClassCatalog {
  int feature_dim = 0;
  double shared_fraction = 0.0;
  std::uint64_t seed = 0;
  std::vector<std::vector<double>> attributes;  // unit-norm, one per class
  std::vector<std::vector<int>> known_by_task;  // disjoint class-id sets
  std::vector<int> unknown_pool;                // never-known classes
  std::vector<int> unknown_donor;               // sharing known class, per pool entry
  std::vector<double> bg_attribute;             // orthogonal to all classes

  int n_classes() const { return static_cast<int>(attributes.size()); }
};

struct SceneObject {
  BBox box;
  int class_id;
};

struct Scene {
  std::vector<SceneObject> objects;
  std::uint64_t noise_seed = 0;
};

/// Per-task visibility: `known_ids` is the cumulative known inventory used
/// for the logit layout and for evaluation; `new_ids` are the classes whose
/// labels the current task's fresh training data carries; everything else is
/// unknown at this task.
struct TaskView {
  int task_index = 0;
  std::vector<int> known_ids;
  std::vector<int> new_ids;
  std::vector<int> unknown_ids;
};

namespace detail {
inline void normalize(std::vector<double>& v) {
  double n2 = 0.0;
  for (double x : v) n2 += x * x;
  const double inv = 1.0 / std::sqrt(n2);
  for (double& x : v) x *= inv;
}

inline double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}
}  // namespace detail

inline ClassCatalog make_class_catalog(int n_tasks, int classes_per_task,
                                       int n_unknown_forever, int d,
                                       double shared_fraction, std::uint64_t seed) {
  RB_CHECK_MSG(n_tasks >= 1 && classes_per_task >= 1 && n_unknown_forever >= 1 && d >= 1,
               "catalog: all counts must be >= 1");
  RB_CHECK_MSG(shared_fraction >= 0.0 && shared_fraction <= 1.0,
               "catalog: shared_fraction in [0,1]");
  const int n_known = n_tasks * classes_per_task;
  const int n_classes = n_known + n_unknown_forever;
  RB_CHECK_MSG(d > n_classes, "catalog: feature_dim must exceed the class count");

  ClassCatalog cat;
  cat.feature_dim = d;
  cat.shared_fraction = shared_fraction;
  cat.seed = seed;
  cat.attributes.resize(n_classes);

  Rng rng(derive_stream(seed, 0xA771u));
  for (int c = 0; c < n_known; ++c) {
    auto& v = cat.attributes[c];
    v.resize(d);
    for (double& x : v) x = rng.gaussian();
    detail::normalize(v);
  }

  // Each never-known class copies ceil(q*d) randomly chosen coordinates from
  // a randomly chosen known class. The remaining coordinates are gaussian,
  // rescaled so the copied coordinates keep their share of the unit mass
  // (cosine to the donor ~ shared_fraction).
  const int n_shared = static_cast<int>(std::ceil(shared_fraction * d));
  for (int u = 0; u < n_unknown_forever; ++u) {
    const int c = n_known + u;
    auto& v = cat.attributes[c];
    v.assign(d, 0.0);
    const int donor = rng.uniform_int(n_known);
    cat.unknown_donor.push_back(donor);
    std::vector<int> idx(d);
    for (int i = 0; i < d; ++i) idx[i] = i;
    for (int i = d - 1; i > 0; --i) std::swap(idx[i], idx[rng.uniform_int(i + 1)]);
    double shared_mass = 0.0;
    for (int i = 0; i < n_shared; ++i) {
      v[idx[i]] = cat.attributes[donor][idx[i]];
      shared_mass += v[idx[i]] * v[idx[i]];
    }
    double fresh_mass = 0.0;
    for (int i = n_shared; i < d; ++i) {
      v[idx[i]] = rng.gaussian();
      fresh_mass += v[idx[i]] * v[idx[i]];
    }
    if (fresh_mass > 0.0) {
      const double scale = std::sqrt(std::max(0.0, 1.0 - shared_mass) / fresh_mass);
      for (int i = n_shared; i < d; ++i) v[idx[i]] *= scale;
    }
    detail::normalize(v);
  }

  for (int t = 0; t < n_tasks; ++t) {
    std::vector<int> ids(classes_per_task);
    for (int i = 0; i < classes_per_task; ++i) ids[i] = t * classes_per_task + i;
    cat.known_by_task.push_back(std::move(ids));
  }
  for (int u = 0; u < n_unknown_forever; ++u) cat.unknown_pool.push_back(n_known + u);

  // Background direction: random vector with the class span projected out
  // (Gram-Schmidt), renormalized. Requires d > n_classes.
  std::vector<std::vector<double>> basis;
  for (const auto& a : cat.attributes) {
    std::vector<double> r = a;
    for (const auto& b : basis) {
      const double p = detail::dot(r, b);
      for (int i = 0; i < d; ++i) r[i] -= p * b[i];
    }
    double n2 = 0.0;
    for (double x : r) n2 += x * x;
    if (n2 > 1e-18) {
      detail::normalize(r);
      basis.push_back(std::move(r));
    }
  }
  for (int attempt = 0; attempt < 64; ++attempt) {
    std::vector<double> bg(d);
    for (double& x : bg) x = rng.gaussian();
    for (const auto& b : basis) {
      const double p = detail::dot(bg, b);
      for (int i = 0; i < d; ++i) bg[i] -= p * b[i];
    }
    double n2 = 0.0;
    for (double x : bg) n2 += x * x;
    if (n2 > 1e-12) {
      detail::normalize(bg);
      cat.bg_attribute = std::move(bg);
      break;
    }
  }
  RB_CHECK_MSG(!cat.bg_attribute.empty(), "catalog: failed to orthogonalize bg");
  return cat;
}

inline ClassCatalog make_class_catalog(const WorldConfig& w) {
  return make_class_catalog(w.n_tasks, w.classes_per_task, w.n_unknown_forever,
                            w.feature_dim, w.shared_fraction, w.seed);
}

inline TaskView make_task_view(const ClassCatalog& cat, int task_index) {
  RB_CHECK_MSG(task_index >= 0 && task_index < static_cast<int>(cat.known_by_task.size()),
               "task index out of range");
  TaskView tv;
  tv.task_index = task_index;
  for (int t = 0; t <= task_index; ++t)
    tv.known_ids.insert(tv.known_ids.end(), cat.known_by_task[t].begin(),
                        cat.known_by_task[t].end());
  tv.new_ids = cat.known_by_task[task_index];
  for (int c = 0; c < cat.n_classes(); ++c)
    if (std::find(tv.known_ids.begin(), tv.known_ids.end(), c) == tv.known_ids.end())
      tv.unknown_ids.push_back(c);
  return tv;
}

/// Place 1..max_objects objects with pairwise IoU <= 0.7. Classes come from
/// `known_pool` with probability (1 - unknown_ratio), else `unknown_pool`.
/// Returns fewer objects when placement keeps failing.
inline Scene generate_scene(const WorldConfig& w, const std::vector<int>& known_pool,
                            const std::vector<int>& unknown_pool, Rng& rng) {
  RB_CHECK_MSG(!known_pool.empty(), "generate_scene: empty known class pool");
  Scene scene;
  scene.noise_seed = rng.next_u64();
  const int target = 1 + rng.uniform_int(w.max_objects);
  int rejections = 0;
  while (static_cast<int>(scene.objects.size()) < target && rejections < 1000) {
    const double bw = rng.uniform(w.min_object_size, w.max_object_size);
    const double bh = rng.uniform(w.min_object_size, w.max_object_size);
    const double cx = rng.uniform(0.5 * bw, 1.0 - 0.5 * bw);
    const double cy = rng.uniform(0.5 * bh, 1.0 - 0.5 * bh);
    const BBox box(cx, cy, bw, bh);
    bool crowded = false;
    for (const auto& o : scene.objects)
      if (iou(box, o.box) > 0.7) {
        crowded = true;
        break;
      }
    if (crowded) {
      ++rejections;
      continue;
    }
    int cls;
    if (!unknown_pool.empty() && rng.uniform() < w.unknown_ratio)
      cls = unknown_pool[rng.uniform_int(static_cast<int>(unknown_pool.size()))];
    else
      cls = known_pool[rng.uniform_int(static_cast<int>(known_pool.size()))];
    scene.objects.push_back({box, cls});
  }
  return scene;
}

inline Scene generate_scene(const WorldConfig& w, const TaskView& tv, Rng& rng) {
  return generate_scene(w, tv.known_ids, tv.unknown_ids, rng);
}

namespace detail {
inline std::uint64_t box_noise_key(std::uint64_t noise_seed, const BBox& b) {
  // quantized to 3 decimals so the same box always yields the same feature
  auto q = [](double x) { return static_cast<std::uint64_t>(std::llround(x * 1000.0)); };
  return derive_stream(noise_seed, q(b.cx), q(b.cy), q(b.w), q(b.h));
}
}  // namespace detail

/// x = sum_o iou(box, b_o) * attr[y_o] + (1 - max_o iou) * bg + noise.
inline void roi_feature(const Scene& scene, const ClassCatalog& cat, const BBox& box,
                        double noise_sigma, double* out) {
  const int d = cat.feature_dim;
  double max_iou = 0.0;
  for (int i = 0; i < d; ++i) out[i] = 0.0;
  for (const auto& o : scene.objects) {
    const double v = iou(box, o.box);
    if (v <= 0.0) continue;
    max_iou = std::max(max_iou, v);
    const auto& attr = cat.attributes[o.class_id];
    for (int i = 0; i < d; ++i) out[i] += v * attr[i];
  }
  const double bgw = 1.0 - max_iou;
  for (int i = 0; i < d; ++i) out[i] += bgw * cat.bg_attribute[i];
  if (noise_sigma > 0.0) {
    CounterRng noise(detail::box_noise_key(scene.noise_seed, box));
    for (int i = 0; i < d; ++i) out[i] += noise_sigma * noise.gaussian();
  }
}

inline std::vector<double> roi_feature(const Scene& scene, const ClassCatalog& cat,
                                       const BBox& box, double noise_sigma) {
  std::vector<double> x(cat.feature_dim);
  roi_feature(scene, cat, box, noise_sigma, x.data());
  return x;
}

/// A fully generated world: catalog plus per-task scene pools. Task t's
/// training pool draws its labelled objects from the classes introduced at
/// task t (earlier classes are no longer annotated in fresh data, which is
/// what makes replay matter); evaluation pools draw from the cumulative
/// known set. Unknown objects appear in both, unlabelled for training.
struct World {
  WorldConfig cfg;
  ClassCatalog catalog;
  std::vector<std::vector<Scene>> train_scenes;  // per task
  std::vector<std::vector<Scene>> eval_scenes;   // per task
};

inline World generate_world(const WorldConfig& cfg) {
  World w;
  w.cfg = cfg;
  w.catalog = make_class_catalog(cfg);
  w.train_scenes.resize(cfg.n_tasks);
  w.eval_scenes.resize(cfg.n_tasks);
  for (int t = 0; t < cfg.n_tasks; ++t) {
    const TaskView tv = make_task_view(w.catalog, t);
    // fresh training data annotates only the task's new classes; everything
    // else (earlier tasks included) shows up unannotated, which is what
    // makes earlier classes erode without replay
    std::vector<int> unlabeled;
    for (int c = 0; c < w.catalog.n_classes(); ++c)
      if (std::find(tv.new_ids.begin(), tv.new_ids.end(), c) == tv.new_ids.end())
        unlabeled.push_back(c);
    Rng train_rng(derive_stream(cfg.seed, 0x7261u, static_cast<std::uint64_t>(t)));
    for (int i = 0; i < cfg.train_scenes_per_task; ++i)
      w.train_scenes[t].push_back(generate_scene(cfg, tv.new_ids, unlabeled, train_rng));
    Rng eval_rng(derive_stream(cfg.seed, 0x6576u, static_cast<std::uint64_t>(t)));
    for (int i = 0; i < cfg.eval_scenes_per_task; ++i)
      w.eval_scenes[t].push_back(generate_scene(cfg, tv.known_ids, tv.unknown_ids, eval_rng));
  }
  return w;
}

/// Class-balanced replay set: keeps generating scenes until every class in
/// `class_ids` appears in at least `scenes_per_class` of them. Labels of all
/// of `class_ids` are visible on exemplar scenes.
inline std::vector<Scene> make_exemplar_set(const WorldConfig& w, int scenes_per_class,
                                            const std::vector<int>& class_ids,
                                            const std::vector<int>& unknown_pool,
                                            Rng& rng) {
  RB_CHECK_MSG(scenes_per_class >= 0, "exemplars: count must be >= 0");
  std::vector<Scene> out;
  if (scenes_per_class == 0 || class_ids.empty()) return out;
  std::vector<int> need(class_ids.size(), scenes_per_class);
  auto unmet = [&] {
    for (int n : need)
      if (n > 0) return true;
    return false;
  };
  int guard = 0;
  while (unmet() && guard++ < 100000) {
    Scene s = generate_scene(w, class_ids, unknown_pool, rng);
    bool contributes = false;
    for (size_t c = 0; c < class_ids.size(); ++c) {
      if (need[c] <= 0) continue;
      for (const auto& o : s.objects)
        if (o.class_id == class_ids[c]) {
          --need[c];
          contributes = true;
          break;
        }
    }
    if (contributes) out.push_back(std::move(s));
  }
  RB_CHECK_MSG(!unmet(), "exemplars: generator failed to cover all classes");
  return out;
}

}  // namespace randbox
