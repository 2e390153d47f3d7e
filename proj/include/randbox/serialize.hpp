#pragma once

/// JSON/CSV/SVG emission and parsing: world files, checkpoints, metrics
/// reports, run logs, and the hand-rolled SVG plots. All writers are
/// deterministic (ordered keys, no timestamps) so identical configs produce
/// byte-identical files.

#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "randbox/metrics.hpp"
#include "randbox/model.hpp"
#include "randbox/pipeline.hpp"
#include "randbox/world.hpp"

namespace randbox {

using Json = nlohmann::ordered_json;

// ---------------------------------------------------------------------------
// files and hashing
// ---------------------------------------------------------------------------

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ContractError("cannot open file for reading: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ContractError("cannot open file for writing: " + path);
  out << content;
  if (!out) throw ContractError("write failed: " + path);
}

/// FNV-1a 64-bit content hash, hex-encoded. Provenance marker, not crypto.
inline std::string fnv1a_hex(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << h;
  return os.str();
}

// ---------------------------------------------------------------------------
// world
// ---------------------------------------------------------------------------

inline Json world_config_to_json(const WorldConfig& w) {
  Json j;
  j["n_tasks"] = w.n_tasks;
  j["classes_per_task"] = w.classes_per_task;
  j["n_unknown_forever"] = w.n_unknown_forever;
  j["feature_dim"] = w.feature_dim;
  j["shared_fraction"] = w.shared_fraction;
  j["feature_noise"] = w.feature_noise;
  j["max_objects"] = w.max_objects;
  j["unknown_ratio"] = w.unknown_ratio;
  j["min_object_size"] = w.min_object_size;
  j["max_object_size"] = w.max_object_size;
  j["train_scenes_per_task"] = w.train_scenes_per_task;
  j["eval_scenes_per_task"] = w.eval_scenes_per_task;
  j["seed"] = w.seed;
  return j;
}

inline Json scene_to_json(const Scene& s) {
  Json j;
  j["noise_seed"] = s.noise_seed;
  Json objs = Json::array();
  for (const auto& o : s.objects) {
    Json jo;
    jo["box"] = {o.box.cx, o.box.cy, o.box.w, o.box.h};
    jo["class_id"] = o.class_id;
    objs.push_back(jo);
  }
  j["objects"] = objs;
  return j;
}

inline Scene scene_from_json(const Json& j) {
  Scene s;
  s.noise_seed = j.at("noise_seed").get<std::uint64_t>();
  for (const auto& jo : j.at("objects")) {
    const auto& b = jo.at("box");
    s.objects.push_back(
        {BBox(b.at(0).get<double>(), b.at(1).get<double>(), b.at(2).get<double>(),
              b.at(3).get<double>()),
         jo.at("class_id").get<int>()});
  }
  return s;
}

inline Json catalog_to_json(const ClassCatalog& c) {
  Json j;
  j["feature_dim"] = c.feature_dim;
  j["shared_fraction"] = c.shared_fraction;
  j["seed"] = c.seed;
  j["attributes"] = c.attributes;
  j["known_by_task"] = c.known_by_task;
  j["unknown_pool"] = c.unknown_pool;
  j["unknown_donor"] = c.unknown_donor;
  j["bg_attribute"] = c.bg_attribute;
  return j;
}

inline ClassCatalog catalog_from_json(const Json& j) {
  ClassCatalog c;
  c.feature_dim = j.at("feature_dim").get<int>();
  c.shared_fraction = j.at("shared_fraction").get<double>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.attributes = j.at("attributes").get<std::vector<std::vector<double>>>();
  c.known_by_task = j.at("known_by_task").get<std::vector<std::vector<int>>>();
  c.unknown_pool = j.at("unknown_pool").get<std::vector<int>>();
  c.unknown_donor = j.at("unknown_donor").get<std::vector<int>>();
  c.bg_attribute = j.at("bg_attribute").get<std::vector<double>>();
  return c;
}

inline std::string catalog_hash(const ClassCatalog& c) {
  return fnv1a_hex(catalog_to_json(c).dump());
}

inline Json world_to_json(const World& w) {
  Json j;
  j["schema"] = "randbox-world/1";
  j["config"] = world_config_to_json(w.cfg);
  j["catalog"] = catalog_to_json(w.catalog);
  j["catalog_hash"] = catalog_hash(w.catalog);
  Json tasks = Json::array();
  for (int t = 0; t < w.cfg.n_tasks; ++t) {
    Json jt;
    Json train = Json::array(), eval = Json::array();
    for (const auto& s : w.train_scenes[t]) train.push_back(scene_to_json(s));
    for (const auto& s : w.eval_scenes[t]) eval.push_back(scene_to_json(s));
    jt["train_scenes"] = train;
    jt["eval_scenes"] = eval;
    tasks.push_back(jt);
  }
  j["tasks"] = tasks;
  return j;
}

inline WorldConfig world_config_from_json(const Json& j);  // defined in config.hpp

inline World world_from_json(const Json& j) {
  RB_CHECK_MSG(j.at("schema") == "randbox-world/1", "world file: unknown schema");
  World w;
  const Json& c = j.at("config");
  w.cfg.n_tasks = c.at("n_tasks").get<int>();
  w.cfg.classes_per_task = c.at("classes_per_task").get<int>();
  w.cfg.n_unknown_forever = c.at("n_unknown_forever").get<int>();
  w.cfg.feature_dim = c.at("feature_dim").get<int>();
  w.cfg.shared_fraction = c.at("shared_fraction").get<double>();
  w.cfg.feature_noise = c.at("feature_noise").get<double>();
  w.cfg.max_objects = c.at("max_objects").get<int>();
  w.cfg.unknown_ratio = c.at("unknown_ratio").get<double>();
  w.cfg.min_object_size = c.at("min_object_size").get<double>();
  w.cfg.max_object_size = c.at("max_object_size").get<double>();
  w.cfg.train_scenes_per_task = c.at("train_scenes_per_task").get<int>();
  w.cfg.eval_scenes_per_task = c.at("eval_scenes_per_task").get<int>();
  w.cfg.seed = c.at("seed").get<std::uint64_t>();
  w.catalog = catalog_from_json(j.at("catalog"));
  for (const auto& jt : j.at("tasks")) {
    std::vector<Scene> train, eval;
    for (const auto& js : jt.at("train_scenes")) train.push_back(scene_from_json(js));
    for (const auto& js : jt.at("eval_scenes")) eval.push_back(scene_from_json(js));
    w.train_scenes.push_back(std::move(train));
    w.eval_scenes.push_back(std::move(eval));
  }
  return w;
}

// ---------------------------------------------------------------------------
// checkpoints
// ---------------------------------------------------------------------------

inline Json checkpoint_to_json(const DetectorParams& p, int task_index,
                               const std::string& cat_hash, const Json& resolved_config) {
  Json j;
  j["schema"] = "randbox-checkpoint/1";
  j["task_index"] = task_index;
  j["catalog_hash"] = cat_hash;
  j["feature_dim"] = p.feature_dim;
  j["n_known"] = p.n_known;
  j["hidden_dim"] = p.hidden_dim;
  j["known_ids"] = p.known_ids;
  j["w_hidden"] = p.w_hidden;
  j["b_hidden"] = p.b_hidden;
  j["w_cls"] = p.w_cls;
  j["b_cls"] = p.b_cls;
  j["w_reg"] = p.w_reg;
  j["b_reg"] = p.b_reg;
  j["config"] = resolved_config;
  return j;
}

struct Checkpoint {
  DetectorParams params;
  int task_index = 0;
  std::string catalog_hash;
};

inline Checkpoint checkpoint_from_json(const Json& j) {
  RB_CHECK_MSG(j.at("schema") == "randbox-checkpoint/1", "checkpoint: unknown schema");
  Checkpoint ck;
  ck.task_index = j.at("task_index").get<int>();
  ck.catalog_hash = j.at("catalog_hash").get<std::string>();
  DetectorParams& p = ck.params;
  p.feature_dim = j.at("feature_dim").get<int>();
  p.n_known = j.at("n_known").get<int>();
  p.hidden_dim = j.at("hidden_dim").get<int>();
  p.known_ids = j.at("known_ids").get<std::vector<int>>();
  p.w_hidden = j.at("w_hidden").get<std::vector<double>>();
  p.b_hidden = j.at("b_hidden").get<std::vector<double>>();
  p.w_cls = j.at("w_cls").get<std::vector<double>>();
  p.b_cls = j.at("b_cls").get<std::vector<double>>();
  p.w_reg = j.at("w_reg").get<std::vector<double>>();
  p.b_reg = j.at("b_reg").get<std::vector<double>>();
  const int in = p.head_in_dim();
  RB_CHECK_MSG(static_cast<int>(p.w_cls.size()) == in * p.n_logits(),
               "checkpoint: w_cls dimension mismatch");
  RB_CHECK_MSG(static_cast<int>(p.w_reg.size()) == in * 4,
               "checkpoint: w_reg dimension mismatch");
  return ck;
}

// ---------------------------------------------------------------------------
// metrics / run logs
// ---------------------------------------------------------------------------

inline Json metrics_to_json(const MetricsReport& r) {
  Json j;
  j["n_scenes"] = r.n_scenes;
  j["k_map50"] = r.k_map50;
  j["u_recall50"] = r.u_recall50;
  if (std::isinf(r.wi80))
    j["wi80"] = "inf";
  else
    j["wi80"] = r.wi80;
  j["a_ose50"] = r.a_ose50;
  j["u_ap"] = r.u_ap;
  j["u_ap50"] = r.u_ap50;
  j["u_ap75"] = r.u_ap75;
  j["separability_auroc"] = r.separability_auroc;
  Json table = Json::array();
  for (const auto& [cls, ap] : r.per_class_ap) {
    Json row;
    row["class_id"] = cls;
    row["ap50"] = ap;
    table.push_back(row);
  }
  j["per_class_ap"] = table;
  return j;
}

inline Json loss_to_json(const LossBreakdown& l) {
  Json j;
  j["known_cls"] = l.known_cls;
  j["known_reg"] = l.known_reg;
  j["unknown_cls"] = l.unknown_cls;
  j["bg_cls"] = l.bg_cls;
  j["total"] = l.total;
  return j;
}

/// JSON-lines run log: every `stride`-th loss record per phase (first and
/// last iterations always included) followed by eval snapshot records.
inline std::string run_log_to_jsonl(const RunLog& log,
                                    const std::vector<MetricsReport>& snapshots,
                                    int stride = 25) {
  std::ostringstream out;
  for (size_t i = 0; i < log.entries.size(); ++i) {
    const auto& e = log.entries[i];
    const bool phase_edge =
        i + 1 == log.entries.size() || log.entries[i + 1].phase != e.phase;
    if (e.iter % stride != 0 && !phase_edge) continue;
    Json j;
    j["type"] = "loss";
    j["phase"] = e.phase;
    j["iter"] = e.iter;
    j["loss"] = loss_to_json(e.loss);
    out << j.dump() << "\n";
  }
  for (size_t t = 0; t < snapshots.size(); ++t) {
    Json j;
    j["type"] = "eval";
    j["task_index"] = static_cast<int>(t);
    j["metrics"] = metrics_to_json(snapshots[t]);
    out << j.dump() << "\n";
  }
  return out.str();
}

// ---------------------------------------------------------------------------
// CSV / SVG
// ---------------------------------------------------------------------------

inline std::string csv_escape(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += "\"\"";
    out += c;
  }
  out += "\"";
  return out;
}

inline std::string format_double(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  std::ostringstream os;
  os << std::setprecision(12) << v;
  return os.str();
}

/// Minimal polyline plot writer. Series share one linear axis pair; the
/// config comment travels in a <desc> element for provenance.
struct SvgSeries {
  std::vector<double> x, y;
  std::string color = "#1f6fb2";
  std::string label;
  bool markers = false;
};

inline std::string svg_plot(const std::vector<SvgSeries>& series, const std::string& title,
                            const std::string& x_label, const std::string& y_label,
                            const std::string& desc = "") {
  const double W = 720, H = 440, L = 70, R = 20, T = 40, B = 50;
  double xmin = 1e300, xmax = -1e300, ymin = 1e300, ymax = -1e300;
  for (const auto& s : series)
    for (size_t i = 0; i < s.x.size(); ++i) {
      xmin = std::min(xmin, s.x[i]);
      xmax = std::max(xmax, s.x[i]);
      ymin = std::min(ymin, s.y[i]);
      ymax = std::max(ymax, s.y[i]);
    }
  if (xmin > xmax) {
    xmin = 0;
    xmax = 1;
    ymin = 0;
    ymax = 1;
  }
  if (xmax == xmin) xmax = xmin + 1;
  if (ymax == ymin) ymax = ymin + 1;
  const double px = (W - L - R) / (xmax - xmin);
  const double py = (H - T - B) / (ymax - ymin);
  auto X = [&](double x) { return L + (x - xmin) * px; };
  auto Y = [&](double y) { return H - B - (y - ymin) * py; };

  std::ostringstream os;
  os << std::setprecision(8);
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
     << "\" viewBox=\"0 0 " << W << " " << H << "\">\n";
  if (!desc.empty()) os << "<desc>" << desc << "</desc>\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<text x=\"" << W / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\" "
        "font-family=\"sans-serif\">"
     << title << "</text>\n";
  // axes
  os << "<line x1=\"" << L << "\" y1=\"" << H - B << "\" x2=\"" << W - R << "\" y2=\""
     << H - B << "\" stroke=\"black\"/>\n";
  os << "<line x1=\"" << L << "\" y1=\"" << T << "\" x2=\"" << L << "\" y2=\"" << H - B
     << "\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 5; ++i) {
    const double xv = xmin + (xmax - xmin) * i / 5.0;
    const double yv = ymin + (ymax - ymin) * i / 5.0;
    os << "<text x=\"" << X(xv) << "\" y=\"" << H - B + 18
       << "\" text-anchor=\"middle\" font-size=\"11\" font-family=\"sans-serif\">"
       << std::setprecision(4) << xv << "</text>\n";
    os << "<text x=\"" << L - 8 << "\" y=\"" << Y(yv) + 4
       << "\" text-anchor=\"end\" font-size=\"11\" font-family=\"sans-serif\">"
       << std::setprecision(4) << yv << "</text>\n";
    os << std::setprecision(8);
  }
  os << "<text x=\"" << (L + W - R) / 2 << "\" y=\"" << H - 12
     << "\" text-anchor=\"middle\" font-size=\"12\" font-family=\"sans-serif\">" << x_label
     << "</text>\n";
  os << "<text x=\"16\" y=\"" << (T + H - B) / 2
     << "\" text-anchor=\"middle\" font-size=\"12\" font-family=\"sans-serif\" "
        "transform=\"rotate(-90 16 "
     << (T + H - B) / 2 << ")\">" << y_label << "</text>\n";

  double legend_y = T + 6;
  for (const auto& s : series) {
    if (s.x.size() >= 2 && !s.markers) {
      os << "<polyline fill=\"none\" stroke=\"" << s.color << "\" stroke-width=\"1.5\" points=\"";
      for (size_t i = 0; i < s.x.size(); ++i) os << X(s.x[i]) << "," << Y(s.y[i]) << " ";
      os << "\"/>\n";
    }
    if (s.markers) {
      for (size_t i = 0; i < s.x.size(); ++i)
        os << "<circle cx=\"" << X(s.x[i]) << "\" cy=\"" << Y(s.y[i])
           << "\" r=\"1.6\" fill=\"" << s.color << "\"/>\n";
    }
    if (!s.label.empty()) {
      os << "<rect x=\"" << W - R - 150 << "\" y=\"" << legend_y - 9
         << "\" width=\"10\" height=\"10\" fill=\"" << s.color << "\"/>\n";
      os << "<text x=\"" << W - R - 136 << "\" y=\"" << legend_y
         << "\" font-size=\"11\" font-family=\"sans-serif\">" << s.label << "</text>\n";
      legend_y += 16;
    }
  }
  os << "</svg>\n";
  return os.str();
}

inline std::string separability_label(ProposalLabel l) {
  switch (l) {
    case ProposalLabel::kKnown: return "known";
    case ProposalLabel::kUnknown: return "unknown";
    case ProposalLabel::kBg: return "bg";
    default: return "ambiguous";
  }
}

/// CSV of the sorted score curve: rank, score, label. One row per probe.
inline std::string separability_csv(const std::vector<SeparabilityRow>& rows,
                                    const std::string& provenance) {
  std::ostringstream os;
  os << "# " << provenance << "\n";
  os << "rank,score,label\n";
  for (size_t i = 0; i < rows.size(); ++i)
    os << i << "," << format_double(rows[i].score) << ","
       << separability_label(rows[i].label) << "\n";
  return os.str();
}

/// Sorted-score curve with per-category markers; AUROC goes into the title.
inline std::string separability_svg(const std::vector<SeparabilityRow>& rows, double auc,
                                    const std::string& desc) {
  SvgSeries curve;
  curve.color = "#999999";
  curve.label = "sorted matching score";
  SvgSeries known, unknown, bg;
  known.color = "#2e9e4f";
  known.label = "known";
  known.markers = true;
  unknown.color = "#d03a3a";
  unknown.label = "unknown";
  unknown.markers = true;
  bg.color = "#333333";
  bg.label = "bg";
  bg.markers = true;
  const size_t stride = std::max<size_t>(1, rows.size() / 2000);
  for (size_t i = 0; i < rows.size(); ++i) {
    curve.x.push_back(static_cast<double>(i));
    curve.y.push_back(rows[i].score);
    if (i % stride != 0) continue;
    SvgSeries* dst = nullptr;
    if (rows[i].label == ProposalLabel::kKnown) dst = &known;
    if (rows[i].label == ProposalLabel::kUnknown) dst = &unknown;
    if (rows[i].label == ProposalLabel::kBg) dst = &bg;
    if (dst) {
      dst->x.push_back(static_cast<double>(i));
      dst->y.push_back(rows[i].score);
    }
  }
  std::ostringstream title;
  title << "sorted matching score by proposal rank (unknown-vs-bg AUROC = "
        << std::setprecision(4) << auc << ")";
  return svg_plot({curve, known, unknown, bg}, title.str(), "rank", "matching score", desc);
}

inline std::string per_class_ap_csv(const MetricsReport& r, const std::string& provenance) {
  std::ostringstream os;
  os << "# " << provenance << "\n";
  os << "class_id,ap50\n";
  for (const auto& [cls, ap] : r.per_class_ap) os << cls << "," << format_double(ap) << "\n";
  return os.str();
}

}  // namespace randbox
