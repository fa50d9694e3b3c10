#include "iyolo/evalkit.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <tuple>

#include "json.hpp"

namespace iyolo {

MatchStats match_image(const std::vector<Detection>& dets,
                       const std::vector<GroundTruthBox>& gts, double iou_thresh) {
  MatchStats stats;
  for (const GroundTruthBox& gt : gts) {
    stats.counts[gt.class_id].num_gt += 1;
  }

  std::vector<std::size_t> order(dets.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return dets[a].score > dets[b].score;
  });

  std::vector<bool> gt_matched(gts.size(), false);
  for (std::size_t idx : order) {
    const Detection& det = dets[idx];
    int best_gt = -1;
    double best_iou = 0.0;
    for (std::size_t g = 0; g < gts.size(); ++g) {
      if (gt_matched[g] || gts[g].class_id != det.class_id) continue;
      const double v = iou(det.box, gts[g].box);
      if (v >= iou_thresh && v > best_iou) {
        best_iou = v;
        best_gt = static_cast<int>(g);
      }
    }
    const bool tp = best_gt >= 0;
    if (tp) {
      gt_matched[static_cast<std::size_t>(best_gt)] = true;
      stats.counts[det.class_id].tp += 1;
    } else {
      stats.counts[det.class_id].fp += 1;
    }
    stats.flags[det.class_id].push_back(DetFlag{det.score, tp});
  }

  for (std::size_t g = 0; g < gts.size(); ++g) {
    if (!gt_matched[g]) stats.counts[gts[g].class_id].fn += 1;
  }
  return stats;
}

std::vector<PrPoint> pr_curve(std::vector<DetFlag> flags, std::int64_t total_gt) {
  tensor_require(total_gt >= 0, "pr_curve: total_gt must be >= 0");
  std::stable_sort(flags.begin(), flags.end(),
                   [](const DetFlag& a, const DetFlag& b) { return a.score > b.score; });
  std::vector<PrPoint> curve;
  curve.reserve(flags.size());
  std::int64_t tp = 0, fp = 0;
  for (const DetFlag& f : flags) {
    (f.tp ? tp : fp) += 1;
    PrPoint p;
    p.precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
    p.recall = total_gt > 0 ? static_cast<double>(tp) / static_cast<double>(total_gt) : 0.0;
    p.score = f.score;
    curve.push_back(p);
  }
  return curve;
}

std::optional<double> average_precision(const std::vector<PrPoint>& curve,
                                        std::int64_t total_gt) {
  if (total_gt == 0) return std::nullopt;
  if (curve.empty()) return 0.0;

  // precision envelope: at each rank the max precision at recall >= here
  std::vector<double> env(curve.size());
  double running = 0.0;
  for (std::size_t i = curve.size(); i-- > 0;) {
    running = std::max(running, curve[i].precision);
    env[i] = running;
  }
  double ap = 0.0;
  double prev_recall = 0.0;
  for (std::size_t i = 0; i < curve.size(); ++i) {
    ap += (curve[i].recall - prev_recall) * env[i];
    prev_recall = curve[i].recall;
  }
  return ap;
}

double map_at(std::span<const double> per_class_aps) {
  tensor_require(!per_class_aps.empty(), "map_at: no evaluated classes");
  double sum = 0.0;
  for (double ap : per_class_aps) sum += ap;
  return sum / static_cast<double>(per_class_aps.size());
}

EvalReport evaluate(const std::map<std::string, std::vector<Detection>>& dets_by_image,
                    const std::map<std::string, std::vector<GroundTruthBox>>& gts_by_image,
                    double iou_thresh) {
  for (const auto& [id, dets] : dets_by_image) {
    if (!gts_by_image.contains(id)) {
      throw std::runtime_error("evaluate: detection references unknown image id '" + id + "'");
    }
  }

  // (score, image_id, rank-within-image) keyed flags; the sort below makes
  // the global ranking independent of image supply order.
  struct TaggedFlag {
    float score;
    const std::string* image_id;
    std::size_t seq;
    bool tp;
  };
  std::map<int, std::vector<TaggedFlag>> pooled;
  std::map<int, ClassCounts> totals;

  static const std::vector<Detection> no_dets;
  for (const auto& [id, gts] : gts_by_image) {
    auto it = dets_by_image.find(id);
    const std::vector<Detection>& dets = it == dets_by_image.end() ? no_dets : it->second;
    MatchStats stats = match_image(dets, gts, iou_thresh);
    for (const auto& [cls, counts] : stats.counts) {
      ClassCounts& t = totals[cls];
      t.tp += counts.tp;
      t.fp += counts.fp;
      t.fn += counts.fn;
      t.num_gt += counts.num_gt;
    }
    for (const auto& [cls, flags] : stats.flags) {
      std::vector<TaggedFlag>& dst = pooled[cls];
      for (std::size_t i = 0; i < flags.size(); ++i) {
        dst.push_back(TaggedFlag{flags[i].score, &id, i, flags[i].tp});
      }
    }
  }

  EvalReport report;
  report.num_images = static_cast<std::int64_t>(gts_by_image.size());
  std::vector<double> defined_aps;
  for (auto& [cls, counts] : totals) {
    std::vector<TaggedFlag>& tagged = pooled[cls];
    std::sort(tagged.begin(), tagged.end(), [](const TaggedFlag& a, const TaggedFlag& b) {
      if (a.score != b.score) return a.score > b.score;
      if (*a.image_id != *b.image_id) return *a.image_id < *b.image_id;
      return a.seq < b.seq;
    });
    std::vector<DetFlag> flags;
    flags.reserve(tagged.size());
    for (const TaggedFlag& t : tagged) flags.push_back(DetFlag{t.score, t.tp});

    ClassReport cr;
    cr.counts = counts;
    cr.curve = pr_curve(std::move(flags), counts.num_gt);
    cr.ap = average_precision(cr.curve, counts.num_gt);
    if (cr.ap) defined_aps.push_back(*cr.ap);
    report.classes[cls] = std::move(cr);
  }
  report.map = defined_aps.empty() ? 0.0 : map_at(defined_aps);
  return report;
}

void write_report_json(const EvalReport& report, const std::string& path) {
  nlohmann::json j;
  j["map"] = report.map;
  j["num_images"] = report.num_images;
  nlohmann::json classes = nlohmann::json::object();
  for (const auto& [cls, cr] : report.classes) {
    nlohmann::json c;
    if (cr.ap) {
      c["ap"] = *cr.ap;
    } else {
      c["ap"] = nullptr;
    }
    c["tp"] = cr.counts.tp;
    c["fp"] = cr.counts.fp;
    c["fn"] = cr.counts.fn;
    c["num_gt"] = cr.counts.num_gt;
    classes[std::to_string(cls)] = std::move(c);
  }
  j["classes"] = std::move(classes);

  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write report: " + path);
  out << j.dump(2) << "\n";
}

void write_pr_table(const EvalReport& report, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write PR table: " + path);
  char line[128];
  for (const auto& [cls, cr] : report.classes) {
    out << "# class " << cls << "\n";
    out << "# score precision recall\n";
    for (const PrPoint& p : cr.curve) {
      std::snprintf(line, sizeof(line), "%.6f %.6f %.6f\n", p.score, p.precision, p.recall);
      out << line;
    }
  }
}

}  // namespace iyolo
