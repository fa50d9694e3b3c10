#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "iyolo/postproc.hpp"

namespace iyolo {

struct GroundTruthBox {
  int class_id = 0;
  Box box;
};

/// Per-detection outcome after matching, used to rank PR curves.
struct DetFlag {
  float score = 0;
  bool tp = false;
};

struct ClassCounts {
  std::int64_t tp = 0, fp = 0, fn = 0, num_gt = 0;
};

struct MatchStats {
  std::map<int, ClassCounts> counts;
  std::map<int, std::vector<DetFlag>> flags;  // per class, in match order
};

struct PrPoint {
  double precision = 0, recall = 0;
  float score = 0;
};

struct ClassReport {
  std::optional<double> ap;  // empty when the class has no ground truth
  ClassCounts counts;
  std::vector<PrPoint> curve;
};

struct EvalReport {
  std::map<int, ClassReport> classes;
  double map = 0;
  std::int64_t num_images = 0;
};

/// Greedy VOC-style matching for one image: detections in descending score
/// order (ties: input order) claim the highest-IoU unmatched same-class GT
/// with IoU >= iou_thresh (ties: lowest GT index); the rest are FP, and
/// unmatched GTs are FN.
MatchStats match_image(const std::vector<Detection>& dets,
                       const std::vector<GroundTruthBox>& gts,
                       double iou_thresh = 0.5);

/// Cumulative precision/recall at each rank, flags sorted by score
/// descending (stable for ties). Recall denominator is total_gt.
std::vector<PrPoint> pr_curve(std::vector<DetFlag> flags, std::int64_t total_gt);

/// Area under the precision envelope over recall (all-point interpolation).
/// Empty optional when total_gt == 0.
std::optional<double> average_precision(const std::vector<PrPoint>& curve,
                                        std::int64_t total_gt);

/// Mean over the evaluated classes; throws if none.
double map_at(std::span<const double> per_class_aps);

/// Dataset-level evaluation with globally score-ranked per-class pooling.
/// gts_by_image must list every image (possibly with no boxes); a detection
/// image id absent from it is an error.
EvalReport evaluate(const std::map<std::string, std::vector<Detection>>& dets_by_image,
                    const std::map<std::string, std::vector<GroundTruthBox>>& gts_by_image,
                    double iou_thresh = 0.5);

void write_report_json(const EvalReport& report, const std::string& path);
void write_pr_table(const EvalReport& report, const std::string& path);

}  // namespace iyolo
