#pragma once

#include <array>
#include <iosfwd>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "iyolo/tensor.hpp"

namespace iyolo {

/// Axis-aligned box, corner form, x1 < x2 and y1 < y2 for valid boxes.
struct Box {
  float x1 = 0, y1 = 0, x2 = 0, y2 = 0;
};

/// Intersection area over union area; 0 for disjoint boxes.
/// Throws if both boxes are degenerate (zero-area union).
double iou(const Box& a, const Box& b);

struct Anchor {
  float w = 0, h = 0;
};
using AnchorGrid = std::array<std::array<Anchor, 3>, 3>;  // 3 scales x 3 anchors

struct Detection {
  int class_id = 0;
  float score = 0;
  Box box;
};

/// Classic YOLO anchor decode over per-scale maps of 1 x 3*(5+nc) x h x w:
///   bx = (sigma(tx) + cell_x) * stride      bw = anchor_w * exp(tw)
///   score = sigma(obj) * max_c sigma(cls_c)
/// Detections below conf_thresh are dropped; boxes are clipped to the image.
std::vector<Detection> decode_anchor_heads(std::span<const Tensor> heads,
                                           const AnchorGrid& anchors,
                                           std::span<const int> strides,
                                           float conf_thresh, int num_classes);

/// Greedy class-aware NMS. Candidates ranked by score (ties: lower class id,
/// then input order); a kept box suppresses same-class boxes with IoU
/// strictly above iou_thresh. Output sorted by score descending.
std::vector<Detection> nms(const std::vector<Detection>& dets, float iou_thresh);

/// NMS-free decode of a set-prediction head: class_logits Q x nc, boxes
/// Q x 4 normalized (cx, cy, w, h) already in (0,1). Per query keeps
/// argmax-class detections with max_c sigma(logit_c) >= score_thresh.
std::vector<Detection> decode_set_prediction(const Tensor& class_logits,
                                             const Tensor& boxes,
                                             float score_thresh, int input_size);

/// Minimum-cost assignment on an n x m cost matrix; returns min(n, m) pairs
/// sorted by row. Costs must be finite.
std::vector<std::pair<int, int>> hungarian_match(const Tensor& cost);

/// Text dump interchange: one line per detection,
/// "image_id class_id score x1 y1 x2 y2" with 4-decimal floats.
struct DetectionRecord {
  std::string image_id;
  Detection det;
};

void write_detection_dump(std::span<const DetectionRecord> records, std::ostream& os);
std::vector<DetectionRecord> read_detection_dump(const std::string& path);

}  // namespace iyolo
