#include "iyolo/postproc.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <ostream>
#include <sstream>

namespace iyolo {

double iou(const Box& a, const Box& b) {
  const double ax1 = a.x1, ay1 = a.y1, ax2 = a.x2, ay2 = a.y2;
  const double bx1 = b.x1, by1 = b.y1, bx2 = b.x2, by2 = b.y2;
  const double iw = std::max(0.0, std::min(ax2, bx2) - std::max(ax1, bx1));
  const double ih = std::max(0.0, std::min(ay2, by2) - std::max(ay1, by1));
  const double inter = iw * ih;
  const double area_a = std::max(0.0, ax2 - ax1) * std::max(0.0, ay2 - ay1);
  const double area_b = std::max(0.0, bx2 - bx1) * std::max(0.0, by2 - by1);
  const double uni = area_a + area_b - inter;
  if (uni <= 0.0) throw std::invalid_argument("iou: zero-area union");
  return inter / uni;
}

static bool clip_to_image(Box& b, float size) {
  b.x1 = std::clamp(b.x1, 0.0f, size);
  b.y1 = std::clamp(b.y1, 0.0f, size);
  b.x2 = std::clamp(b.x2, 0.0f, size);
  b.y2 = std::clamp(b.y2, 0.0f, size);
  return b.x2 > b.x1 && b.y2 > b.y1;
}

std::vector<Detection> decode_anchor_heads(std::span<const Tensor> heads,
                                           const AnchorGrid& anchors,
                                           std::span<const int> strides,
                                           float conf_thresh, int num_classes) {
  tensor_require(heads.size() == strides.size() && heads.size() <= anchors.size(),
                 "decode_anchor_heads: scale count mismatch");
  const int per_anchor = 5 + num_classes;
  std::vector<Detection> out;

  for (std::size_t s = 0; s < heads.size(); ++s) {
    const Tensor& map = heads[s];
    tensor_require(map.rank() == 4 && map.dim(0) == 1,
                   "decode_anchor_heads: head must be 1xCxHxW");
    tensor_require(map.dim(1) == 3 * per_anchor,
                   "decode_anchor_heads: channel count != 3*(5+num_classes)");
    const int gh = map.dim(2), gw = map.dim(3);
    const int stride = strides[s];
    const float img_w = static_cast<float>(gw * stride);
    const float img_h = static_cast<float>(gh * stride);

    for (int a = 0; a < 3; ++a) {
      const int base = a * per_anchor;
      const Anchor& anc = anchors[s][static_cast<std::size_t>(a)];
      for (int cy = 0; cy < gh; ++cy) {
        for (int cx = 0; cx < gw; ++cx) {
          const float obj = sigmoid_scalar(map.at4(0, base + 4, cy, cx));
          float best_cls = -std::numeric_limits<float>::infinity();
          int best_id = 0;
          for (int c = 0; c < num_classes; ++c) {
            const float logit = map.at4(0, base + 5 + c, cy, cx);
            if (logit > best_cls) {
              best_cls = logit;
              best_id = c;
            }
          }
          const float score = obj * sigmoid_scalar(best_cls);
          if (score < conf_thresh) continue;

          const float bx = (sigmoid_scalar(map.at4(0, base + 0, cy, cx)) + cx) * stride;
          const float by = (sigmoid_scalar(map.at4(0, base + 1, cy, cx)) + cy) * stride;
          const float bw = anc.w * std::exp(map.at4(0, base + 2, cy, cx));
          const float bh = anc.h * std::exp(map.at4(0, base + 3, cy, cx));
          Box box{bx - bw / 2, by - bh / 2, bx + bw / 2, by + bh / 2};
          box.x1 = std::clamp(box.x1, 0.0f, img_w);
          box.x2 = std::clamp(box.x2, 0.0f, img_w);
          box.y1 = std::clamp(box.y1, 0.0f, img_h);
          box.y2 = std::clamp(box.y2, 0.0f, img_h);
          if (box.x2 > box.x1 && box.y2 > box.y1) {
            out.push_back(Detection{best_id, score, box});
          }
        }
      }
    }
  }
  return out;
}

std::vector<Detection> nms(const std::vector<Detection>& dets, float iou_thresh) {
  std::vector<std::size_t> order(dets.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (dets[a].score != dets[b].score) return dets[a].score > dets[b].score;
    if (dets[a].class_id != dets[b].class_id) return dets[a].class_id < dets[b].class_id;
    return a < b;
  });

  std::vector<bool> suppressed(dets.size(), false);
  std::vector<Detection> kept;
  for (std::size_t i = 0; i < order.size(); ++i) {
    const std::size_t idx = order[i];
    if (suppressed[idx]) continue;
    kept.push_back(dets[idx]);
    for (std::size_t j = i + 1; j < order.size(); ++j) {
      const std::size_t other = order[j];
      if (suppressed[other] || dets[other].class_id != dets[idx].class_id) continue;
      if (iou(dets[idx].box, dets[other].box) > iou_thresh) suppressed[other] = true;
    }
  }
  return kept;
}

std::vector<Detection> decode_set_prediction(const Tensor& class_logits,
                                             const Tensor& boxes,
                                             float score_thresh, int input_size) {
  tensor_require(class_logits.rank() == 2 && boxes.rank() == 2 && boxes.dim(1) == 4 &&
                     class_logits.dim(0) == boxes.dim(0),
                 "decode_set_prediction: expected Q x nc logits and Q x 4 boxes");
  const int q_count = class_logits.dim(0), nc = class_logits.dim(1);
  const float size = static_cast<float>(input_size);

  std::vector<Detection> out;
  for (int q = 0; q < q_count; ++q) {
    float best = -std::numeric_limits<float>::infinity();
    int best_id = 0;
    for (int c = 0; c < nc; ++c) {
      const float logit = class_logits.at2(q, c);
      if (logit > best) {
        best = logit;
        best_id = c;
      }
    }
    const float score = sigmoid_scalar(best);
    if (score < score_thresh) continue;

    const float cx = boxes.at2(q, 0) * size, cy = boxes.at2(q, 1) * size;
    const float w = boxes.at2(q, 2) * size, h = boxes.at2(q, 3) * size;
    Box box{cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2};
    if (clip_to_image(box, size)) out.push_back(Detection{best_id, score, box});
  }
  return out;
}

// Potential-based assignment on an n x m matrix with n <= m (O(n^2 m)).
// p[j] ends up holding the 1-based row assigned to 1-based column j.
static std::vector<int> assign_rows_to_cols(const Tensor& cost, int n, int m) {
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(static_cast<std::size_t>(n) + 1, 0.0);
  std::vector<double> v(static_cast<std::size_t>(m) + 1, 0.0);
  std::vector<int> p(static_cast<std::size_t>(m) + 1, 0);
  std::vector<int> way(static_cast<std::size_t>(m) + 1, 0);

  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::vector<double> minv(static_cast<std::size_t>(m) + 1, inf);
    std::vector<bool> used(static_cast<std::size_t>(m) + 1, false);
    do {
      used[static_cast<std::size_t>(j0)] = true;
      const int i0 = p[static_cast<std::size_t>(j0)];
      double delta = inf;
      int j1 = 0;
      for (int j = 1; j <= m; ++j) {
        if (used[static_cast<std::size_t>(j)]) continue;
        const double cur = cost.at2(i0 - 1, j - 1) - u[static_cast<std::size_t>(i0)] -
                           v[static_cast<std::size_t>(j)];
        if (cur < minv[static_cast<std::size_t>(j)]) {
          minv[static_cast<std::size_t>(j)] = cur;
          way[static_cast<std::size_t>(j)] = j0;
        }
        if (minv[static_cast<std::size_t>(j)] < delta) {
          delta = minv[static_cast<std::size_t>(j)];
          j1 = j;
        }
      }
      for (int j = 0; j <= m; ++j) {
        if (used[static_cast<std::size_t>(j)]) {
          u[static_cast<std::size_t>(p[static_cast<std::size_t>(j)])] += delta;
          v[static_cast<std::size_t>(j)] -= delta;
        } else {
          minv[static_cast<std::size_t>(j)] -= delta;
        }
      }
      j0 = j1;
    } while (p[static_cast<std::size_t>(j0)] != 0);
    do {
      const int j1 = way[static_cast<std::size_t>(j0)];
      p[static_cast<std::size_t>(j0)] = p[static_cast<std::size_t>(j1)];
      j0 = j1;
    } while (j0 != 0);
  }
  return p;
}

std::vector<std::pair<int, int>> hungarian_match(const Tensor& cost) {
  tensor_require(cost.rank() == 2, "hungarian_match: cost must be rank-2");
  for (std::size_t i = 0; i < cost.size(); ++i) {
    tensor_require(std::isfinite(cost[i]), "hungarian_match: costs must be finite");
  }
  const int n = cost.dim(0), m = cost.dim(1);

  std::vector<std::pair<int, int>> pairs;
  if (n <= m) {
    const std::vector<int> p = assign_rows_to_cols(cost, n, m);
    for (int j = 1; j <= m; ++j) {
      if (p[static_cast<std::size_t>(j)] != 0) {
        pairs.emplace_back(p[static_cast<std::size_t>(j)] - 1, j - 1);
      }
    }
  } else {
    const std::vector<int> p = assign_rows_to_cols(transpose2d(cost), m, n);
    for (int j = 1; j <= n; ++j) {
      if (p[static_cast<std::size_t>(j)] != 0) {
        pairs.emplace_back(j - 1, p[static_cast<std::size_t>(j)] - 1);
      }
    }
  }
  std::sort(pairs.begin(), pairs.end());
  return pairs;
}

void write_detection_dump(std::span<const DetectionRecord> records, std::ostream& os) {
  char line[256];
  for (const DetectionRecord& r : records) {
    std::snprintf(line, sizeof(line), "%s %d %.4f %.4f %.4f %.4f %.4f\n",
                  r.image_id.c_str(), r.det.class_id, r.det.score, r.det.box.x1,
                  r.det.box.y1, r.det.box.x2, r.det.box.y2);
    os << line;
  }
}

std::vector<DetectionRecord> read_detection_dump(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open detection dump: " + path);
  std::vector<DetectionRecord> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ss(line);
    DetectionRecord r;
    if (!(ss >> r.image_id >> r.det.class_id >> r.det.score >> r.det.box.x1 >>
          r.det.box.y1 >> r.det.box.x2 >> r.det.box.y2)) {
      throw std::runtime_error(path + ":" + std::to_string(lineno) +
                               ": malformed detection line");
    }
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace iyolo
