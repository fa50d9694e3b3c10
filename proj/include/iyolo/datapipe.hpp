#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "iyolo/postproc.hpp"
#include "iyolo/tensor.hpp"

namespace iyolo {

/// One image: channel-first RGB pixels in [0, 1].
struct ImageRecord {
  std::string id;
  int width = 0, height = 0;
  Tensor pixels;  // 3 x H x W
};

/// YOLO-format box: all coordinates normalized to the image.
struct LabelBox {
  int class_id = 0;
  float cx = 0, cy = 0, w = 0, h = 0;
};
using LabelSet = std::vector<LabelBox>;

void validate_labels(const LabelSet& labels, const std::string& context);

/// Binary PPM ("P6", maxval 255). Pixels map byte -> byte/255; writing
/// rounds to the nearest byte, so read/write/read is the identity.
ImageRecord read_ppm(const std::string& path);
std::pair<int, int> read_ppm_size(const std::string& path);  // (width, height)
void write_ppm(const ImageRecord& record, const std::string& path);

/// One "class cx cy w h" line per box; empty file means no objects.
LabelSet parse_yolo_labels(const std::string& path);
void write_yolo_labels(const LabelSet& labels, const std::string& path);

enum class FlipAxis { Horizontal, Vertical };

/// Pixel mirror plus label mirror (horizontal: cx' = 1 - cx).
std::pair<ImageRecord, LabelSet> flip_augment(const ImageRecord& img,
                                              const LabelSet& labels, FlipAxis axis);

struct Vec2 {
  double x = 0, y = 0;
};
Vec2 rotate_about(Vec2 p, Vec2 center, double theta_deg);

Tensor rotate_image(const Tensor& pixels, double theta_deg);  // 3 x H x W
/// Boxes become the axis-aligned hull of their rotated corners, clipped to
/// the image; a box whose clipped area falls below 10% of its original area
/// is dropped.
LabelSet rotate_labels(const LabelSet& labels, int width, int height, double theta_deg);

/// The supported augmentation rotation; theta_deg must be +15 or -15.
std::pair<ImageRecord, LabelSet> rotate_augment(const ImageRecord& img,
                                                const LabelSet& labels, double theta_deg);

/// Scale factors mapping model space back to original pixels.
struct CoordTransform {
  double sx = 1.0, sy = 1.0;
  Box to_original(const Box& b) const;
  Box to_model(const Box& b) const;
};

/// Bilinear stretch-resize to input_size x input_size, batched as 1x3xSxS.
std::pair<Tensor, CoordTransform> to_model_tensor(const ImageRecord& record,
                                                  int input_size);

struct DatasetRecord {
  std::string id;
  std::string image_path;  // relative to the dataset dir
  std::string label_path;
  std::string split;  // "train" or "val"
};

struct DatasetIndex {
  std::vector<DatasetRecord> records;
};

void write_index(const DatasetIndex& index, const std::string& dir);
DatasetIndex read_index(const std::string& dir);

/// Synthetic stand-in dataset: noisy grayscale "scans" with 0-2 bright
/// elliptical blobs whose exact pixel bounding boxes become the labels.
/// Deterministic for a given seed.
DatasetIndex generate_fixture_dataset(int n_images, std::uint64_t seed,
                                      const std::string& out_dir, int image_size = 256,
                                      int num_classes = 2);

/// The offline augmentation recipe: identity, +15 and -15 degree rotations,
/// horizontal and vertical flips.
struct AugmentVariant {
  std::string suffix;  // "" for the identity copy
  ImageRecord image;
  LabelSet labels;
};
std::vector<AugmentVariant> augment_variants(const ImageRecord& img, const LabelSet& labels);

}  // namespace iyolo
