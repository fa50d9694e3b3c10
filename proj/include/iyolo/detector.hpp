#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <set>
#include <string>
#include <variant>
#include <vector>

#include "iyolo/attention.hpp"
#include "iyolo/blocks.hpp"
#include "iyolo/postproc.hpp"
#include "iyolo/tensor.hpp"

#include "json.hpp"

namespace iyolo {

enum class ConvKind { Standard, Ghost };
enum class TailKind { C2f, Te };
enum class HeadKind { AnchorNms, SetPrediction };

/// Training hyperparameters carried as config metadata for experiment
/// records; nothing in this codebase executes them.
struct TrainingMeta {
  int epochs = 200;
  int batch_size = 16;
  double learning_rate = 0.01;
  double momentum = 0.95;
  double weight_decay = 0.0005;
};

struct ModelConfig {
  int input_size = 640;
  int num_classes = 2;
  float width_mult = 0.25f;
  float depth_mult = 0.34f;
  ConvKind conv_kind = ConvKind::Ghost;
  TailKind tail_kind = TailKind::Te;
  HeadKind head_kind = HeadKind::SetPrediction;
  AnchorGrid anchors = default_anchors();
  float conf_thresh = 0.25f;
  float nms_iou_thresh = 0.45f;
  TeConfig te;  // d_model == 0 and mlp_hidden == 0 mean "derive at build time"
  int detr_queries = 50;
  int detr_decoder_layers = 2;
  std::uint64_t seed = 0;
  int ghost_ratio = 2;
  int ghost_kernel = 3;  // depthwise kernel of the cheap branch
  // When non-empty, exactly these downsampling blocks use GhostConv
  // (default scope: every one of them except the stem).
  std::set<std::string> ghost_scope;
  TrainingMeta recorded_training_meta;

  static AnchorGrid default_anchors();
};

void validate_config(const ModelConfig& cfg);  // throws std::invalid_argument

ModelConfig config_from_json(const nlohmann::json& j);
nlohmann::json config_to_json(const ModelConfig& cfg);
ModelConfig load_config(const std::string& path);

/// Names of the downsampling conv blocks eligible for GhostConv.
const std::vector<std::string>& ghostable_block_names();

using DownBlock = std::variant<ConvBlockParams, GhostConvParams>;

struct BackboneStage {
  DownBlock down;
  std::vector<C2fParams> c2f;  // empty for stage 4 when the TE tail is used
};

struct BackboneParams {
  ConvBlockParams stem;
  std::array<BackboneStage, 4> stages;
  std::optional<TeBlockWeights> te;
  SPPFParams sppf;
};

struct NeckParams {
  C2fParams td1;  // P5 (upsampled) + P4
  C2fParams td2;  // -> N3
  DownBlock down1;
  C2fParams pan1;  // -> N4
  DownBlock down2;
  C2fParams pan2;  // -> N5
};

struct AnchorHeadScale {
  ConvBlockParams cv1, cv2;
  Tensor pred_w, pred_b;  // 1x1 conv to 3*(5+nc) channels
};

struct AnchorHeadParams {
  std::array<AnchorHeadScale, 3> scales;
};

struct DecoderLayerWeights {
  MhaWeights self_attn;
  MhaWeights cross_attn;
  MlpWeights mlp;
};

struct SetHeadParams {
  std::array<Tensor, 3> proj_w;  // per scale, C_s x d_model
  std::array<Tensor, 3> proj_b;
  Tensor queries;  // Q x d_model, learned
  std::vector<DecoderLayerWeights> layers;
  Tensor cls_w, cls_b;  // d_model x nc
  Tensor box_w, box_b;  // d_model x 4
};

struct Model {
  ModelConfig cfg;
  BackboneParams backbone;
  NeckParams neck;
  std::optional<AnchorHeadParams> anchor_head;
  std::optional<SetHeadParams> set_head;

  std::array<int, 5> widths{};  // stem + stage output channels after width_mult
  int d_model = 0;              // resolved TE / decoder width
};

struct PyramidFeatures {
  Tensor p3, p4, p5;  // strides 8, 16, 32
};

struct NeckFeatures {
  Tensor n3, n4, n5;
};

struct HeadOutputs {
  HeadKind kind = HeadKind::AnchorNms;
  std::vector<Tensor> anchor_maps;  // 3 maps, N x 3*(5+nc) x h x w
  Tensor class_logits;              // N x Q x nc (set-prediction)
  Tensor boxes;                     // N x Q x 4, sigmoided (cx, cy, w, h)
};

/// Builds the graph and its weights from a validated config; weight init is
/// U(-b, b) with b = sqrt(1/fan_in) from a PRNG seeded with cfg.seed, BN
/// starts as the identity.
Model build_model(const ModelConfig& cfg);

PyramidFeatures backbone_forward(const Model& m, const Tensor& batch);
NeckFeatures neck_forward(const Model& m, const PyramidFeatures& f);
HeadOutputs forward(const Model& m, const Tensor& batch);  // batch N x 3 x S x S

/// Deterministic walk over every named parameter tensor; the walk order is
/// the serialization order.
void for_each_tensor(Model& m,
                     const std::function<void(const std::string&, Tensor&)>& fn);
void for_each_tensor(const Model& m,
                     const std::function<void(const std::string&, const Tensor&)>& fn);

struct CostReport {
  struct Item {
    std::string name;
    std::int64_t params = 0;
    std::int64_t macs = 0;
  };
  std::vector<Item> items;
  std::int64_t total_params = 0;
  std::int64_t total_macs = 0;
};

CostReport count_params(const Model& m);
/// Multiply-accumulate counts at the given input size; convs and matmuls
/// only (normalization, activations and pooling are not counted).
CostReport count_macs(const Model& m, int input_size);

/// Weight file: magic "IYW8", u32 LE version, u64 LE header length, JSON
/// header (config + ordered tensor records with dims and payload offsets),
/// then raw little-endian float32 payload.
inline constexpr char kWeightMagic[4] = {'I', 'Y', 'W', '8'};
inline constexpr std::uint32_t kWeightVersion = 1;

void save_weights(const Model& m, const std::string& path);
Model load_model(const std::string& path);

struct WeightFileHeader {
  ModelConfig config;
  struct Record {
    std::string name;
    std::vector<int> dims;
    std::uint64_t offset = 0;
  };
  std::vector<Record> tensors;
};

WeightFileHeader read_weight_header(const std::string& path);

}  // namespace iyolo
