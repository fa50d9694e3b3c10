#include "iyolo/detector.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "iyolo/rng.hpp"

namespace iyolo {

AnchorGrid ModelConfig::default_anchors() {
  // the classic YOLO priors, per scale (stride 8 / 16 / 32)
  return AnchorGrid{{{{{10, 13}, {16, 30}, {33, 23}}},
                     {{{30, 61}, {62, 45}, {59, 119}}},
                     {{{116, 90}, {156, 198}, {373, 326}}}}};
}

const std::vector<std::string>& ghostable_block_names() {
  static const std::vector<std::string> names = {
      "backbone.stage1.down", "backbone.stage2.down", "backbone.stage3.down",
      "backbone.stage4.down", "neck.down1",           "neck.down2"};
  return names;
}

void validate_config(const ModelConfig& cfg) {
  auto bad = [](const std::string& msg) { throw std::invalid_argument("config: " + msg); };
  if (cfg.num_classes < 1) bad("num_classes must be >= 1");
  if (cfg.input_size <= 0 || cfg.input_size % 32 != 0) bad("input_size must be a positive multiple of 32");
  if (!(cfg.width_mult > 0.0f)) bad("width_mult must be > 0");
  if (!(cfg.depth_mult > 0.0f)) bad("depth_mult must be > 0");
  if (!(cfg.conf_thresh >= 0.0f && cfg.conf_thresh <= 1.0f)) bad("conf_thresh must be in [0,1]");
  if (!(cfg.nms_iou_thresh >= 0.0f && cfg.nms_iou_thresh <= 1.0f)) bad("nms_iou_thresh must be in [0,1]");
  for (const auto& scale : cfg.anchors) {
    for (const Anchor& a : scale) {
      if (!(a.w > 0.0f && a.h > 0.0f)) bad("anchors must be positive");
    }
  }
  if (cfg.detr_queries < 1) bad("detr_queries must be >= 1");
  if (cfg.detr_decoder_layers < 1) bad("detr_decoder_layers must be >= 1");
  if (cfg.te.heads < 1) bad("te.heads must be >= 1");
  if (cfg.te.d_model < 0 || cfg.te.mlp_hidden < 0) bad("te dims must be >= 0");
  if (cfg.ghost_ratio < 2) bad("ghost_ratio must be >= 2");
  if (cfg.ghost_kernel < 1 || cfg.ghost_kernel % 2 == 0) bad("ghost_kernel must be odd");
  const std::vector<std::string>& known = ghostable_block_names();
  for (const std::string& name : cfg.ghost_scope) {
    if (std::find(known.begin(), known.end(), name) == known.end()) {
      bad("ghost_scope names unknown block '" + name + "'");
    }
  }
}

// ---- config <-> JSON ----

static std::string conv_kind_str(ConvKind k) { return k == ConvKind::Ghost ? "ghost" : "standard"; }
static std::string tail_kind_str(TailKind k) { return k == TailKind::Te ? "te" : "c2f"; }
static std::string head_kind_str(HeadKind k) {
  return k == HeadKind::SetPrediction ? "set_prediction" : "anchor_nms";
}
static std::string scale_mode_str(ScaleMode m) { return m == ScaleMode::Sqrt ? "sqrt" : "linear"; }

template <typename E>
static E parse_enum(const std::string& v, const std::vector<std::pair<std::string, E>>& table,
                    const char* field) {
  for (const auto& [name, value] : table) {
    if (v == name) return value;
  }
  throw std::invalid_argument(std::string("config: bad value '") + v + "' for " + field);
}

nlohmann::json config_to_json(const ModelConfig& cfg) {
  nlohmann::json j;
  j["input_size"] = cfg.input_size;
  j["num_classes"] = cfg.num_classes;
  j["width_mult"] = cfg.width_mult;
  j["depth_mult"] = cfg.depth_mult;
  j["conv_kind"] = conv_kind_str(cfg.conv_kind);
  j["tail_kind"] = tail_kind_str(cfg.tail_kind);
  j["head_kind"] = head_kind_str(cfg.head_kind);
  nlohmann::json anchors = nlohmann::json::array();
  for (const auto& scale : cfg.anchors) {
    nlohmann::json row = nlohmann::json::array();
    for (const Anchor& a : scale) row.push_back({a.w, a.h});
    anchors.push_back(std::move(row));
  }
  j["anchors"] = std::move(anchors);
  j["conf_thresh"] = cfg.conf_thresh;
  j["nms_iou_thresh"] = cfg.nms_iou_thresh;
  j["te"] = {{"d_model", cfg.te.d_model},
             {"heads", cfg.te.heads},
             {"mlp_hidden", cfg.te.mlp_hidden},
             {"scale_mode", scale_mode_str(cfg.te.scale_mode)}};
  j["detr_queries"] = cfg.detr_queries;
  j["detr_decoder_layers"] = cfg.detr_decoder_layers;
  j["seed"] = cfg.seed;
  j["ghost_ratio"] = cfg.ghost_ratio;
  j["ghost_kernel"] = cfg.ghost_kernel;
  j["ghost_scope"] = cfg.ghost_scope;
  j["recorded_training_meta"] = {{"epochs", cfg.recorded_training_meta.epochs},
                                 {"batch_size", cfg.recorded_training_meta.batch_size},
                                 {"learning_rate", cfg.recorded_training_meta.learning_rate},
                                 {"momentum", cfg.recorded_training_meta.momentum},
                                 {"weight_decay", cfg.recorded_training_meta.weight_decay}};
  return j;
}

ModelConfig config_from_json(const nlohmann::json& j) {
  ModelConfig cfg;
  cfg.input_size = j.value("input_size", cfg.input_size);
  cfg.num_classes = j.value("num_classes", cfg.num_classes);
  cfg.width_mult = j.value("width_mult", cfg.width_mult);
  cfg.depth_mult = j.value("depth_mult", cfg.depth_mult);
  if (j.contains("conv_kind")) {
    cfg.conv_kind = parse_enum<ConvKind>(j.at("conv_kind").get<std::string>(),
                                         {{"standard", ConvKind::Standard}, {"ghost", ConvKind::Ghost}},
                                         "conv_kind");
  }
  if (j.contains("tail_kind")) {
    cfg.tail_kind = parse_enum<TailKind>(j.at("tail_kind").get<std::string>(),
                                         {{"c2f", TailKind::C2f}, {"te", TailKind::Te}}, "tail_kind");
  }
  if (j.contains("head_kind")) {
    cfg.head_kind = parse_enum<HeadKind>(
        j.at("head_kind").get<std::string>(),
        {{"anchor_nms", HeadKind::AnchorNms}, {"set_prediction", HeadKind::SetPrediction}},
        "head_kind");
  }
  if (j.contains("anchors")) {
    const nlohmann::json& a = j.at("anchors");
    if (!a.is_array() || a.size() != 3) throw std::invalid_argument("config: anchors must be 3 scales");
    for (std::size_t s = 0; s < 3; ++s) {
      if (!a[s].is_array() || a[s].size() != 3) {
        throw std::invalid_argument("config: each anchor scale needs 3 (w,h) pairs");
      }
      for (std::size_t i = 0; i < 3; ++i) {
        cfg.anchors[s][i].w = a[s][i].at(0).get<float>();
        cfg.anchors[s][i].h = a[s][i].at(1).get<float>();
      }
    }
  }
  cfg.conf_thresh = j.value("conf_thresh", cfg.conf_thresh);
  cfg.nms_iou_thresh = j.value("nms_iou_thresh", cfg.nms_iou_thresh);
  if (j.contains("te")) {
    const nlohmann::json& t = j.at("te");
    cfg.te.d_model = t.value("d_model", cfg.te.d_model);
    cfg.te.heads = t.value("heads", cfg.te.heads);
    cfg.te.mlp_hidden = t.value("mlp_hidden", cfg.te.mlp_hidden);
    if (t.contains("scale_mode")) {
      cfg.te.scale_mode = parse_enum<ScaleMode>(
          t.at("scale_mode").get<std::string>(),
          {{"sqrt", ScaleMode::Sqrt}, {"linear", ScaleMode::Linear}}, "te.scale_mode");
    }
  }
  cfg.detr_queries = j.value("detr_queries", cfg.detr_queries);
  cfg.detr_decoder_layers = j.value("detr_decoder_layers", cfg.detr_decoder_layers);
  cfg.seed = j.value("seed", cfg.seed);
  cfg.ghost_ratio = j.value("ghost_ratio", cfg.ghost_ratio);
  cfg.ghost_kernel = j.value("ghost_kernel", cfg.ghost_kernel);
  if (j.contains("ghost_scope")) {
    cfg.ghost_scope.clear();
    for (const nlohmann::json& name : j.at("ghost_scope")) {
      cfg.ghost_scope.insert(name.get<std::string>());
    }
  }
  if (j.contains("recorded_training_meta")) {
    const nlohmann::json& t = j.at("recorded_training_meta");
    TrainingMeta& m = cfg.recorded_training_meta;
    m.epochs = t.value("epochs", m.epochs);
    m.batch_size = t.value("batch_size", m.batch_size);
    m.learning_rate = t.value("learning_rate", m.learning_rate);
    m.momentum = t.value("momentum", m.momentum);
    m.weight_decay = t.value("weight_decay", m.weight_decay);
  }
  validate_config(cfg);
  return cfg;
}

ModelConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot open config: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument(path + ": invalid JSON: " + e.what());
  }
  return config_from_json(j);
}

// ---- builders ----

namespace {

int scaled_channels(int base, float width_mult) {
  return std::max(1, static_cast<int>(std::lround(base * width_mult)));
}

int stage_repeats(float depth_mult, int base) {
  return std::max(1, static_cast<int>(std::lround(3.0 * depth_mult * base)));
}

Tensor init_uniform(Rng& rng, std::vector<int> dims, std::int64_t fan_in) {
  const float bound = std::sqrt(1.0f / static_cast<float>(fan_in));
  Tensor t(std::move(dims));
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(-bound, bound);
  return t;
}

ConvBlockParams make_conv_block(Rng& rng, int c_in, int c_out, int k, int stride,
                                int groups = 1) {
  ConvBlockParams p;
  p.stride = stride;
  p.padding = (k - 1) / 2;
  p.groups = groups;
  p.weight = init_uniform(rng, {c_out, c_in / groups, k, k},
                          static_cast<std::int64_t>(c_in / groups) * k * k);
  p.gamma = Tensor::full({c_out}, 1.0f);
  p.beta = Tensor({c_out});
  p.mean = Tensor({c_out});
  p.var = Tensor::full({c_out}, 1.0f);
  return p;
}

GhostConvParams make_ghost(Rng& rng, int c_in, int c_out, int k, int stride, int ratio,
                           int cheap_k) {
  tensor_require(c_out % ratio == 0, "build_model: ghost ratio must divide output channels");
  const int intrinsic = c_out / ratio;
  GhostConvParams g;
  g.ratio = ratio;
  g.primary = make_conv_block(rng, c_in, intrinsic, k, stride);
  g.cheap = make_conv_block(rng, intrinsic, (ratio - 1) * intrinsic, cheap_k, 1, intrinsic);
  return g;
}

DownBlock make_down(Rng& rng, const ModelConfig& cfg, const std::string& name, int c_in,
                    int c_out) {
  bool ghosted = cfg.conv_kind == ConvKind::Ghost;
  if (ghosted && !cfg.ghost_scope.empty()) ghosted = cfg.ghost_scope.contains(name);
  if (ghosted) {
    return make_ghost(rng, c_in, c_out, 3, 2, cfg.ghost_ratio, cfg.ghost_kernel);
  }
  return make_conv_block(rng, c_in, c_out, 3, 2);
}

C2fParams make_c2f(Rng& rng, int c_in, int c_out, int n, bool shortcut) {
  const int hidden = std::max(1, c_out / 2);
  C2fParams p;
  p.entry = make_conv_block(rng, c_in, 2 * hidden, 1, 1);
  for (int i = 0; i < n; ++i) {
    BottleneckParams b;
    b.cv1 = make_conv_block(rng, hidden, hidden, 3, 1);
    b.cv2 = make_conv_block(rng, hidden, hidden, 3, 1);
    b.shortcut = shortcut;
    p.blocks.push_back(std::move(b));
  }
  p.exit = make_conv_block(rng, (2 + n) * hidden, c_out, 1, 1);
  return p;
}

SPPFParams make_sppf(Rng& rng, int channels) {
  const int hidden = std::max(1, channels / 2);
  SPPFParams p;
  p.entry = make_conv_block(rng, channels, hidden, 1, 1);
  p.exit = make_conv_block(rng, 4 * hidden, channels, 1, 1);
  p.pool_k = 5;
  return p;
}

MhaWeights make_mha(Rng& rng, int d) {
  MhaWeights w;
  w.wq = init_uniform(rng, {d, d}, d);
  w.wk = init_uniform(rng, {d, d}, d);
  w.wv = init_uniform(rng, {d, d}, d);
  w.wo = init_uniform(rng, {d, d}, d);
  return w;
}

MlpWeights make_mlp(Rng& rng, int d, int hidden) {
  MlpWeights w;
  w.w1 = init_uniform(rng, {d, hidden}, d);
  w.b1 = init_uniform(rng, {hidden}, d);
  w.w2 = init_uniform(rng, {hidden, d}, hidden);
  w.b2 = init_uniform(rng, {d}, hidden);
  return w;
}

TeConfig resolved_te(const Model& m) {
  TeConfig cfg = m.cfg.te;
  cfg.d_model = m.d_model;
  if (cfg.mlp_hidden == 0) cfg.mlp_hidden = 2 * m.d_model;
  return cfg;
}

}  // namespace

Model build_model(const ModelConfig& cfg) {
  validate_config(cfg);
  Model m;
  m.cfg = cfg;

  const int w0 = scaled_channels(64, cfg.width_mult);
  const int w1 = scaled_channels(128, cfg.width_mult);
  const int w2 = scaled_channels(256, cfg.width_mult);
  const int w3 = scaled_channels(512, cfg.width_mult);
  const int w4 = scaled_channels(1024, cfg.width_mult);
  m.widths = {w0, w1, w2, w3, w4};

  m.d_model = cfg.te.d_model > 0 ? cfg.te.d_model : w4;
  if (m.d_model != w4) {
    throw std::invalid_argument("config: te.d_model must equal the P5 channel count (" +
                                std::to_string(w4) + ")");
  }
  if (m.d_model % cfg.te.heads != 0) {
    throw std::invalid_argument("config: te.heads must divide d_model");
  }

  Rng rng(cfg.seed);
  const int stage_in[4] = {w0, w1, w2, w3};
  const int stage_out[4] = {w1, w2, w3, w4};
  const int rep_base[4] = {1, 2, 2, 1};

  m.backbone.stem = make_conv_block(rng, 3, w0, 3, 2);
  for (int s = 0; s < 4; ++s) {
    BackboneStage& stage = m.backbone.stages[static_cast<std::size_t>(s)];
    const std::string name = "backbone.stage" + std::to_string(s + 1) + ".down";
    stage.down = make_down(rng, cfg, name, stage_in[s], stage_out[s]);
    const bool te_tail = s == 3 && cfg.tail_kind == TailKind::Te;
    if (!te_tail) {
      const int reps = stage_repeats(cfg.depth_mult, rep_base[s]);
      for (int r = 0; r < reps; ++r) {
        stage.c2f.push_back(make_c2f(rng, stage_out[s], stage_out[s], 1, true));
      }
    }
  }
  if (cfg.tail_kind == TailKind::Te) {
    TeBlockWeights te;
    te.attn = make_mha(rng, m.d_model);
    const int hidden = cfg.te.mlp_hidden > 0 ? cfg.te.mlp_hidden : 2 * m.d_model;
    te.mlp = make_mlp(rng, m.d_model, hidden);
    m.backbone.te = std::move(te);
  }
  m.backbone.sppf = make_sppf(rng, w4);

  const int n_neck = stage_repeats(cfg.depth_mult, 1);
  m.neck.td1 = make_c2f(rng, w4 + w3, w3, n_neck, false);
  m.neck.td2 = make_c2f(rng, w3 + w2, w2, n_neck, false);
  m.neck.down1 = make_down(rng, cfg, "neck.down1", w2, w2);
  m.neck.pan1 = make_c2f(rng, w2 + w3, w3, n_neck, false);
  m.neck.down2 = make_down(rng, cfg, "neck.down2", w3, w3);
  m.neck.pan2 = make_c2f(rng, w3 + w4, w4, n_neck, false);

  const int pred_ch = 3 * (5 + cfg.num_classes);
  if (cfg.head_kind == HeadKind::AnchorNms) {
    AnchorHeadParams head;
    const int scale_ch[3] = {w2, w3, w4};
    for (int s = 0; s < 3; ++s) {
      AnchorHeadScale& hs = head.scales[static_cast<std::size_t>(s)];
      hs.cv1 = make_conv_block(rng, scale_ch[s], scale_ch[s], 3, 1);
      hs.cv2 = make_conv_block(rng, scale_ch[s], scale_ch[s], 3, 1);
      hs.pred_w = init_uniform(rng, {pred_ch, scale_ch[s], 1, 1}, scale_ch[s]);
      hs.pred_b = init_uniform(rng, {pred_ch}, scale_ch[s]);
    }
    m.anchor_head = std::move(head);
  } else {
    SetHeadParams head;
    const int scale_ch[3] = {w2, w3, w4};
    for (int s = 0; s < 3; ++s) {
      head.proj_w[static_cast<std::size_t>(s)] =
          init_uniform(rng, {scale_ch[s], m.d_model}, scale_ch[s]);
      head.proj_b[static_cast<std::size_t>(s)] = init_uniform(rng, {m.d_model}, scale_ch[s]);
    }
    head.queries = init_uniform(rng, {cfg.detr_queries, m.d_model}, m.d_model);
    const int hidden = cfg.te.mlp_hidden > 0 ? cfg.te.mlp_hidden : 2 * m.d_model;
    for (int l = 0; l < cfg.detr_decoder_layers; ++l) {
      DecoderLayerWeights layer;
      layer.self_attn = make_mha(rng, m.d_model);
      layer.cross_attn = make_mha(rng, m.d_model);
      layer.mlp = make_mlp(rng, m.d_model, hidden);
      head.layers.push_back(std::move(layer));
    }
    head.cls_w = init_uniform(rng, {m.d_model, cfg.num_classes}, m.d_model);
    head.cls_b = init_uniform(rng, {cfg.num_classes}, m.d_model);
    head.box_w = init_uniform(rng, {m.d_model, 4}, m.d_model);
    head.box_b = init_uniform(rng, {4}, m.d_model);
    m.set_head = std::move(head);
  }
  return m;
}

// ---- tensor walk ----

namespace {

template <typename ModelT, typename Fn>
void walk_tensors(ModelT& m, Fn&& fn) {
  auto conv_block = [&](const std::string& prefix, auto& p) {
    fn(prefix + ".weight", p.weight);
    fn(prefix + ".bn.gamma", p.gamma);
    fn(prefix + ".bn.beta", p.beta);
    fn(prefix + ".bn.mean", p.mean);
    fn(prefix + ".bn.var", p.var);
  };
  auto down = [&](const std::string& prefix, auto& d) {
    if (auto* std_conv = std::get_if<ConvBlockParams>(&d)) {
      conv_block(prefix, *std_conv);
    } else {
      auto& g = *std::get_if<GhostConvParams>(&d);
      conv_block(prefix + ".primary", g.primary);
      conv_block(prefix + ".cheap", g.cheap);
    }
  };
  auto c2f = [&](const std::string& prefix, auto& p) {
    conv_block(prefix + ".entry", p.entry);
    for (std::size_t i = 0; i < p.blocks.size(); ++i) {
      const std::string mp = prefix + ".m" + std::to_string(i);
      conv_block(mp + ".cv1", p.blocks[i].cv1);
      conv_block(mp + ".cv2", p.blocks[i].cv2);
    }
    conv_block(prefix + ".exit", p.exit);
  };
  auto mha = [&](const std::string& prefix, auto& w) {
    fn(prefix + ".wq", w.wq);
    fn(prefix + ".wk", w.wk);
    fn(prefix + ".wv", w.wv);
    fn(prefix + ".wo", w.wo);
  };
  auto mlp = [&](const std::string& prefix, auto& w) {
    fn(prefix + ".w1", w.w1);
    fn(prefix + ".b1", w.b1);
    fn(prefix + ".w2", w.w2);
    fn(prefix + ".b2", w.b2);
  };

  conv_block("backbone.stem", m.backbone.stem);
  for (std::size_t s = 0; s < 4; ++s) {
    const std::string sp = "backbone.stage" + std::to_string(s + 1);
    down(sp + ".down", m.backbone.stages[s].down);
    for (std::size_t i = 0; i < m.backbone.stages[s].c2f.size(); ++i) {
      c2f(sp + ".c2f" + std::to_string(i), m.backbone.stages[s].c2f[i]);
    }
    if (s == 3 && m.backbone.te) {
      mha(sp + ".te.attn", m.backbone.te->attn);
      mlp(sp + ".te.mlp", m.backbone.te->mlp);
    }
  }
  conv_block("backbone.sppf.entry", m.backbone.sppf.entry);
  conv_block("backbone.sppf.exit", m.backbone.sppf.exit);

  c2f("neck.td1", m.neck.td1);
  c2f("neck.td2", m.neck.td2);
  down("neck.down1", m.neck.down1);
  c2f("neck.pan1", m.neck.pan1);
  down("neck.down2", m.neck.down2);
  c2f("neck.pan2", m.neck.pan2);

  if (m.anchor_head) {
    const char* names[3] = {"p3", "p4", "p5"};
    for (std::size_t s = 0; s < 3; ++s) {
      const std::string hp = std::string("head.") + names[s];
      conv_block(hp + ".cv1", m.anchor_head->scales[s].cv1);
      conv_block(hp + ".cv2", m.anchor_head->scales[s].cv2);
      fn(hp + ".pred.weight", m.anchor_head->scales[s].pred_w);
      fn(hp + ".pred.bias", m.anchor_head->scales[s].pred_b);
    }
  }
  if (m.set_head) {
    for (std::size_t s = 0; s < 3; ++s) {
      const std::string pp = "head.proj" + std::to_string(s + 3);
      fn(pp + ".weight", m.set_head->proj_w[s]);
      fn(pp + ".bias", m.set_head->proj_b[s]);
    }
    fn("head.queries", m.set_head->queries);
    for (std::size_t l = 0; l < m.set_head->layers.size(); ++l) {
      const std::string lp = "head.dec" + std::to_string(l);
      mha(lp + ".self", m.set_head->layers[l].self_attn);
      mha(lp + ".cross", m.set_head->layers[l].cross_attn);
      mlp(lp + ".mlp", m.set_head->layers[l].mlp);
    }
    fn("head.cls.weight", m.set_head->cls_w);
    fn("head.cls.bias", m.set_head->cls_b);
    fn("head.box.weight", m.set_head->box_w);
    fn("head.box.bias", m.set_head->box_b);
  }
}

}  // namespace

void for_each_tensor(Model& m, const std::function<void(const std::string&, Tensor&)>& fn) {
  walk_tensors(m, fn);
}

void for_each_tensor(const Model& m,
                     const std::function<void(const std::string&, const Tensor&)>& fn) {
  walk_tensors(m, fn);
}

// ---- forward ----

namespace {

Tensor down_forward(const Tensor& x, const DownBlock& d) {
  if (const auto* std_conv = std::get_if<ConvBlockParams>(&d)) {
    return conv_block_forward(x, *std_conv);
  }
  return ghost_conv_forward(x, *std::get_if<GhostConvParams>(&d));
}

Tensor c2f_chain(Tensor x, const std::vector<C2fParams>& blocks) {
  for (const C2fParams& b : blocks) x = c2f_forward(x, b);
  return x;
}

Tensor add_bias_rows(Tensor x, const Tensor& b) {
  const int n = x.dim(0), d = x.dim(1);
  for (int i = 0; i < n; ++i) {
    float* row = x.data() + static_cast<std::size_t>(i) * d;
    for (int j = 0; j < d; ++j) row[j] += b[static_cast<std::size_t>(j)];
  }
  return x;
}

// feature plane -> token matrix (H*W rows, C columns), row-major positions
Tensor tokens_from_feature(const Tensor& f, int sample) {
  const int c_count = f.dim(1), h = f.dim(2), w = f.dim(3);
  Tensor tokens({h * w, c_count});
  for (int c = 0; c < c_count; ++c) {
    const float* plane =
        f.data() + ((static_cast<std::size_t>(sample) * c_count + c) * h) * w;
    for (int p = 0; p < h * w; ++p) tokens.at2(p, c) = plane[p];
  }
  return tokens;
}

}  // namespace

PyramidFeatures backbone_forward(const Model& m, const Tensor& batch) {
  tensor_require(batch.rank() == 4 && batch.dim(1) == 3,
                 "backbone_forward: batch must be N x 3 x H x W");
  PyramidFeatures out;
  Tensor t = conv_block_forward(batch, m.backbone.stem);
  t = down_forward(t, m.backbone.stages[0].down);
  t = c2f_chain(std::move(t), m.backbone.stages[0].c2f);
  t = down_forward(t, m.backbone.stages[1].down);
  t = c2f_chain(std::move(t), m.backbone.stages[1].c2f);
  out.p3 = t;
  t = down_forward(t, m.backbone.stages[2].down);
  t = c2f_chain(std::move(t), m.backbone.stages[2].c2f);
  out.p4 = t;
  t = down_forward(t, m.backbone.stages[3].down);
  if (m.backbone.te) {
    t = te_block_forward(t, *m.backbone.te, resolved_te(m));
  } else {
    t = c2f_chain(std::move(t), m.backbone.stages[3].c2f);
  }
  out.p5 = sppf_forward(t, m.backbone.sppf);
  return out;
}

NeckFeatures neck_forward(const Model& m, const PyramidFeatures& f) {
  NeckFeatures out;
  Tensor u5 = upsample_nearest(f.p5, 2);
  Tensor t4 = c2f_forward(concat({&u5, &f.p4}, 1), m.neck.td1);
  Tensor u4 = upsample_nearest(t4, 2);
  out.n3 = c2f_forward(concat({&u4, &f.p3}, 1), m.neck.td2);
  Tensor d3 = down_forward(out.n3, m.neck.down1);
  out.n4 = c2f_forward(concat({&d3, &t4}, 1), m.neck.pan1);
  Tensor d4 = down_forward(out.n4, m.neck.down2);
  out.n5 = c2f_forward(concat({&d4, &f.p5}, 1), m.neck.pan2);
  return out;
}

HeadOutputs forward(const Model& m, const Tensor& batch) {
  tensor_require(batch.rank() == 4 && batch.dim(1) == 3 &&
                     batch.dim(2) == m.cfg.input_size && batch.dim(3) == m.cfg.input_size,
                 "forward: batch must be N x 3 x S x S with S == input_size");
  const PyramidFeatures pyr = backbone_forward(m, batch);
  const NeckFeatures neck = neck_forward(m, pyr);
  const int n_samples = batch.dim(0);

  HeadOutputs out;
  out.kind = m.cfg.head_kind;
  if (m.cfg.head_kind == HeadKind::AnchorNms) {
    const Tensor* feats[3] = {&neck.n3, &neck.n4, &neck.n5};
    for (int s = 0; s < 3; ++s) {
      const AnchorHeadScale& hs = m.anchor_head->scales[static_cast<std::size_t>(s)];
      Tensor t = conv_block_forward(conv_block_forward(*feats[s], hs.cv1), hs.cv2);
      out.anchor_maps.push_back(conv2d(t, hs.pred_w, &hs.pred_b, 1, 0));
    }
    return out;
  }

  const SetHeadParams& head = *m.set_head;
  const TeConfig te_cfg = resolved_te(m);
  const int q_count = m.cfg.detr_queries;
  const int nc = m.cfg.num_classes;
  out.class_logits = Tensor({n_samples, q_count, nc});
  out.boxes = Tensor({n_samples, q_count, 4});

  const Tensor* feats[3] = {&neck.n3, &neck.n4, &neck.n5};
  std::array<Tensor, 3> pe;
  for (int s = 0; s < 3; ++s) {
    pe[static_cast<std::size_t>(s)] =
        positional_encoding(feats[s]->dim(2) * feats[s]->dim(3), m.d_model);
  }

  for (int n = 0; n < n_samples; ++n) {
    std::array<Tensor, 3> scale_tokens;
    for (int s = 0; s < 3; ++s) {
      Tensor t = add_bias_rows(matmul(tokens_from_feature(*feats[s], n),
                                      head.proj_w[static_cast<std::size_t>(s)]),
                               head.proj_b[static_cast<std::size_t>(s)]);
      scale_tokens[static_cast<std::size_t>(s)] = add(t, pe[static_cast<std::size_t>(s)]);
    }
    const Tensor memory =
        concat({&scale_tokens[0], &scale_tokens[1], &scale_tokens[2]}, 0);

    Tensor q = head.queries;
    for (const DecoderLayerWeights& layer : head.layers) {
      q = add(q, multi_head_attention(q, layer.self_attn, te_cfg));
      q = add(q, multi_head_cross_attention(q, memory, layer.cross_attn, te_cfg));
      q = add(q, mlp_forward(q, layer.mlp));
    }
    const Tensor logits = add_bias_rows(matmul(q, head.cls_w), head.cls_b);
    const Tensor boxes = sigmoid(add_bias_rows(matmul(q, head.box_w), head.box_b));
    std::copy(logits.data(), logits.data() + logits.size(),
              out.class_logits.data() + static_cast<std::size_t>(n) * q_count * nc);
    std::copy(boxes.data(), boxes.data() + boxes.size(),
              out.boxes.data() + static_cast<std::size_t>(n) * q_count * 4);
  }
  return out;
}

// ---- cost accounting ----

namespace {

std::string block_key(const std::string& name) {
  const std::size_t first = name.find('.');
  if (name.compare(0, first, "backbone") == 0) {
    const std::size_t second = name.find('.', first + 1);
    return name.substr(0, second);
  }
  return name.substr(0, first);
}

struct CostAccum {
  CostReport report;
  std::map<std::string, std::size_t> index;

  void add(const std::string& key, std::int64_t params, std::int64_t macs) {
    auto it = index.find(key);
    if (it == index.end()) {
      index[key] = report.items.size();
      report.items.push_back({key, params, macs});
    } else {
      report.items[it->second].params += params;
      report.items[it->second].macs += macs;
    }
    report.total_params += params;
    report.total_macs += macs;
  }
};

std::int64_t conv_block_macs(const ConvBlockParams& p, int& h, int& w) {
  const int k = p.weight.dim(2);
  const int ho = (h + 2 * p.padding - k) / p.stride + 1;
  const int wo = (w + 2 * p.padding - k) / p.stride + 1;
  const std::int64_t macs = static_cast<std::int64_t>(p.weight.size()) * ho * wo;
  h = ho;
  w = wo;
  return macs;
}

std::int64_t down_macs(const DownBlock& d, int& h, int& w) {
  if (const auto* std_conv = std::get_if<ConvBlockParams>(&d)) {
    return conv_block_macs(*std_conv, h, w);
  }
  const GhostConvParams& g = *std::get_if<GhostConvParams>(&d);
  std::int64_t macs = conv_block_macs(g.primary, h, w);
  int gh = h, gw = w;
  macs += conv_block_macs(g.cheap, gh, gw);
  return macs;
}

std::int64_t c2f_macs(const C2fParams& p, int& h, int& w) {
  std::int64_t macs = conv_block_macs(p.entry, h, w);
  for (const BottleneckParams& b : p.blocks) {
    macs += conv_block_macs(b.cv1, h, w);
    macs += conv_block_macs(b.cv2, h, w);
  }
  macs += conv_block_macs(p.exit, h, w);
  return macs;
}

std::int64_t mha_macs(int n_q, int n_kv, int d) {
  // projections + score/value matmuls, summed over heads
  return static_cast<std::int64_t>(n_q) * d * d + 2LL * n_kv * d * d +
         static_cast<std::int64_t>(n_q) * d * d + 2LL * n_q * n_kv * d;
}

std::int64_t mlp_macs(int n, int d, int hidden) {
  return 2LL * n * d * hidden;
}

}  // namespace

CostReport count_params(const Model& m) {
  CostAccum acc;
  for_each_tensor(m, [&](const std::string& name, const Tensor& t) {
    acc.add(block_key(name), static_cast<std::int64_t>(t.size()), 0);
  });
  return acc.report;
}

CostReport count_macs(const Model& m, int input_size) {
  tensor_require(input_size > 0 && input_size % 32 == 0,
                 "count_macs: input size must be a positive multiple of 32");
  CostAccum acc;
  int h = input_size, w = input_size;
  acc.add("backbone.stem", 0, conv_block_macs(m.backbone.stem, h, w));

  const TeConfig te_cfg = resolved_te(m);
  int p3h = 0, p3w = 0, p4h = 0, p4w = 0;
  for (int s = 0; s < 4; ++s) {
    const std::string key = "backbone.stage" + std::to_string(s + 1);
    const BackboneStage& stage = m.backbone.stages[static_cast<std::size_t>(s)];
    std::int64_t macs = down_macs(stage.down, h, w);
    for (const C2fParams& c : stage.c2f) macs += c2f_macs(c, h, w);
    if (s == 3 && m.backbone.te) {
      const int n_tokens = h * w;
      macs += mha_macs(n_tokens, n_tokens, te_cfg.d_model);
      macs += mlp_macs(n_tokens, te_cfg.d_model, te_cfg.hidden());
    }
    acc.add(key, 0, macs);
    if (s == 1) {
      p3h = h;
      p3w = w;
    }
    if (s == 2) {
      p4h = h;
      p4w = w;
    }
  }
  {
    std::int64_t macs = 0;
    int sh = h, sw = w;
    macs += conv_block_macs(m.backbone.sppf.entry, sh, sw);
    macs += conv_block_macs(m.backbone.sppf.exit, sh, sw);
    acc.add("backbone.sppf", 0, macs);
  }

  // neck: spatial sizes are p4 (td1), p3 (td2/N3), p4 (N4), p5 (N5)
  {
    std::int64_t macs = 0;
    int th = p4h, tw = p4w;
    macs += c2f_macs(m.neck.td1, th, tw);
    th = p3h;
    tw = p3w;
    macs += c2f_macs(m.neck.td2, th, tw);
    th = p3h;
    tw = p3w;
    macs += down_macs(m.neck.down1, th, tw);
    macs += c2f_macs(m.neck.pan1, th, tw);
    macs += down_macs(m.neck.down2, th, tw);
    macs += c2f_macs(m.neck.pan2, th, tw);
    acc.add("neck", 0, macs);
  }

  const int sh[3] = {p3h, p4h, h};
  const int sw[3] = {p3w, p4w, w};
  if (m.anchor_head) {
    std::int64_t macs = 0;
    for (int s = 0; s < 3; ++s) {
      const AnchorHeadScale& hs = m.anchor_head->scales[static_cast<std::size_t>(s)];
      int hh = sh[s], ww = sw[s];
      macs += conv_block_macs(hs.cv1, hh, ww);
      macs += conv_block_macs(hs.cv2, hh, ww);
      macs += static_cast<std::int64_t>(hs.pred_w.size()) * hh * ww;
    }
    acc.add("head", 0, macs);
  }
  if (m.set_head) {
    const int d = te_cfg.d_model;
    const int q_count = m.cfg.detr_queries;
    std::int64_t macs = 0;
    std::int64_t tokens = 0;
    for (int s = 0; s < 3; ++s) {
      const std::int64_t n_tokens = static_cast<std::int64_t>(sh[s]) * sw[s];
      macs += n_tokens * m.set_head->proj_w[static_cast<std::size_t>(s)].dim(0) * d;
      tokens += n_tokens;
    }
    for (std::size_t l = 0; l < m.set_head->layers.size(); ++l) {
      macs += mha_macs(q_count, q_count, d);
      macs += mha_macs(q_count, static_cast<int>(tokens), d);
      macs += mlp_macs(q_count, d, te_cfg.hidden());
    }
    macs += static_cast<std::int64_t>(q_count) * d * m.cfg.num_classes;
    macs += static_cast<std::int64_t>(q_count) * d * 4;
    acc.add("head", 0, macs);
  }
  return acc.report;
}

// ---- weight file ----

namespace {

void put_u32le(std::string& buf, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64le(std::string& buf, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint32_t get_u32le(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

std::uint64_t get_u64le(const unsigned char* p) {
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | p[i];
  return v;
}

void append_f32le(std::string& buf, const float* data, std::size_t count) {
  static_assert(std::endian::native == std::endian::little,
                "weight payload writer assumes a little-endian host");
  buf.append(reinterpret_cast<const char*>(data), count * sizeof(float));
}

void atomic_write(const std::string& path, const std::string& contents) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write: " + tmp);
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    if (!out) throw std::runtime_error("write failed: " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace

void save_weights(const Model& m, const std::string& path) {
  nlohmann::json tensors = nlohmann::json::array();
  std::string payload;
  std::uint64_t offset = 0;
  for_each_tensor(m, [&](const std::string& name, const Tensor& t) {
    tensors.push_back({{"name", name}, {"dims", t.dims()}, {"offset", offset}});
    append_f32le(payload, t.data(), t.size());
    offset += t.size() * sizeof(float);
  });

  nlohmann::json header;
  header["config"] = config_to_json(m.cfg);
  header["tensors"] = std::move(tensors);
  const std::string header_str = header.dump();

  std::string file;
  file.reserve(16 + header_str.size() + payload.size());
  file.append(kWeightMagic, 4);
  put_u32le(file, kWeightVersion);
  put_u64le(file, header_str.size());
  file += header_str;
  file += payload;
  atomic_write(path, file);
}

namespace {

struct ParsedWeightFile {
  WeightFileHeader header;
  std::uint64_t payload_start = 0;
  std::uint64_t file_size = 0;
};

ParsedWeightFile parse_weight_header(const std::string& path, std::ifstream& in) {
  if (!in) throw std::runtime_error("cannot open weight file: " + path);
  unsigned char fixed[16];
  in.read(reinterpret_cast<char*>(fixed), 16);
  if (in.gcount() != 16) throw std::runtime_error(path + ": truncated weight file");
  if (std::memcmp(fixed, kWeightMagic, 4) != 0) {
    throw std::runtime_error(path + ": bad magic (not an IYW8 weight file)");
  }
  const std::uint32_t version = get_u32le(fixed + 4);
  if (version != kWeightVersion) {
    throw std::runtime_error(path + ": unsupported weight file version " +
                             std::to_string(version));
  }
  const std::uint64_t header_len = get_u64le(fixed + 8);

  in.seekg(0, std::ios::end);
  const std::uint64_t file_size = static_cast<std::uint64_t>(in.tellg());
  if (16 + header_len > file_size) throw std::runtime_error(path + ": truncated header");
  in.seekg(16);

  std::string header_str(header_len, '\0');
  in.read(header_str.data(), static_cast<std::streamsize>(header_len));
  if (static_cast<std::uint64_t>(in.gcount()) != header_len) {
    throw std::runtime_error(path + ": truncated header");
  }

  nlohmann::json j;
  try {
    j = nlohmann::json::parse(header_str);
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error(path + ": invalid header JSON: " + e.what());
  }

  ParsedWeightFile parsed;
  parsed.header.config = config_from_json(j.at("config"));
  for (const nlohmann::json& rec : j.at("tensors")) {
    WeightFileHeader::Record r;
    r.name = rec.at("name").get<std::string>();
    r.dims = rec.at("dims").get<std::vector<int>>();
    r.offset = rec.at("offset").get<std::uint64_t>();
    parsed.header.tensors.push_back(std::move(r));
  }
  parsed.payload_start = 16 + header_len;
  parsed.file_size = file_size;
  return parsed;
}

}  // namespace

WeightFileHeader read_weight_header(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return parse_weight_header(path, in).header;
}

Model load_model(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  ParsedWeightFile parsed = parse_weight_header(path, in);

  Model m = build_model(parsed.header.config);
  std::map<std::string, Tensor*> by_name;
  for_each_tensor(m, [&](const std::string& name, Tensor& t) { by_name[name] = &t; });

  if (by_name.size() != parsed.header.tensors.size()) {
    throw std::runtime_error(path + ": tensor record count does not match the model graph");
  }
  const std::uint64_t payload_size = parsed.file_size - parsed.payload_start;
  std::uint64_t expected_total = 0;
  for (const WeightFileHeader::Record& rec : parsed.header.tensors) {
    auto it = by_name.find(rec.name);
    if (it == by_name.end()) {
      throw std::runtime_error(path + ": tensor '" + rec.name + "' not resolvable by the graph");
    }
    Tensor& t = *it->second;
    if (rec.dims != t.dims()) {
      throw std::runtime_error(path + ": shape mismatch for tensor '" + rec.name + "'");
    }
    const std::uint64_t bytes = numel(rec.dims) * sizeof(float);
    expected_total += bytes;
    if (rec.offset + bytes > payload_size) {
      throw std::runtime_error(path + ": payload truncated for tensor '" + rec.name + "'");
    }
    in.seekg(static_cast<std::streamoff>(parsed.payload_start + rec.offset));
    in.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(bytes));
    if (static_cast<std::uint64_t>(in.gcount()) != bytes) {
      throw std::runtime_error(path + ": payload read failed for tensor '" + rec.name + "'");
    }
  }
  if (expected_total != payload_size) {
    throw std::runtime_error(path + ": payload length does not match header-declared shapes");
  }
  return m;
}

}  // namespace iyolo
