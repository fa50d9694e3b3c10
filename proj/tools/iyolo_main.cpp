#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "iyolo/datapipe.hpp"
#include "iyolo/detector.hpp"
#include "iyolo/evalkit.hpp"
#include "iyolo/postproc.hpp"
#include "iyolo/rng.hpp"

namespace fs = std::filesystem;
using namespace iyolo;

namespace {

constexpr int kExitBadConfig = 2;
constexpr int kExitMissingFile = 3;
constexpr int kExitUnknownImageId = 4;
constexpr int kExitBadLabels = 5;

void atomic_write_text(const std::string& path, const std::string& contents) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write: " + tmp);
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    if (!out) throw std::runtime_error("write failed: " + tmp);
  }
  fs::rename(tmp, path);
}

struct ConfigArgs {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string conv_kind, tail_kind, head_kind;

  ModelConfig resolve() const {
    ModelConfig cfg = config_path.empty() ? ModelConfig{} : load_config(config_path);
    if (seed) cfg.seed = *seed;
    if (!conv_kind.empty()) {
      if (conv_kind == "standard") cfg.conv_kind = ConvKind::Standard;
      else if (conv_kind == "ghost") cfg.conv_kind = ConvKind::Ghost;
      else throw std::invalid_argument("config: bad --conv-kind '" + conv_kind + "'");
    }
    if (!tail_kind.empty()) {
      if (tail_kind == "c2f") cfg.tail_kind = TailKind::C2f;
      else if (tail_kind == "te") cfg.tail_kind = TailKind::Te;
      else throw std::invalid_argument("config: bad --tail-kind '" + tail_kind + "'");
    }
    if (!head_kind.empty()) {
      if (head_kind == "anchor_nms") cfg.head_kind = HeadKind::AnchorNms;
      else if (head_kind == "set_prediction") cfg.head_kind = HeadKind::SetPrediction;
      else throw std::invalid_argument("config: bad --head-kind '" + head_kind + "'");
    }
    validate_config(cfg);
    return cfg;
  }
};

void add_config_options(CLI::App* cmd, ConfigArgs& args) {
  cmd->add_option("--config", args.config_path, "model config JSON");
  cmd->add_option("--seed", args.seed, "seed override");
  cmd->add_option("--conv-kind", args.conv_kind, "standard | ghost");
  cmd->add_option("--tail-kind", args.tail_kind, "c2f | te");
  cmd->add_option("--head-kind", args.head_kind, "anchor_nms | set_prediction");
}

std::vector<fs::path> list_ppm_sorted(const fs::path& dir) {
  std::vector<fs::path> files;
  for (const fs::directory_entry& e : fs::directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ".ppm") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  return files;
}

const float kPalette[6][3] = {{1, 0, 0}, {0, 1, 0}, {0, 0, 1},
                              {1, 1, 0}, {1, 0, 1}, {0, 1, 1}};

void burn_box(ImageRecord& img, const Box& box, int class_id) {
  const float* color = kPalette[class_id % 6];
  const int w = img.width, h = img.height;
  const int x1 = std::clamp(static_cast<int>(box.x1), 0, w - 1);
  const int y1 = std::clamp(static_cast<int>(box.y1), 0, h - 1);
  const int x2 = std::clamp(static_cast<int>(box.x2), 0, w - 1);
  const int y2 = std::clamp(static_cast<int>(box.y2), 0, h - 1);
  auto paint = [&](int x, int y) {
    for (int c = 0; c < 3; ++c) {
      img.pixels.data()[(static_cast<std::size_t>(c) * h + y) * w + x] = color[c];
    }
  };
  for (int t = 0; t < 2; ++t) {  // 2 px frame
    for (int x = x1; x <= x2; ++x) {
      paint(x, std::min(y1 + t, h - 1));
      paint(x, std::max(y2 - t, 0));
    }
    for (int y = y1; y <= y2; ++y) {
      paint(std::min(x1 + t, w - 1), y);
      paint(std::max(x2 - t, 0), y);
    }
  }
}

int cmd_init_weights(const ConfigArgs& cfg_args, const std::string& out_path) {
  ModelConfig cfg;
  try {
    cfg = cfg_args.resolve();
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitBadConfig;
  }
  const Model model = build_model(cfg);
  save_weights(model, out_path);
  std::cout << "wrote " << out_path << " (" << count_params(model).total_params
            << " params)\n";
  return 0;
}

std::vector<Detection> decode_outputs(const Model& model, const HeadOutputs& out,
                                      float conf_thresh) {
  if (out.kind == HeadKind::AnchorNms) {
    const int strides[3] = {8, 16, 32};
    std::vector<Detection> dets =
        decode_anchor_heads(out.anchor_maps, model.cfg.anchors, strides, conf_thresh,
                            model.cfg.num_classes);
    return nms(dets, model.cfg.nms_iou_thresh);
  }
  const int q_count = out.class_logits.dim(1), nc = out.class_logits.dim(2);
  Tensor logits({q_count, nc});
  Tensor boxes({q_count, 4});
  std::copy(out.class_logits.data(), out.class_logits.data() + logits.size(), logits.data());
  std::copy(out.boxes.data(), out.boxes.data() + boxes.size(), boxes.data());
  return decode_set_prediction(logits, boxes, conf_thresh, model.cfg.input_size);
}

int cmd_predict(const std::string& weights_path, const std::string& images_dir,
                const std::string& out_path, const std::string& annotate_dir,
                std::optional<float> conf_override) {
  if (!fs::exists(weights_path)) {
    std::cerr << "error: missing weight file: " << weights_path << "\n";
    return kExitMissingFile;
  }
  if (!fs::is_directory(images_dir)) {
    std::cerr << "error: missing image directory: " << images_dir << "\n";
    return kExitMissingFile;
  }
  const Model model = load_model(weights_path);
  const float conf = conf_override.value_or(model.cfg.conf_thresh);
  if (!annotate_dir.empty()) fs::create_directories(annotate_dir);

  std::vector<DetectionRecord> records;
  for (const fs::path& img_path : list_ppm_sorted(images_dir)) {
    ImageRecord rec = read_ppm(img_path.string());
    auto [batch, transform] = to_model_tensor(rec, model.cfg.input_size);
    const HeadOutputs out = forward(model, batch);
    std::vector<Detection> dets = decode_outputs(model, out, conf);
    for (Detection& d : dets) {
      Box b = transform.to_original(d.box);
      b.x1 = std::clamp(b.x1, 0.0f, static_cast<float>(rec.width));
      b.x2 = std::clamp(b.x2, 0.0f, static_cast<float>(rec.width));
      b.y1 = std::clamp(b.y1, 0.0f, static_cast<float>(rec.height));
      b.y2 = std::clamp(b.y2, 0.0f, static_cast<float>(rec.height));
      if (!(b.x2 > b.x1 && b.y2 > b.y1)) continue;
      d.box = b;
      records.push_back(DetectionRecord{rec.id, d});
    }
    if (!annotate_dir.empty()) {
      ImageRecord annotated = rec;
      for (const DetectionRecord& r : records) {
        if (r.image_id == rec.id) burn_box(annotated, r.det.box, r.det.class_id);
      }
      write_ppm(annotated, (fs::path(annotate_dir) / (rec.id + ".ppm")).string());
    }
  }

  std::ostringstream dump;
  write_detection_dump(records, dump);
  atomic_write_text(out_path, dump.str());
  std::cout << "wrote " << records.size() << " detections to " << out_path << "\n";
  return 0;
}

int cmd_eval(const std::string& dets_path, const std::string& dataset_dir,
             const std::string& out_path, const std::string& pr_table_path,
             double iou_thresh) {
  if (!fs::exists(dets_path)) {
    std::cerr << "error: missing detection dump: " << dets_path << "\n";
    return kExitMissingFile;
  }
  const fs::path labels_dir = fs::path(dataset_dir) / "labels";
  const fs::path images_dir = fs::path(dataset_dir) / "images";
  if (!fs::is_directory(labels_dir) || !fs::is_directory(images_dir)) {
    std::cerr << "error: dataset dir must contain images/ and labels/: " << dataset_dir
              << "\n";
    return kExitMissingFile;
  }

  std::map<std::string, std::vector<GroundTruthBox>> gts;
  for (const fs::directory_entry& e : fs::directory_iterator(labels_dir)) {
    if (!e.is_regular_file() || e.path().extension() != ".txt") continue;
    const std::string id = e.path().stem().string();
    const fs::path img_path = images_dir / (id + ".ppm");
    if (!fs::exists(img_path)) {
      std::cerr << "error: missing image for labels: " << img_path << "\n";
      return kExitMissingFile;
    }
    const auto [w, h] = read_ppm_size(img_path.string());
    std::vector<GroundTruthBox> boxes;
    for (const LabelBox& b : parse_yolo_labels(e.path().string())) {
      GroundTruthBox gt;
      gt.class_id = b.class_id;
      gt.box = Box{(b.cx - b.w / 2) * w, (b.cy - b.h / 2) * h, (b.cx + b.w / 2) * w,
                   (b.cy + b.h / 2) * h};
      boxes.push_back(gt);
    }
    gts[id] = std::move(boxes);
  }

  std::map<std::string, std::vector<Detection>> dets;
  for (const DetectionRecord& r : read_detection_dump(dets_path)) {
    if (!gts.contains(r.image_id)) {
      std::cerr << "error: detection references unknown image id '" << r.image_id << "'\n";
      return kExitUnknownImageId;
    }
    dets[r.image_id].push_back(r.det);
  }

  const EvalReport report = evaluate(dets, gts, iou_thresh);
  write_report_json(report, out_path);
  if (!pr_table_path.empty()) write_pr_table(report, pr_table_path);
  std::printf("mAP@%.2f = %.4f over %lld images\n", iou_thresh, report.map,
              static_cast<long long>(report.num_images));
  for (const auto& [cls, cr] : report.classes) {
    if (cr.ap) {
      std::printf("  class %d: AP = %.4f (gt %lld, tp %lld, fp %lld, fn %lld)\n", cls,
                  *cr.ap, static_cast<long long>(cr.counts.num_gt),
                  static_cast<long long>(cr.counts.tp), static_cast<long long>(cr.counts.fp),
                  static_cast<long long>(cr.counts.fn));
    } else {
      std::printf("  class %d: no ground truth (excluded from mAP)\n", cls);
    }
  }
  return 0;
}

int cmd_bench(const ConfigArgs& cfg_args) {
  ModelConfig base;
  try {
    base = cfg_args.resolve();
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitBadConfig;
  }

  struct Row {
    std::string name;
    std::int64_t params;
    std::int64_t macs;
    double ms;
  };
  std::vector<Row> rows;

  Tensor batch({1, 3, base.input_size, base.input_size});
  Rng rng(base.seed);
  for (std::size_t i = 0; i < batch.size(); ++i) batch[i] = rng.uniform(0.0f, 1.0f);

  for (ConvKind conv : {ConvKind::Standard, ConvKind::Ghost}) {
    for (TailKind tail : {TailKind::C2f, TailKind::Te}) {
      ModelConfig cfg = base;
      cfg.conv_kind = conv;
      cfg.tail_kind = tail;
      const Model model = build_model(cfg);
      const CostReport params = count_params(model);
      const CostReport macs = count_macs(model, cfg.input_size);
      const auto t0 = std::chrono::steady_clock::now();
      (void)forward(model, batch);
      const auto t1 = std::chrono::steady_clock::now();
      const double ms = std::chrono::duration<double, std::milli>(t1 - t0).count();
      const std::string name = std::string(conv == ConvKind::Ghost ? "ghost" : "standard") +
                               "+" + (tail == TailKind::Te ? "te" : "c2f");
      rows.push_back(Row{name, params.total_params, macs.total_macs, ms});
    }
  }

  std::printf("%-14s %12s %14s %10s\n", "variant", "params", "macs", "fwd_ms");
  for (const Row& r : rows) {
    std::printf("%-14s %12lld %14lld %10.1f\n", r.name.c_str(),
                static_cast<long long>(r.params), static_cast<long long>(r.macs), r.ms);
  }
  // ghost rows must undercut the standard rows of the same tail
  for (std::size_t i = 0; i < 2; ++i) {
    if (rows[i + 2].params >= rows[i].params) {
      std::cerr << "error: ghost variant did not reduce parameters\n";
      return 1;
    }
  }
  return 0;
}

int cmd_augment(const std::string& dataset_dir, const std::string& out_dir) {
  if (!fs::exists(fs::path(dataset_dir) / "index.json")) {
    std::cerr << "error: missing dataset index: " << dataset_dir << "/index.json\n";
    return kExitMissingFile;
  }
  const DatasetIndex index = read_index(dataset_dir);
  fs::create_directories(fs::path(out_dir) / "images");
  fs::create_directories(fs::path(out_dir) / "labels");

  DatasetIndex out_index;
  for (const DatasetRecord& rec : index.records) {
    const std::string img_path = (fs::path(dataset_dir) / rec.image_path).string();
    const std::string lbl_path = (fs::path(dataset_dir) / rec.label_path).string();
    if (!fs::exists(img_path) || !fs::exists(lbl_path)) {
      std::cerr << "error: missing dataset file for record '" << rec.id << "'\n";
      return kExitMissingFile;
    }
    ImageRecord img = read_ppm(img_path);
    LabelSet labels;
    try {
      labels = parse_yolo_labels(lbl_path);
    } catch (const std::exception& e) {
      std::cerr << "error: " << e.what() << "\n";
      return kExitBadLabels;
    }
    for (const AugmentVariant& v : augment_variants(img, labels)) {
      const std::string image_rel = "images/" + v.image.id + ".ppm";
      const std::string label_rel = "labels/" + v.image.id + ".txt";
      write_ppm(v.image, (fs::path(out_dir) / image_rel).string());
      write_yolo_labels(v.labels, (fs::path(out_dir) / label_rel).string());
      out_index.records.push_back(DatasetRecord{v.image.id, image_rel, label_rel, rec.split});
    }
  }
  write_index(out_index, out_dir);
  std::cout << "augmented " << index.records.size() << " records into "
            << out_index.records.size() << "\n";
  return 0;
}

int cmd_gen_fixtures(int n, std::uint64_t seed, const std::string& out_dir, int image_size) {
  const DatasetIndex index = generate_fixture_dataset(n, seed, out_dir, image_size);
  std::cout << "generated " << index.records.size() << " fixture images in " << out_dir
            << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"improved-YOLOv8-style detector toolkit"};
  app.require_subcommand(1);

  ConfigArgs init_cfg;
  std::string init_out;
  CLI::App* init = app.add_subcommand("init-weights", "build a model and write its weights");
  add_config_options(init, init_cfg);
  init->add_option("--out", init_out, "output weight file")->required();

  std::string pred_weights, pred_images, pred_out, pred_annotate;
  std::optional<float> pred_conf;
  CLI::App* predict = app.add_subcommand("predict", "run inference over a directory of PPMs");
  predict->add_option("--weights", pred_weights, "weight file")->required();
  predict->add_option("--images", pred_images, "image directory")->required();
  predict->add_option("--out", pred_out, "detection dump path")->required();
  predict->add_option("--annotate", pred_annotate, "write annotated copies here");
  predict->add_option("--conf", pred_conf, "score threshold override");

  std::string eval_dets, eval_dataset, eval_out, eval_pr;
  double eval_iou = 0.5;
  CLI::App* eval = app.add_subcommand("eval", "score a detection dump against a dataset");
  eval->add_option("--dets", eval_dets, "detection dump")->required();
  eval->add_option("--dataset", eval_dataset, "dataset dir with images/ and labels/")->required();
  eval->add_option("--out", eval_out, "report JSON path")->required();
  eval->add_option("--pr-table", eval_pr, "optional PR-curve table path");
  eval->add_option("--iou-thresh", eval_iou, "match threshold (default 0.5)");

  ConfigArgs bench_cfg;
  CLI::App* bench = app.add_subcommand("bench", "cost table for the four ablation variants");
  add_config_options(bench, bench_cfg);

  std::string aug_dataset, aug_out;
  CLI::App* augment = app.add_subcommand("augment", "materialize the augmentation recipe");
  augment->add_option("--dataset", aug_dataset, "input dataset dir")->required();
  augment->add_option("--out", aug_out, "output dataset dir")->required();

  int gen_n = 20;
  std::uint64_t gen_seed = 0;
  std::string gen_out;
  int gen_size = 256;
  CLI::App* gen = app.add_subcommand("gen-fixtures", "write a synthetic dataset");
  gen->add_option("--n", gen_n, "image count");
  gen->add_option("--seed", gen_seed, "generator seed");
  gen->add_option("--out", gen_out, "output dataset dir")->required();
  gen->add_option("--image-size", gen_size, "square image size");

  CLI11_PARSE(app, argc, argv);

  try {
    if (init->parsed()) return cmd_init_weights(init_cfg, init_out);
    if (predict->parsed()) {
      return cmd_predict(pred_weights, pred_images, pred_out, pred_annotate, pred_conf);
    }
    if (eval->parsed()) return cmd_eval(eval_dets, eval_dataset, eval_out, eval_pr, eval_iou);
    if (bench->parsed()) return cmd_bench(bench_cfg);
    if (augment->parsed()) return cmd_augment(aug_dataset, aug_out);
    if (gen->parsed()) return cmd_gen_fixtures(gen_n, gen_seed, gen_out, gen_size);
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitBadConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
