#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

#include "doctest.h"
#include "iyolo/datapipe.hpp"
#include "iyolo/detector.hpp"
#include "iyolo/postproc.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using namespace iyolo;

namespace {

const char* cli_path() { return IYOLO_CLI_PATH; }

int run(const std::string& args, const fs::path& log) {
  const std::string cmd = std::string(cli_path()) + " " + args + " > " + log.string() +
                          " 2> " + log.string() + ".err";
  const int status = std::system(cmd.c_str());
  return WEXITSTATUS(status);
}

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("iyolo_cli_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
}

void write_tiny_config(const fs::path& path, const std::string& extra = "") {
  std::ofstream f(path);
  f << "{\"input_size\": 64, \"width_mult\": 0.0625, \"detr_queries\": 5, "
       "\"detr_decoder_layers\": 1" << extra << "}";
}

}  // namespace

TEST_CASE("init-weights writes a deterministic IYW8 file") {
  const fs::path dir = scratch("init");
  write_tiny_config(dir / "cfg.json");
  const std::string base = "init-weights --config " + (dir / "cfg.json").string();

  CHECK(run(base + " --seed 5 --out " + (dir / "a.iyw8").string(), dir / "log1") == 0);
  CHECK(run(base + " --seed 5 --out " + (dir / "b.iyw8").string(), dir / "log2") == 0);
  const std::string a = slurp(dir / "a.iyw8");
  CHECK(a.substr(0, 4) == "IYW8");
  CHECK(a == slurp(dir / "b.iyw8"));

  CHECK(run(base + " --seed 6 --out " + (dir / "c.iyw8").string(), dir / "log3") == 0);
  CHECK(a != slurp(dir / "c.iyw8"));
  fs::remove_all(dir);
}

TEST_CASE("init-weights with a te tail lists attention tensors in the header") {
  const fs::path dir = scratch("te_header");
  write_tiny_config(dir / "cfg.json", ", \"tail_kind\": \"te\"");
  CHECK(run("init-weights --config " + (dir / "cfg.json").string() + " --out " +
                (dir / "w.iyw8").string(),
            dir / "log") == 0);
  const WeightFileHeader header = read_weight_header((dir / "w.iyw8").string());
  bool has_te = false, has_wq = false;
  for (const WeightFileHeader::Record& rec : header.tensors) {
    if (rec.name.find(".te.") != std::string::npos) has_te = true;
    if (rec.name == "backbone.stage4.te.attn.wq") has_wq = true;
  }
  CHECK(has_te);
  CHECK(has_wq);
  fs::remove_all(dir);
}

TEST_CASE("invalid config exits with code 2") {
  const fs::path dir = scratch("badcfg");
  {
    std::ofstream f(dir / "bad.json");
    f << "{\"input_size\": 100}";  // not a multiple of 32
  }
  CHECK(run("init-weights --config " + (dir / "bad.json").string() + " --out " +
                (dir / "w.iyw8").string(),
            dir / "log") == 2);
  {
    std::ofstream f(dir / "notjson.json");
    f << "{nope";
  }
  CHECK(run("init-weights --config " + (dir / "notjson.json").string() + " --out " +
                (dir / "w.iyw8").string(),
            dir / "log2") == 2);
  fs::remove_all(dir);
}

TEST_CASE("predict: missing inputs exit 3, empty dir gives an empty dump") {
  const fs::path dir = scratch("predict_edge");
  write_tiny_config(dir / "cfg.json");
  CHECK(run("init-weights --config " + (dir / "cfg.json").string() + " --out " +
                (dir / "w.iyw8").string(),
            dir / "log0") == 0);

  CHECK(run("predict --weights " + (dir / "nope.iyw8").string() + " --images " +
                dir.string() + " --out " + (dir / "d.txt").string(),
            dir / "log1") == 3);
  CHECK(run("predict --weights " + (dir / "w.iyw8").string() + " --images " +
                (dir / "no_such_dir").string() + " --out " + (dir / "d.txt").string(),
            dir / "log2") == 3);

  fs::create_directories(dir / "empty");
  CHECK(run("predict --weights " + (dir / "w.iyw8").string() + " --images " +
                (dir / "empty").string() + " --out " + (dir / "d.txt").string(),
            dir / "log3") == 0);
  CHECK(slurp(dir / "d.txt").empty());
  fs::remove_all(dir);
}

TEST_CASE("end-to-end mini pipeline: gen-fixtures, predict, eval") {
  const fs::path dir = scratch("pipeline");
  write_tiny_config(dir / "cfg.json");
  const fs::path data = dir / "data";

  CHECK(run("gen-fixtures --n 4 --seed 3 --image-size 64 --out " + data.string(),
            dir / "log0") == 0);
  CHECK(run("init-weights --config " + (dir / "cfg.json").string() + " --seed 3 --out " +
                (dir / "w.iyw8").string(),
            dir / "log1") == 0);

  const std::string predict_cmd = "predict --weights " + (dir / "w.iyw8").string() +
                                  " --images " + (data / "images").string() + " --out ";
  CHECK(run(predict_cmd + (dir / "dets1.txt").string(), dir / "log2") == 0);
  CHECK(run(predict_cmd + (dir / "dets2.txt").string(), dir / "log3") == 0);
  CHECK(slurp(dir / "dets1.txt") == slurp(dir / "dets2.txt"));

  CHECK(run("eval --dets " + (dir / "dets1.txt").string() + " --dataset " + data.string() +
                " --out " + (dir / "report.json").string() + " --pr-table " +
                (dir / "pr.txt").string(),
            dir / "log4") == 0);
  nlohmann::json report = nlohmann::json::parse(slurp(dir / "report.json"));
  CHECK(report.contains("map"));
  CHECK(report.at("map").get<double>() >= 0.0);
  CHECK(report.at("map").get<double>() <= 1.0);
  fs::remove_all(dir);
}

TEST_CASE("eval: perfect dump scores 1.0, empty dump scores 0, unknown id exits 4") {
  const fs::path dir = scratch("eval");
  const fs::path data = dir / "data";
  CHECK(run("gen-fixtures --n 5 --seed 9 --image-size 64 --out " + data.string(),
            dir / "log0") == 0);

  // hand-build a perfect detection dump straight from the labels
  std::vector<DetectionRecord> records;
  bool any_gt = false;
  for (const DatasetRecord& rec : read_index(data.string()).records) {
    const LabelSet labels = parse_yolo_labels((data / rec.label_path).string());
    for (const LabelBox& b : labels) {
      any_gt = true;
      Detection d;
      d.class_id = b.class_id;
      d.score = 1.0f;
      d.box = Box{(b.cx - b.w / 2) * 64, (b.cy - b.h / 2) * 64, (b.cx + b.w / 2) * 64,
                  (b.cy + b.h / 2) * 64};
      records.push_back(DetectionRecord{rec.id, d});
    }
  }
  REQUIRE(any_gt);
  {
    std::ofstream f(dir / "perfect.txt");
    write_detection_dump(records, f);
  }
  CHECK(run("eval --dets " + (dir / "perfect.txt").string() + " --dataset " + data.string() +
                " --out " + (dir / "r1.json").string(),
            dir / "log1") == 0);
  CHECK(nlohmann::json::parse(slurp(dir / "r1.json")).at("map").get<double>() == 1.0);

  {
    std::ofstream f(dir / "empty.txt");
  }
  CHECK(run("eval --dets " + (dir / "empty.txt").string() + " --dataset " + data.string() +
                " --out " + (dir / "r2.json").string(),
            dir / "log2") == 0);
  CHECK(nlohmann::json::parse(slurp(dir / "r2.json")).at("map").get<double>() == 0.0);

  {
    std::ofstream f(dir / "unknown.txt");
    f << "ghost_image 0 0.9000 1.0000 1.0000 5.0000 5.0000\n";
  }
  CHECK(run("eval --dets " + (dir / "unknown.txt").string() + " --dataset " + data.string() +
                " --out " + (dir / "r3.json").string(),
            dir / "log3") == 4);
  fs::remove_all(dir);
}

TEST_CASE("augment: five variants per record, reproducible, label errors exit 5") {
  const fs::path dir = scratch("augment");
  const fs::path data = dir / "data";
  CHECK(run("gen-fixtures --n 2 --seed 4 --image-size 64 --out " + data.string(),
            dir / "log0") == 0);

  CHECK(run("augment --dataset " + data.string() + " --out " + (dir / "aug1").string(),
            dir / "log1") == 0);
  CHECK(run("augment --dataset " + data.string() + " --out " + (dir / "aug2").string(),
            dir / "log2") == 0);

  const DatasetIndex aug = read_index((dir / "aug1").string());
  CHECK(aug.records.size() == 10);  // 2 records x 5 variants
  for (const DatasetRecord& rec : aug.records) {
    CHECK_NOTHROW(parse_yolo_labels(((dir / "aug1") / rec.label_path).string()));
    CHECK(slurp((dir / "aug1") / rec.image_path) == slurp((dir / "aug2") / rec.image_path));
    CHECK(slurp((dir / "aug1") / rec.label_path) == slurp((dir / "aug2") / rec.label_path));
  }

  // corrupt one label file: augment must fail with exit 5 and name the file
  {
    std::ofstream f(data / "labels" / "img_0000.txt");
    f << "0 2.5 0.5 0.2 0.2\n";
  }
  CHECK(run("augment --dataset " + data.string() + " --out " + (dir / "aug3").string(),
            dir / "log3") == 5);
  const std::string err = slurp(dir / "log3.err");
  CHECK(err.find("img_0000") != std::string::npos);

  CHECK(run("augment --dataset " + (dir / "nowhere").string() + " --out " +
                (dir / "aug4").string(),
            dir / "log4") == 3);
  fs::remove_all(dir);
}

TEST_CASE("bench prints the four-variant cost table") {
  const fs::path dir = scratch("bench");
  write_tiny_config(dir / "cfg.json");
  CHECK(run("bench --config " + (dir / "cfg.json").string(), dir / "log") == 0);
  const std::string out = slurp(dir / "log");
  CHECK(out.find("standard+c2f") != std::string::npos);
  CHECK(out.find("standard+te") != std::string::npos);
  CHECK(out.find("ghost+c2f") != std::string::npos);
  CHECK(out.find("ghost+te") != std::string::npos);
  fs::remove_all(dir);
}
