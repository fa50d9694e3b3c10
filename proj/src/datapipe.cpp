#include "iyolo/datapipe.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "iyolo/rng.hpp"
#include "json.hpp"

namespace fs = std::filesystem;

namespace iyolo {

void validate_labels(const LabelSet& labels, const std::string& context) {
  for (const LabelBox& b : labels) {
    if (b.class_id < 0) throw std::runtime_error(context + ": negative class id");
    if (!(b.cx >= 0.0f && b.cx <= 1.0f && b.cy >= 0.0f && b.cy <= 1.0f)) {
      throw std::runtime_error(context + ": box center outside [0,1]");
    }
    if (!(b.w > 0.0f && b.w <= 1.0f && b.h > 0.0f && b.h <= 1.0f)) {
      throw std::runtime_error(context + ": box size outside (0,1]");
    }
  }
}

// ---- PPM ----

namespace {

int next_ppm_int(std::istream& in, const std::string& path) {
  // skip whitespace and '#' comment lines
  for (;;) {
    const int c = in.peek();
    if (c == '#') {
      std::string dummy;
      std::getline(in, dummy);
    } else if (c == ' ' || c == '\t' || c == '\r' || c == '\n') {
      in.get();
    } else {
      break;
    }
  }
  int value = -1;
  if (!(in >> value)) throw std::runtime_error(path + ": malformed PPM header");
  return value;
}

}  // namespace

ImageRecord read_ppm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open image: " + path);
  char magic[2] = {0, 0};
  in.read(magic, 2);
  if (magic[0] != 'P' || magic[1] != '6') {
    throw std::runtime_error(path + ": not a binary PPM (P6)");
  }
  const int w = next_ppm_int(in, path);
  const int h = next_ppm_int(in, path);
  const int maxval = next_ppm_int(in, path);
  if (w <= 0 || h <= 0) throw std::runtime_error(path + ": bad PPM dimensions");
  if (maxval != 255) throw std::runtime_error(path + ": PPM maxval must be 255");
  in.get();  // single whitespace byte before the payload

  const std::size_t count = static_cast<std::size_t>(w) * h * 3;
  std::vector<unsigned char> bytes(count);
  in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(count));
  if (static_cast<std::size_t>(in.gcount()) != count) {
    throw std::runtime_error(path + ": truncated PPM payload");
  }

  ImageRecord rec;
  rec.id = fs::path(path).stem().string();
  rec.width = w;
  rec.height = h;
  rec.pixels = Tensor({3, h, w});
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const std::size_t src = (static_cast<std::size_t>(y) * w + x) * 3;
      for (int c = 0; c < 3; ++c) {
        rec.pixels.data()[(static_cast<std::size_t>(c) * h + y) * w + x] =
            static_cast<float>(bytes[src + c]) / 255.0f;
      }
    }
  }
  return rec;
}

std::pair<int, int> read_ppm_size(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open image: " + path);
  char magic[2] = {0, 0};
  in.read(magic, 2);
  if (magic[0] != 'P' || magic[1] != '6') {
    throw std::runtime_error(path + ": not a binary PPM (P6)");
  }
  const int w = next_ppm_int(in, path);
  const int h = next_ppm_int(in, path);
  return {w, h};
}

void write_ppm(const ImageRecord& record, const std::string& path) {
  tensor_require(record.pixels.rank() == 3 && record.pixels.dim(0) == 3 &&
                     record.pixels.dim(1) == record.height &&
                     record.pixels.dim(2) == record.width,
                 "write_ppm: pixels must be 3 x H x W matching the declared size");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write image: " + path);
  out << "P6\n" << record.width << " " << record.height << "\n255\n";
  const int w = record.width, h = record.height;
  std::vector<unsigned char> bytes(static_cast<std::size_t>(w) * h * 3);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      for (int c = 0; c < 3; ++c) {
        const float v = record.pixels.data()[(static_cast<std::size_t>(c) * h + y) * w + x];
        const int byte = static_cast<int>(std::lround(v * 255.0f));
        bytes[(static_cast<std::size_t>(y) * w + x) * 3 + c] =
            static_cast<unsigned char>(std::clamp(byte, 0, 255));
      }
    }
  }
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
}

// ---- YOLO labels ----

LabelSet parse_yolo_labels(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open labels: " + path);
  LabelSet labels;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::istringstream ss(line);
    LabelBox b;
    std::string extra;
    if (!(ss >> b.class_id >> b.cx >> b.cy >> b.w >> b.h) || (ss >> extra)) {
      throw std::runtime_error(path + ":" + std::to_string(lineno) + ": malformed label line");
    }
    labels.push_back(b);
  }
  validate_labels(labels, path);
  return labels;
}

void write_yolo_labels(const LabelSet& labels, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write labels: " + path);
  char line[128];
  for (const LabelBox& b : labels) {
    std::snprintf(line, sizeof(line), "%d %.6f %.6f %.6f %.6f\n", b.class_id, b.cx, b.cy,
                  b.w, b.h);
    out << line;
  }
}

// ---- augmentations ----

std::pair<ImageRecord, LabelSet> flip_augment(const ImageRecord& img,
                                              const LabelSet& labels, FlipAxis axis) {
  ImageRecord out = img;
  const int w = img.width, h = img.height;
  for (int c = 0; c < 3; ++c) {
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        const int sx = axis == FlipAxis::Horizontal ? w - 1 - x : x;
        const int sy = axis == FlipAxis::Vertical ? h - 1 - y : y;
        out.pixels.data()[(static_cast<std::size_t>(c) * h + y) * w + x] =
            img.pixels.data()[(static_cast<std::size_t>(c) * h + sy) * w + sx];
      }
    }
  }
  LabelSet flipped = labels;
  for (LabelBox& b : flipped) {
    if (axis == FlipAxis::Horizontal) {
      b.cx = 1.0f - b.cx;
    } else {
      b.cy = 1.0f - b.cy;
    }
  }
  return {std::move(out), std::move(flipped)};
}

Vec2 rotate_about(Vec2 p, Vec2 center, double theta_deg) {
  const double t = theta_deg * (3.14159265358979323846 / 180.0);
  const double c = std::cos(t), s = std::sin(t);
  const double dx = p.x - center.x, dy = p.y - center.y;
  return Vec2{center.x + c * dx - s * dy, center.y + s * dx + c * dy};
}

Tensor rotate_image(const Tensor& pixels, double theta_deg) {
  tensor_require(pixels.rank() == 3 && pixels.dim(0) == 3, "rotate_image: expected 3xHxW");
  const int h = pixels.dim(1), w = pixels.dim(2);
  // continuous image coordinates: pixel (x, y) occupies [x, x+1) x [y, y+1),
  // so its center is (x+0.5, y+0.5) and the image center is (w/2, h/2) --
  // the same frame the normalized labels use
  const Vec2 center{w / 2.0, h / 2.0};
  Tensor out({3, h, w});

  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      // inverse map: where does this output pixel center come from
      const Vec2 src_c = rotate_about(Vec2{x + 0.5, y + 0.5}, center, -theta_deg);
      const Vec2 src{src_c.x - 0.5, src_c.y - 0.5};  // back to pixel-index space
      const int x0 = static_cast<int>(std::floor(src.x));
      const int y0 = static_cast<int>(std::floor(src.y));
      const double fx = src.x - x0, fy = src.y - y0;
      for (int c = 0; c < 3; ++c) {
        auto sample = [&](int yy, int xx) -> double {
          if (xx < 0 || xx >= w || yy < 0 || yy >= h) return 0.0;
          return pixels.data()[(static_cast<std::size_t>(c) * h + yy) * w + xx];
        };
        const double v = (1 - fy) * ((1 - fx) * sample(y0, x0) + fx * sample(y0, x0 + 1)) +
                         fy * ((1 - fx) * sample(y0 + 1, x0) + fx * sample(y0 + 1, x0 + 1));
        out.data()[(static_cast<std::size_t>(c) * h + y) * w + x] = static_cast<float>(v);
      }
    }
  }
  return out;
}

LabelSet rotate_labels(const LabelSet& labels, int width, int height, double theta_deg) {
  const Vec2 center{width / 2.0, height / 2.0};
  LabelSet out;
  for (const LabelBox& b : labels) {
    const double cx = b.cx * width, cy = b.cy * height;
    const double hw = b.w * width / 2.0, hh = b.h * height / 2.0;
    const Vec2 corners[4] = {{cx - hw, cy - hh}, {cx + hw, cy - hh},
                             {cx - hw, cy + hh}, {cx + hw, cy + hh}};
    double x1 = 1e30, y1 = 1e30, x2 = -1e30, y2 = -1e30;
    for (const Vec2& p : corners) {
      const Vec2 r = rotate_about(p, center, theta_deg);
      x1 = std::min(x1, r.x);
      y1 = std::min(y1, r.y);
      x2 = std::max(x2, r.x);
      y2 = std::max(y2, r.y);
    }
    const double orig_area = (2 * hw) * (2 * hh);
    x1 = std::clamp(x1, 0.0, static_cast<double>(width));
    x2 = std::clamp(x2, 0.0, static_cast<double>(width));
    y1 = std::clamp(y1, 0.0, static_cast<double>(height));
    y2 = std::clamp(y2, 0.0, static_cast<double>(height));
    const double clipped_area = std::max(0.0, x2 - x1) * std::max(0.0, y2 - y1);
    if (clipped_area < 0.10 * orig_area) continue;

    LabelBox nb = b;
    nb.cx = static_cast<float>((x1 + x2) / 2.0 / width);
    nb.cy = static_cast<float>((y1 + y2) / 2.0 / height);
    nb.w = static_cast<float>((x2 - x1) / width);
    nb.h = static_cast<float>((y2 - y1) / height);
    out.push_back(nb);
  }
  validate_labels(out, "rotate_labels");
  return out;
}

std::pair<ImageRecord, LabelSet> rotate_augment(const ImageRecord& img,
                                                const LabelSet& labels, double theta_deg) {
  if (theta_deg != 15.0 && theta_deg != -15.0) {
    throw std::invalid_argument("rotate_augment: supported angles are +15 and -15 degrees");
  }
  ImageRecord out = img;
  out.pixels = rotate_image(img.pixels, theta_deg);
  return {std::move(out), rotate_labels(labels, img.width, img.height, theta_deg)};
}

// ---- model-space conversion ----

Box CoordTransform::to_original(const Box& b) const {
  return Box{static_cast<float>(b.x1 * sx), static_cast<float>(b.y1 * sy),
             static_cast<float>(b.x2 * sx), static_cast<float>(b.y2 * sy)};
}

Box CoordTransform::to_model(const Box& b) const {
  return Box{static_cast<float>(b.x1 / sx), static_cast<float>(b.y1 / sy),
             static_cast<float>(b.x2 / sx), static_cast<float>(b.y2 / sy)};
}

std::pair<Tensor, CoordTransform> to_model_tensor(const ImageRecord& record,
                                                  int input_size) {
  tensor_require(record.width >= 1 && record.height >= 1 && input_size >= 1,
                 "to_model_tensor: degenerate source size");
  const int S = input_size, w = record.width, h = record.height;
  const double scale_x = static_cast<double>(w) / S;
  const double scale_y = static_cast<double>(h) / S;

  Tensor out({1, 3, S, S});
  for (int c = 0; c < 3; ++c) {
    const float* plane = record.pixels.data() + static_cast<std::size_t>(c) * h * w;
    float* dst = out.data() + static_cast<std::size_t>(c) * S * S;
    for (int y = 0; y < S; ++y) {
      const double sy = std::clamp((y + 0.5) * scale_y - 0.5, 0.0, h - 1.0);
      const int y0 = static_cast<int>(sy);
      const int y1 = std::min(y0 + 1, h - 1);
      const double fy = sy - y0;
      for (int x = 0; x < S; ++x) {
        const double sx = std::clamp((x + 0.5) * scale_x - 0.5, 0.0, w - 1.0);
        const int x0 = static_cast<int>(sx);
        const int x1 = std::min(x0 + 1, w - 1);
        const double fx = sx - x0;
        const double v =
            (1 - fy) * ((1 - fx) * plane[static_cast<std::size_t>(y0) * w + x0] +
                        fx * plane[static_cast<std::size_t>(y0) * w + x1]) +
            fy * ((1 - fx) * plane[static_cast<std::size_t>(y1) * w + x0] +
                  fx * plane[static_cast<std::size_t>(y1) * w + x1]);
        dst[static_cast<std::size_t>(y) * S + x] = static_cast<float>(v);
      }
    }
  }
  return {std::move(out), CoordTransform{scale_x, scale_y}};
}

// ---- dataset index ----

void write_index(const DatasetIndex& index, const std::string& dir) {
  nlohmann::json records = nlohmann::json::array();
  for (const DatasetRecord& r : index.records) {
    records.push_back({{"id", r.id},
                       {"image", r.image_path},
                       {"label", r.label_path},
                       {"split", r.split}});
  }
  nlohmann::json j;
  j["records"] = std::move(records);
  std::ofstream out(fs::path(dir) / "index.json", std::ios::binary);
  if (!out) throw std::runtime_error("cannot write index.json in " + dir);
  out << j.dump(2) << "\n";
}

DatasetIndex read_index(const std::string& dir) {
  const fs::path path = fs::path(dir) / "index.json";
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  nlohmann::json j;
  in >> j;
  DatasetIndex index;
  for (const nlohmann::json& r : j.at("records")) {
    index.records.push_back(DatasetRecord{r.at("id").get<std::string>(),
                                          r.at("image").get<std::string>(),
                                          r.at("label").get<std::string>(),
                                          r.at("split").get<std::string>()});
  }
  return index;
}

// ---- synthetic fixtures ----

DatasetIndex generate_fixture_dataset(int n_images, std::uint64_t seed,
                                      const std::string& out_dir, int image_size,
                                      int num_classes) {
  tensor_require(n_images >= 1, "generate_fixture_dataset: need n >= 1");
  tensor_require(image_size >= 32, "generate_fixture_dataset: image_size too small");
  const fs::path root(out_dir);
  std::error_code ec;
  fs::create_directories(root / "images", ec);
  fs::create_directories(root / "labels", ec);
  if (!fs::is_directory(root / "images") || !fs::is_directory(root / "labels")) {
    throw std::runtime_error("cannot create dataset directories under " + out_dir);
  }

  Rng rng(seed);
  const int S = image_size;
  DatasetIndex index;
  int class_counter = 0;

  for (int i = 0; i < n_images; ++i) {
    char id_buf[32];
    std::snprintf(id_buf, sizeof(id_buf), "img_%04d", i);
    ImageRecord rec;
    rec.id = id_buf;
    rec.width = S;
    rec.height = S;
    rec.pixels = Tensor({3, S, S});
    // grayscale background noise, well below the blob intensity
    for (int y = 0; y < S; ++y) {
      for (int x = 0; x < S; ++x) {
        const float v = rng.uniform(0.0f, 0.35f);
        for (int c = 0; c < 3; ++c) {
          rec.pixels.data()[(static_cast<std::size_t>(c) * S + y) * S + x] = v;
        }
      }
    }

    LabelSet labels;
    const int n_blobs = rng.uniform_int(0, 2);
    std::vector<std::array<int, 4>> occupied;  // x1,y1,x2,y2 pixel bounds
    for (int bi = 0; bi < n_blobs; ++bi) {
      int ecx = 0, ecy = 0, ea = 0, eb = 0;
      bool placed = false;
      for (int attempt = 0; attempt < 25 && !placed; ++attempt) {
        ea = rng.uniform_int(S / 16, S / 8);
        eb = rng.uniform_int(S / 16, S / 8);
        ecx = rng.uniform_int(ea + 4, S - ea - 5);
        ecy = rng.uniform_int(eb + 4, S - eb - 5);
        placed = true;
        for (const auto& o : occupied) {
          if (ecx - ea - 2 <= o[2] && ecx + ea + 2 >= o[0] && ecy - eb - 2 <= o[3] &&
              ecy + eb + 2 >= o[1]) {
            placed = false;
            break;
          }
        }
      }
      if (!placed) continue;

      int xmin = S, ymin = S, xmax = -1, ymax = -1;
      for (int y = ecy - eb; y <= ecy + eb; ++y) {
        for (int x = ecx - ea; x <= ecx + ea; ++x) {
          const double nx = (x + 0.5 - ecx) / ea;
          const double ny = (y + 0.5 - ecy) / eb;
          if (nx * nx + ny * ny > 1.0) continue;
          const float v = rng.uniform(0.75f, 0.95f);
          for (int c = 0; c < 3; ++c) {
            rec.pixels.data()[(static_cast<std::size_t>(c) * S + y) * S + x] = v;
          }
          xmin = std::min(xmin, x);
          ymin = std::min(ymin, y);
          xmax = std::max(xmax, x);
          ymax = std::max(ymax, y);
        }
      }
      if (xmax < xmin) continue;  // ellipse too thin to cover any pixel center
      occupied.push_back({xmin, ymin, xmax, ymax});

      LabelBox b;
      b.class_id = class_counter++ % num_classes;
      b.cx = static_cast<float>(xmin + xmax + 1) / (2.0f * S);
      b.cy = static_cast<float>(ymin + ymax + 1) / (2.0f * S);
      b.w = static_cast<float>(xmax + 1 - xmin) / S;
      b.h = static_cast<float>(ymax + 1 - ymin) / S;
      labels.push_back(b);
    }

    const std::string image_rel = "images/" + rec.id + ".ppm";
    const std::string label_rel = "labels/" + rec.id + ".txt";
    write_ppm(rec, (root / image_rel).string());
    write_yolo_labels(labels, (root / label_rel).string());

    DatasetRecord r;
    r.id = rec.id;
    r.image_path = image_rel;
    r.label_path = label_rel;
    r.split = (n_images >= 2 && i >= (n_images * 4) / 5) ? "val" : "train";
    index.records.push_back(std::move(r));
  }

  write_index(index, out_dir);
  return index;
}

std::vector<AugmentVariant> augment_variants(const ImageRecord& img, const LabelSet& labels) {
  std::vector<AugmentVariant> out;
  out.push_back(AugmentVariant{"", img, labels});
  {
    auto [i15, l15] = rotate_augment(img, labels, 15.0);
    out.push_back(AugmentVariant{"_rp15", std::move(i15), std::move(l15)});
  }
  {
    auto [i15, l15] = rotate_augment(img, labels, -15.0);
    out.push_back(AugmentVariant{"_rm15", std::move(i15), std::move(l15)});
  }
  {
    auto [fi, fl] = flip_augment(img, labels, FlipAxis::Horizontal);
    out.push_back(AugmentVariant{"_fh", std::move(fi), std::move(fl)});
  }
  {
    auto [fi, fl] = flip_augment(img, labels, FlipAxis::Vertical);
    out.push_back(AugmentVariant{"_fv", std::move(fi), std::move(fl)});
  }
  for (AugmentVariant& v : out) v.image.id = img.id + v.suffix;
  return out;
}

}  // namespace iyolo
