#include "alff/synthetic.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <numbers>
#include <set>
#include <sstream>
#include <stdexcept>

#include "alff/csv.hpp"
#include "alff/evaluation.hpp"
#include "alff/random.hpp"

namespace alff {

void SceneConfig::validate() const {
  if (image_w <= 0 || image_h <= 0) throw std::invalid_argument("scene: image size must be positive");
  if (min_heads < 0 || min_heads > max_heads) throw std::invalid_argument("scene: need 0 <= min_heads <= max_heads");
  if (min_radius < 1 || min_radius > max_radius) throw std::invalid_argument("scene: need 1 <= min_radius <= max_radius");
  if (2 * max_radius + 1 > std::min(image_w, image_h)) {
    throw std::invalid_argument("scene: max_radius " + std::to_string(max_radius) + " does not fit the image");
  }
  if (!(max_overlap_iou >= 0.0 && max_overlap_iou <= 1.0)) {
    throw std::invalid_argument("scene: max_overlap_iou must be in [0, 1]");
  }
}

template <typename T>
Tensor3<T> to_tensor(const GrayImage& img) {
  Tensor3<T> out(3, img.height, img.width);
  const std::size_t plane = img.pixels.size();
  for (std::size_t i = 0; i < plane; ++i) {
    const T v = static_cast<T>(img.pixels[i] / 255.0);
    out[i] = v;
    out[plane + i] = v;
    out[2 * plane + i] = v;
  }
  return out;
}

template Tensor3<float> to_tensor(const GrayImage&);
template Tensor3<double> to_tensor(const GrayImage&);

namespace {

struct Ellipse {
  int cx = 0;  // centre pixel index; the geometric centre is cx + 0.5
  int cy = 0;
  int rx = 0;
  int ry = 0;
  double intensity = 0.0;

  Box box() const { return Box(cx - rx, cy - ry, cx + rx + 1, cy + ry + 1); }
};

void render_background(Tensor3<double>& canvas, SplitMix& rng) {
  struct Wave {
    double fx, fy, phase, amp;
  };
  std::array<Wave, 3> waves{};
  for (Wave& w : waves) {
    const double freq = rng.uniform(0.02, 0.15);
    const double angle = rng.uniform(0.0, 2.0 * std::numbers::pi);
    w = {freq * std::cos(angle), freq * std::sin(angle), rng.uniform(0.0, 2.0 * std::numbers::pi),
         rng.uniform(0.03, 0.06)};
  }
  const double base = rng.uniform(0.2, 0.35);
  for (int y = 0; y < canvas.height(); ++y) {
    for (int x = 0; x < canvas.width(); ++x) {
      double v = base + rng.uniform(-0.03, 0.03);
      for (const Wave& w : waves) v += w.amp * std::sin(w.fx * x + w.fy * y + w.phase);
      canvas.at(0, y, x) = std::clamp(v, 0.0, 1.0);
    }
  }
}

void render_head(Tensor3<double>& canvas, const Ellipse& e) {
  const double ax = e.rx + 0.5;
  const double ay = e.ry + 0.5;
  for (int y = e.cy - e.ry; y <= e.cy + e.ry; ++y) {
    for (int x = e.cx - e.rx; x <= e.cx + e.rx; ++x) {
      const double dx = (x - e.cx) / ax;
      const double dy = (y - e.cy) / ay;
      const double d2 = dx * dx + dy * dy;
      if (d2 > 1.0) continue;
      canvas.at(0, y, x) = e.intensity - 0.15 * d2;
    }
  }
}

}  // namespace

Scene generate_scene(const SceneConfig& cfg, std::uint64_t seed, int image_id) {
  cfg.validate();
  SplitMix rng(derive_key({seed, 0x5CE7EULL}));
  Tensor3<double> canvas(1, cfg.image_h, cfg.image_w);
  render_background(canvas, rng);

  const int count = rng.uniform_int(cfg.min_heads, cfg.max_heads);
  std::vector<Ellipse> heads;
  std::vector<Box> boxes;
  heads.reserve(static_cast<std::size_t>(count));
  for (int k = 0; k < count; ++k) {
    bool placed = false;
    for (int attempt = 0; attempt < kPlacementAttempts && !placed; ++attempt) {
      Ellipse e;
      e.rx = rng.uniform_int(cfg.min_radius, cfg.max_radius);
      e.ry = std::clamp(static_cast<int>(std::lround(e.rx * rng.uniform(0.8, 1.25))), cfg.min_radius, cfg.max_radius);
      e.cx = rng.uniform_int(e.rx, cfg.image_w - 1 - e.rx);
      e.cy = rng.uniform_int(e.ry, cfg.image_h - 1 - e.ry);
      e.intensity = rng.uniform(0.6, 0.95);
      const Box b = e.box();
      const bool clear = std::none_of(boxes.begin(), boxes.end(),
                                      [&](const Box& o) { return iou(o, b) > cfg.max_overlap_iou; });
      if (clear) {
        heads.push_back(e);
        boxes.push_back(b);
        placed = true;
      }
    }
    if (!placed) {
      std::ostringstream msg;
      msg << "could not place head " << k + 1 << " of " << count << " with pairwise IoU <= " << cfg.max_overlap_iou
          << " after " << kPlacementAttempts << " attempts";
      throw std::runtime_error(msg.str());
    }
  }
  for (const Ellipse& e : heads) render_head(canvas, e);

  Scene scene;
  scene.image = quantize(canvas);
  scene.annotation = {image_id, std::move(boxes)};
  return scene;
}

DensityProfile parse_profile(const std::string& text) {
  if (text == "low") return DensityProfile::kLow;
  if (text == "high") return DensityProfile::kHigh;
  throw std::invalid_argument("profile must be 'low' or 'high', got '" + text + "'");
}

std::string to_string(DensityProfile p) { return p == DensityProfile::kLow ? "low" : "high"; }

SceneConfig profile_config(DensityProfile p, int image_size) {
  const double scale = image_size / 160.0;
  auto radius = [&](double r) { return std::max(1, static_cast<int>(std::lround(r * scale))); };
  SceneConfig cfg;
  cfg.image_w = image_size;
  cfg.image_h = image_size;
  if (p == DensityProfile::kLow) {
    cfg.min_heads = 20;
    cfg.max_heads = 90;
    cfg.min_radius = radius(3);
    cfg.max_radius = radius(6);
    cfg.max_overlap_iou = 0.25;
  } else {
    cfg.min_heads = 100;
    cfg.max_heads = 290;
    cfg.min_radius = radius(2);
    cfg.max_radius = radius(4);
    cfg.max_overlap_iou = 0.35;
  }
  return cfg;
}

Dataset make_split(DensityProfile profile, int n_images, std::uint64_t seed, int image_size) {
  if (n_images < 1) throw std::invalid_argument("make_split: n_images must be >= 1");
  const SceneConfig cfg = profile_config(profile, image_size);
  Dataset ds;
  ds.image_w = cfg.image_w;
  ds.image_h = cfg.image_h;
  ds.samples.reserve(static_cast<std::size_t>(n_images));
  for (int i = 0; i < n_images; ++i) {
    Scene s = generate_scene(cfg, derive_key({seed, static_cast<std::uint64_t>(i)}), i);
    ds.samples.push_back({i, i / kImagesPerScene, std::move(s.image), std::move(s.annotation.boxes)});
  }
  return ds;
}

std::string image_file_name(int image_id) {
  std::ostringstream name;
  name << std::setw(4) << std::setfill('0') << image_id << ".pgm";
  return name.str();
}

void write_annotations(const std::vector<AnnotationRecord>& records, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
  os << "image_id,x1,y1,x2,y2\n";
  for (const AnnotationRecord& r : records) {
    for (const Box& b : r.boxes) {
      os << r.image_id << ',' << format_number(b.x1()) << ',' << format_number(b.y1()) << ','
         << format_number(b.x2()) << ',' << format_number(b.y2()) << '\n';
    }
  }
  if (!os) throw std::runtime_error("write failed: " + path.string());
}

std::vector<AnnotationRecord> read_annotations(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path.string());
  std::vector<AnnotationRecord> records;
  std::set<int> closed;
  std::string line;
  int line_no = 0;
  auto fail = [&](const std::string& why) {
    throw std::runtime_error(path.string() + ":" + std::to_string(line_no) + ": " + why);
  };
  while (std::getline(is, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line_no == 1 && line.rfind("image_id", 0) == 0) continue;
    const auto fields = split_csv(line);
    if (fields.size() != 5) fail("expected 5 fields (image_id,x1,y1,x2,y2), got " + std::to_string(fields.size()));
    long long id = 0;
    if (!parse_int(fields[0], &id)) fail("bad image_id '" + std::string(fields[0]) + "'");
    std::array<double, 4> c{};
    for (std::size_t k = 0; k < 4; ++k) {
      if (!parse_double(fields[k + 1], &c[k])) fail("bad coordinate '" + std::string(fields[k + 1]) + "'");
    }
    Box box;
    try {
      box = Box(c[0], c[1], c[2], c[3]);
    } catch (const std::invalid_argument& e) {
      fail(e.what());
    }
    const int image_id = static_cast<int>(id);
    if (records.empty() || records.back().image_id != image_id) {
      if (closed.count(image_id)) fail("image_id " + std::to_string(image_id) + " reappears after other images");
      if (!records.empty()) closed.insert(records.back().image_id);
      records.push_back({image_id, {}});
    }
    records.back().boxes.push_back(box);
  }
  return records;
}

void write_dataset(const Dataset& ds, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir / "images");
  std::vector<AnnotationRecord> records;
  std::ofstream meta(dir / "meta.csv", std::ios::binary);
  if (!meta) throw std::runtime_error("cannot write " + (dir / "meta.csv").string());
  meta << "scene_id,image_id,count\n";
  for (const Sample& s : ds.samples) {
    write_pgm(dir / "images" / image_file_name(s.image_id), s.image);
    meta << s.scene_id << ',' << s.image_id << ',' << s.boxes.size() << '\n';
    if (!s.boxes.empty()) records.push_back({s.image_id, s.boxes});
  }
  write_annotations(records, dir / "annotations.csv");
}

Dataset load_dataset(const std::filesystem::path& dir) {
  std::ifstream meta(dir / "meta.csv", std::ios::binary);
  if (!meta) throw std::runtime_error("dataset " + dir.string() + " has no meta.csv");
  std::map<int, std::vector<Box>> boxes_by_image;
  for (AnnotationRecord& r : read_annotations(dir / "annotations.csv")) boxes_by_image[r.image_id] = std::move(r.boxes);

  Dataset ds;
  std::string line;
  int line_no = 0;
  while (std::getline(meta, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || (line_no == 1 && line.rfind("scene_id", 0) == 0)) continue;
    const auto f = split_csv(line);
    long long scene = 0, image = 0, count = 0;
    if (f.size() != 3 || !parse_int(f[0], &scene) || !parse_int(f[1], &image) || !parse_int(f[2], &count)) {
      throw std::runtime_error((dir / "meta.csv").string() + ":" + std::to_string(line_no) + ": malformed row");
    }
    Sample s;
    s.scene_id = static_cast<int>(scene);
    s.image_id = static_cast<int>(image);
    s.image = read_pgm(dir / "images" / image_file_name(s.image_id));
    if (auto it = boxes_by_image.find(s.image_id); it != boxes_by_image.end()) s.boxes = std::move(it->second);
    if (static_cast<long long>(s.boxes.size()) != count) {
      throw std::runtime_error("image " + std::to_string(s.image_id) + ": meta.csv count " + std::to_string(count) +
                               " disagrees with " + std::to_string(s.boxes.size()) + " annotated boxes");
    }
    for (const Box& b : s.boxes) {
      if (b.x1() < 0 || b.y1() < 0 || b.x2() > s.image.width || b.y2() > s.image.height) {
        throw std::runtime_error("image " + std::to_string(s.image_id) + ": box outside image bounds");
      }
    }
    if (ds.samples.empty()) {
      ds.image_w = s.image.width;
      ds.image_h = s.image.height;
    } else if (s.image.width != ds.image_w || s.image.height != ds.image_h) {
      throw std::runtime_error("image " + std::to_string(s.image_id) + " has a different size from the rest");
    }
    ds.samples.push_back(std::move(s));
  }
  return ds;
}

}  // namespace alff
