#pragma once

// Annotated images, Labelme-compatible ingestion, resizing and group split.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "usseg/image_io.hpp"
#include "usseg/kernels.hpp"
#include "usseg/metrics.hpp"
#include "usseg/raster.hpp"
#include "usseg/rng.hpp"

namespace usseg {

struct AnnotatedImage {
  std::string id;
  int group = 0;
  Tensor<float> image;  // (1,1,H,W), values in [0,1]
  std::vector<Instance> instances;

  std::size_t height() const { return image.shape().h; }
  std::size_t width() const { return image.shape().w; }
};

// Rasterizes the polygon and derives the tight box. An empty mask yields
// nullopt: such an instance has no pixels to learn from or evaluate.
inline std::optional<Instance> make_instance(int label, std::vector<Point> polygon, std::size_t H, std::size_t W) {
  Instance inst;
  inst.label = label;
  inst.mask = rasterize_polygon(polygon, H, W);
  inst.polygon = std::move(polygon);
  const auto box = inst.mask.bounding_box();
  if (!box) return std::nullopt;
  inst.box = *box;
  return inst;
}

inline std::string allowed_labels() {
  std::string s;
  for (auto n : kClassNames) s += (s.empty() ? "" : ", ") + std::string(n);
  return s;
}

namespace detail {

inline const nlohmann::json& require(const nlohmann::json& j, const char* field, const std::string& where) {
  if (!j.is_object() || !j.contains(field)) throw ParseError(where + ": missing field '" + field + "'");
  return j.at(field);
}

}  // namespace detail

// Reads a Labelme annotation and its image. The image is taken from
// `imagePath` relative to the annotation, falling back to <stem>.pgm.
inline AnnotatedImage load_labelme(const std::string& path) {
  namespace fs = std::filesystem;
  std::ifstream in(path);
  if (!in) throw DataError("cannot open annotation " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path + ": malformed annotation: " + e.what());
  }
  AnnotatedImage out;
  const fs::path p(path);
  out.id = p.stem().string();
  std::size_t H = 0, W = 0;
  try {
    const auto& shapes = detail::require(j, "shapes", path);
    H = detail::require(j, "imageHeight", path).get<std::size_t>();
    W = detail::require(j, "imageWidth", path).get<std::size_t>();
    if (!shapes.is_array()) throw ParseError(path + ": field 'shapes' is not an array");
    if (j.contains("group_id") && j["group_id"].is_number_integer()) out.group = j["group_id"].get<int>();

    fs::path image_file = p.parent_path() / (out.id + ".pgm");
    if (j.contains("imagePath") && j["imagePath"].is_string()) image_file = p.parent_path() / j["imagePath"].get<std::string>();
    const GrayImage img = read_pgm(image_file.string());
    if (img.height != H || img.width != W)
      throw DataError(path + ": image " + image_file.string() + " is " + std::to_string(img.height) + "x" +
                      std::to_string(img.width) + " but the annotation says " + std::to_string(H) + "x" +
                      std::to_string(W));
    out.image = to_tensor(img);

    for (std::size_t s = 0; s < shapes.size(); ++s) {
      const std::string where = path + ": shapes[" + std::to_string(s) + "]";
      const std::string label = detail::require(shapes[s], "label", where).get<std::string>();
      const auto& pts = detail::require(shapes[s], "points", where);
      const auto cls = class_from_name(label);
      if (!cls) throw DataError(where + ": unknown label '" + label + "' (allowed: " + allowed_labels() + ")");
      if (!pts.is_array() || pts.size() < 3)
        throw DataError(where + ": polygon needs at least 3 points");
      std::vector<Point> poly;
      for (const auto& pt : pts) {
        if (!pt.is_array() || pt.size() != 2) throw ParseError(where + ": point is not an [x, y] pair");
        poly.push_back({pt[0].get<double>(), pt[1].get<double>()});
      }
      if (auto inst = make_instance(*cls, std::move(poly), H, W)) out.instances.push_back(std::move(*inst));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path + ": " + e.what());
  }
  return out;
}

// Writes <dir>/<id>.pgm and <dir>/<id>.json.
inline void save_labelme(const AnnotatedImage& img, const std::string& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  const std::string image_name = img.id + ".pgm";
  write_pgm((fs::path(dir) / image_name).string(), to_gray(img.image));
  nlohmann::json j;
  j["version"] = "5.0.1";
  j["flags"] = nlohmann::json::object();
  j["shapes"] = nlohmann::json::array();
  for (const auto& inst : img.instances) {
    nlohmann::json s;
    s["label"] = std::string(class_name(inst.label));
    s["points"] = nlohmann::json::array();
    for (const auto& pt : inst.polygon) s["points"].push_back({pt.x, pt.y});
    s["group_id"] = nullptr;
    s["shape_type"] = "polygon";
    s["flags"] = nlohmann::json::object();
    j["shapes"].push_back(s);
  }
  j["imagePath"] = image_name;
  j["imageData"] = nullptr;
  j["imageHeight"] = img.height();
  j["imageWidth"] = img.width();
  j["group_id"] = img.group;
  std::ofstream out(fs::path(dir) / (img.id + ".json"));
  if (!out) throw DataError("cannot write annotation in " + dir);
  out << j.dump(1) << "\n";
}

// All annotations in a directory, sorted by file name.
inline std::vector<AnnotatedImage> load_dataset(const std::string& dir) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir)) throw DataError("data directory not found: " + dir);
  std::vector<std::string> files;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".json") files.push_back(e.path().string());
  std::sort(files.begin(), files.end());
  std::vector<AnnotatedImage> out;
  for (const auto& f : files) out.push_back(load_labelme(f));
  return out;
}

namespace detail {

// Nearest-neighbour source index of each of `out` destination cells.
inline std::vector<std::size_t> nearest_sources(std::size_t in, std::size_t out) {
  const double s = double(out) / double(in);
  std::vector<std::size_t> src(out);
  for (std::size_t i = 0; i < out; ++i) src[i] = std::min(in - 1, std::size_t((double(i) + 0.5) / s));
  return src;
}

}  // namespace detail

inline BinaryMask resize_mask(const BinaryMask& m, std::size_t H, std::size_t W) {
  if (H == 0 || W == 0) throw ArgumentError("mask resize target must be positive");
  if (m.height == H && m.width == W) return m;
  const auto sy = detail::nearest_sources(m.height, H), sx = detail::nearest_sources(m.width, W);
  BinaryMask out(H, W);
  for (std::size_t y = 0; y < H; ++y)
    for (std::size_t x = 0; x < W; ++x) out.at(y, x) = m.at(sy[y], sx[x]);
  return out;
}

inline Box scale_box(const Box& b, double sx, double sy) {
  return Box{float(b.x1 * sx), float(b.y1 * sy), float(b.x2 * sx), float(b.y2 * sy)};
}

// Image bilinear, masks nearest neighbour, polygons and boxes scaled by the
// axis factors. Same-size input is returned unchanged.
inline AnnotatedImage resize_sample(const AnnotatedImage& img, std::size_t H, std::size_t W) {
  if (H == 0 || W == 0) throw ArgumentError("resize_sample target must be positive");
  const std::size_t h0 = img.height(), w0 = img.width();
  if (h0 == H && w0 == W) return img;
  AnnotatedImage out;
  out.id = img.id;
  out.group = img.group;
  out.image = kernels::resize_bilinear_forward(img.image, H, W);
  const double sx = double(W) / double(w0), sy = double(H) / double(h0);
  for (const auto& inst : img.instances) {
    Instance r;
    r.label = inst.label;
    for (const auto& pt : inst.polygon) r.polygon.push_back({pt.x * sx, pt.y * sy});
    r.box = scale_box(inst.box, sx, sy);
    r.mask = resize_mask(inst.mask, H, W);
    out.instances.push_back(std::move(r));
  }
  return out;
}

// Maps detections made at the masks' resolution onto an H x W image.
inline std::vector<Detection> rescale_detections(std::vector<Detection> dets, std::size_t H, std::size_t W) {
  for (auto& d : dets) {
    const double sx = double(W) / double(d.mask.width), sy = double(H) / double(d.mask.height);
    d.box = scale_box(d.box, sx, sy);
    d.mask = resize_mask(d.mask, H, W);
  }
  return dets;
}

struct Split {
  std::vector<AnnotatedImage> train, test;
};

// Whole groups go to one side. Groups are shuffled from the seed and the
// first round(fraction * groups) become the training side.
inline Split split_dataset(const std::vector<AnnotatedImage>& corpus, double train_fraction, std::uint64_t seed) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0))
    throw ArgumentError("train fraction must lie in (0, 1), got " + std::to_string(train_fraction));
  std::set<int> unique;
  for (const auto& a : corpus) unique.insert(a.group);
  std::vector<int> groups(unique.begin(), unique.end());
  Rng rng(seed);
  rng.shuffle(groups);
  const auto n_train = static_cast<std::size_t>(std::llround(train_fraction * double(groups.size())));
  const std::set<int> train_groups(groups.begin(), groups.begin() + std::ptrdiff_t(std::min(n_train, groups.size())));
  Split s;
  for (const auto& a : corpus) (train_groups.count(a.group) ? s.train : s.test).push_back(a);
  return s;
}

inline std::vector<GroundTruthImage> ground_truth(const std::vector<AnnotatedImage>& corpus) {
  std::vector<GroundTruthImage> out;
  for (const auto& a : corpus) out.push_back({a.id, a.instances});
  return out;
}

}  // namespace usseg
