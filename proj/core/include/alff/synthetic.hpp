#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "alff/geometry.hpp"
#include "alff/pgm.hpp"
#include "alff/tensor.hpp"

namespace alff {

/// Generator settings for one synthetic head scene.
struct SceneConfig {
  int image_w = 160;
  int image_h = 160;
  int min_heads = 20;
  int max_heads = 50;
  int min_radius = 4;  // ellipse semi-axis, pixels
  int max_radius = 7;
  double max_overlap_iou = 0.25;

  /// Throws std::invalid_argument on inverted ranges or heads that cannot fit.
  void validate() const;
};

struct AnnotationRecord {
  int image_id = 0;
  std::vector<Box> boxes;

  bool operator==(const AnnotationRecord&) const = default;
};

struct Scene {
  GrayImage image;
  AnnotationRecord annotation;
};

/// Gray image replicated into three channels, values in [0, 1].
template <typename T>
Tensor3<T> to_tensor(const GrayImage& img);

/// Filled, shaded ellipses over a smooth textured background. Ellipses are
/// centred on pixel centres with integer semi-axes, so boxes have integer
/// corners and odd sizes. Deterministic in (cfg, seed).
/// Throws std::runtime_error when a head cannot be placed within the overlap
/// allowance after 1000 attempts.
Scene generate_scene(const SceneConfig& cfg, std::uint64_t seed, int image_id = 0);

inline constexpr int kPlacementAttempts = 1000;

enum class DensityProfile { kLow, kHigh };
DensityProfile parse_profile(const std::string& text);
std::string to_string(DensityProfile p);

/// Head-count and size ranges of a profile at the given image size. Counts are
/// per image (low: 20-90, high: 100-290); radii scale with image size.
SceneConfig profile_config(DensityProfile p, int image_size);

struct Sample {
  int image_id = 0;
  int scene_id = 0;
  GrayImage image;
  std::vector<Box> boxes;
};

struct Dataset {
  int image_w = 0;
  int image_h = 0;
  std::vector<Sample> samples;
};

inline constexpr int kImagesPerScene = 10;

/// n_images scenes-grouped images of one density profile.
Dataset make_split(DensityProfile profile, int n_images, std::uint64_t seed, int image_size = 160);

/// Layout: images/NNNN.pgm, annotations.csv, meta.csv.
void write_dataset(const Dataset& ds, const std::filesystem::path& dir);
Dataset load_dataset(const std::filesystem::path& dir);

/// One line per box: image_id,x1,y1,x2,y2 (after a header line).
void write_annotations(const std::vector<AnnotationRecord>& records, const std::filesystem::path& path);
/// Throws std::runtime_error naming the line for malformed rows, invalid boxes,
/// or an image_id that reappears after another image's rows.
std::vector<AnnotationRecord> read_annotations(const std::filesystem::path& path);

std::string image_file_name(int image_id);

}  // namespace alff
