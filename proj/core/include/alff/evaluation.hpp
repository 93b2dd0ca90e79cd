#pragma once

#include <span>
#include <string>
#include <vector>

#include "alff/geometry.hpp"

namespace alff {

struct Detection;

double iou(const Box& a, const Box& b);

/// Detections and ground truth of one image.
struct EvalImage {
  std::vector<Detection> detections;
  std::vector<Box> truths;
};

/// Outcome of greedy matching on one image at one IoU threshold.
struct MatchResult {
  std::vector<bool> true_positive;  // per detection, in input order
  std::vector<bool> truth_matched;  // per ground truth
};

/// Visits detections by descending score (ties by input index); each takes the
/// highest-IoU unmatched truth with IoU >= iou_thr.
MatchResult match_detections(std::span<const Detection> dets, std::span<const Box> truths, double iou_thr);

/// COCO-style 101-point interpolated AP over all images. Returns 0 when there
/// is no ground truth at all.
double average_precision(std::span<const EvalImage> images, double iou_thr);

struct ApSummary {
  double ap50 = 0.0;
  double ap75 = 0.0;
  double ap50_95 = 0.0;
  std::vector<double> per_threshold;  // 0.50, 0.55, ..., 0.95
};

/// IoU thresholds 0.50:0.05:0.95.
std::vector<double> coco_thresholds();
ApSummary ap_range(std::span<const EvalImage> images);

enum class DensityLabel { kLow, kHigh };
std::string to_string(DensityLabel label);

struct SceneCounts {
  int scene_id = 0;
  std::vector<double> per_image;  // heads per image
};

struct DatasetStats {
  int scene_id = 0;
  double mean_heads = 0.0;
  DensityLabel label = DensityLabel::kLow;
};

inline constexpr double kHighDensityFloor = 100.0;
inline constexpr double kHighDensityCeiling = 300.0;

/// low: mean < 100; high: 100 <= mean < 300. Throws std::invalid_argument for
/// an empty scene and std::out_of_range for a mean >= 300.
DensityLabel classify_density(double mean_heads);
std::vector<DatasetStats> density_split(std::span<const SceneCounts> scenes);

}  // namespace alff
