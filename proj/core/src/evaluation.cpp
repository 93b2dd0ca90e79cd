#include "alff/evaluation.hpp"

#include <algorithm>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "alff/detector.hpp"

namespace alff {

double iou(const Box& a, const Box& b) {
  const double iw = std::min(a.x2(), b.x2()) - std::max(a.x1(), b.x1());
  const double ih = std::min(a.y2(), b.y2()) - std::max(a.y1(), b.y1());
  if (iw <= 0.0 || ih <= 0.0) return 0.0;
  const double inter = iw * ih;
  return inter / (a.area() + b.area() - inter);
}

namespace {

std::vector<std::size_t> score_order(std::span<const Detection> dets) {
  std::vector<std::size_t> order(dets.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return dets[a].score > dets[b].score; });
  return order;
}

}  // namespace

MatchResult match_detections(std::span<const Detection> dets, std::span<const Box> truths, double iou_thr) {
  MatchResult r;
  r.true_positive.assign(dets.size(), false);
  r.truth_matched.assign(truths.size(), false);
  for (std::size_t d : score_order(dets)) {
    double best = iou_thr;
    std::ptrdiff_t best_gt = -1;
    for (std::size_t g = 0; g < truths.size(); ++g) {
      if (r.truth_matched[g]) continue;
      const double v = iou(dets[d].box, truths[g]);
      if (v >= best && (best_gt < 0 || v > best)) {
        best = v;
        best_gt = static_cast<std::ptrdiff_t>(g);
      }
    }
    if (best_gt >= 0) {
      r.truth_matched[static_cast<std::size_t>(best_gt)] = true;
      r.true_positive[d] = true;
    }
  }
  return r;
}

double average_precision(std::span<const EvalImage> images, double iou_thr) {
  struct Scored {
    double score;
    bool tp;
  };
  std::vector<Scored> all;
  std::size_t n_truth = 0;
  for (const EvalImage& img : images) {
    n_truth += img.truths.size();
    const MatchResult m = match_detections(img.detections, img.truths, iou_thr);
    for (std::size_t d = 0; d < img.detections.size(); ++d) all.push_back({img.detections[d].score, m.true_positive[d]});
  }
  if (n_truth == 0) return 0.0;
  // Stable: equal scores keep image order, then detection order.
  std::stable_sort(all.begin(), all.end(), [](const Scored& a, const Scored& b) { return a.score > b.score; });

  std::vector<double> precision(all.size());
  std::vector<double> recall(all.size());
  std::size_t tp = 0;
  for (std::size_t i = 0; i < all.size(); ++i) {
    tp += all[i].tp ? 1 : 0;
    precision[i] = static_cast<double>(tp) / static_cast<double>(i + 1);
    recall[i] = static_cast<double>(tp) / static_cast<double>(n_truth);
  }
  for (std::size_t i = all.size(); i-- > 1;) precision[i - 1] = std::max(precision[i - 1], precision[i]);

  double sum = 0.0;
  for (int k = 0; k <= 100; ++k) {
    const double r = k / 100.0;
    const auto it = std::lower_bound(recall.begin(), recall.end(), r);
    if (it != recall.end()) sum += precision[static_cast<std::size_t>(it - recall.begin())];
  }
  return sum / 101.0;
}

std::vector<double> coco_thresholds() {
  std::vector<double> t;
  for (int k = 0; k < 10; ++k) t.push_back((50 + 5 * k) / 100.0);
  return t;
}

ApSummary ap_range(std::span<const EvalImage> images) {
  ApSummary s;
  for (double t : coco_thresholds()) s.per_threshold.push_back(average_precision(images, t));
  s.ap50 = s.per_threshold.front();
  s.ap75 = s.per_threshold[5];
  s.ap50_95 = std::accumulate(s.per_threshold.begin(), s.per_threshold.end(), 0.0) /
              static_cast<double>(s.per_threshold.size());
  return s;
}

std::string to_string(DensityLabel label) { return label == DensityLabel::kLow ? "low" : "high"; }

DensityLabel classify_density(double mean_heads) {
  if (mean_heads < kHighDensityFloor) return DensityLabel::kLow;
  if (mean_heads < kHighDensityCeiling) return DensityLabel::kHigh;
  std::ostringstream msg;
  msg << "scene density " << mean_heads << " heads/image is beyond the high split (< " << kHighDensityCeiling << ")";
  throw std::out_of_range(msg.str());
}

std::vector<DatasetStats> density_split(std::span<const SceneCounts> scenes) {
  std::vector<DatasetStats> out;
  out.reserve(scenes.size());
  for (const SceneCounts& s : scenes) {
    if (s.per_image.empty()) {
      throw std::invalid_argument("scene " + std::to_string(s.scene_id) + " has no images");
    }
    const double mean =
        std::accumulate(s.per_image.begin(), s.per_image.end(), 0.0) / static_cast<double>(s.per_image.size());
    out.push_back({s.scene_id, mean, classify_density(mean)});
  }
  return out;
}

}  // namespace alff
