#pragma once

#include <span>
#include <utility>
#include <vector>

#include "alff/tensor.hpp"

namespace alff {

/// Axis-aligned rectangle in pixel coordinates, stored in corner form.
class Box {
 public:
  Box() = default;
  /// Throws std::invalid_argument unless x2 > x1 and y2 > y1.
  Box(double x1, double y1, double x2, double y2);

  static Box from_center(double cx, double cy, double w, double h);

  double x1() const { return x1_; }
  double y1() const { return y1_; }
  double x2() const { return x2_; }
  double y2() const { return y2_; }
  double cx() const { return (x1_ + x2_) / 2.0; }
  double cy() const { return (y1_ + y2_) / 2.0; }
  double w() const { return x2_ - x1_; }
  double h() const { return y2_ - y1_; }
  double area() const { return w() * h(); }

  bool operator==(const Box&) const = default;

 private:
  double x1_ = 0.0;
  double y1_ = 0.0;
  double x2_ = 1.0;
  double y2_ = 1.0;
};

/// Image size and the pixel stride of one heatmap cell.
struct GridSpec {
  int image_w = 0;
  int image_h = 0;
  int stride = 8;

  int grid_w() const { return image_w / stride; }
  int grid_h() const { return image_h / stride; }
  /// Throws std::invalid_argument unless both image dims are positive multiples of stride.
  void validate() const;
};

struct HeatmapTarget {
  Tensor3<double> grid;        // 1 x grid_h x grid_w
  std::vector<double> sigmas;  // per object, in cells
};

std::pair<double, double> center_of(const Box& b);

/// Gaussian spread in cells: max(min(w, h) / stride, 1) / 3.
double heatmap_sigma(const Box& b, const GridSpec& spec);

/// Clips a box to the image rectangle. Returns false when nothing remains.
bool clip_to_image(const Box& b, int image_w, int image_h, Box* out);

/// Sum of truncated Gaussians (one per box, truncated at radius min(w, h) / stride
/// cells), clamped to [0, 1]. Cells are sampled at their centers.
/// Throws std::out_of_range naming the box when a box lies outside the image.
HeatmapTarget render_heatmap(std::span<const Box> boxes, const GridSpec& spec);

}  // namespace alff
