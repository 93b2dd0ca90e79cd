#include "alff/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace alff {

Box::Box(double x1, double y1, double x2, double y2) : x1_(x1), y1_(y1), x2_(x2), y2_(y2) {
  if (!(x2 > x1) || !(y2 > y1) || !std::isfinite(x1) || !std::isfinite(y1) || !std::isfinite(x2) ||
      !std::isfinite(y2)) {
    std::ostringstream msg;
    msg << "degenerate box (" << x1 << ", " << y1 << ", " << x2 << ", " << y2 << ")";
    throw std::invalid_argument(msg.str());
  }
}

Box Box::from_center(double cx, double cy, double w, double h) {
  return Box(cx - w / 2.0, cy - h / 2.0, cx + w / 2.0, cy + h / 2.0);
}

void GridSpec::validate() const {
  if (stride <= 0 || image_w <= 0 || image_h <= 0 || image_w % stride != 0 ||
      image_h % stride != 0) {
    std::ostringstream msg;
    msg << "grid spec " << image_w << "x" << image_h << " is not divisible by stride " << stride;
    throw std::invalid_argument(msg.str());
  }
}

std::pair<double, double> center_of(const Box& b) { return {b.cx(), b.cy()}; }

double heatmap_sigma(const Box& b, const GridSpec& spec) {
  const double side = std::min(b.w(), b.h()) / spec.stride;
  return std::max(side, 1.0) / 3.0;
}

bool clip_to_image(const Box& b, int image_w, int image_h, Box* out) {
  const double x1 = std::max(b.x1(), 0.0);
  const double y1 = std::max(b.y1(), 0.0);
  const double x2 = std::min(b.x2(), static_cast<double>(image_w));
  const double y2 = std::min(b.y2(), static_cast<double>(image_h));
  if (!(x2 > x1) || !(y2 > y1)) return false;
  *out = Box(x1, y1, x2, y2);
  return true;
}

HeatmapTarget render_heatmap(std::span<const Box> boxes, const GridSpec& spec) {
  spec.validate();
  const int gw = spec.grid_w();
  const int gh = spec.grid_h();
  HeatmapTarget target;
  target.grid = Tensor3<double>(1, gh, gw);
  target.sigmas.reserve(boxes.size());

  for (std::size_t i = 0; i < boxes.size(); ++i) {
    Box clipped;
    if (!clip_to_image(boxes[i], spec.image_w, spec.image_h, &clipped)) {
      std::ostringstream msg;
      msg << "box " << i << " (" << boxes[i].x1() << ", " << boxes[i].y1() << ", " << boxes[i].x2()
          << ", " << boxes[i].y2() << ") lies outside the " << spec.image_w << "x" << spec.image_h
          << " image";
      throw std::out_of_range(msg.str());
    }
    const double sigma = heatmap_sigma(clipped, spec);
    target.sigmas.push_back(sigma);

    const double cx = clipped.cx() / spec.stride;
    const double cy = clipped.cy() / spec.stride;
    const double radius = std::min(clipped.w(), clipped.h()) / spec.stride;
    const double r2 = radius * radius;
    const double inv_two_var = 1.0 / (2.0 * sigma * sigma);

    const int x_lo = std::max(0, static_cast<int>(std::floor(cx - radius - 0.5)));
    const int x_hi = std::min(gw - 1, static_cast<int>(std::ceil(cx + radius - 0.5)));
    const int y_lo = std::max(0, static_cast<int>(std::floor(cy - radius - 0.5)));
    const int y_hi = std::min(gh - 1, static_cast<int>(std::ceil(cy + radius - 0.5)));
    for (int y = y_lo; y <= y_hi; ++y) {
      const double dy = (y + 0.5) - cy;
      for (int x = x_lo; x <= x_hi; ++x) {
        const double dx = (x + 0.5) - cx;
        const double d2 = dx * dx + dy * dy;
        if (d2 > r2) continue;
        target.grid.at(0, y, x) += std::exp(-d2 * inv_two_var);
      }
    }
  }
  for (double& v : target.grid.values()) v = std::min(v, 1.0);
  return target;
}

}  // namespace alff
