#pragma once

#include <cstdint>
#include <span>

#include "alff/detector.hpp"
#include "alff/losses.hpp"

namespace alff {

struct ObjectiveOptions {
  LossWeights weights;
  bool enable_ncdfl = false;
  NoiseConfig noise;
  std::uint64_t step = 0;  // training step, part of the noise counter
  std::uint64_t item = 0;  // image slot within the step
};

template <typename T>
struct ImageObjective {
  LossTerms terms;
  double total = 0.0;
  int positives = 0;
  HeadOutput<T> grad_head;  // d total / d head logits
  Tensor3<T> grad_heatmap;  // d total / d heatmap prediction; empty without the auxiliary branch
};

/// Heatmap target on the stride-8 grid, nearest-upsampled to image resolution
/// so it lines up with the auxiliary branch output.
Tensor3<double> training_heatmap(std::span<const Box> truths, int image_w, int image_h);

/// Per-image multi-task objective:
///   cls = sum of BCE over every location / max(1, positives)
///   box = mean over positives of 1 - IoU(decoded, truth)
///   dfl = mean over positives and sides of (NC-)DFL
///   aux = heatmap MSE (0 when `heatmap_target` is null or the output has no heatmap)
/// Throws NonFiniteLoss when any term is not finite.
template <typename T>
ImageObjective<T> compute_objective(const DetectorOutput<T>& out, std::span<const Box> truths,
                                    const AssignedTargets& targets, const Tensor3<double>* heatmap_target,
                                    const ObjectiveOptions& opts);

}  // namespace alff
