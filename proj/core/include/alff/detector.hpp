#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "alff/alff_branch.hpp"
#include "alff/conv.hpp"
#include "alff/geometry.hpp"
#include "alff/losses.hpp"
#include "alff/tensor.hpp"

namespace alff {

inline constexpr std::array<int, 3> kStrides = {8, 16, 32};

/// Layer widths of the toy detector.
struct ModelConfig {
  int in_channels = 3;
  std::array<int, 3> stem = {16, 32, 64};  // stride 2, 4, 8
  int p8 = 64;
  int p16 = 96;
  int p32 = 128;
  int head_hidden = 32;
  int lstm_hidden = 32;
  int n_bins = 16;

  int width_at(int scale) const { return scale == 0 ? p8 : (scale == 1 ? p16 : p32); }
  bool operator==(const ModelConfig&) const = default;
};

/// Three stride-2 stem blocks reach 1/8, a stride-1 block refines it into p8,
/// and two more stride-2 blocks produce p16 and p32.
template <typename T>
struct BackboneParams {
  std::array<ConvBlockParams<T>, 3> stem;
  ConvBlockParams<T> refine;
  ConvBlockParams<T> down16;
  ConvBlockParams<T> down32;

  BackboneParams() = default;
  explicit BackboneParams(const ModelConfig& cfg);
  void init(SplitMix& rng);
  void visit(const std::string& prefix, const ParamVisitor<T>& f);
};

/// Decoupled head for one pyramid level: separate classification and regression towers.
template <typename T>
struct HeadParams {
  ConvBlockParams<T> cls_tower;
  ConvBlockParams<T> cls_out;  // 1x1 -> 1 logit
  ConvBlockParams<T> reg_tower;
  ConvBlockParams<T> reg_out;  // 1x1 -> 4 * n_bins logits (left, top, right, bottom)

  HeadParams() = default;
  HeadParams(int in_channels, int hidden, int n_bins);
  void init(SplitMix& rng);
  void visit(const std::string& prefix, const ParamVisitor<T>& f);
};

template <typename T>
struct DetectorParams {
  ModelConfig config;
  BackboneParams<T> backbone;
  std::array<HeadParams<T>, 3> heads;
  AlffParams<T> alff;

  DetectorParams() = default;
  explicit DetectorParams(const ModelConfig& cfg);
  void init(std::uint64_t seed);
  void visit(const std::string& prefix, const ParamVisitor<T>& f);

  template <typename U>
  DetectorParams<U> cast() const;
};

template <typename T>
struct PyramidFeatures {
  Tensor3<T> p8;
  Tensor3<T> p16;
  Tensor3<T> p32;

  const Tensor3<T>& at(int scale) const { return scale == 0 ? p8 : (scale == 1 ? p16 : p32); }
  Tensor3<T>& at(int scale) { return scale == 0 ? p8 : (scale == 1 ? p16 : p32); }
};

template <typename T>
struct ScaleOutput {
  int stride = 8;
  Tensor3<T> cls;  // 1 x H x W logits
  Tensor3<T> reg;  // 4*n_bins x H x W logits, side-major
};

template <typename T>
struct HeadOutput {
  int n_bins = 16;
  int image_w = 0;
  int image_h = 0;
  std::array<ScaleOutput<T>, 3> scales;

  /// The four side distributions at one location.
  std::array<BinDistribution, 4> distributions(int scale, int y, int x) const;
};

template <typename T>
struct DetectorOutput {
  HeadOutput<T> head;
  Tensor3<T> heatmap;  // empty when the auxiliary branch is disabled
};

template <typename T>
struct BackboneCache {
  std::array<ConvBlockCache<T>, 3> stem;
  ConvBlockCache<T> refine, down16, down32;
};

template <typename T>
struct HeadCache {
  ConvBlockCache<T> cls_tower, cls_out, reg_tower, reg_out;
};

template <typename T>
struct DetectorCache {
  BackboneCache<T> backbone;
  std::array<HeadCache<T>, 3> heads;
  AlffCache<T> alff;
  bool alff_ran = false;
};

/// Throws std::invalid_argument unless image dims are positive multiples of 32
/// and the channel count matches the config.
template <typename T>
PyramidFeatures<T> backbone_forward(const BackboneParams<T>& p, const Tensor3<T>& image,
                                    BackboneCache<T>* cache = nullptr);

template <typename T>
DetectorOutput<T> forward_full(const DetectorParams<T>& p, const Tensor3<T>& image, bool enable_alff,
                               DetectorCache<T>* cache = nullptr);

/// Backpropagates head-output and (optional) heatmap gradients into `grads`.
template <typename T>
void backward_full(const DetectorParams<T>& p, const DetectorCache<T>& cache, const HeadOutput<T>& grad_head,
                   const Tensor3<T>& grad_heatmap, DetectorParams<T>& grads);

struct Detection {
  Box box;
  double score = 0.0;
};

/// Side offsets in stride units.
struct SideOffsets {
  double left = 0, top = 0, right = 0, bottom = 0;
};

SideOffsets expected_offsets(std::span<const BinDistribution, 4> dists);

/// Expectation decoding around the cell-centre anchor. Returns nothing for a
/// box with non-positive width or height.
std::optional<Box> decode_box(std::span<const BinDistribution, 4> dists, int cell_x, int cell_y, int stride);

/// Greedy NMS: visits detections by descending score (ties by input order) and
/// drops any with IoU > iou_thr against an already kept one.
std::vector<Detection> nms(std::vector<Detection> dets, double iou_thr, std::size_t max_det = SIZE_MAX);

struct PostprocessOptions {
  double score_thr = 0.25;
  double iou_thr = 0.65;
  std::size_t max_det = 300;
};

template <typename T>
std::vector<Detection> postprocess(const HeadOutput<T>& head, const PostprocessOptions& opts = {});

struct ScaleTargets {
  int stride = 8;
  int grid_w = 0;
  int grid_h = 0;
  std::vector<int> gt_index;                  // per location, -1 for background
  std::vector<std::array<double, 4>> offsets;  // per location, in stride units, clamped
};

struct AssignedTargets {
  std::array<ScaleTargets, 3> scales;
  int positives = 0;
};

struct AssignOptions {
  int n_bins = 16;
  /// Give a box that claims no location the stride-8 cell containing its centre.
  bool center_fallback = true;
};

/// A location is positive when its cell centre is strictly inside a box and
/// within 0.5 * min(w, h) of the box centre; overlapping claims go to the
/// smallest box.
AssignedTargets assign_targets(std::span<const Box> boxes, int image_w, int image_h, const AssignOptions& opts = {});

}  // namespace alff
