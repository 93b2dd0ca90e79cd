#pragma once

#include <array>
#include <string>

#include "alff/conv.hpp"
#include "alff/lstm.hpp"
#include "alff/tensor.hpp"

namespace alff {

struct AlffShape {
  int channels = 64;  // shared feature width == conv block width == LSTM input
  int hidden = 32;    // LSTM hidden size
  int upsample = 8;
};

/// Auxiliary heatmap branch: three conv blocks whose per-location channel
/// vectors form a length-3 sequence through one shared LSTM. The three hidden
/// states are concatenated, mapped to one channel, squashed by a sigmoid and
/// upsampled (nearest neighbour) back to image resolution.
template <typename T>
struct AlffParams {
  AlffShape shape;
  std::array<ConvBlockParams<T>, 3> blocks;
  LstmWeights<T> lstm;
  ParamTensor<T> fc_weight;  // 1 x 3H
  ParamTensor<T> fc_bias;    // 1

  AlffParams() = default;
  explicit AlffParams(const AlffShape& s);

  void init(SplitMix& rng);
  void visit(const std::string& prefix, const ParamVisitor<T>& f);
};

template <typename T>
struct AlffCache {
  int grid_h = 0;
  int grid_w = 0;
  std::array<ConvBlockCache<T>, 3> blocks;
  std::array<LstmCache<T>, 3> steps;
  RowMatrix<T> hidden_concat;  // 3H x L
  RowMatrix<T> prob;           // 1 x L, after the sigmoid
};

/// Prediction on the input grid (1 x H x W) before upsampling.
template <typename T>
Tensor3<T> alff_forward_grid(const AlffParams<T>& p, const Tensor3<T>& shared_feature,
                             AlffCache<T>* cache = nullptr);

/// Full-resolution heatmap prediction (1 x H*up x W*up), values in (0, 1).
template <typename T>
Tensor3<T> alff_forward(const AlffParams<T>& p, const Tensor3<T>& shared_feature, AlffCache<T>* cache = nullptr);

/// Gradient of the full-resolution output back to the shared feature.
template <typename T>
Tensor3<T> alff_backward(const AlffParams<T>& p, const AlffCache<T>& cache, const Tensor3<T>& grad_out,
                         AlffParams<T>& grads);

template <typename T>
Tensor3<T> upsample_nearest(const Tensor3<T>& x, int factor);

/// Adjoint of upsample_nearest: sums each factor x factor block.
template <typename T>
Tensor3<T> upsample_nearest_adjoint(const Tensor3<T>& grad, int factor);

}  // namespace alff
