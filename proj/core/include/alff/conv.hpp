#pragma once

#include <string>
#include <vector>

#include "alff/random.hpp"
#include "alff/tensor.hpp"

namespace alff {

struct ConvShape {
  int in_channels = 0;
  int out_channels = 0;
  int kernel = 3;
  int stride = 1;
  int pad = 1;
  bool normalize = true;  // per-channel spatial normalization with scale/shift
  bool activate = true;   // SiLU
};

/// Convolution -> optional channelwise normalization -> optional SiLU.
/// A block with normalize = activate = false is a plain (e.g. 1x1) linear conv.
template <typename T>
struct ConvBlockParams {
  ConvShape shape;
  ParamTensor<T> weight;  // out x in x k x k
  ParamTensor<T> bias;    // out (only without normalize; beta takes its place)
  ParamTensor<T> gamma;   // out (only when normalize)
  ParamTensor<T> beta;    // out (only when normalize)

  ConvBlockParams() = default;
  explicit ConvBlockParams(const ConvShape& s);

  /// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights and biases; gamma = 1, beta = 0.
  void init(SplitMix& rng);
  void visit(const std::string& prefix, const ParamVisitor<T>& f);
};

template <typename T>
struct ConvBlockCache {
  int in_h = 0;
  int in_w = 0;
  RowMatrix<T> columns;    // (in * k * k) x (out_h * out_w)
  RowMatrix<T> pre_act;    // after normalization (or raw conv when disabled)
  RowMatrix<T> xhat;       // normalized conv output
  AlignedVector<T> inv_std;  // per output channel
};

int conv_output_size(int in, int kernel, int stride, int pad);

/// Throws std::invalid_argument on a channel mismatch or an input too small for the kernel.
template <typename T>
Tensor3<T> conv_block_forward(const ConvBlockParams<T>& p, const Tensor3<T>& x,
                              ConvBlockCache<T>* cache = nullptr);

/// Accumulates parameter gradients into `grads` and returns dL/dx
/// (empty when want_input_grad is false).
template <typename T>
Tensor3<T> conv_block_backward(const ConvBlockParams<T>& p, const ConvBlockCache<T>& cache,
                               const Tensor3<T>& grad_out, ConvBlockParams<T>& grads,
                               bool want_input_grad = true);

inline constexpr double kNormEpsilon = 1e-5;

}  // namespace alff
