#include "alff/conv.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace alff {

int conv_output_size(int in, int kernel, int stride, int pad) {
  return (in + 2 * pad - kernel) / stride + 1;
}

template <typename T>
ConvBlockParams<T>::ConvBlockParams(const ConvShape& s)
    : shape(s),
      weight({s.out_channels, s.in_channels, s.kernel, s.kernel}) {
  if (s.in_channels <= 0 || s.out_channels <= 0 || s.kernel <= 0 || s.stride <= 0 || s.pad < 0) {
    throw std::invalid_argument("ConvBlockParams: invalid shape");
  }
  if (s.normalize) {
    gamma = ParamTensor<T>({s.out_channels}, T(1));
    beta = ParamTensor<T>({s.out_channels});
  } else {
    bias = ParamTensor<T>({s.out_channels});
  }
}

template <typename T>
void ConvBlockParams<T>::init(SplitMix& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(shape.in_channels) * shape.kernel * shape.kernel);
  for (T& v : weight.data) v = static_cast<T>(rng.uniform(-bound, bound));
  for (T& v : bias.data) v = static_cast<T>(rng.uniform(-bound, bound));
  if (shape.normalize) {
    std::fill(gamma.data.begin(), gamma.data.end(), T(1));
    beta.zero();
  }
}

template <typename T>
void ConvBlockParams<T>::visit(const std::string& prefix, const ParamVisitor<T>& f) {
  f(join_name(prefix, "weight"), weight);
  if (shape.normalize) {
    f(join_name(prefix, "gamma"), gamma);
    f(join_name(prefix, "beta"), beta);
  } else {
    f(join_name(prefix, "bias"), bias);
  }
}

namespace {

// Output columns [lo, hi) whose input column ox * stride - pad + k lies inside [0, size).
struct ValidRange {
  int lo = 0;
  int hi = 0;
};

ValidRange valid_range(int out, int size, int stride, int pad, int k) {
  ValidRange r;
  const int shift = k - pad;
  r.lo = shift >= 0 ? 0 : (-shift + stride - 1) / stride;
  r.hi = size - shift <= 0 ? 0 : std::min(out, (size - shift - 1) / stride + 1);
  if (r.hi < r.lo) r.hi = r.lo;
  return r;
}

template <typename T>
void im2col(const Tensor3<T>& x, const ConvShape& s, int out_h, int out_w, RowMatrix<T>& cols) {
  const int k = s.kernel;
  cols.resize(static_cast<Eigen::Index>(s.in_channels) * k * k, static_cast<Eigen::Index>(out_h) * out_w);
  for (int c = 0; c < s.in_channels; ++c) {
    const T* src = x.data() + static_cast<std::size_t>(c) * x.plane();
    for (int ky = 0; ky < k; ++ky) {
      const ValidRange ry = valid_range(out_h, x.height(), s.stride, s.pad, ky);
      for (int kx = 0; kx < k; ++kx) {
        const ValidRange rx = valid_range(out_w, x.width(), s.stride, s.pad, kx);
        T* dst = cols.data() + ((static_cast<std::size_t>(c) * k + ky) * k + kx) * cols.cols();
        for (int oy = 0; oy < out_h; ++oy) {
          T* row = dst + static_cast<std::size_t>(oy) * out_w;
          if (oy < ry.lo || oy >= ry.hi) {
            std::fill(row, row + out_w, T(0));
            continue;
          }
          const T* line = src + static_cast<std::size_t>(oy * s.stride - s.pad + ky) * x.width() - s.pad + kx;
          std::fill(row, row + rx.lo, T(0));
          if (s.stride == 1) {
            std::copy(line + rx.lo, line + rx.hi, row + rx.lo);
          } else {
            for (int ox = rx.lo; ox < rx.hi; ++ox) row[ox] = line[ox * s.stride];
          }
          std::fill(row + rx.hi, row + out_w, T(0));
        }
      }
    }
  }
}

template <typename T>
void col2im(const RowMatrix<T>& cols, const ConvShape& s, int out_h, int out_w, Tensor3<T>& dx) {
  const int k = s.kernel;
  for (int c = 0; c < s.in_channels; ++c) {
    T* dst = dx.data() + static_cast<std::size_t>(c) * dx.plane();
    for (int ky = 0; ky < k; ++ky) {
      const ValidRange ry = valid_range(out_h, dx.height(), s.stride, s.pad, ky);
      for (int kx = 0; kx < k; ++kx) {
        const ValidRange rx = valid_range(out_w, dx.width(), s.stride, s.pad, kx);
        const T* src = cols.data() + ((static_cast<std::size_t>(c) * k + ky) * k + kx) * cols.cols();
        for (int oy = ry.lo; oy < ry.hi; ++oy) {
          const T* row = src + static_cast<std::size_t>(oy) * out_w;
          T* line = dst + static_cast<std::size_t>(oy * s.stride - s.pad + ky) * dx.width() - s.pad + kx;
          for (int ox = rx.lo; ox < rx.hi; ++ox) line[ox * s.stride] += row[ox];
        }
      }
    }
  }
}

bool is_pointwise(const ConvShape& s) { return s.kernel == 1 && s.stride == 1 && s.pad == 0; }


}  // namespace

template <typename T>
Tensor3<T> conv_block_forward(const ConvBlockParams<T>& p, const Tensor3<T>& x, ConvBlockCache<T>* cache) {
  const ConvShape& s = p.shape;
  if (x.channels() != s.in_channels) {
    std::ostringstream msg;
    msg << "conv block expects " << s.in_channels << " input channels, got " << x.channels();
    throw std::invalid_argument(msg.str());
  }
  if (x.height() + 2 * s.pad < s.kernel || x.width() + 2 * s.pad < s.kernel) {
    throw std::invalid_argument("conv block input " + x.shape_string() + " is smaller than the kernel");
  }
  const int out_h = conv_output_size(x.height(), s.kernel, s.stride, s.pad);
  const int out_w = conv_output_size(x.width(), s.kernel, s.stride, s.pad);
  const Eigen::Index plane = static_cast<Eigen::Index>(out_h) * out_w;

  ConvBlockCache<T> local;
  ConvBlockCache<T>& c = cache ? *cache : local;
  c.in_h = x.height();
  c.in_w = x.width();

  Tensor3<T> y(s.out_channels, out_h, out_w);
  MatrixMap<T> out = as_matrix(y);
  const auto w = as_matrix(p.weight);
  if (is_pointwise(s)) {
    c.columns = as_matrix(x);
  } else {
    im2col(x, s, out_h, out_w, c.columns);
  }
  out.noalias() = w * c.columns;
  if (!s.normalize) out.colwise() += as_vector(p.bias);

  if (s.normalize) {
    c.xhat.resize(s.out_channels, plane);
    c.inv_std.assign(static_cast<std::size_t>(s.out_channels), T(0));
    for (int ch = 0; ch < s.out_channels; ++ch) {
      auto row = out.row(ch);
      const T mean = row.mean();
      const T var = (row.array() - mean).square().mean();
      const T inv = T(1) / std::sqrt(var + static_cast<T>(kNormEpsilon));
      c.inv_std[static_cast<std::size_t>(ch)] = inv;
      c.xhat.row(ch) = (row.array() - mean) * inv;
      row = c.xhat.row(ch).array() * p.gamma.data[static_cast<std::size_t>(ch)] +
            p.beta.data[static_cast<std::size_t>(ch)];
    }
  }
  if (s.activate) {
    c.pre_act = out;
    out.array() = c.pre_act.array() / (T(1) + (-c.pre_act.array()).exp());
  } else {
    c.pre_act.resize(0, 0);
  }
  return y;
}

template <typename T>
Tensor3<T> conv_block_backward(const ConvBlockParams<T>& p, const ConvBlockCache<T>& cache,
                               const Tensor3<T>& grad_out, ConvBlockParams<T>& grads, bool want_input_grad) {
  const ConvShape& s = p.shape;
  const int out_h = conv_output_size(cache.in_h, s.kernel, s.stride, s.pad);
  const int out_w = conv_output_size(cache.in_w, s.kernel, s.stride, s.pad);
  if (grad_out.channels() != s.out_channels || grad_out.height() != out_h || grad_out.width() != out_w ||
      cache.columns.cols() != static_cast<Eigen::Index>(out_h) * out_w) {
    throw std::invalid_argument("conv block backward: gradient " + grad_out.shape_string() +
                                " does not match the cached forward pass");
  }
  RowMatrix<T> dz = as_matrix(grad_out);
  if (s.activate) {
    const auto a = cache.pre_act.array();
    const RowMatrix<T> sg = (T(1) + (-a).exp()).inverse().matrix();
    dz.array() *= sg.array() * (T(1) + a * (T(1) - sg.array()));
  }
  if (s.normalize) {
    const T n = static_cast<T>(dz.cols());
    for (int ch = 0; ch < s.out_channels; ++ch) {
      const auto idx = static_cast<std::size_t>(ch);
      auto row = dz.row(ch);
      const auto xh = cache.xhat.row(ch);
      grads.gamma.data[idx] += (row.array() * xh.array()).sum();
      grads.beta.data[idx] += row.sum();
      const T g = p.gamma.data[idx];
      const T sum_d = row.sum() * g;
      const T sum_dx = (row.array() * xh.array()).sum() * g;
      row = (cache.inv_std[idx] / n) * (n * g * row.array() - sum_d - xh.array() * sum_dx);
    }
  }
  as_matrix(grads.weight).noalias() += dz * cache.columns.transpose();
  if (!s.normalize) as_vector(grads.bias) += dz.rowwise().sum();

  if (!want_input_grad) return {};
  Tensor3<T> dx(s.in_channels, cache.in_h, cache.in_w);
  if (is_pointwise(s)) {
    as_matrix(dx).noalias() = as_matrix(p.weight).transpose() * dz;
  } else {
    RowMatrix<T> dcols = as_matrix(p.weight).transpose() * dz;
    col2im(dcols, s, out_h, out_w, dx);
  }
  return dx;
}

template struct ConvBlockParams<float>;
template struct ConvBlockParams<double>;
template Tensor3<float> conv_block_forward(const ConvBlockParams<float>&, const Tensor3<float>&,
                                           ConvBlockCache<float>*);
template Tensor3<double> conv_block_forward(const ConvBlockParams<double>&, const Tensor3<double>&,
                                            ConvBlockCache<double>*);
template Tensor3<float> conv_block_backward(const ConvBlockParams<float>&, const ConvBlockCache<float>&,
                                            const Tensor3<float>&, ConvBlockParams<float>&, bool);
template Tensor3<double> conv_block_backward(const ConvBlockParams<double>&, const ConvBlockCache<double>&,
                                             const Tensor3<double>&, ConvBlockParams<double>&, bool);

}  // namespace alff
