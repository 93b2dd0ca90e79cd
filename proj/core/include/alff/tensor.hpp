#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace alff {

/// Storage aligned to Eigen's packet size. Vectorized reductions peel by
/// address, so unaligned buffers would make results depend on the allocator.
template <typename T>
using AlignedVector = std::vector<T, Eigen::aligned_allocator<T>>;

/// Dense channels x height x width grid, row-major within a channel.
template <typename T>
class Tensor3 {
 public:
  Tensor3() = default;
  Tensor3(int channels, int height, int width, T fill = T(0))
      : channels_(channels), height_(height), width_(width) {
    if (channels < 0 || height < 0 || width < 0) {
      throw std::invalid_argument("Tensor3: negative dimension");
    }
    data_.assign(static_cast<std::size_t>(channels) * height * width, fill);
  }

  int channels() const { return channels_; }
  int height() const { return height_; }
  int width() const { return width_; }
  int plane() const { return height_ * width_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T& at(int c, int y, int x) { return data_[index(c, y, x)]; }
  const T& at(int c, int y, int x) const { return data_[index(c, y, x)]; }
  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  AlignedVector<T>& values() { return data_; }
  const AlignedVector<T>& values() const { return data_; }

  std::span<T> channel(int c) {
    return {data_.data() + static_cast<std::size_t>(c) * plane(), static_cast<std::size_t>(plane())};
  }
  std::span<const T> channel(int c) const {
    return {data_.data() + static_cast<std::size_t>(c) * plane(), static_cast<std::size_t>(plane())};
  }

  bool same_shape(const Tensor3& other) const {
    return channels_ == other.channels_ && height_ == other.height_ && width_ == other.width_;
  }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  std::string shape_string() const {
    return std::to_string(channels_) + "x" + std::to_string(height_) + "x" + std::to_string(width_);
  }

  template <typename U>
  Tensor3<U> cast() const {
    Tensor3<U> out(channels_, height_, width_);
    for (std::size_t i = 0; i < data_.size(); ++i) out[i] = static_cast<U>(data_[i]);
    return out;
  }

  bool operator==(const Tensor3& other) const = default;

 private:
  std::size_t index(int c, int y, int x) const {
    return (static_cast<std::size_t>(c) * height_ + y) * width_ + x;
  }

  int channels_ = 0;
  int height_ = 0;
  int width_ = 0;
  AlignedVector<T> data_;
};

/// A learnable array with a fixed shape. Gradient buffers use the same type.
template <typename T>
struct ParamTensor {
  std::vector<int> shape;
  AlignedVector<T> data;

  ParamTensor() = default;
  explicit ParamTensor(std::vector<int> s, T fill = T(0)) : shape(std::move(s)) {
    std::size_t n = 1;
    for (int d : shape) n *= static_cast<std::size_t>(d);
    data.assign(n, fill);
  }

  std::size_t size() const { return data.size(); }
  void zero() { std::fill(data.begin(), data.end(), T(0)); }
  bool operator==(const ParamTensor& other) const = default;
};

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatrixMap = Eigen::Map<RowMatrix<T>>;
template <typename T>
using ConstMatrixMap = Eigen::Map<const RowMatrix<T>>;
template <typename T>
using VectorMap = Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>>;
template <typename T>
using ConstVectorMap = Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>>;

/// Views a tensor as a (channels x plane) matrix.
template <typename T>
MatrixMap<T> as_matrix(Tensor3<T>& t) {
  return MatrixMap<T>(t.data(), t.channels(), t.plane());
}
template <typename T>
ConstMatrixMap<T> as_matrix(const Tensor3<T>& t) {
  return ConstMatrixMap<T>(t.data(), t.channels(), t.plane());
}

/// Views a 2-D parameter as a matrix; higher-rank shapes fold trailing dims.
template <typename T>
MatrixMap<T> as_matrix(ParamTensor<T>& p) {
  const int rows = p.shape.empty() ? 1 : p.shape[0];
  const int cols = rows == 0 ? 0 : static_cast<int>(p.size() / static_cast<std::size_t>(rows));
  return MatrixMap<T>(p.data.data(), rows, cols);
}
template <typename T>
ConstMatrixMap<T> as_matrix(const ParamTensor<T>& p) {
  const int rows = p.shape.empty() ? 1 : p.shape[0];
  const int cols = rows == 0 ? 0 : static_cast<int>(p.size() / static_cast<std::size_t>(rows));
  return ConstMatrixMap<T>(p.data.data(), rows, cols);
}

template <typename T>
VectorMap<T> as_vector(ParamTensor<T>& p) {
  return VectorMap<T>(p.data.data(), static_cast<Eigen::Index>(p.size()));
}
template <typename T>
ConstVectorMap<T> as_vector(const ParamTensor<T>& p) {
  return ConstVectorMap<T>(p.data.data(), static_cast<Eigen::Index>(p.size()));
}

/// Callback used by parameter containers to enumerate their tensors in a fixed order.
template <typename T>
using ParamVisitor = std::function<void(const std::string& name, ParamTensor<T>& tensor)>;

/// Collects (name, tensor*) pairs from any container exposing visit().
template <typename T, typename Params>
std::vector<std::pair<std::string, ParamTensor<T>*>> collect_params(Params& params) {
  std::vector<std::pair<std::string, ParamTensor<T>*>> out;
  params.visit("", [&](const std::string& name, ParamTensor<T>& t) { out.emplace_back(name, &t); });
  return out;
}

/// Zeroes every tensor of a parameter container.
template <typename T, typename Params>
void zero_params(Params& params) {
  params.visit("", [](const std::string&, ParamTensor<T>& t) { t.zero(); });
}

inline std::string join_name(const std::string& prefix, const std::string& leaf) {
  return prefix.empty() ? leaf : prefix + "." + leaf;
}

}  // namespace alff
