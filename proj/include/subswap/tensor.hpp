#pragma once

#include <array>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "subswap/error.hpp"

namespace subswap {

using Index = Eigen::Index;
using Shape = std::vector<Index>;

std::string shape_string(const Shape& shape);

/// Dense row-major N-d array (rank 1-5) backed by a contiguous Eigen array.
/// The last dimension varies fastest, so (frame, channel, y, x) blocks keep
/// each frame contiguous.
template <typename Scalar>
class Tensor {
 public:
  using Storage = Eigen::Array<Scalar, Eigen::Dynamic, 1>;
  using value_type = Scalar;

  Tensor() = default;

  explicit Tensor(Shape shape, Scalar fill = Scalar(0)) : shape_(std::move(shape)) {
    require(!shape_.empty() && shape_.size() <= 5, ErrorCode::kShape,
            "tensor rank must be in [1,5]", shape_string(shape_));
    for (Index d : shape_) {
      require(d >= 0, ErrorCode::kShape, "negative tensor dimension", shape_string(shape_));
    }
    compute_strides();
    data_ = Storage::Constant(element_count(shape_), fill);
  }

  Tensor(Shape shape, Storage data) : shape_(std::move(shape)), data_(std::move(data)) {
    compute_strides();
    require(data_.size() == element_count(shape_), ErrorCode::kShape,
            "payload size does not match shape", shape_string(shape_));
  }

  static Index element_count(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), Index{1}, std::multiplies<>());
  }

  const Shape& shape() const noexcept { return shape_; }
  Index rank() const noexcept { return static_cast<Index>(shape_.size()); }
  Index dim(Index i) const { return shape_.at(static_cast<std::size_t>(i)); }
  Index size() const noexcept { return data_.size(); }
  Index stride(Index i) const { return strides_[static_cast<std::size_t>(i)]; }

  Scalar* data() noexcept { return data_.data(); }
  const Scalar* data() const noexcept { return data_.data(); }
  Storage& array() noexcept { return data_; }
  const Storage& array() const noexcept { return data_; }

  template <typename... Idx>
  Scalar& operator()(Idx... idx) {
    return data_[offset(idx...)];
  }
  template <typename... Idx>
  const Scalar& operator()(Idx... idx) const {
    return data_[offset(idx...)];
  }

  template <typename... Idx>
  Index offset(Idx... idx) const {
    static_assert(sizeof...(Idx) >= 1 && sizeof...(Idx) <= 5);
    const std::array<Index, sizeof...(Idx)> ix{static_cast<Index>(idx)...};
    Index off = 0;
    for (std::size_t i = 0; i < ix.size(); ++i) off += ix[i] * strides_[i];
    return off;
  }

  /// Contiguous view of the sub-tensor at leading index `i`.
  Eigen::Map<Storage> slab(Index i) {
    const Index n = strides_[0];
    return Eigen::Map<Storage>(data_.data() + i * n, n);
  }
  Eigen::Map<const Storage> slab(Index i) const {
    const Index n = strides_[0];
    return Eigen::Map<const Storage>(data_.data() + i * n, n);
  }

  template <typename Other>
  Tensor<Other> cast() const {
    return Tensor<Other>(shape_, data_.template cast<Other>().eval());
  }

  bool same_shape(const Shape& other) const { return shape_ == other; }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && (a.data_ == b.data_).all();
  }

 private:
  void compute_strides() {
    strides_.fill(0);
    Index s = 1;
    for (Index i = static_cast<Index>(shape_.size()) - 1; i >= 0; --i) {
      strides_[static_cast<std::size_t>(i)] = s;
      s *= shape_[static_cast<std::size_t>(i)];
    }
  }

  Shape shape_;
  std::array<Index, 5> strides_{};
  Storage data_;
};

/// Copy of frames [begin, end) along the leading axis.
template <typename Scalar>
Tensor<Scalar> slice_leading(const Tensor<Scalar>& t, Index begin, Index end) {
  require(0 <= begin && begin <= end && end <= t.dim(0), ErrorCode::kOutOfRange,
          "leading slice out of range", shape_string(t.shape()));
  Shape shape = t.shape();
  shape[0] = end - begin;
  const Index n = t.stride(0);
  typename Tensor<Scalar>::Storage data = t.array().segment(begin * n, (end - begin) * n);
  return Tensor<Scalar>(std::move(shape), std::move(data));
}

/// Concatenation along the leading axis; trailing dims must match.
template <typename Scalar>
Tensor<Scalar> concat_leading(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  require(a.rank() == b.rank(), ErrorCode::kShape, "rank mismatch in concat");
  for (Index i = 1; i < a.rank(); ++i) {
    require(a.dim(i) == b.dim(i), ErrorCode::kShape, "trailing dims differ in concat",
            shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  }
  Shape shape = a.shape();
  shape[0] += b.dim(0);
  typename Tensor<Scalar>::Storage data(a.size() + b.size());
  data << a.array(), b.array();
  return Tensor<Scalar>(std::move(shape), std::move(data));
}

}  // namespace subswap
