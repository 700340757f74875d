#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <span>
#include <vector>

#include "ammsm/common.hpp"

namespace ammsm {

// Dense row-major N-d array with shared storage. Value semantics: copies are
// cheap (shared buffer) and ops never mutate their inputs, so aliasing is
// safe. The node/epoch pair ties a tensor to the tape that is tracking it;
// a tensor whose epoch differs from the active tape is untracked there.
template <typename S>
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Shape shape, S fill = S(0))
      : shape_(std::move(shape)),
        data_(std::make_shared<std::vector<S>>(static_cast<std::size_t>(numel_of(shape_)), fill)) {
    for (Index d : shape_) require(d > 0, "Tensor: dimension sizes must be positive, got " + shape_str(shape_));
  }

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape), S(0)); }
  static Tensor full(Shape shape, S v) { return Tensor(std::move(shape), v); }
  static Tensor scalar(S v) {
    Tensor t{Shape{}};
    t.data()[0] = v;
    return t;
  }

  static Tensor from_vector(Shape shape, std::vector<S> values) {
    Tensor t;
    t.shape_ = std::move(shape);
    require(numel_of(t.shape_) == static_cast<Index>(values.size()),
            "Tensor: shape " + shape_str(t.shape_) + " does not match " + std::to_string(values.size()) + " values");
    t.data_ = std::make_shared<std::vector<S>>(std::move(values));
    return t;
  }

  const Shape& shape() const { return shape_; }
  Index rank() const { return static_cast<Index>(shape_.size()); }
  Index dim(Index i) const { return shape_[static_cast<std::size_t>(i)]; }
  Index numel() const { return data_ ? static_cast<Index>(data_->size()) : 0; }
  bool defined() const { return static_cast<bool>(data_); }

  std::span<S> data() { return {data_->data(), data_->size()}; }
  std::span<const S> data() const { return {data_->data(), data_->size()}; }
  const std::shared_ptr<std::vector<S>>& storage() const { return data_; }

  S value() const {
    require(numel() == 1, "Tensor::value: tensor is not scalar, shape " + shape_str(shape_));
    return (*data_)[0];
  }

  S operator[](Index flat) const { return (*data_)[static_cast<std::size_t>(flat)]; }
  S& operator[](Index flat) { return (*data_)[static_cast<std::size_t>(flat)]; }

  Tensor clone() const {
    Tensor t;
    t.shape_ = shape_;
    t.data_ = std::make_shared<std::vector<S>>(*data_);
    return t;
  }

  // Same storage, new shape. The tape treats the result as a fresh value.
  Tensor with_shape(Shape shape) const {
    require(numel_of(shape) == numel(),
            "Tensor::with_shape: cannot view " + shape_str(shape_) + " as " + shape_str(shape));
    Tensor t;
    t.shape_ = std::move(shape);
    t.data_ = data_;
    return t;
  }

  bool all_finite() const {
    for (S v : *data_)
      if (!std::isfinite(static_cast<double>(v))) return false;
    return true;
  }

  // autodiff bookkeeping, managed by GradTape
  std::int64_t node = -1;
  std::uint64_t tape_epoch = 0;

 private:
  Shape shape_;
  std::shared_ptr<std::vector<S>> data_;
};

template <typename S>
Index row_count(const Tensor<S>& t) {
  return t.numel() / t.shape().back();
}

template <typename To, typename From>
Tensor<To> cast(const Tensor<From>& t) {
  Tensor<To> out(t.shape());
  const auto src = t.data();
  auto dst = out.data();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<To>(src[i]);
  return out;
}

}  // namespace ammsm
