// Copyright 2026 The MSKD Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "mskd/error.hpp"

namespace mskd {

using Shape = std::vector<std::size_t>;

std::string shape_string(const Shape& shape);

/// Dense row-major array. Rank is free; the helpers below cover the
/// C×H×W and B×C×H×W layouts used throughout.
template <typename T>
class Tensor {
public:
    using value_type = T;

    Tensor() = default;
    explicit Tensor(Shape shape, T fill = T{})
        : shape_(std::move(shape)), data_(element_count(shape_), fill) {}
    Tensor(Shape shape, std::vector<T> values) : shape_(std::move(shape)), data_(std::move(values)) {
        if (data_.size() != element_count(shape_))
            throw ShapeError("tensor payload has " + std::to_string(data_.size()) + " values for shape " +
                             shape_string(shape_));
    }

    const Shape& shape() const noexcept { return shape_; }
    std::size_t rank() const noexcept { return shape_.size(); }
    std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    std::span<T> values() noexcept { return data_; }
    std::span<const T> values() const noexcept { return data_; }
    T* data() noexcept { return data_.data(); }
    const T* data() const noexcept { return data_.data(); }

    T& operator[](std::size_t i) noexcept { return data_[i]; }
    const T& operator[](std::size_t i) const noexcept { return data_[i]; }

    T& operator()(std::size_t y, std::size_t x) noexcept { return data_[y * shape_[1] + x]; }
    const T& operator()(std::size_t y, std::size_t x) const noexcept { return data_[y * shape_[1] + x]; }
    T& operator()(std::size_t c, std::size_t y, std::size_t x) noexcept {
        return data_[(c * shape_[1] + y) * shape_[2] + x];
    }
    const T& operator()(std::size_t c, std::size_t y, std::size_t x) const noexcept {
        return data_[(c * shape_[1] + y) * shape_[2] + x];
    }

    void fill(T value) { std::fill(data_.begin(), data_.end(), value); }

    /// Reinterpret with a new shape of the same element count.
    Tensor reshaped(Shape shape) const {
        if (element_count(shape) != data_.size())
            throw ShapeError("cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
        return Tensor(std::move(shape), data_);
    }

    friend bool operator==(const Tensor& a, const Tensor& b) = default;

    static std::size_t element_count(const Shape& shape) {
        return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
    }

private:
    Shape shape_;
    std::vector<T> data_;
};

using Mask = Tensor<std::uint8_t>;
using LabelMap = Tensor<std::uint8_t>;

/// Copy item `index` of a B×... tensor into a tensor of the trailing shape.
template <typename T>
Tensor<T> batch_item(const Tensor<T>& batch, std::size_t index) {
    Shape inner(batch.shape().begin() + 1, batch.shape().end());
    const std::size_t n = Tensor<T>::element_count(inner);
    std::vector<T> values(batch.data() + index * n, batch.data() + (index + 1) * n);
    return Tensor<T>(std::move(inner), std::move(values));
}

/// Stack equally shaped tensors along a new leading axis.
template <typename T>
Tensor<T> stack(std::span<const Tensor<T>> items) {
    if (items.empty()) throw InvalidInputError("cannot stack an empty list of tensors");
    Shape shape{items.size()};
    shape.insert(shape.end(), items.front().shape().begin(), items.front().shape().end());
    Tensor<T> out(shape);
    const std::size_t n = items.front().size();
    for (std::size_t i = 0; i < items.size(); ++i) {
        if (items[i].shape() != items.front().shape())
            throw ShapeError("stack: item " + std::to_string(i) + " has shape " + shape_string(items[i].shape()) +
                             ", expected " + shape_string(items.front().shape()));
        std::copy(items[i].values().begin(), items[i].values().end(), out.data() + i * n);
    }
    return out;
}

template <typename To, typename From>
Tensor<To> tensor_cast(const Tensor<From>& in) {
    Tensor<To> out(in.shape());
    for (std::size_t i = 0; i < in.size(); ++i) out[i] = static_cast<To>(in[i]);
    return out;
}

inline void require_shape(const Shape& got, const Shape& expected, const char* what) {
    if (got != expected)
        throw ShapeError(std::string(what) + ": shape " + shape_string(got) + " does not match " +
                         shape_string(expected));
}

} // namespace mskd
