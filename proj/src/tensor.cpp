#include "otl/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>

#include <fmt/format.h>
#include <fmt/ranges.h>

#include "otl/errors.hpp"

namespace otl {

std::size_t shape_size(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_to_string(const Shape& shape) { return fmt::format("[{}]", fmt::join(shape, "x")); }

namespace {

void check_shape(const Shape& shape) {
    if (shape.empty()) throw ShapeError("tensor shape must have at least one dimension");
    for (std::size_t i = 1; i < shape.size(); ++i) {
        if (shape[i] == 0) throw ShapeError("tensor dimensions must be positive: " + shape_to_string(shape));
    }
}

}  // namespace

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)) {
    check_shape(shape_);
    data_.assign(shape_size(shape_), fill);
}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
    check_shape(shape_);
    if (shape_size(shape_) != data_.size()) {
        throw ShapeError(fmt::format("shape {} holds {} values but {} were given", shape_to_string(shape_),
                                     shape_size(shape_), data_.size()));
    }
}

Tensor Tensor::reshaped(Shape shape) const {
    if (shape_size(shape) != data_.size()) {
        throw ShapeError(fmt::format("cannot reshape {} to {}", shape_to_string(shape_), shape_to_string(shape)));
    }
    return Tensor(std::move(shape), data_);
}

Tensor Tensor::slice_rows(std::size_t begin, std::size_t end) const {
    if (begin > end || end > shape_.at(0)) throw ShapeError("row slice out of range");
    Shape shape = shape_;
    shape[0] = end - begin;
    const std::size_t stride = shape_size(Shape(shape_.begin() + 1, shape_.end()));
    return Tensor(std::move(shape), std::vector<double>(data_.begin() + static_cast<std::ptrdiff_t>(begin * stride),
                                                        data_.begin() + static_cast<std::ptrdiff_t>(end * stride)));
}

void Tensor::fill(double value) { std::fill(data_.begin(), data_.end(), value); }

bool Tensor::all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

Tensor stack(std::span<const Tensor> items) {
    if (items.empty()) throw ShapeError("cannot stack an empty list without a shape");
    const Shape& inner = items.front().shape();
    Shape shape{items.size()};
    shape.insert(shape.end(), inner.begin(), inner.end());
    std::vector<double> data;
    data.reserve(shape_size(shape));
    for (const Tensor& t : items) {
        if (t.shape() != inner) {
            throw ShapeError(fmt::format("stack: shape {} differs from {}", shape_to_string(t.shape()),
                                         shape_to_string(inner)));
        }
        data.insert(data.end(), t.data().begin(), t.data().end());
    }
    return Tensor(std::move(shape), std::move(data));
}

}  // namespace otl
