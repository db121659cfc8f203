#pragma once

#include <algorithm>
#include <cstddef>
#include <numeric>
#include <string>
#include <vector>

#include "xghsi/error.hpp"

namespace xghsi {

using Shape = std::vector<std::size_t>;

std::string shape_string(const Shape& shape);

inline std::size_t shape_size(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                           [](std::size_t a, std::size_t b) { return a * b; });
}

/// Dense row-major array of reals. Rank 0 (scalar), 1 or 2 in practice.
template <typename T>
struct Tensor {
    Shape shape;
    std::vector<T> data;

    Tensor() = default;

    explicit Tensor(Shape s) : shape(std::move(s)), data(shape_size(shape), T{0}) {}

    Tensor(Shape s, std::vector<T> values) : shape(std::move(s)), data(std::move(values)) {
        if (shape_size(shape) != data.size()) {
            throw DimensionError("tensor of shape " + shape_string(shape) + " cannot hold " +
                                 std::to_string(data.size()) + " values");
        }
    }

    static Tensor zeros(Shape s) { return Tensor(std::move(s)); }

    static Tensor filled(Shape s, T value) {
        Tensor t(std::move(s));
        std::fill(t.data.begin(), t.data.end(), value);
        return t;
    }

    static Tensor scalar(T value) { return Tensor(Shape{}, std::vector<T>{value}); }

    std::size_t size() const { return data.size(); }
    std::size_t rank() const { return shape.size(); }

    /// Leading dimension; a scalar counts as one row.
    std::size_t rows() const { return shape.empty() ? 1 : shape[0]; }

    /// Product of the trailing dimensions (1 for rank 0 and 1).
    std::size_t cols() const {
        if (shape.size() < 2) {
            return 1;
        }
        std::size_t n = 1;
        for (std::size_t d = 1; d < shape.size(); ++d) {
            n *= shape[d];
        }
        return n;
    }

    T& operator()(std::size_t r, std::size_t c) { return data[r * cols() + c]; }
    const T& operator()(std::size_t r, std::size_t c) const { return data[r * cols() + c]; }

    T& operator[](std::size_t i) { return data[i]; }
    const T& operator[](std::size_t i) const { return data[i]; }

    template <typename U>
    Tensor<U> cast() const {
        Tensor<U> out(shape);
        for (std::size_t i = 0; i < data.size(); ++i) {
            out.data[i] = static_cast<U>(data[i]);
        }
        return out;
    }

    friend bool operator==(const Tensor&, const Tensor&) = default;
};

} // namespace xghsi
