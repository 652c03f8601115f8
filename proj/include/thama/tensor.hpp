// Dense row-major tensor carrying shape metadata. Training and inference run
// on TensorT<float>; gradient verification instantiates the same code with
// TensorT<double>.
#pragma once

#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "thama/error.hpp"

namespace thama {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& shape) {
    std::size_t n = 1;
    for (std::size_t e : shape) n *= e;
    return n;
}

inline std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
    os << "]";
    return os.str();
}

template <typename S>
class TensorT {
public:
    TensorT() = default;

    explicit TensorT(Shape shape)
        : shape_(std::move(shape)), data_(shape_numel(shape_), S(0)) {
        check_shape();
    }

    TensorT(Shape shape, std::vector<S> data)
        : shape_(std::move(shape)), data_(std::move(data)) {
        check_shape();
        if (data_.size() != shape_numel(shape_)) {
            throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                             " does not match shape " + shape_str(shape_));
        }
    }

    static TensorT scalar(S v) { return TensorT({1}, {v}); }

    static TensorT vec(std::vector<S> values) {
        Shape s{values.size()};
        return TensorT(std::move(s), std::move(values));
    }

    const Shape& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t numel() const { return data_.size(); }
    std::size_t extent(std::size_t axis) const { return shape_[axis]; }

    S* data() { return data_.data(); }
    const S* data() const { return data_.data(); }
    std::span<S> values() { return data_; }
    std::span<const S> values() const { return data_; }

    S& operator[](std::size_t i) { return data_[i]; }
    const S& operator[](std::size_t i) const { return data_[i]; }

    S& at(std::size_t i, std::size_t j) { return data_[i * shape_[1] + j]; }
    const S& at(std::size_t i, std::size_t j) const { return data_[i * shape_[1] + j]; }
    S& at(std::size_t i, std::size_t j, std::size_t k) {
        return data_[(i * shape_[1] + j) * shape_[2] + k];
    }
    const S& at(std::size_t i, std::size_t j, std::size_t k) const {
        return data_[(i * shape_[1] + j) * shape_[2] + k];
    }

    bool same_shape(const TensorT& other) const { return shape_ == other.shape_; }

    void fill(S v) { std::fill(data_.begin(), data_.end(), v); }

private:
    void check_shape() const {
        for (std::size_t e : shape_) {
            if (e == 0) throw ShapeError("zero extent in shape " + shape_str(shape_));
        }
    }

    Shape shape_;
    std::vector<S> data_;
};

using Tensor = TensorT<float>;
using Tensor64 = TensorT<double>;

template <typename To, typename From>
TensorT<To> tensor_cast(const TensorT<From>& t) {
    std::vector<To> out(t.numel());
    for (std::size_t i = 0; i < t.numel(); ++i) out[i] = static_cast<To>(t[i]);
    return TensorT<To>(t.shape(), std::move(out));
}

} // namespace thama
