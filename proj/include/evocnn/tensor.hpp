#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <string>
#include <vector>

#include "evocnn/errors.hpp"

namespace evocnn {

// Dense row-major numeric array. The substrate of all layer math.
template <typename T>
class TensorT {
public:
    TensorT() = default;

    explicit TensorT(std::vector<int> shape) : shape_(std::move(shape)) {
        data_.assign(checked_numel(shape_), T{0});
    }

    TensorT(std::vector<int> shape, std::vector<T> data)
        : shape_(std::move(shape)), data_(std::move(data)) {
        if (checked_numel(shape_) != data_.size()) {
            throw StructuralError("tensor data length does not match shape");
        }
    }

    const std::vector<int>& shape() const { return shape_; }
    int rank() const { return static_cast<int>(shape_.size()); }
    int dim(int i) const { return shape_[static_cast<size_t>(i)]; }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    T* data() { return data_.data(); }
    const T* data() const { return data_.data(); }

    T& operator[](std::size_t i) { return data_[i]; }
    const T& operator[](std::size_t i) const { return data_[i]; }

    // Row-major accessors for the ranks the engine uses.
    T& at(int a, int b) { return data_[idx2(a, b)]; }
    const T& at(int a, int b) const { return data_[idx2(a, b)]; }
    T& at(int a, int b, int c) { return data_[idx3(a, b, c)]; }
    const T& at(int a, int b, int c) const { return data_[idx3(a, b, c)]; }
    T& at(int a, int b, int c, int d) { return data_[idx4(a, b, c, d)]; }
    const T& at(int a, int b, int c, int d) const { return data_[idx4(a, b, c, d)]; }

    std::size_t idx2(int a, int b) const {
        return static_cast<std::size_t>(a) * static_cast<std::size_t>(shape_[1]) +
               static_cast<std::size_t>(b);
    }
    std::size_t idx3(int a, int b, int c) const {
        return (static_cast<std::size_t>(a) * static_cast<std::size_t>(shape_[1]) +
                static_cast<std::size_t>(b)) * static_cast<std::size_t>(shape_[2]) +
               static_cast<std::size_t>(c);
    }
    std::size_t idx4(int a, int b, int c, int d) const {
        return ((static_cast<std::size_t>(a) * static_cast<std::size_t>(shape_[1]) +
                 static_cast<std::size_t>(b)) * static_cast<std::size_t>(shape_[2]) +
                static_cast<std::size_t>(c)) * static_cast<std::size_t>(shape_[3]) +
               static_cast<std::size_t>(d);
    }

    void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

    bool all_finite() const {
        for (const T& v : data_) {
            if (!std::isfinite(static_cast<double>(v))) return false;
        }
        return true;
    }

    bool same_shape(const TensorT& other) const { return shape_ == other.shape_; }

    // Moves the storage out, leaving this tensor empty. Used to reshape
    // without copying (e.g. flatten), via TensorT(new_shape, take_data()).
    std::vector<T> take_data() {
        shape_.clear();
        return std::move(data_);
    }

    bool operator==(const TensorT& other) const {
        return shape_ == other.shape_ && data_ == other.data_;
    }

    static TensorT zeros_like(const TensorT& other) { return TensorT(other.shape_); }

private:
    static std::size_t checked_numel(const std::vector<int>& shape) {
        std::size_t n = 1;
        for (int d : shape) {
            if (d <= 0) throw StructuralError("tensor dimension must be positive");
            n *= static_cast<std::size_t>(d);
        }
        return shape.empty() ? 0 : n;
    }

    std::vector<int> shape_;
    std::vector<T> data_;
};

using Tensor = TensorT<float>;
using TensorD = TensorT<double>;

inline std::string shape_string(const std::vector<int>& shape) {
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) s += ",";
        s += std::to_string(shape[i]);
    }
    return s + "]";
}

} // namespace evocnn
