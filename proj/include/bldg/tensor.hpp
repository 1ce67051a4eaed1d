#pragma once

#include <cstdint>
#include <numeric>
#include <vector>

#include "bldg/common.hpp"

namespace bldg {

// Dense row-major tensor; just a shape plus a flat buffer.
template <typename T>
struct Tensor {
    std::vector<int> shape;
    std::vector<T> data;

    Tensor() = default;
    explicit Tensor(std::vector<int> s) : shape(std::move(s)) {
        data.assign(numel_of(shape), T(0));
    }

    static std::size_t numel_of(const std::vector<int>& s) {
        std::size_t n = 1;
        for (int d : s) {
            require(d >= 0, "tensor dims must be >= 0");
            n *= static_cast<std::size_t>(d);
        }
        return n;
    }

    std::size_t numel() const { return data.size(); }
    T* ptr() { return data.data(); }
    const T* ptr() const { return data.data(); }
    T& operator[](std::size_t i) { return data[i]; }
    const T& operator[](std::size_t i) const { return data[i]; }

    void zero() { std::fill(data.begin(), data.end(), T(0)); }

    void check_consistent() const {
        require(numel_of(shape) == data.size(), "tensor shape/buffer mismatch");
    }

    template <typename U>
    Tensor<U> cast() const {
        Tensor<U> out(shape);
        for (std::size_t i = 0; i < data.size(); ++i) out.data[i] = static_cast<U>(data[i]);
        return out;
    }
};

}  // namespace bldg
