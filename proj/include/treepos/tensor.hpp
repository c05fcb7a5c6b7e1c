#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <vector>

namespace treepos {

// Dense row-major tensor of reals. `grad` is an optional same-shape
// accumulator: allocated for learnable parameters, empty everywhere else.
template <typename T>
struct Tensor {
    std::vector<int> shape;
    std::vector<T> data;
    std::vector<T> grad;

    Tensor() = default;

    explicit Tensor(std::vector<int> s) : shape(std::move(s)) {
        data.assign(numel_of(shape), T(0));
    }

    Tensor(std::vector<int> s, std::vector<T> values)
        : shape(std::move(s)), data(std::move(values)) {
        if (numel_of(shape) != data.size())
            throw std::invalid_argument("ShapeMismatch: data length does not match shape");
    }

    static std::size_t numel_of(const std::vector<int>& s) {
        std::size_t n = 1;
        for (int e : s) {
            if (e <= 0) throw std::invalid_argument("ShapeMismatch: extents must be positive");
            n *= std::size_t(e);
        }
        return n;
    }

    std::size_t numel() const { return data.size(); }
    int ndim() const { return int(shape.size()); }
    int dim(int i) const { return shape[std::size_t(i)]; }

    T& at(int i) { return data[std::size_t(i)]; }
    T at(int i) const { return data[std::size_t(i)]; }
    T& at(int i, int j) { return data[std::size_t(i) * std::size_t(shape[1]) + std::size_t(j)]; }
    T at(int i, int j) const { return data[std::size_t(i) * std::size_t(shape[1]) + std::size_t(j)]; }
    T& at(int i, int j, int k) {
        return data[(std::size_t(i) * std::size_t(shape[1]) + std::size_t(j)) * std::size_t(shape[2]) + std::size_t(k)];
    }
    T at(int i, int j, int k) const {
        return data[(std::size_t(i) * std::size_t(shape[1]) + std::size_t(j)) * std::size_t(shape[2]) + std::size_t(k)];
    }

    void alloc_grad() { grad.assign(data.size(), T(0)); }
    void zero_grad() { std::fill(grad.begin(), grad.end(), T(0)); }
    bool has_grad() const { return !grad.empty(); }

    void fill(T v) { std::fill(data.begin(), data.end(), v); }

    bool all_finite() const {
        for (T v : data)
            if (!std::isfinite(double(v))) return false;
        return true;
    }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }
};

}  // namespace treepos
