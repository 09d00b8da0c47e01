#pragma once

#include <cstdint>
#include <numeric>
#include <vector>

namespace sewgen {

// Dense row-major tensor. Just storage plus a shape; the model kernels index
// into raw pointers.
template <typename T>
struct Tensor {
    std::vector<int64_t> shape;
    std::vector<T> v;

    Tensor() = default;
    explicit Tensor(std::vector<int64_t> s) : shape(std::move(s)) {
        v.assign(static_cast<size_t>(count(shape)), T(0));
    }

    static int64_t count(const std::vector<int64_t>& s) {
        int64_t n = 1;
        for (int64_t d : s) n *= d;
        return n;
    }

    int64_t size() const { return static_cast<int64_t>(v.size()); }
    int64_t dim(int i) const { return shape[static_cast<size_t>(i)]; }
    T* data() { return v.data(); }
    const T* data() const { return v.data(); }
    void zero() { std::fill(v.begin(), v.end(), T(0)); }
};

} // namespace sewgen
