#pragma once

#include <cstdint>
#include <vector>

namespace fedscope {

// Minimal dense row-major tensor of doubles.
struct Tensor {
    std::vector<int> shape;
    std::vector<double> v;

    Tensor() = default;
    explicit Tensor(std::vector<int> s) : shape(std::move(s)) {
        int n = 1;
        for (int d : shape) n *= d;
        v.assign(static_cast<size_t>(n), 0.0);
    }

    int numel() const { return static_cast<int>(v.size()); }

    // reshape in place, reusing storage when the element count already matches
    void ensure(const std::vector<int>& s) {
        if (shape == s) return;
        shape = s;
        size_t n = 1;
        for (int d : s) n *= static_cast<size_t>(d);
        v.resize(n);
    }
    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    double* data() { return v.data(); }
    const double* data() const { return v.data(); }
};

}  // namespace fedscope
