#pragma once

#include <stdexcept>
#include <vector>

namespace fedscope {

// H x W x 3 pixel grid, values in [0,1], stored channel-major (CHW).
// Pixels are stored as float; the detector promotes to double on entry.
struct ImageGrid {
    int height = 0;
    int width = 0;
    static constexpr int channels = 3;
    std::vector<float> data;

    ImageGrid() = default;
    ImageGrid(int h, int w, float fill = 0.0f)
        : height(h), width(w), data(static_cast<size_t>(channels) * h * w, fill) {
        if (h <= 0 || w <= 0) throw std::invalid_argument("image: non-positive dimensions");
    }

    float& at(int c, int y, int x) { return data[(static_cast<size_t>(c) * height + y) * width + x]; }
    float at(int c, int y, int x) const {
        return data[(static_cast<size_t>(c) * height + y) * width + x];
    }
};

}  // namespace fedscope
