#pragma once

#include <optional>
#include <stdexcept>

namespace fedscope {

// Axis-aligned box in pixel coordinates. Ground-truth boxes carry no
// confidence; detections do. Construction rejects non-positive area.
struct BoundingBox {
    int class_id = 0;
    double x_min = 0, y_min = 0, x_max = 0, y_max = 0;
    std::optional<double> confidence;

    BoundingBox() = default;
    BoundingBox(int cls, double x0, double y0, double x1, double y1,
                std::optional<double> conf = std::nullopt)
        : class_id(cls), x_min(x0), y_min(y0), x_max(x1), y_max(y1), confidence(conf) {
        if (!(x_max > x_min) || !(y_max > y_min))
            throw std::invalid_argument("bounding-box: non-positive area");
        if (cls < 0) throw std::invalid_argument("bounding-box: negative class id");
        if (conf && (*conf < 0.0 || *conf > 1.0))
            throw std::invalid_argument("bounding-box: confidence outside [0,1]");
    }

    double width() const { return x_max - x_min; }
    double height() const { return y_max - y_min; }
    double area() const { return width() * height(); }
};

double iou(const BoundingBox& a, const BoundingBox& b);

enum class SizeBucket { small, medium, large };

// COCO area buckets: small < 32*32, medium < 96*96, large otherwise.
SizeBucket size_bucket(const BoundingBox& b);

}  // namespace fedscope
