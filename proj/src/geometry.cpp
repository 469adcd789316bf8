#include "fedscope/geometry.hpp"

#include <algorithm>

namespace fedscope {

double iou(const BoundingBox& a, const BoundingBox& b) {
    double ix = std::max(0.0, std::min(a.x_max, b.x_max) - std::max(a.x_min, b.x_min));
    double iy = std::max(0.0, std::min(a.y_max, b.y_max) - std::max(a.y_min, b.y_min));
    double inter = ix * iy;
    double uni = a.area() + b.area() - inter;
    return uni > 0.0 ? inter / uni : 0.0;
}

SizeBucket size_bucket(const BoundingBox& b) {
    double area = b.area();
    if (area < 32.0 * 32.0) return SizeBucket::small;
    if (area < 96.0 * 96.0) return SizeBucket::medium;
    return SizeBucket::large;
}

}  // namespace fedscope
