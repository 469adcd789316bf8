#pragma once

#include <vector>

#include "fedscope/geometry.hpp"
#include "fedscope/image.hpp"

namespace fedscope {

enum class Domain { real, synthetic, unseen };

const char* domain_name(Domain d);

struct SceneSample {
    ImageGrid image;
    std::vector<BoundingBox> boxes;  // ground truth, no confidence
    Domain domain = Domain::real;
    bool background_only = false;
};

using Dataset = std::vector<SceneSample>;

}  // namespace fedscope
