#pragma once

#include <string>

#include "fedscope/detector.hpp"

namespace fedscope::detector {

// Versioned binary weights file with layer names, shapes, and row-major
// values; round-trips bit-exactly.
void save_weights(const std::string& path, const ModelParams& p);
ModelParams load_weights(const std::string& path);

}  // namespace fedscope::detector
