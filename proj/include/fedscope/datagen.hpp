#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "fedscope/sample.hpp"

namespace fedscope::datagen {

inline constexpr int kNumClasses = 5;

// Display names for class ids 0..4 (disc, striped bar, dot pair,
// pin-header board, ring).
const std::array<std::string, kNumClasses>& class_names();

// Rendering recipe for one data regime. Texture ids partition into three
// disjoint families: 0-3 (textured/noisy, the "real" captures), 4-7 (flat
// crisp, the "synthetic" renders), 8-12 (cluttered/shifted, the unseen
// environment).
struct DomainSpec {
    Domain domain = Domain::real;
    std::vector<int> textures;
    double brightness_min = 0.0, brightness_max = 0.0;
    double noise_sigma = 0.0;
    int blur_radius = 0;      // box-blur radius applied with blur_prob
    double blur_prob = 0.0;
    int min_objects = 1, max_objects = 8;
    int min_clutter = 0, max_clutter = 12;
    double grill_prob = 0.0;  // perforated-grid distractor probability
    std::array<double, 5> class_weights = {1, 1, 1, 1, 1};
    int image_size = 64;
};

DomainSpec real_domain();
DomainSpec synthetic_domain();
DomainSpec unseen_domain();

// Renders one scene: background texture, clutter shapes, class glyphs with
// exact boxes, then brightness shift, optional blur, Gaussian noise, and
// quantization to 1/255 steps (so the on-disk image round-trips exactly).
// When class_plan is given it fixes both object count and classes.
SceneSample render_scene(const DomainSpec& spec, uint64_t seed,
                         const std::vector<int>* class_plan = nullptr);

// n scenes with per-sample derived seeds. With class_balance, per-class
// instance totals differ by at most one (assignment plan is cyclic).
Dataset generate_dataset(const DomainSpec& spec, int n, bool class_balance, uint64_t seed);

// The unseen-environment test set: 100 annotated scenes (8-14 objects each)
// on texture families disjoint from training, plus 16 background-only
// probes of which several contain the perforated-grid distractor.
Dataset make_unseen_testset(uint64_t seed);

uint64_t sample_hash(const SceneSample& s);
uint64_t dataset_hash(const Dataset& ds);

// Dataset directory: images/*.ppm, labels/*.txt (YOLO-normalized
// "class cx cy w h"), manifest.json with per-sample hashes and, when given,
// the generating DomainSpec.
void save_dataset(const std::string& dir, const Dataset& ds, const DomainSpec* spec = nullptr);
Dataset load_dataset(const std::string& dir);

}  // namespace fedscope::datagen
