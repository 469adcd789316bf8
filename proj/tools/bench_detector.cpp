// Micro-benchmark for the forward/backward path on a 64x64 frame.
#include <chrono>
#include <cstdio>
#include <random>

#include "fedscope/detector.hpp"
#include "fedscope/rng.hpp"

using namespace fedscope;
using namespace fedscope::detector;

int main() {
    auto params = init_params(7, 5);
    ImageGrid img(64, 64);
    auto rng = make_rng(11);
    std::uniform_real_distribution<float> d(0.0f, 1.0f);
    for (auto& x : img.data) x = d(rng);

    std::vector<BoundingBox> gts;
    gts.emplace_back(1, 10.0, 12.0, 22.0, 25.0);
    gts.emplace_back(3, 40.0, 40.0, 55.0, 52.0);

    LossParams lp;
    Gradients g = zero_like(params);

    // warmup
    for (int i = 0; i < 5; ++i) backward(params, img, gts, lp, g);

    const int iters = 200;
    auto t0 = std::chrono::steady_clock::now();
    double acc = 0;
    for (int i = 0; i < iters; ++i) acc += backward(params, img, gts, lp, g);
    auto t1 = std::chrono::steady_clock::now();
    double us = std::chrono::duration<double, std::micro>(t1 - t0).count() / iters;
    std::printf("fwd+bwd: %.1f us/image (loss %.4f)\n", us, acc / iters);

    auto tf0 = std::chrono::steady_clock::now();
    for (int i = 0; i < iters; ++i) {
        Tensor out = forward(params, img);
        acc += out.v[0];
    }
    auto tf1 = std::chrono::steady_clock::now();
    us = std::chrono::duration<double, std::micro>(tf1 - tf0).count() / iters;
    std::printf("fwd only: %.1f us/image\n", us);
    return acc > 1e30 ? 1 : 0;
}
