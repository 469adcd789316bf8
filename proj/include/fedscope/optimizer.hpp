#pragma once

#include <vector>

#include "fedscope/detector.hpp"

namespace fedscope::detector {

// Per-layer freeze flags. Empty means everything trains.
struct FreezeMask {
    std::vector<char> frozen;

    static FreezeMask none() { return {}; }
    // backbone (L1..L3) frozen, head trainable
    static FreezeMask backbone() { return {{1, 1, 1, 0}}; }

    bool is_frozen(int layer) const {
        return layer < static_cast<int>(frozen.size()) && frozen[layer];
    }
    // inverse view consumed by backward()
    std::vector<char> trainable(int num_layers) const {
        std::vector<char> t(num_layers, 1);
        for (int l = 0; l < num_layers; ++l) t[l] = is_frozen(l) ? 0 : 1;
        return t;
    }
};

// SGD with momentum and decoupled-from-backward weight decay:
//   v <- mu*v + (grad + wd*w);  w <- w - lr*v
struct OptimizerState {
    double lr = 0.01;
    double momentum = 0.937;
    double weight_decay = 0.0005;
    int batch_size = 8;
    std::vector<Tensor> vw, vb;  // momentum buffers, aligned with layers

    static OptimizerState make(const ModelParams& p);
};

// Applies one update in place. Frozen layers are untouched, momentum
// buffers included. Throws if the mask freezes every layer.
void sgd_step(ModelParams& p, const Gradients& g, OptimizerState& st, const FreezeMask& mask);

}  // namespace fedscope::detector
