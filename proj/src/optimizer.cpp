#include "fedscope/optimizer.hpp"

#include <stdexcept>

namespace fedscope::detector {

OptimizerState OptimizerState::make(const ModelParams& p) {
    OptimizerState st;
    for (const Layer& l : p.layers) {
        st.vw.emplace_back(l.w.shape);
        st.vb.emplace_back(l.b.shape);
    }
    return st;
}

void sgd_step(ModelParams& p, const Gradients& g, OptimizerState& st, const FreezeMask& mask) {
    const int layers = static_cast<int>(p.layers.size());
    if (st.vw.size() != p.layers.size() || g.w.size() != p.layers.size())
        throw std::invalid_argument("sgd: state/gradient shape mismatch");
    bool any = false;
    for (int l = 0; l < layers; ++l) any |= !mask.is_frozen(l);
    if (!any) throw std::invalid_argument("sgd: all layers frozen");

    for (int l = 0; l < layers; ++l) {
        if (mask.is_frozen(l)) continue;
        Layer& layer = p.layers[l];
        for (int i = 0; i < layer.w.numel(); ++i) {
            double v = st.momentum * st.vw[l].v[i] +
                       (g.w[l].v[i] + st.weight_decay * layer.w.v[i]);
            st.vw[l].v[i] = v;
            layer.w.v[i] -= st.lr * v;
        }
        for (int i = 0; i < layer.b.numel(); ++i) {
            double v = st.momentum * st.vb[l].v[i] +
                       (g.b[l].v[i] + st.weight_decay * layer.b.v[i]);
            st.vb[l].v[i] = v;
            layer.b.v[i] -= st.lr * v;
        }
    }
}

}  // namespace fedscope::detector
