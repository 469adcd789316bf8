#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fedscope/geometry.hpp"
#include "fedscope/image.hpp"
#include "fedscope/tensor.hpp"

namespace fedscope::detector {

// Single-shot grid detector: three stride-2 3x3 conv layers and a 1x1 head,
// one box per cell at total stride 8.
constexpr int kTotalStride = 8;
constexpr int kNumLayers = 4;

struct ConvSpec {
    int in_c = 0, out_c = 0, ksize = 3, stride = 1, pad = 0;
};

struct Layer {
    std::string name;
    ConvSpec spec;
    Tensor w;  // [out_c, in_c, k, k]
    Tensor b;  // [out_c]
};

struct ModelParams {
    std::vector<Layer> layers;
    int num_classes = 5;

    int head_channels() const { return 5 + num_classes; }
    bool same_shape(const ModelParams& o) const;
};

// He-style scaled uniform init, deterministic per seed. Biases start at zero.
ModelParams init_params(uint64_t seed, int num_classes = 5);

// Head output channel layout per cell.
enum CellChannel { kTx = 0, kTy = 1, kTw = 2, kTh = 3, kTo = 4, kClassLogits = 5 };

struct ForwardCache {
    std::vector<Tensor> acts;  // acts[l] = input to layer l (post-ReLU of l-1)
    std::vector<Tensor> pre;   // pre[l]  = pre-activation output of layer l
    std::vector<Tensor> cols;  // im2col buffer per 3x3 layer (empty for 1x1)
};

// Raw head output [5+K, S, S]. Image dimensions must be divisible by 8.
Tensor forward(const ModelParams& p, const ImageGrid& img);
Tensor forward(const ModelParams& p, const ImageGrid& img, ForwardCache& cache);

struct Anchor {
    double w = 12.0, h = 12.0;
};

// Decodes cell predictions to boxes: center = cell origin + sigmoid(tx,ty) *
// cell size, size = anchor * exp(tw,th) clamped to the image, confidence =
// sigmoid(to) * max softmax class probability. Boxes below conf_threshold
// are dropped.
std::vector<BoundingBox> decode(const Tensor& cells, int num_classes, Anchor anchor,
                                double conf_threshold, int image_w, int image_h);

// Greedy per-class suppression of boxes with IoU > threshold.
std::vector<BoundingBox> nms(std::vector<BoundingBox> boxes, double iou_threshold);

// forward + decode + nms in one call
std::vector<BoundingBox> predict(const ModelParams& p, const ImageGrid& img,
                                 double conf_threshold, double nms_threshold,
                                 Anchor anchor = {});

struct LossParams {
    Anchor anchor;
    double lambda_coord = 5.0;
    double lambda_noobj = 0.5;
    int image_w = 64, image_h = 64;
};

struct LossResult {
    double value = 0;
    std::vector<int> cell_gt;  // per cell (row-major), assigned gt index or -1
    int skipped_gts = 0;       // gts whose cell was already claimed
};

// Composite loss over the cell grid: coordinate squared error and BCE
// objectness on assigned cells, down-weighted BCE on unassigned cells,
// softmax cross-entropy on assigned classes.
LossResult loss(const Tensor& cells, const std::vector<BoundingBox>& gts, int num_classes,
                const LossParams& lp);

struct Gradients {
    std::vector<Tensor> w, b;  // aligned with ModelParams::layers
};

Gradients zero_like(const ModelParams& p);
void accumulate(Gradients& into, const Gradients& g);
void scale(Gradients& g, double factor);

// Exact reverse-mode gradient of loss(forward(p, img), gts) into `out`
// (overwritten). Returns the loss value. layer_trainable, when given, skips
// gradient work for frozen layers and stops the backward pass below the
// lowest trainable layer.
double backward(const ModelParams& p, const ImageGrid& img, const std::vector<BoundingBox>& gts,
                const LossParams& lp, Gradients& out,
                const std::vector<char>* layer_trainable = nullptr);

}  // namespace fedscope::detector
