#include "fedscope/detector.hpp"

#include <immintrin.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <random>
#include <stdexcept>

#include "fedscope/rng.hpp"

namespace fedscope::detector {

namespace {

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// log(1 + exp(x)) without overflow
double softplus(double x) {
    return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

int out_dim(int in, const ConvSpec& s) { return (in + 2 * s.pad - s.ksize) / s.stride + 1; }

// C[M][N] += A[M][K] * B[K][N], rows contiguous. Blocking four k-steps keeps
// the C row in registers/L1 four times longer; explicit fma keeps the kernel
// on the fused path regardless of contraction settings.
void gemm_acc(const double* A, const double* B, double* C, int M, int K, int N) {
    for (int m = 0; m < M; ++m) {
        const double* a = A + static_cast<size_t>(m) * K;
        double* c = C + static_cast<size_t>(m) * N;
        int k = 0;
        for (; k + 4 <= K; k += 4) {
            const double a0 = a[k], a1 = a[k + 1], a2 = a[k + 2], a3 = a[k + 3];
            const double* b0 = B + static_cast<size_t>(k) * N;
            const double *b1 = b0 + N, *b2 = b1 + N, *b3 = b2 + N;
            for (int n = 0; n < N; ++n)
                c[n] = std::fma(
                    a3, b3[n], std::fma(a2, b2[n], std::fma(a1, b1[n], std::fma(a0, b0[n], c[n]))));
        }
        for (; k < K; ++k) {
            const double av = a[k];
            const double* b = B + static_cast<size_t>(k) * N;
            for (int n = 0; n < N; ++n) c[n] = std::fma(av, b[n], c[n]);
        }
    }
}

// C[K][N] += A^T * B with A[M][K], B[M][N]; used for the input gradient
// (W^T * dY) without materializing a transpose.
void gemm_at_acc(const double* A, const double* B, double* C, int M, int K, int N) {
    int m = 0;
    for (; m + 4 <= M; m += 4) {
        const double* a0 = A + static_cast<size_t>(m) * K;
        const double *a1 = a0 + K, *a2 = a1 + K, *a3 = a2 + K;
        const double* b0 = B + static_cast<size_t>(m) * N;
        const double *b1 = b0 + N, *b2 = b1 + N, *b3 = b2 + N;
        for (int k = 0; k < K; ++k) {
            const double v0 = a0[k], v1 = a1[k], v2 = a2[k], v3 = a3[k];
            double* c = C + static_cast<size_t>(k) * N;
            for (int n = 0; n < N; ++n)
                c[n] = std::fma(
                    v3, b3[n], std::fma(v2, b2[n], std::fma(v1, b1[n], std::fma(v0, b0[n], c[n]))));
        }
    }
    for (; m < M; ++m) {
        const double* a = A + static_cast<size_t>(m) * K;
        const double* b = B + static_cast<size_t>(m) * N;
        for (int k = 0; k < K; ++k) {
            const double av = a[k];
            double* c = C + static_cast<size_t>(k) * N;
            for (int n = 0; n < N; ++n) c[n] = std::fma(av, b[n], c[n]);
        }
    }
}

double hsum(__m256d v) {
    alignas(32) double t[4];
    _mm256_store_pd(t, v);
    return (t[0] + t[1]) + (t[2] + t[3]);
}

double dot(const double* x, const double* y, int n) {
    __m256d acc = _mm256_setzero_pd();
    int i = 0;
    for (; i + 4 <= n; i += 4)
        acc = _mm256_fmadd_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i), acc);
    double s = hsum(acc);
    for (; i < n; ++i) s = std::fma(x[i], y[i], s);
    return s;
}

// C[M][K] += A[M][N] * B[K][N]^T: every entry is a length-N dot product.
// The compiler will not vectorize FP reductions on its own, so this carries
// a 2x2 tile of 4-lane accumulators explicitly (weight gradient hot path).
void gemm_abt_acc(const double* A, const double* B, double* C, int M, int N, int K) {
    int m = 0;
    for (; m + 2 <= M; m += 2) {
        const double* a0 = A + static_cast<size_t>(m) * N;
        const double* a1 = a0 + N;
        double* c0 = C + static_cast<size_t>(m) * K;
        double* c1 = c0 + K;
        int k = 0;
        for (; k + 2 <= K; k += 2) {
            const double* b0 = B + static_cast<size_t>(k) * N;
            const double* b1 = b0 + N;
            __m256d s00 = _mm256_setzero_pd(), s01 = _mm256_setzero_pd();
            __m256d s10 = _mm256_setzero_pd(), s11 = _mm256_setzero_pd();
            int n = 0;
            for (; n + 4 <= N; n += 4) {
                __m256d va0 = _mm256_loadu_pd(a0 + n);
                __m256d va1 = _mm256_loadu_pd(a1 + n);
                __m256d vb0 = _mm256_loadu_pd(b0 + n);
                __m256d vb1 = _mm256_loadu_pd(b1 + n);
                s00 = _mm256_fmadd_pd(va0, vb0, s00);
                s01 = _mm256_fmadd_pd(va0, vb1, s01);
                s10 = _mm256_fmadd_pd(va1, vb0, s10);
                s11 = _mm256_fmadd_pd(va1, vb1, s11);
            }
            double t00 = hsum(s00), t01 = hsum(s01), t10 = hsum(s10), t11 = hsum(s11);
            for (; n < N; ++n) {
                t00 = std::fma(a0[n], b0[n], t00);
                t01 = std::fma(a0[n], b1[n], t01);
                t10 = std::fma(a1[n], b0[n], t10);
                t11 = std::fma(a1[n], b1[n], t11);
            }
            c0[k] += t00;
            c0[k + 1] += t01;
            c1[k] += t10;
            c1[k + 1] += t11;
        }
        for (; k < K; ++k) {
            const double* b = B + static_cast<size_t>(k) * N;
            c0[k] += dot(a0, b, N);
            c1[k] += dot(a1, b, N);
        }
    }
    for (; m < M; ++m) {
        const double* a = A + static_cast<size_t>(m) * N;
        double* c = C + static_cast<size_t>(m) * K;
        for (int k = 0; k < K; ++k) c[k] += dot(a, B + static_cast<size_t>(k) * N, N);
    }
}

// col[(ic*k*k + ky*k + kx)][oy*OW + ox] = in[ic][oy*s - p + ky][ox*s - p + kx]
void im2col(const double* in, int C, int H, int W, const ConvSpec& s, int OH, int OW,
            double* col) {
    const int k = s.ksize, stride = s.stride, pad = s.pad;
    for (int ic = 0; ic < C; ++ic) {
        for (int ky = 0; ky < k; ++ky) {
            for (int kx = 0; kx < k; ++kx) {
                double* row = col + (static_cast<size_t>((ic * k + ky) * k + kx)) * OH * OW;
                // valid ox range for this kx (outside is zero padding)
                int ox_lo = kx < pad ? (pad - kx + stride - 1) / stride : 0;
                int ox_hi = std::min(OW - 1, (W - 1 - kx + pad) / stride);
                for (int oy = 0; oy < OH; ++oy) {
                    int iy = oy * stride - pad + ky;
                    double* r = row + static_cast<size_t>(oy) * OW;
                    if (iy < 0 || iy >= H) {
                        std::memset(r, 0, sizeof(double) * OW);
                        continue;
                    }
                    const double* src = in + (static_cast<size_t>(ic) * H + iy) * W;
                    for (int ox = 0; ox < ox_lo; ++ox) r[ox] = 0.0;
                    for (int ox = ox_lo; ox <= ox_hi; ++ox) r[ox] = src[ox * stride - pad + kx];
                    for (int ox = ox_hi + 1; ox < OW; ++ox) r[ox] = 0.0;
                }
            }
        }
    }
}

// scatter-add of a col buffer back into input gradient layout
void col2im_acc(const double* col, int C, int H, int W, const ConvSpec& s, int OH, int OW,
                double* din) {
    const int k = s.ksize, stride = s.stride, pad = s.pad;
    for (int ic = 0; ic < C; ++ic) {
        for (int ky = 0; ky < k; ++ky) {
            for (int kx = 0; kx < k; ++kx) {
                const double* row = col + (static_cast<size_t>((ic * k + ky) * k + kx)) * OH * OW;
                int ox_lo = kx < pad ? (pad - kx + stride - 1) / stride : 0;
                int ox_hi = std::min(OW - 1, (W - 1 - kx + pad) / stride);
                for (int oy = 0; oy < OH; ++oy) {
                    int iy = oy * stride - pad + ky;
                    if (iy < 0 || iy >= H) continue;
                    double* dst = din + (static_cast<size_t>(ic) * H + iy) * W;
                    const double* r = row + static_cast<size_t>(oy) * OW;
                    for (int ox = ox_lo; ox <= ox_hi; ++ox) dst[ox * stride - pad + kx] += r[ox];
                }
            }
        }
    }
}

struct Dims {
    int C, H, W, OC, OH, OW, K, N;
};

Dims layer_dims(const Layer& l, int H, int W) {
    Dims d;
    d.C = l.spec.in_c;
    d.H = H;
    d.W = W;
    d.OC = l.spec.out_c;
    d.OH = out_dim(H, l.spec);
    d.OW = out_dim(W, l.spec);
    d.K = l.spec.in_c * l.spec.ksize * l.spec.ksize;
    d.N = d.OH * d.OW;
    return d;
}

}  // namespace

bool ModelParams::same_shape(const ModelParams& o) const {
    if (layers.size() != o.layers.size() || num_classes != o.num_classes) return false;
    for (size_t i = 0; i < layers.size(); ++i)
        if (!layers[i].w.same_shape(o.layers[i].w) || !layers[i].b.same_shape(o.layers[i].b))
            return false;
    return true;
}

ModelParams init_params(uint64_t seed, int num_classes) {
    if (num_classes <= 0) throw std::invalid_argument("init: num_classes must be positive");
    ModelParams p;
    p.num_classes = num_classes;
    const ConvSpec specs[kNumLayers] = {
        {3, 8, 3, 2, 1},
        {8, 16, 3, 2, 1},
        {16, 32, 3, 2, 1},
        {32, 5 + num_classes, 1, 1, 0},
    };
    const char* names[kNumLayers] = {"conv1", "conv2", "conv3", "head"};
    auto rng = make_rng(seed);
    for (int l = 0; l < kNumLayers; ++l) {
        Layer layer;
        layer.name = names[l];
        layer.spec = specs[l];
        layer.w = Tensor({specs[l].out_c, specs[l].in_c, specs[l].ksize, specs[l].ksize});
        layer.b = Tensor({specs[l].out_c});
        int fan_in = specs[l].in_c * specs[l].ksize * specs[l].ksize;
        double bound = std::sqrt(6.0 / fan_in);
        std::uniform_real_distribution<double> dist(-bound, bound);
        for (double& x : layer.w.v) x = dist(rng);
        p.layers.push_back(std::move(layer));
    }
    return p;
}

Tensor forward(const ModelParams& p, const ImageGrid& img) {
    thread_local ForwardCache cache;
    return forward(p, img, cache);
}

Tensor forward(const ModelParams& p, const ImageGrid& img, ForwardCache& cache) {
    if (img.height % kTotalStride != 0 || img.width % kTotalStride != 0 || img.height <= 0)
        throw std::invalid_argument("bad-input-shape");
    if (p.layers.size() != kNumLayers) throw std::invalid_argument("bad-model");

    cache.acts.resize(kNumLayers);
    cache.pre.resize(kNumLayers);
    cache.cols.resize(kNumLayers);

    Tensor& input = cache.acts[0];
    input.ensure({ImageGrid::channels, img.height, img.width});
    for (int i = 0; i < input.numel(); ++i) input.v[i] = static_cast<double>(img.data[i]);

    int h = img.height, w = img.width;
    for (int l = 0; l < kNumLayers; ++l) {
        const Layer& layer = p.layers[l];
        Dims d = layer_dims(layer, h, w);
        Tensor& out = cache.pre[l];
        out.ensure({d.OC, d.OH, d.OW});
        for (int oc = 0; oc < d.OC; ++oc)
            std::fill_n(out.data() + static_cast<size_t>(oc) * d.N, d.N, layer.b.v[oc]);

        const double* colptr;
        if (layer.spec.ksize == 1 && layer.spec.stride == 1 && layer.spec.pad == 0) {
            colptr = cache.acts[l].data();  // 1x1 conv: the input already is the col matrix
        } else {
            cache.cols[l].ensure({d.K, d.N});
            im2col(cache.acts[l].data(), d.C, d.H, d.W, layer.spec, d.OH, d.OW,
                   cache.cols[l].data());
            colptr = cache.cols[l].data();
        }
        gemm_acc(layer.w.data(), colptr, out.data(), d.OC, d.K, d.N);

        if (l + 1 < kNumLayers) {
            Tensor& act = cache.acts[l + 1];
            act.ensure(out.shape);
            for (int i = 0; i < out.numel(); ++i) act.v[i] = out.v[i] > 0 ? out.v[i] : 0.0;
        }
        h = d.OH;
        w = d.OW;
    }
    return cache.pre[kNumLayers - 1];
}

std::vector<BoundingBox> decode(const Tensor& cells, int num_classes, Anchor anchor,
                                double conf_threshold, int image_w, int image_h) {
    if (anchor.w <= 0 || anchor.h <= 0) throw std::invalid_argument("decode: non-positive anchor");
    if (cells.shape.size() != 3 || cells.shape[0] != 5 + num_classes)
        throw std::invalid_argument("decode: bad cell tensor shape");
    const int sy = cells.shape[1], sx = cells.shape[2];
    const double cell_w = static_cast<double>(image_w) / sx;
    const double cell_h = static_cast<double>(image_h) / sy;
    const int plane = sy * sx;
    const double* v = cells.data();

    std::vector<BoundingBox> boxes;
    for (int cy = 0; cy < sy; ++cy) {
        for (int cx = 0; cx < sx; ++cx) {
            const int idx = cy * sx + cx;
            double obj = sigmoid(v[kTo * plane + idx]);
            // stable softmax over class logits
            double max_logit = -1e300;
            int best_class = 0;
            for (int c = 0; c < num_classes; ++c) {
                double lc = v[(kClassLogits + c) * plane + idx];
                if (lc > max_logit) {
                    max_logit = lc;
                    best_class = c;
                }
            }
            double denom = 0;
            for (int c = 0; c < num_classes; ++c)
                denom += std::exp(v[(kClassLogits + c) * plane + idx] - max_logit);
            double conf = obj * (1.0 / denom);
            if (conf < conf_threshold) continue;

            double bx = (cx + sigmoid(v[kTx * plane + idx])) * cell_w;
            double by = (cy + sigmoid(v[kTy * plane + idx])) * cell_h;
            double bw = std::min(anchor.w * std::exp(v[kTw * plane + idx]),
                                 static_cast<double>(image_w));
            double bh = std::min(anchor.h * std::exp(v[kTh * plane + idx]),
                                 static_cast<double>(image_h));
            double x0 = std::max(0.0, bx - bw / 2);
            double y0 = std::max(0.0, by - bh / 2);
            double x1 = std::min(static_cast<double>(image_w), bx + bw / 2);
            double y1 = std::min(static_cast<double>(image_h), by + bh / 2);
            if (x1 > x0 && y1 > y0) boxes.emplace_back(best_class, x0, y0, x1, y1, conf);
        }
    }
    return boxes;
}

std::vector<BoundingBox> nms(std::vector<BoundingBox> boxes, double iou_threshold) {
    if (!(iou_threshold > 0.0 && iou_threshold <= 1.0))
        throw std::invalid_argument("nms: iou threshold outside (0,1]");
    std::stable_sort(boxes.begin(), boxes.end(), [](const BoundingBox& a, const BoundingBox& b) {
        return *a.confidence > *b.confidence;
    });
    std::vector<char> removed(boxes.size(), 0);
    std::vector<BoundingBox> kept;
    for (size_t i = 0; i < boxes.size(); ++i) {
        if (removed[i]) continue;
        kept.push_back(boxes[i]);
        for (size_t j = i + 1; j < boxes.size(); ++j) {
            if (removed[j] || boxes[j].class_id != boxes[i].class_id) continue;
            if (iou(boxes[i], boxes[j]) > iou_threshold) removed[j] = 1;
        }
    }
    return kept;
}

std::vector<BoundingBox> predict(const ModelParams& p, const ImageGrid& img,
                                 double conf_threshold, double nms_threshold, Anchor anchor) {
    Tensor out = forward(p, img);
    return nms(decode(out, p.num_classes, anchor, conf_threshold, img.width, img.height),
               nms_threshold);
}

namespace {

// Assigns each gt to the cell holding its center; first (lowest index) wins.
LossResult assign_cells(const std::vector<BoundingBox>& gts, int sy, int sx,
                        const LossParams& lp) {
    LossResult r;
    r.cell_gt.assign(static_cast<size_t>(sy) * sx, -1);
    const double cell_w = static_cast<double>(lp.image_w) / sx;
    const double cell_h = static_cast<double>(lp.image_h) / sy;
    for (size_t g = 0; g < gts.size(); ++g) {
        double cx = (gts[g].x_min + gts[g].x_max) / 2;
        double cy = (gts[g].y_min + gts[g].y_max) / 2;
        if (cx < 0 || cx > lp.image_w || cy < 0 || cy > lp.image_h)
            throw std::invalid_argument("loss: gt center outside image");
        int ix = std::min(sx - 1, static_cast<int>(cx / cell_w));
        int iy = std::min(sy - 1, static_cast<int>(cy / cell_h));
        int idx = iy * sx + ix;
        if (r.cell_gt[idx] < 0)
            r.cell_gt[idx] = static_cast<int>(g);
        else
            r.skipped_gts += 1;
    }
    return r;
}

}  // namespace

LossResult loss(const Tensor& cells, const std::vector<BoundingBox>& gts, int num_classes,
                const LossParams& lp) {
    if (cells.shape.size() != 3 || cells.shape[0] != 5 + num_classes)
        throw std::invalid_argument("loss: bad cell tensor shape");
    const int sy = cells.shape[1], sx = cells.shape[2];
    const int plane = sy * sx;
    const double cell_w = static_cast<double>(lp.image_w) / sx;
    const double cell_h = static_cast<double>(lp.image_h) / sy;
    const double* v = cells.data();

    LossResult r = assign_cells(gts, sy, sx, lp);
    double total = 0;
    for (int idx = 0; idx < plane; ++idx) {
        double to = v[kTo * plane + idx];
        int g = r.cell_gt[idx];
        if (g < 0) {
            total += lp.lambda_noobj * softplus(to);
            continue;
        }
        const BoundingBox& gt = gts[g];
        int cx = idx % sx, cy = idx / sx;
        double gx = ((gt.x_min + gt.x_max) / 2) / cell_w - cx;
        double gy = ((gt.y_min + gt.y_max) / 2) / cell_h - cy;
        double twt = std::log(gt.width() / lp.anchor.w);
        double tht = std::log(gt.height() / lp.anchor.h);

        double ex = sigmoid(v[kTx * plane + idx]) - gx;
        double ey = sigmoid(v[kTy * plane + idx]) - gy;
        double ew = v[kTw * plane + idx] - twt;
        double eh = v[kTh * plane + idx] - tht;
        total += lp.lambda_coord * (ex * ex + ey * ey + ew * ew + eh * eh);
        total += softplus(-to);  // BCE against objectness 1

        double max_logit = -1e300;
        for (int c = 0; c < num_classes; ++c)
            max_logit = std::max(max_logit, v[(kClassLogits + c) * plane + idx]);
        double denom = 0;
        for (int c = 0; c < num_classes; ++c)
            denom += std::exp(v[(kClassLogits + c) * plane + idx] - max_logit);
        total += max_logit + std::log(denom) - v[(kClassLogits + gt.class_id) * plane + idx];
    }
    r.value = total;
    return r;
}

Gradients zero_like(const ModelParams& p) {
    Gradients g;
    for (const Layer& l : p.layers) {
        g.w.emplace_back(l.w.shape);
        g.b.emplace_back(l.b.shape);
    }
    return g;
}

void accumulate(Gradients& into, const Gradients& g) {
    for (size_t l = 0; l < into.w.size(); ++l) {
        for (int i = 0; i < into.w[l].numel(); ++i) into.w[l].v[i] += g.w[l].v[i];
        for (int i = 0; i < into.b[l].numel(); ++i) into.b[l].v[i] += g.b[l].v[i];
    }
}

void scale(Gradients& g, double factor) {
    for (auto& t : g.w)
        for (double& x : t.v) x *= factor;
    for (auto& t : g.b)
        for (double& x : t.v) x *= factor;
}

namespace {

// gradient of the loss w.r.t. the raw head output
void loss_grad_head(const Tensor& head, const std::vector<BoundingBox>& gts, const LossResult& lr,
                    int num_classes, const LossParams& lp, Tensor& d) {
    const int sy = head.shape[1], sx = head.shape[2];
    const int plane = sy * sx;
    const double cell_w = static_cast<double>(lp.image_w) / sx;
    const double cell_h = static_cast<double>(lp.image_h) / sy;
    const double* v = head.data();
    d.ensure(head.shape);
    std::fill(d.v.begin(), d.v.end(), 0.0);

    for (int idx = 0; idx < plane; ++idx) {
        int g = lr.cell_gt[idx];
        double to = v[kTo * plane + idx];
        double so = sigmoid(to);
        if (g < 0) {
            d.v[kTo * plane + idx] = lp.lambda_noobj * so;
            continue;
        }
        const BoundingBox& gt = gts[g];
        int cx = idx % sx, cy = idx / sx;
        double gx = ((gt.x_min + gt.x_max) / 2) / cell_w - cx;
        double gy = ((gt.y_min + gt.y_max) / 2) / cell_h - cy;
        double stx = sigmoid(v[kTx * plane + idx]);
        double sty = sigmoid(v[kTy * plane + idx]);
        d.v[kTx * plane + idx] = lp.lambda_coord * 2 * (stx - gx) * stx * (1 - stx);
        d.v[kTy * plane + idx] = lp.lambda_coord * 2 * (sty - gy) * sty * (1 - sty);
        d.v[kTw * plane + idx] =
            lp.lambda_coord * 2 * (v[kTw * plane + idx] - std::log(gt.width() / lp.anchor.w));
        d.v[kTh * plane + idx] =
            lp.lambda_coord * 2 * (v[kTh * plane + idx] - std::log(gt.height() / lp.anchor.h));
        d.v[kTo * plane + idx] = so - 1.0;

        double max_logit = -1e300;
        for (int c = 0; c < num_classes; ++c)
            max_logit = std::max(max_logit, v[(kClassLogits + c) * plane + idx]);
        double denom = 0;
        for (int c = 0; c < num_classes; ++c)
            denom += std::exp(v[(kClassLogits + c) * plane + idx] - max_logit);
        for (int c = 0; c < num_classes; ++c) {
            double p = std::exp(v[(kClassLogits + c) * plane + idx] - max_logit) / denom;
            d.v[(kClassLogits + c) * plane + idx] = p - (c == gt.class_id ? 1.0 : 0.0);
        }
    }
}

struct BackwardScratch {
    ForwardCache cache;
    Tensor delta, dnext, dcol;
};

}  // namespace

double backward(const ModelParams& p, const ImageGrid& img, const std::vector<BoundingBox>& gts,
                const LossParams& lp, Gradients& out, const std::vector<char>* layer_trainable) {
    thread_local BackwardScratch ws;
    Tensor head = forward(p, img, ws.cache);
    LossResult lr = loss(head, gts, p.num_classes, lp);
    loss_grad_head(head, gts, lr, p.num_classes, lp, ws.delta);

    if (out.w.size() != p.layers.size()) out = zero_like(p);
    for (auto& t : out.w) std::fill(t.v.begin(), t.v.end(), 0.0);
    for (auto& t : out.b) std::fill(t.v.begin(), t.v.end(), 0.0);

    int lowest_trainable = 0;
    if (layer_trainable) {
        lowest_trainable = kNumLayers;
        for (int l = 0; l < kNumLayers; ++l)
            if ((*layer_trainable)[l]) {
                lowest_trainable = l;
                break;
            }
    }

    int h = img.height, w = img.width;
    int dims_h[kNumLayers], dims_w[kNumLayers];
    for (int l = 0; l < kNumLayers; ++l) {
        dims_h[l] = h;
        dims_w[l] = w;
        Dims d = layer_dims(p.layers[l], h, w);
        h = d.OH;
        w = d.OW;
    }

    for (int l = kNumLayers - 1; l >= lowest_trainable; --l) {
        const Layer& layer = p.layers[l];
        Dims d = layer_dims(layer, dims_h[l], dims_w[l]);
        const bool want_grad = !layer_trainable || (*layer_trainable)[l];
        const bool is_identity_col =
            layer.spec.ksize == 1 && layer.spec.stride == 1 && layer.spec.pad == 0;
        const double* col = is_identity_col ? ws.cache.acts[l].data() : ws.cache.cols[l].data();

        if (want_grad) {
            for (int oc = 0; oc < d.OC; ++oc) {
                const double* dy = ws.delta.data() + static_cast<size_t>(oc) * d.N;
                double s = 0;
                for (int n = 0; n < d.N; ++n) s += dy[n];
                out.b[l].v[oc] = s;
            }
            gemm_abt_acc(ws.delta.data(), col, out.w[l].data(), d.OC, d.N, d.K);
        }

        if (l > lowest_trainable) {
            // dcol = W^T * dY, then scatter back and apply the ReLU mask
            ws.dcol.ensure({d.K, d.N});
            std::fill(ws.dcol.v.begin(), ws.dcol.v.end(), 0.0);
            gemm_at_acc(layer.w.data(), ws.delta.data(), ws.dcol.data(), d.OC, d.K, d.N);

            Tensor& dnext = ws.dnext;
            if (is_identity_col) {
                dnext.ensure({d.C, d.H, d.W});
                std::copy(ws.dcol.v.begin(), ws.dcol.v.end(), dnext.v.begin());
            } else {
                dnext.ensure({d.C, d.H, d.W});
                std::fill(dnext.v.begin(), dnext.v.end(), 0.0);
                col2im_acc(ws.dcol.data(), d.C, d.H, d.W, layer.spec, d.OH, d.OW, dnext.data());
            }

            const Tensor& pre_below = ws.cache.pre[l - 1];
            for (int i = 0; i < dnext.numel(); ++i)
                if (pre_below.v[i] <= 0) dnext.v[i] = 0.0;
            std::swap(ws.delta.v, dnext.v);
            std::swap(ws.delta.shape, dnext.shape);
        }
    }
    return lr.value;
}

}  // namespace fedscope::detector
