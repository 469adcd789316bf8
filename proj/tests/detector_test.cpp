#include <algorithm>
#include <cmath>
#include <random>

#include "doctest.h"
#include "fedscope/detector.hpp"
#include "fedscope/rng.hpp"

using namespace fedscope;
using namespace fedscope::detector;

namespace {

ImageGrid random_image(int h, int w, uint64_t seed) {
    ImageGrid img(h, w);
    auto rng = make_rng(seed);
    std::uniform_real_distribution<float> d(0.0f, 1.0f);
    for (auto& x : img.data) x = d(rng);
    return img;
}

double sig(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// direct convolution, written without im2col on purpose
Tensor conv_ref(const Tensor& in, const Layer& l) {
    int C = in.shape[0], H = in.shape[1], W = in.shape[2];
    int k = l.spec.ksize, s = l.spec.stride, p = l.spec.pad;
    int OH = (H + 2 * p - k) / s + 1, OW = (W + 2 * p - k) / s + 1;
    Tensor out({l.spec.out_c, OH, OW});
    for (int oc = 0; oc < l.spec.out_c; ++oc)
        for (int oy = 0; oy < OH; ++oy)
            for (int ox = 0; ox < OW; ++ox) {
                double acc = l.b.v[oc];
                for (int ic = 0; ic < C; ++ic)
                    for (int ky = 0; ky < k; ++ky)
                        for (int kx = 0; kx < k; ++kx) {
                            int iy = oy * s - p + ky, ix = ox * s - p + kx;
                            if (iy < 0 || iy >= H || ix < 0 || ix >= W) continue;
                            acc += l.w.v[((static_cast<size_t>(oc) * C + ic) * k + ky) * k + kx] *
                                   in.v[(static_cast<size_t>(ic) * H + iy) * W + ix];
                        }
                out.v[(static_cast<size_t>(oc) * OH + oy) * OW + ox] = acc;
            }
    return out;
}

// straight-line recomputation of the training loss with naive formulas
double loss_ref(const Tensor& cells, const std::vector<BoundingBox>& gts, int K,
                const LossParams& lp) {
    int sy = cells.shape[1], sx = cells.shape[2], plane = sy * sx;
    double cw = static_cast<double>(lp.image_w) / sx, ch = static_cast<double>(lp.image_h) / sy;
    std::vector<int> cell(plane, -1);
    for (size_t g = 0; g < gts.size(); ++g) {
        double cx = (gts[g].x_min + gts[g].x_max) / 2, cy = (gts[g].y_min + gts[g].y_max) / 2;
        int ix = std::min(sx - 1, static_cast<int>(cx / cw));
        int iy = std::min(sy - 1, static_cast<int>(cy / ch));
        if (cell[iy * sx + ix] < 0) cell[iy * sx + ix] = static_cast<int>(g);
    }
    double total = 0;
    for (int idx = 0; idx < plane; ++idx) {
        double to = cells.v[kTo * plane + idx];
        if (cell[idx] < 0) {
            total += lp.lambda_noobj * -std::log(1.0 - sig(to));
            continue;
        }
        const BoundingBox& gt = gts[cell[idx]];
        double gx = ((gt.x_min + gt.x_max) / 2) / cw - idx % sx;
        double gy = ((gt.y_min + gt.y_max) / 2) / ch - idx / sx;
        double dx = sig(cells.v[kTx * plane + idx]) - gx;
        double dy = sig(cells.v[kTy * plane + idx]) - gy;
        double dw = cells.v[kTw * plane + idx] - std::log(gt.width() / lp.anchor.w);
        double dh = cells.v[kTh * plane + idx] - std::log(gt.height() / lp.anchor.h);
        total += lp.lambda_coord * (dx * dx + dy * dy + dw * dw + dh * dh);
        total += -std::log(sig(to));
        double denom = 0;
        for (int c = 0; c < K; ++c) denom += std::exp(cells.v[(kClassLogits + c) * plane + idx]);
        total += -std::log(std::exp(cells.v[(kClassLogits + gt.class_id) * plane + idx]) / denom);
    }
    return total;
}

}  // namespace

TEST_SUITE("detector") {

TEST_CASE("init_params layout and determinism") {
    auto p = init_params(123, 5);
    REQUIRE(p.layers.size() == 4);
    CHECK(p.layers[0].w.shape == std::vector<int>{8, 3, 3, 3});
    CHECK(p.layers[1].w.shape == std::vector<int>{16, 8, 3, 3});
    CHECK(p.layers[2].w.shape == std::vector<int>{32, 16, 3, 3});
    CHECK(p.layers[3].w.shape == std::vector<int>{10, 32, 1, 1});
    CHECK(p.head_channels() == 10);
    for (const auto& l : p.layers) {
        double bound = std::sqrt(6.0 / (l.spec.in_c * l.spec.ksize * l.spec.ksize));
        for (double w : l.w.v) {
            CHECK(w >= -bound);
            CHECK(w <= bound);
        }
        for (double b : l.b.v) CHECK(b == 0.0);
    }
    auto q = init_params(123, 5);
    CHECK(q.layers[2].w.v == p.layers[2].w.v);
    auto r = init_params(124, 5);
    CHECK(r.layers[2].w.v != p.layers[2].w.v);
    CHECK_THROWS_AS(init_params(1, 0), std::invalid_argument);
}

TEST_CASE("forward output shape and input validation") {
    auto p = init_params(5, 5);
    Tensor out = forward(p, random_image(64, 64, 1));
    CHECK(out.shape == std::vector<int>{10, 8, 8});
    Tensor out2 = forward(p, random_image(16, 32, 2));
    CHECK(out2.shape == std::vector<int>{10, 2, 4});
    CHECK_THROWS_AS(forward(p, random_image(60, 64, 3)), std::invalid_argument);
    CHECK_THROWS_AS(forward(p, random_image(64, 20, 3)), std::invalid_argument);
}

TEST_CASE("forward matches direct convolution layer by layer") {
    auto p = init_params(derive_seed(77, "fwd-ref"), 5);
    ImageGrid img = random_image(32, 32, 4);
    ForwardCache cache;
    forward(p, img, cache);

    Tensor ref = cache.acts[0];
    for (int l = 0; l < kNumLayers; ++l) {
        Tensor pre = conv_ref(ref, p.layers[l]);
        REQUIRE(pre.shape == cache.pre[l].shape);
        for (int i = 0; i < pre.numel(); ++i)
            CHECK(pre.v[i] == doctest::Approx(cache.pre[l].v[i]).epsilon(1e-12));
        for (double& x : pre.v) x = x > 0 ? x : 0.0;
        ref = pre;
    }
}

TEST_CASE("forward with zero weights emits head bias") {
    auto p = init_params(9, 5);
    for (auto& l : p.layers) std::fill(l.w.v.begin(), l.w.v.end(), 0.0);
    p.layers[3].b.v.assign(10, -1.25);
    Tensor out = forward(p, random_image(64, 64, 5));
    for (double v : out.v) CHECK(v == -1.25);
}

TEST_CASE("decode recovers hand-built cell") {
    // 16x16 image -> 2x2 grid of 8px cells
    int K = 5;
    Tensor cells({5 + K, 2, 2});
    int plane = 4, idx = 1;  // cy=0, cx=1
    cells.v[kTx * plane + idx] = 0.3;
    cells.v[kTy * plane + idx] = -0.2;
    cells.v[kTw * plane + idx] = 0.1;
    cells.v[kTh * plane + idx] = -0.3;
    cells.v[kTo * plane + idx] = 1.2;
    cells.v[(kClassLogits + 1) * plane + idx] = 2.0;
    cells.v[(kClassLogits + 0) * plane + idx] = 0.5;

    auto boxes = decode(cells, K, Anchor{12, 12}, 0.25, 16, 16);
    REQUIRE(boxes.size() == 1);  // all-zero cells sit at conf 0.1 and drop
    const auto& b = boxes[0];
    CHECK(b.class_id == 1);
    double bx = (1 + sig(0.3)) * 8.0, by = (0 + sig(-0.2)) * 8.0;
    double bw = 12 * std::exp(0.1), bh = 12 * std::exp(-0.3);
    CHECK(b.x_min == doctest::Approx(std::max(0.0, bx - bw / 2)).epsilon(1e-12));
    CHECK(b.x_max == doctest::Approx(std::min(16.0, bx + bw / 2)).epsilon(1e-12));
    CHECK(b.y_min == doctest::Approx(std::max(0.0, by - bh / 2)).epsilon(1e-12));
    CHECK(b.y_max == doctest::Approx(std::min(16.0, by + bh / 2)).epsilon(1e-12));
    double denom = std::exp(2.0) + std::exp(0.5) + 3.0;
    CHECK(*b.confidence == doctest::Approx(sig(1.2) * std::exp(2.0) / denom).epsilon(1e-12));

    // crank the size channel: the box must stay clamped inside the image
    cells.v[kTw * plane + idx] = 4.0;
    cells.v[kTh * plane + idx] = 4.0;
    auto clamped = decode(cells, K, Anchor{12, 12}, 0.25, 16, 16);
    REQUIRE(clamped.size() == 1);
    CHECK(clamped[0].x_min >= 0.0);
    CHECK(clamped[0].x_max <= 16.0);
    CHECK(clamped[0].y_min >= 0.0);
    CHECK(clamped[0].y_max <= 16.0);
    CHECK_THROWS_AS(decode(cells, K, Anchor{0, 12}, 0.25, 16, 16), std::invalid_argument);
}

TEST_CASE("decode inverts the loss target encoding") {
    // cell targets built the way the loss defines them (logit of the
    // fractional center, log size ratio) must decode back to the box
    auto rng = make_rng(derive_seed(271, "roundtrip"));
    std::uniform_int_distribution<int> cell(2, 5);  // interior cells avoid edge clamping
    std::uniform_real_distribution<double> frac(0.1, 0.9);
    std::uniform_real_distribution<double> logsize(-1.0, 0.8);
    std::uniform_int_distribution<int> cls(0, 4);
    Anchor a;
    for (int trial = 0; trial < 200; ++trial) {
        int cx = cell(rng), cy = cell(rng), c = cls(rng);
        double gx = frac(rng), gy = frac(rng);
        double w = a.w * std::exp(logsize(rng)), h = a.h * std::exp(logsize(rng));
        double mx = (cx + gx) * 8.0, my = (cy + gy) * 8.0;
        BoundingBox gt(c, mx - w / 2, my - h / 2, mx + w / 2, my + h / 2);
        if (gt.x_min < 0 || gt.y_min < 0 || gt.x_max > 64 || gt.y_max > 64) continue;

        Tensor cells_t({10, 8, 8});
        int plane = 64, idx = cy * 8 + cx;
        cells_t.v[kTx * plane + idx] = std::log(gx / (1.0 - gx));
        cells_t.v[kTy * plane + idx] = std::log(gy / (1.0 - gy));
        cells_t.v[kTw * plane + idx] = std::log(w / a.w);
        cells_t.v[kTh * plane + idx] = std::log(h / a.h);
        cells_t.v[kTo * plane + idx] = 8.0;
        cells_t.v[(kClassLogits + c) * plane + idx] = 9.0;

        // the loss agrees these targets belong to that cell...
        LossResult lr = loss(cells_t, {gt}, 5, {});
        CHECK(lr.cell_gt[idx] == 0);
        CHECK(lr.skipped_gts == 0);

        // ...and decode maps them back onto the ground truth
        auto boxes = decode(cells_t, 5, a, 0.5, 64, 64);
        REQUIRE(boxes.size() == 1);
        CHECK(boxes[0].class_id == c);
        CHECK(std::abs(boxes[0].x_min - gt.x_min) < 1e-9);
        CHECK(std::abs(boxes[0].y_min - gt.y_min) < 1e-9);
        CHECK(std::abs(boxes[0].x_max - gt.x_max) < 1e-9);
        CHECK(std::abs(boxes[0].y_max - gt.y_max) < 1e-9);
    }
}

TEST_CASE("nms against repeated max-scan") {
    auto rng = make_rng(derive_seed(31, "nms"));
    std::uniform_real_distribution<double> pos(0.0, 50.0), len(2.0, 20.0), conf(0.0, 1.0);
    std::uniform_int_distribution<int> cls(0, 2);
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<BoundingBox> boxes;
        for (int i = 0; i < 30; ++i) {
            double x = pos(rng), y = pos(rng);
            boxes.emplace_back(cls(rng), x, y, x + len(rng), y + len(rng), conf(rng));
        }
        auto got = nms(boxes, 0.5);

        // oracle: repeatedly take the earliest highest-confidence survivor
        std::vector<char> dead(boxes.size(), 0);
        std::vector<BoundingBox> want;
        for (;;) {
            int best = -1;
            for (size_t i = 0; i < boxes.size(); ++i)
                if (!dead[i] && (best < 0 || *boxes[i].confidence > *boxes[best].confidence))
                    best = static_cast<int>(i);
            if (best < 0) break;
            dead[best] = 1;
            want.push_back(boxes[best]);
            for (size_t j = 0; j < boxes.size(); ++j)
                if (!dead[j] && boxes[j].class_id == boxes[best].class_id &&
                    iou(boxes[best], boxes[j]) > 0.5)
                    dead[j] = 1;
        }
        REQUIRE(got.size() == want.size());
        for (size_t i = 0; i < got.size(); ++i) {
            CHECK(got[i].x_min == want[i].x_min);
            CHECK(got[i].confidence == want[i].confidence);
            CHECK(got[i].class_id == want[i].class_id);
        }
    }
    CHECK_THROWS_AS(nms({}, 0.0), std::invalid_argument);
    CHECK_THROWS_AS(nms({}, 1.5), std::invalid_argument);
}

TEST_CASE("nms keeps different classes apart") {
    std::vector<BoundingBox> boxes;
    boxes.emplace_back(0, 0, 0, 10, 10, 0.9);
    boxes.emplace_back(1, 0, 0, 10, 10, 0.8);  // same box, other class
    boxes.emplace_back(0, 1, 1, 11, 11, 0.7);  // heavy overlap, same class
    auto kept = nms(boxes, 0.5);
    REQUIRE(kept.size() == 2);
    CHECK(kept[0].class_id == 0);
    CHECK(kept[1].class_id == 1);
}

TEST_CASE("loss matches straight-line recomputation") {
    int K = 5;
    LossParams lp;
    auto rng = make_rng(derive_seed(88, "loss-ref"));
    std::uniform_real_distribution<double> logit(-4.0, 4.0);
    std::uniform_real_distribution<double> pos(2.0, 60.0), len(3.0, 18.0);
    std::uniform_int_distribution<int> cls(0, K - 1), nbox(0, 5);
    for (int trial = 0; trial < 50; ++trial) {
        Tensor cells({5 + K, 8, 8});
        for (auto& v : cells.v) v = logit(rng);
        std::vector<BoundingBox> gts;
        int n = nbox(rng);
        for (int i = 0; i < n; ++i) {
            double x = pos(rng), y = pos(rng);
            gts.emplace_back(cls(rng), x, y, std::min(64.0, x + len(rng)),
                             std::min(64.0, y + len(rng)));
        }
        auto r = loss(cells, gts, K, lp);
        double want = loss_ref(cells, gts, K, lp);
        CHECK(r.value == doctest::Approx(want).epsilon(1e-10));
        CHECK(r.value >= 0.0);
    }
}

TEST_CASE("loss assignment collisions and validation") {
    int K = 5;
    LossParams lp;
    Tensor cells({5 + K, 8, 8});
    // two gts whose centers land in the same cell: first one wins
    std::vector<BoundingBox> gts;
    gts.emplace_back(0, 1.0, 1.0, 6.0, 6.0);  // center (3.5, 3.5) -> cell 0
    gts.emplace_back(1, 2.0, 2.0, 5.0, 5.0);  // center (3.5, 3.5) -> collision
    gts.emplace_back(2, 30.0, 30.0, 40.0, 40.0);
    auto r = loss(cells, gts, K, lp);
    CHECK(r.skipped_gts == 1);
    CHECK(r.cell_gt[0] == 0);
    int assigned = 0;
    for (int c : r.cell_gt) assigned += c >= 0;
    CHECK(assigned == 2);

    CHECK_THROWS_AS(loss(cells, {BoundingBox(0, 70.0, 1.0, 90.0, 6.0)}, K, lp),
                    std::invalid_argument);
    Tensor bad({7, 8, 8});
    CHECK_THROWS_AS(loss(bad, {}, K, lp), std::invalid_argument);
}

TEST_CASE("empty image loss is pure background objectness") {
    int K = 5;
    LossParams lp;
    Tensor cells({5 + K, 8, 8});
    cells.v.assign(cells.v.size(), 0.0);
    auto r = loss(cells, {}, K, lp);
    // 64 cells, each lambda_noobj * log(2)
    CHECK(r.value == doctest::Approx(64 * 0.5 * std::log(2.0)).epsilon(1e-12));
    CHECK(r.skipped_gts == 0);
}

TEST_CASE("backward matches central differences") {
    int K = 5;
    auto p = init_params(derive_seed(4242, "gradcheck"), K);
    ImageGrid img = random_image(16, 16, derive_seed(4242, "gradimg"));
    std::vector<BoundingBox> gts;
    gts.emplace_back(1, 2.0, 3.0, 9.5, 10.0);
    gts.emplace_back(3, 10.5, 11.0, 15.5, 15.0);
    LossParams lp;
    lp.image_w = 16;
    lp.image_h = 16;

    Gradients g = zero_like(p);
    backward(p, img, gts, lp, g);

    const double eps = 1e-4;
    auto rng = make_rng(derive_seed(4242, "gradcoords"));
    int checked = 0;
    double worst = 0;
    for (int l = 0; l < kNumLayers; ++l) {
        int nw = p.layers[l].w.numel(), nb = p.layers[l].b.numel();
        std::uniform_int_distribution<int> pick(0, nw + nb - 1);
        for (int t = 0; t < 100; ++t) {
            int c = pick(rng);
            double* slot = c < nw ? &p.layers[l].w.v[c] : &p.layers[l].b.v[c - nw];
            double analytic = c < nw ? g.w[l].v[c] : g.b[l].v[c - nw];
            double keep = *slot;
            *slot = keep + eps;
            double lp_val = loss(forward(p, img), gts, K, lp).value;
            *slot = keep - eps;
            double lm_val = loss(forward(p, img), gts, K, lp).value;
            *slot = keep;
            double numeric = (lp_val - lm_val) / (2 * eps);
            double rel = std::fabs(analytic - numeric) /
                         std::max(1e-8, std::fabs(analytic) + std::fabs(numeric));
            worst = std::max(worst, rel);
            ++checked;
        }
    }
    CHECK(checked == 400);
    CHECK(worst < 1e-3);
}

TEST_CASE("frozen layers get zero gradients and identical trainable ones") {
    int K = 5;
    auto p = init_params(derive_seed(91, "freeze"), K);
    ImageGrid img = random_image(16, 16, 6);
    std::vector<BoundingBox> gts{BoundingBox(2, 3.0, 3.0, 12.0, 12.0)};
    LossParams lp;
    lp.image_w = 16;
    lp.image_h = 16;

    Gradients full = zero_like(p), frozen = zero_like(p);
    double l1 = backward(p, img, gts, lp, full);
    std::vector<char> mask{0, 0, 1, 1};
    double l2 = backward(p, img, gts, lp, frozen, &mask);
    CHECK(l1 == l2);
    for (int l = 0; l < 2; ++l) {
        for (double v : frozen.w[l].v) CHECK(v == 0.0);
        for (double v : frozen.b[l].v) CHECK(v == 0.0);
    }
    for (int l = 2; l < 4; ++l) {
        CHECK(frozen.w[l].v == full.w[l].v);
        CHECK(frozen.b[l].v == full.b[l].v);
    }
}

TEST_CASE("gradient accumulation helpers") {
    auto p = init_params(3, 5);
    Gradients a = zero_like(p), b = zero_like(p);
    a.w[0].v[0] = 2.0;
    b.w[0].v[0] = 3.0;
    b.b[1].v[2] = -1.0;
    accumulate(a, b);
    CHECK(a.w[0].v[0] == 5.0);
    CHECK(a.b[1].v[2] == -1.0);
    scale(a, 0.5);
    CHECK(a.w[0].v[0] == 2.5);
    CHECK(a.b[1].v[2] == -0.5);
}

}  // TEST_SUITE
