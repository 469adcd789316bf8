#include "fedscope/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <stdexcept>

#include "fedscope/geometry.hpp"
#include "fedscope/rng.hpp"
#include "json.hpp"

namespace fs = std::filesystem;

namespace fedscope::datagen {

const std::array<std::string, kNumClasses>& class_names() {
    static const std::array<std::string, kNumClasses> names = {
        "button", "resistor", "led", "board", "buzzer"};
    return names;
}

namespace {

using Color = std::array<double, 3>;

struct Rng {
    std::mt19937_64 eng;
    explicit Rng(uint64_t seed) : eng(make_rng(seed)) {}
    double uniform(double a, double b) { return std::uniform_real_distribution<double>(a, b)(eng); }
    int uniform_int(int a, int b) { return std::uniform_int_distribution<int>(a, b)(eng); }
    double normal(double sigma) { return std::normal_distribution<double>(0.0, sigma)(eng); }
    bool chance(double p) { return uniform(0.0, 1.0) < p; }
};

double clamp01(double v) { return std::min(1.0, std::max(0.0, v)); }
double lum(const Color& c) { return (c[0] + c[1] + c[2]) / 3.0; }
Color scale(const Color& c, double t) { return {c[0] * t, c[1] * t, c[2] * t}; }

// Tracks the tight pixel extent actually painted; the ground-truth box is
// derived from it so annotations never hang outside the raster.
struct Extent {
    int x0 = 1 << 30, y0 = 1 << 30, x1 = -(1 << 30), y1 = -(1 << 30);
    void add(int x, int y) {
        x0 = std::min(x0, x);
        y0 = std::min(y0, y);
        x1 = std::max(x1, x);
        y1 = std::max(y1, y);
    }
    bool empty() const { return x1 < x0; }
};

void put_px(ImageGrid& img, int x, int y, const Color& c, Extent* e = nullptr) {
    if (x < 0 || y < 0 || x >= img.width || y >= img.height) return;
    for (int ch = 0; ch < 3; ++ch) img.at(ch, y, x) = static_cast<float>(c[ch]);
    if (e) e->add(x, y);
}

void blend_px(ImageGrid& img, int x, int y, const Color& c, double a) {
    if (x < 0 || y < 0 || x >= img.width || y >= img.height) return;
    for (int ch = 0; ch < 3; ++ch) {
        double v = img.at(ch, y, x);
        img.at(ch, y, x) = static_cast<float>((1.0 - a) * v + a * c[ch]);
    }
}

// shade > 0 darkens toward the rim so the disc reads as a 3D part.
void fill_disc(ImageGrid& img, double cx, double cy, double r, const Color& c, double shade,
               Extent* e = nullptr, double alpha = 1.0) {
    const double r2 = r * r;
    for (int y = static_cast<int>(std::floor(cy - r)); y <= static_cast<int>(std::ceil(cy + r)); ++y)
        for (int x = static_cast<int>(std::floor(cx - r)); x <= static_cast<int>(std::ceil(cx + r)); ++x) {
            double dx = x - cx, dy = y - cy;
            double d2 = dx * dx + dy * dy;
            if (d2 > r2) continue;
            double t = 1.0 - shade * std::sqrt(d2) / std::max(r, 1e-9);
            Color col = scale(c, t);
            if (alpha >= 1.0)
                put_px(img, x, y, col, e);
            else
                blend_px(img, x, y, col, alpha);
        }
}

void fill_ring(ImageGrid& img, double cx, double cy, double r_out, double r_in, const Color& c,
               Extent* e = nullptr) {
    const double ro2 = r_out * r_out, ri2 = r_in * r_in;
    for (int y = static_cast<int>(std::floor(cy - r_out)); y <= static_cast<int>(std::ceil(cy + r_out)); ++y)
        for (int x = static_cast<int>(std::floor(cx - r_out)); x <= static_cast<int>(std::ceil(cx + r_out)); ++x) {
            double dx = x - cx, dy = y - cy;
            double d2 = dx * dx + dy * dy;
            if (d2 <= ro2 && d2 > ri2) put_px(img, x, y, c, e);
        }
}

void fill_rect(ImageGrid& img, int x0, int y0, int x1, int y1, const Color& c,
               Extent* e = nullptr) {
    for (int y = y0; y <= y1; ++y)
        for (int x = x0; x <= x1; ++x) put_px(img, x, y, c, e);
}

void draw_line(ImageGrid& img, double x0, double y0, double x1, double y1, const Color& c) {
    int steps = static_cast<int>(2.0 * std::max(std::abs(x1 - x0), std::abs(y1 - y0))) + 1;
    for (int i = 0; i <= steps; ++i) {
        double t = static_cast<double>(i) / steps;
        put_px(img, static_cast<int>(std::lround(x0 + t * (x1 - x0))),
               static_cast<int>(std::lround(y0 + t * (y1 - y0))), c);
    }
}

// ---- background textures -------------------------------------------------
// Families are deliberately disjoint: 0-3 textured & grainy, 4-7 flat &
// crisp, 8-12 cluttered / lighting-shifted.

Color tinted(double v, const Color& tint) {
    return {clamp01(v * tint[0]), clamp01(v * tint[1]), clamp01(v * tint[2])};
}

void paint_texture(ImageGrid& img, int id, Rng& rng) {
    const int H = img.height, W = img.width;
    Color tint = {1.0 + rng.uniform(-0.06, 0.06), 1.0 + rng.uniform(-0.06, 0.06),
                  1.0 + rng.uniform(-0.06, 0.06)};
    auto put = [&](int x, int y, double v) { put_px(img, x, y, tinted(v, tint)); };

    switch (id) {
        case 0: {  // vertical gradient + horizontal grain
            double a = rng.uniform(0.32, 0.5), b = rng.uniform(0.42, 0.62);
            double ph = rng.uniform(0.0, 6.28);
            for (int y = 0; y < H; ++y) {
                double row = a + (b - a) * y / (H - 1) + 0.02 * std::sin(0.9 * y + ph);
                for (int x = 0; x < W; ++x) put(x, y, row + rng.normal(0.025));
            }
            break;
        }
        case 1: {  // low-contrast plasma
            double fx = rng.uniform(0.08, 0.2), fy = rng.uniform(0.08, 0.2);
            double fd = rng.uniform(0.05, 0.12);
            double p1 = rng.uniform(0.0, 6.28), p2 = rng.uniform(0.0, 6.28), p3 = rng.uniform(0.0, 6.28);
            for (int y = 0; y < H; ++y)
                for (int x = 0; x < W; ++x)
                    put(x, y, 0.46 + 0.08 * std::sin(fx * x + p1) * std::sin(fy * y + p2) +
                                  0.05 * std::sin(fd * (x + y) + p3));
            break;
        }
        case 2: {  // soft blotches on a mid tone
            double base = rng.uniform(0.38, 0.55);
            for (int y = 0; y < H; ++y)
                for (int x = 0; x < W; ++x) put(x, y, base + rng.normal(0.015));
            int n = rng.uniform_int(6, 10);
            for (int i = 0; i < n; ++i) {
                double v = clamp01(base + rng.uniform(-0.14, 0.14));
                fill_disc(img, rng.uniform(0, W), rng.uniform(0, H), rng.uniform(6.0, 14.0),
                          tinted(v, tint), 0.0, nullptr, 0.45);
            }
            break;
        }
        case 3: {  // faint diagonal stripes + speckle
            double base = rng.uniform(0.4, 0.58);
            int period = rng.uniform_int(6, 10);
            double delta = rng.uniform(0.04, 0.08);
            for (int y = 0; y < H; ++y)
                for (int x = 0; x < W; ++x) {
                    double v = base + (((x + y) / period) % 2 ? delta : -delta);
                    put(x, y, v + rng.normal(0.02));
                }
            break;
        }
        case 4: case 5: case 6: case 7: {  // flat render backdrops
            static const Color bases[4] = {{0.84, 0.84, 0.86},
                                           {0.86, 0.79, 0.66},
                                           {0.70, 0.77, 0.88},
                                           {0.73, 0.84, 0.72}};
            Color base = bases[id - 4];
            double j = rng.uniform(-0.03, 0.03);
            for (int y = 0; y < H; ++y)
                for (int x = 0; x < W; ++x)
                    put_px(img, x, y, {clamp01(base[0] + j), clamp01(base[1] + j), clamp01(base[2] + j)});
            break;
        }
        case 8: {  // hard checkerboard
            int cell = rng.uniform_int(6, 9);
            double lo = rng.uniform(0.2, 0.3), hi = rng.uniform(0.62, 0.74);
            for (int y = 0; y < H; ++y)
                for (int x = 0; x < W; ++x)
                    put(x, y, ((x / cell + y / cell) % 2 ? hi : lo) + rng.normal(0.02));
            break;
        }
        case 9: {  // busy surface: many high-contrast strokes
            double base = rng.uniform(0.35, 0.5);
            for (int y = 0; y < H; ++y)
                for (int x = 0; x < W; ++x) put(x, y, base + rng.normal(0.02));
            int n = rng.uniform_int(28, 46);
            for (int i = 0; i < n; ++i) {
                double v = clamp01(base + (rng.chance(0.5) ? 1 : -1) * rng.uniform(0.18, 0.34));
                double x0 = rng.uniform(0, W), y0 = rng.uniform(0, H);
                draw_line(img, x0, y0, x0 + rng.uniform(-12.0, 12.0), y0 + rng.uniform(-12.0, 12.0),
                          tinted(v, tint));
            }
            break;
        }
        case 10: {  // overexposed wash with a bright blob
            double a = rng.uniform(0.74, 0.82);
            for (int y = 0; y < H; ++y)
                for (int x = 0; x < W; ++x)
                    put(x, y, a + 0.14 * x / (W - 1) + rng.normal(0.012));
            fill_disc(img, rng.uniform(0, W), rng.uniform(0, H), rng.uniform(10.0, 18.0),
                      {0.98, 0.98, 0.96}, 0.0, nullptr, 0.5);
            break;
        }
        case 11: {  // underexposed and noisy
            double base = rng.uniform(0.1, 0.2);
            for (int y = 0; y < H; ++y)
                for (int x = 0; x < W; ++x) put(x, y, base + rng.normal(0.045));
            break;
        }
        case 12: {  // harsh plasma + stripe overlay
            double fx = rng.uniform(0.12, 0.25), fy = rng.uniform(0.12, 0.25);
            double p1 = rng.uniform(0.0, 6.28), p2 = rng.uniform(0.0, 6.28);
            int period = rng.uniform_int(5, 8);
            for (int y = 0; y < H; ++y)
                for (int x = 0; x < W; ++x) {
                    double v = 0.48 + 0.2 * std::sin(fx * x + p1) * std::sin(fy * y + p2) +
                               (((x + 2 * y) / period) % 2 ? 0.05 : -0.05);
                    put(x, y, v);
                }
            break;
        }
        default:
            throw std::invalid_argument("datagen: unknown texture id");
    }
}

// ---- class glyphs ----------------------------------------------------------

Color base_class_color(int cls) {
    static const Color palette[kNumClasses] = {{0.82, 0.18, 0.14},
                                               {0.78, 0.64, 0.38},
                                               {0.22, 0.78, 0.30},
                                               {0.16, 0.32, 0.72},
                                               {0.12, 0.12, 0.16}};
    return palette[cls];
}

Color style_color(int cls, Domain domain, Rng& rng, double bg_lum) {
    Color c = base_class_color(cls);
    double desat = 0.0, jitter = 0.04;
    if (domain == Domain::real) {
        desat = rng.uniform(0.05, 0.2);
        jitter = 0.08;
    } else if (domain == Domain::unseen) {
        desat = rng.uniform(0.1, 0.3);
        jitter = 0.15;
    }
    double g = lum(c);
    double dv = rng.uniform(-jitter, jitter);
    for (double& ch : c) ch = clamp01((1.0 - desat) * ch + desat * g + dv);
    // keep the part visible against its backdrop
    if (std::abs(lum(c) - bg_lum) < 0.2) {
        if (bg_lum > 0.5)
            for (double& ch : c) ch *= 0.5;
        else
            for (double& ch : c) ch = clamp01(0.5 + 0.5 * ch);
    }
    return c;
}

// Geometry is sampled before placement so margins and overlap rejection can
// use the true half-extents. d0/d1 are the class-specific dimensions
// (radius, length/thickness, width/height, ...); p2 picks orientation.
struct GlyphGeom {
    double p2 = 0;
    double d0 = 0, d1 = 0;
    double halfw = 0, halfh = 0;
};

GlyphGeom glyph_geom(int cls, Rng& rng) {
    GlyphGeom g;
    double p0 = rng.uniform(0.0, 1.0);
    double p1 = rng.uniform(0.0, 1.0);
    g.p2 = rng.uniform(0.0, 1.0);
    switch (cls) {
        case 0:  // button disc: radius
            g.d0 = 2.6 + 2.0 * p0;
            g.halfw = g.halfh = g.d0 + 0.5;
            break;
        case 1: {  // striped resistor bar: length, thickness
            g.d0 = 8.0 + 6.0 * p0;
            g.d1 = 2.0 + 2.0 * p1;
            bool horiz = g.p2 < 0.5;
            g.halfw = (horiz ? g.d0 : g.d1) * 0.5 + 0.5;
            g.halfh = (horiz ? g.d1 : g.d0) * 0.5 + 0.5;
            break;
        }
        case 2: {  // led dot pair: dot radius, center gap
            g.d0 = 1.6 + 0.8 * p0;
            g.d1 = 2.0 * g.d0 + 1.5 + 2.0 * p1;
            bool horiz = g.p2 < 0.5;
            g.halfw = (horiz ? g.d1 * 0.5 + g.d0 : g.d0) + 0.5;
            g.halfh = (horiz ? g.d0 : g.d1 * 0.5 + g.d0) + 0.5;
            break;
        }
        case 3:  // pin-header board: width, height
            g.d0 = 16.0 + 22.0 * p0;
            g.d1 = std::max(9.0, g.d0 * (0.58 + 0.32 * p1));
            g.halfw = g.d0 * 0.5 + 0.5;
            g.halfh = g.d1 * 0.5 + 0.5;
            break;
        case 4:  // buzzer ring: outer radius, inner radius
            g.d0 = 3.4 + 2.2 * p0;
            g.d1 = g.d0 * (0.35 + 0.2 * p1);
            g.halfw = g.halfh = g.d0 + 0.5;
            break;
        default:
            throw std::invalid_argument("datagen: class plan entry out of range");
    }
    return g;
}

void draw_glyph(ImageGrid& img, int cls, double cx, double cy, const GlyphGeom& g,
                const Color& col, bool shaded, Extent& e) {
    double shade = shaded ? 0.4 : 0.12;
    switch (cls) {
        case 0: {
            double r = g.d0;
            fill_disc(img, cx, cy, r, col, shade, &e);
            fill_ring(img, cx, cy, r, r - 1.1, scale(col, 0.5), &e);
            fill_disc(img, cx - r * 0.3, cy - r * 0.3, 0.8,
                      {clamp01(col[0] + 0.3), clamp01(col[1] + 0.3), clamp01(col[2] + 0.3)},
                      0.0, &e);
            break;
        }
        case 1: {
            bool horiz = g.p2 < 0.5;
            double hw = (horiz ? g.d0 : g.d1) * 0.5, hh = (horiz ? g.d1 : g.d0) * 0.5;
            int x0 = static_cast<int>(std::lround(cx - hw)), x1 = static_cast<int>(std::lround(cx + hw));
            int y0 = static_cast<int>(std::lround(cy - hh)), y1 = static_cast<int>(std::lround(cy + hh));
            fill_rect(img, x0, y0, x1, y1, col, &e);
            Color band = scale(col, 0.45);
            for (double f : {0.3, 0.5, 0.7}) {
                if (horiz) {
                    int bx = static_cast<int>(std::lround(x0 + f * (x1 - x0)));
                    fill_rect(img, bx, y0, bx, y1, band, &e);
                } else {
                    int by = static_cast<int>(std::lround(y0 + f * (y1 - y0)));
                    fill_rect(img, x0, by, x1, by, band, &e);
                }
            }
            break;
        }
        case 2: {
            bool horiz = g.p2 < 0.5;
            double dx = horiz ? g.d1 * 0.5 : 0.0, dy = horiz ? 0.0 : g.d1 * 0.5;
            fill_disc(img, cx - dx, cy - dy, g.d0, col, shade, &e);
            Color second = {clamp01(col[0] * 0.75 + 0.1), clamp01(col[1] * 0.75 + 0.1),
                            clamp01(col[2] * 0.75 + 0.1)};
            fill_disc(img, cx + dx, cy + dy, g.d0, second, shade, &e);
            break;
        }
        case 3: {
            int x0 = static_cast<int>(std::lround(cx - g.d0 * 0.5));
            int x1 = static_cast<int>(std::lround(cx + g.d0 * 0.5));
            int y0 = static_cast<int>(std::lround(cy - g.d1 * 0.5));
            int y1 = static_cast<int>(std::lround(cy + g.d1 * 0.5));
            fill_rect(img, x0, y0, x1, y1, col, &e);
            // chip in the middle
            int cw = std::max(2, static_cast<int>((x1 - x0) * 0.35));
            int chh = std::max(2, static_cast<int>((y1 - y0) * 0.35));
            int mx = (x0 + x1) / 2, my = (y0 + y1) / 2;
            Color chip = {clamp01(col[0] * 0.4 + 0.3), clamp01(col[1] * 0.4 + 0.3),
                          clamp01(col[2] * 0.4 + 0.3)};
            fill_rect(img, mx - cw / 2, my - chh / 2, mx + cw / 2, my + chh / 2, chip, &e);
            // pin rows along the long edges
            int spacing = g.p2 < 0.5 ? 3 : 4;
            Color pin = {0.07, 0.07, 0.08};
            for (int x = x0 + 2; x <= x1 - 2; x += spacing) {
                fill_disc(img, x, y0 + 1.2, 0.9, pin, 0.0, &e);
                fill_disc(img, x, y1 - 1.2, 0.9, pin, 0.0, &e);
            }
            break;
        }
        case 4: {
            fill_ring(img, cx, cy, g.d0, g.d1, col, &e);
            fill_disc(img, cx, cy, g.d1 * 0.5, col, 0.0, &e);
            break;
        }
        default:
            throw std::invalid_argument("datagen: class plan entry out of range");
    }
    if (e.empty()) put_px(img, static_cast<int>(std::lround(cx)), static_cast<int>(std::lround(cy)), col, &e);
}

// ---- clutter and distractors ----------------------------------------------

double clutter_contrast(Domain d) {
    switch (d) {
        case Domain::real: return 0.16;
        case Domain::synthetic: return 0.1;
        case Domain::unseen: return 0.3;
    }
    return 0.16;
}

void draw_clutter(ImageGrid& img, Rng& rng, double bg_lum, double contrast) {
    const int W = img.width, H = img.height;
    double sign = rng.chance(0.5) ? 1.0 : -1.0;
    double v = std::min(0.98, std::max(0.02, bg_lum + sign * rng.uniform(0.5 * contrast, contrast)));
    Color c = {v, v, v};
    c[rng.uniform_int(0, 2)] = clamp01(v + rng.uniform(-0.08, 0.08));
    double cx = rng.uniform(0, W), cy = rng.uniform(0, H);
    switch (rng.uniform_int(0, 4)) {
        case 0:
            fill_disc(img, cx, cy, rng.uniform(2.0, 6.0), c, 0.0, nullptr, 0.55);
            break;
        case 1:
            draw_line(img, cx, cy, cx + rng.uniform(-14.0, 14.0), cy + rng.uniform(-14.0, 14.0), c);
            break;
        case 2: {  // hollow rectangle
            int w = rng.uniform_int(4, 14), h = rng.uniform_int(4, 14);
            int x0 = static_cast<int>(cx), y0 = static_cast<int>(cy);
            fill_rect(img, x0, y0, x0 + w, y0, c);
            fill_rect(img, x0, y0 + h, x0 + w, y0 + h, c);
            fill_rect(img, x0, y0, x0, y0 + h, c);
            fill_rect(img, x0 + w, y0, x0 + w, y0 + h, c);
            break;
        }
        case 3: {  // cross
            double arm = rng.uniform(2.0, 5.0);
            draw_line(img, cx - arm, cy, cx + arm, cy, c);
            draw_line(img, cx, cy - arm, cx, cy + arm, c);
            break;
        }
        case 4: {  // wedge
            int rows = rng.uniform_int(3, 7);
            for (int i = 0; i < rows; ++i)
                fill_rect(img, static_cast<int>(cx), static_cast<int>(cy) + i,
                          static_cast<int>(cx) + (rows - i), static_cast<int>(cy) + i, c);
            break;
        }
    }
}

// Perforated speaker-grill plate: a lattice of small discs and rings that
// shares local shape statistics with the disc/ring classes but carries no
// annotation. The worst offender for background false positives.
void draw_grill(ImageGrid& img, Rng& rng, double bg_lum) {
    const int W = img.width, H = img.height;
    int w = rng.uniform_int(18, 34), h = rng.uniform_int(12, 24);
    int x0 = rng.uniform_int(1, std::max(1, W - w - 2));
    int y0 = rng.uniform_int(1, std::max(1, H - h - 2));
    double pv = clamp01(bg_lum + (bg_lum > 0.5 ? -1.0 : 1.0) * rng.uniform(0.08, 0.16));
    fill_rect(img, x0, y0, x0 + w, y0 + h, {pv, pv, pv * 0.96});
    double hole = clamp01(pv - rng.uniform(0.25, 0.4));
    Color hc = {hole, hole, hole};
    int spacing = rng.uniform_int(4, 6);
    double r = rng.uniform(1.1, 1.7);
    int row = 0;
    for (int y = y0 + spacing / 2 + 1; y <= y0 + h - 2; y += spacing, ++row)
        for (int x = x0 + spacing / 2 + 1; x <= x0 + w - 2; x += spacing) {
            if (row % 2 == 0)
                fill_disc(img, x, y, r, hc, 0.0);
            else
                fill_ring(img, x, y, r, r * 0.45, hc);
        }
}

// ---- post-processing -------------------------------------------------------

void box_blur(ImageGrid& img, int radius) {
    ImageGrid out(img.height, img.width);
    const double inv = 1.0 / ((2 * radius + 1) * (2 * radius + 1));
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < img.height; ++y)
            for (int x = 0; x < img.width; ++x) {
                double acc = 0.0;
                for (int dy = -radius; dy <= radius; ++dy)
                    for (int dx = -radius; dx <= radius; ++dx) {
                        int yy = std::clamp(y + dy, 0, img.height - 1);
                        int xx = std::clamp(x + dx, 0, img.width - 1);
                        acc += img.at(c, yy, xx);
                    }
                out.at(c, y, x) = static_cast<float>(acc * inv);
            }
    img = std::move(out);
}

void validate_spec(const DomainSpec& sp) {
    if (sp.image_size < 16) throw std::invalid_argument("datagen: image size too small");
    if (sp.textures.empty()) throw std::invalid_argument("datagen: no textures");
    for (int t : sp.textures)
        if (t < 0 || t > 12) throw std::invalid_argument("datagen: unknown texture id");
    if (sp.min_objects < 0 || sp.max_objects < sp.min_objects)
        throw std::invalid_argument("datagen: bad object count range");
    if (sp.min_clutter < 0 || sp.max_clutter < sp.min_clutter)
        throw std::invalid_argument("datagen: bad clutter count range");
    if (sp.brightness_max < sp.brightness_min)
        throw std::invalid_argument("datagen: bad brightness range");
    if (sp.noise_sigma < 0.0) throw std::invalid_argument("datagen: negative noise sigma");
    if (sp.blur_radius < 0) throw std::invalid_argument("datagen: negative blur radius");
    if (sp.blur_prob < 0.0 || sp.blur_prob > 1.0)
        throw std::invalid_argument("datagen: blur probability outside [0,1]");
    if (sp.grill_prob < 0.0 || sp.grill_prob > 1.0)
        throw std::invalid_argument("datagen: grill probability outside [0,1]");
    double wsum = 0.0;
    for (double w : sp.class_weights) {
        if (w < 0.0) throw std::invalid_argument("datagen: negative class weight");
        wsum += w;
    }
    if (sp.max_objects > 0 && wsum <= 0.0)
        throw std::invalid_argument("datagen: class weights sum to zero");
}

uint64_t fnv1a(const void* data, size_t n, uint64_t h) {
    auto* p = static_cast<const unsigned char*>(data);
    for (size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

Domain parse_domain(const std::string& s) {
    if (s == "real") return Domain::real;
    if (s == "synthetic") return Domain::synthetic;
    if (s == "unseen") return Domain::unseen;
    throw std::runtime_error("dataset: unknown domain '" + s + "'");
}

void write_ppm(const std::string& path, const ImageGrid& img) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("dataset: cannot write " + path);
    f << "P6\n" << img.width << " " << img.height << "\n255\n";
    std::vector<unsigned char> row(static_cast<size_t>(img.width) * 3);
    for (int y = 0; y < img.height; ++y) {
        for (int x = 0; x < img.width; ++x)
            for (int c = 0; c < 3; ++c)
                row[3 * x + c] = static_cast<unsigned char>(
                    std::lround(clamp01(img.at(c, y, x)) * 255.0));
        f.write(reinterpret_cast<const char*>(row.data()), row.size());
    }
    if (!f) throw std::runtime_error("dataset: cannot write " + path);
}

ImageGrid read_ppm(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("dataset: cannot read " + path);
    std::string magic;
    int w = 0, h = 0, maxv = 0;
    f >> magic >> w >> h >> maxv;
    if (magic != "P6" || w <= 0 || h <= 0 || maxv != 255)
        throw std::runtime_error("dataset: " + path + " is not an 8-bit P6 image");
    f.get();  // single whitespace after the header
    std::vector<unsigned char> raw(static_cast<size_t>(w) * h * 3);
    f.read(reinterpret_cast<char*>(raw.data()), raw.size());
    if (static_cast<size_t>(f.gcount()) != raw.size())
        throw std::runtime_error("dataset: " + path + " is truncated");
    ImageGrid img(h, w);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c)
                img.at(c, y, x) = static_cast<float>(raw[(static_cast<size_t>(y) * w + x) * 3 + c] / 255.0);
    return img;
}

std::string hex64(uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

}  // namespace

DomainSpec real_domain() {
    DomainSpec d;
    d.domain = Domain::real;
    d.textures = {0, 1, 2, 3};
    d.brightness_min = -0.06;
    d.brightness_max = 0.06;
    d.noise_sigma = 0.035;
    d.blur_radius = 1;
    d.blur_prob = 0.3;
    d.min_objects = 1;
    d.max_objects = 6;
    d.min_clutter = 2;
    d.max_clutter = 8;
    d.grill_prob = 0.0;  // the grid distractor is exclusive to the unseen set
    return d;
}

DomainSpec synthetic_domain() {
    // flat-render look plus mild domain randomization (noise/brightness/
    // clutter jitter), the usual recipe for synthetic pipelines; without it
    // the two federated clients drift too far apart for averaging to work
    DomainSpec d;
    d.domain = Domain::synthetic;
    d.textures = {4, 5, 6, 7};
    d.brightness_min = -0.06;
    d.brightness_max = 0.06;
    d.noise_sigma = 0.03;
    d.blur_radius = 1;
    d.blur_prob = 0.25;
    d.min_objects = 1;
    d.max_objects = 6;
    d.min_clutter = 2;
    d.max_clutter = 8;
    d.grill_prob = 0.0;
    return d;
}

DomainSpec unseen_domain() {
    DomainSpec d;
    d.domain = Domain::unseen;
    d.textures = {8, 9, 10, 11, 12};
    d.brightness_min = -0.18;
    d.brightness_max = 0.22;
    d.noise_sigma = 0.05;
    d.blur_radius = 1;
    d.blur_prob = 0.45;
    d.min_objects = 8;
    d.max_objects = 14;
    d.min_clutter = 6;
    d.max_clutter = 12;
    d.grill_prob = 0.35;
    return d;
}

SceneSample render_scene(const DomainSpec& spec, uint64_t seed,
                         const std::vector<int>* class_plan) {
    validate_spec(spec);
    if (class_plan)
        for (int cls : *class_plan)
            if (cls < 0 || cls >= kNumClasses)
                throw std::invalid_argument("datagen: class plan entry out of range");

    Rng rng(seed);
    const int S = spec.image_size;
    ImageGrid img(S, S);
    int tex = spec.textures[rng.uniform_int(0, static_cast<int>(spec.textures.size()) - 1)];
    paint_texture(img, tex, rng);

    double bg_lum = 0.0;
    for (float v : img.data) bg_lum += v;
    bg_lum /= static_cast<double>(img.data.size());

    int nclut = rng.uniform_int(spec.min_clutter, spec.max_clutter);
    double contrast = clutter_contrast(spec.domain);
    for (int i = 0; i < nclut; ++i) draw_clutter(img, rng, bg_lum, contrast);
    if (spec.grill_prob > 0.0 && rng.chance(spec.grill_prob)) draw_grill(img, rng, bg_lum);

    std::vector<int> classes;
    if (class_plan) {
        classes = *class_plan;
    } else {
        int n = rng.uniform_int(spec.min_objects, spec.max_objects);
        std::discrete_distribution<int> pick(spec.class_weights.begin(), spec.class_weights.end());
        classes.resize(n);
        for (int& c : classes) c = pick(rng.eng);
    }

    std::vector<BoundingBox> boxes;
    std::vector<BoundingBox> approx;  // placement-time estimates for overlap rejection
    boxes.reserve(classes.size());
    for (int cls : classes) {
        GlyphGeom geom = glyph_geom(cls, rng);
        double lo_x = geom.halfw + 1.0, hi_x = S - 2.0 - geom.halfw;
        double lo_y = geom.halfh + 1.0, hi_y = S - 2.0 - geom.halfh;
        if (hi_x < lo_x) hi_x = lo_x = S * 0.5;
        if (hi_y < lo_y) hi_y = lo_y = S * 0.5;
        double best_cx = 0, best_cy = 0, best_overlap = 2.0;
        for (int attempt = 0; attempt < 40; ++attempt) {
            double cx = rng.uniform(lo_x, hi_x), cy = rng.uniform(lo_y, hi_y);
            BoundingBox cand(cls, cx - geom.halfw, cy - geom.halfh, cx + geom.halfw + 1.0,
                             cy + geom.halfh + 1.0);
            double worst = 0.0;
            for (const auto& b : approx) worst = std::max(worst, iou(cand, b));
            if (worst < best_overlap) {
                best_overlap = worst;
                best_cx = cx;
                best_cy = cy;
            }
            if (worst < 0.25) break;
        }
        approx.emplace_back(cls, best_cx - geom.halfw, best_cy - geom.halfh,
                            best_cx + geom.halfw + 1.0, best_cy + geom.halfh + 1.0);
        Color col = style_color(cls, spec.domain, rng, bg_lum);
        Extent e;
        draw_glyph(img, cls, best_cx, best_cy, geom, col, spec.domain != Domain::synthetic, e);
        boxes.emplace_back(cls, e.x0, e.y0, e.x1 + 1, e.y1 + 1);
    }

    double bshift = rng.uniform(spec.brightness_min, spec.brightness_max);
    if (bshift != 0.0)
        for (float& v : img.data) v = static_cast<float>(v + bshift);
    if (spec.blur_radius > 0 && spec.blur_prob > 0.0 && rng.chance(spec.blur_prob))
        box_blur(img, spec.blur_radius);
    if (spec.noise_sigma > 0.0)
        for (float& v : img.data) v = static_cast<float>(v + rng.normal(spec.noise_sigma));
    // quantize to exact 1/255 steps so a PPM round-trip is lossless
    for (float& v : img.data)
        v = static_cast<float>(std::round(clamp01(v) * 255.0) / 255.0);

    SceneSample s;
    s.image = std::move(img);
    s.boxes = std::move(boxes);
    s.domain = spec.domain;
    s.background_only = s.boxes.empty();
    return s;
}

Dataset generate_dataset(const DomainSpec& spec, int n, bool class_balance, uint64_t seed) {
    if (n <= 0) throw std::invalid_argument("datagen: non-positive dataset size");
    validate_spec(spec);
    Dataset out;
    out.reserve(n);
    if (!class_balance || spec.max_objects == 0) {
        for (int i = 0; i < n; ++i)
            out.push_back(render_scene(spec, derive_seed(seed, "scene", i)));
        return out;
    }
    // Draw all object counts up front, then hand out classes from a shuffled
    // cyclic pool so per-class totals differ by at most one.
    Rng plan(derive_seed(seed, "plan"));
    std::vector<int> counts(n);
    int total = 0;
    for (int i = 0; i < n; ++i) {
        counts[i] = plan.uniform_int(spec.min_objects, spec.max_objects);
        total += counts[i];
    }
    std::vector<int> pool(total);
    for (int j = 0; j < total; ++j) pool[j] = j % kNumClasses;
    std::shuffle(pool.begin(), pool.end(), plan.eng);
    int cursor = 0;
    for (int i = 0; i < n; ++i) {
        std::vector<int> slice(pool.begin() + cursor, pool.begin() + cursor + counts[i]);
        cursor += counts[i];
        out.push_back(render_scene(spec, derive_seed(seed, "scene", i), &slice));
    }
    return out;
}

Dataset make_unseen_testset(uint64_t seed) {
    DomainSpec u = unseen_domain();
    Dataset out = generate_dataset(u, 100, true, derive_seed(seed, "unseen-annotated"));
    DomainSpec bg = u;
    bg.min_objects = bg.max_objects = 0;
    for (int i = 0; i < 16; ++i) {
        DomainSpec probe = bg;
        probe.grill_prob = (i % 3 == 0) ? 1.0 : 0.0;  // 6 of 16 probes carry the grill
        out.push_back(render_scene(probe, derive_seed(seed, "unseen-background", i)));
    }
    return out;
}

uint64_t sample_hash(const SceneSample& s) {
    uint64_t h = 0xcbf29ce484222325ULL;
    int32_t dims[2] = {s.image.height, s.image.width};
    h = fnv1a(dims, sizeof dims, h);
    std::vector<unsigned char> bytes(s.image.data.size());
    for (size_t i = 0; i < bytes.size(); ++i)
        bytes[i] = static_cast<unsigned char>(std::lround(clamp01(s.image.data[i]) * 255.0));
    h = fnv1a(bytes.data(), bytes.size(), h);
    for (const auto& b : s.boxes) {
        int32_t cls = b.class_id;
        h = fnv1a(&cls, sizeof cls, h);
        double coords[4] = {b.x_min, b.y_min, b.x_max, b.y_max};
        h = fnv1a(coords, sizeof coords, h);
    }
    unsigned char tail[2] = {static_cast<unsigned char>(s.domain),
                             static_cast<unsigned char>(s.background_only ? 1 : 0)};
    return fnv1a(tail, sizeof tail, h);
}

uint64_t dataset_hash(const Dataset& ds) {
    uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& s : ds) {
        uint64_t sh = sample_hash(s);
        h = fnv1a(&sh, sizeof sh, h);
    }
    return h;
}

void save_dataset(const std::string& dir, const Dataset& ds, const DomainSpec* spec) {
    std::error_code ec;
    fs::create_directories(fs::path(dir) / "images", ec);
    fs::create_directories(fs::path(dir) / "labels", ec);
    if (ec) throw std::runtime_error("dataset: cannot create " + dir);

    nlohmann::json manifest;
    manifest["format"] = "fedscope-dataset";
    manifest["version"] = 1;
    manifest["count"] = ds.size();
    if (spec)
        manifest["domain_spec"] = {{"domain", domain_name(spec->domain)},
                                   {"textures", spec->textures},
                                   {"brightness", {spec->brightness_min, spec->brightness_max}},
                                   {"noise_sigma", spec->noise_sigma},
                                   {"blur_radius", spec->blur_radius},
                                   {"blur_prob", spec->blur_prob},
                                   {"objects", {spec->min_objects, spec->max_objects}},
                                   {"clutter", {spec->min_clutter, spec->max_clutter}},
                                   {"grill_prob", spec->grill_prob},
                                   {"class_weights", spec->class_weights},
                                   {"image_size", spec->image_size}};
    manifest["samples"] = nlohmann::json::array();
    char name[64];
    for (size_t i = 0; i < ds.size(); ++i) {
        const SceneSample& s = ds[i];
        std::snprintf(name, sizeof name, "img_%05zu", i);
        std::string image_rel = std::string("images/") + name + ".ppm";
        std::string label_rel = std::string("labels/") + name + ".txt";
        write_ppm((fs::path(dir) / image_rel).string(), s.image);

        std::ofstream lf(fs::path(dir) / label_rel);
        if (!lf) throw std::runtime_error("dataset: cannot write " + label_rel);
        const double W = s.image.width, H = s.image.height;
        char line[256];
        for (const auto& b : s.boxes) {
            double cx = (b.x_min + b.x_max) * 0.5 / W;
            double cy = (b.y_min + b.y_max) * 0.5 / H;
            double bw = (b.x_max - b.x_min) / W;
            double bh = (b.y_max - b.y_min) / H;
            std::snprintf(line, sizeof line, "%d %.17g %.17g %.17g %.17g\n", b.class_id, cx, cy,
                          bw, bh);
            lf << line;
        }
        lf.close();

        manifest["samples"].push_back({{"image", image_rel},
                                       {"labels", label_rel},
                                       {"domain", domain_name(s.domain)},
                                       {"background_only", s.background_only},
                                       {"hash", hex64(sample_hash(s))}});
    }
    std::ofstream mf(fs::path(dir) / "manifest.json");
    if (!mf) throw std::runtime_error("dataset: cannot write manifest in " + dir);
    mf << manifest.dump(2) << "\n";
}

Dataset load_dataset(const std::string& dir) {
    std::ifstream mf(fs::path(dir) / "manifest.json");
    if (!mf) throw std::runtime_error("dataset: no manifest.json in " + dir);
    nlohmann::json manifest;
    try {
        mf >> manifest;
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error("dataset: bad manifest in " + dir + ": " + e.what());
    }
    if (manifest.value("format", "") != "fedscope-dataset")
        throw std::runtime_error("dataset: " + dir + " is not a dataset directory");

    Dataset out;
    for (const auto& entry : manifest.at("samples")) {
        SceneSample s;
        std::string image_rel = entry.at("image");
        s.image = read_ppm((fs::path(dir) / image_rel).string());
        s.domain = parse_domain(entry.at("domain"));
        s.background_only = entry.at("background_only");

        std::string label_rel = entry.at("labels");
        std::ifstream lf(fs::path(dir) / label_rel);
        if (!lf) throw std::runtime_error("dataset: cannot read " + label_rel);
        const double W = s.image.width, H = s.image.height;
        int cls;
        double cx, cy, bw, bh;
        while (lf >> cls >> cx >> cy >> bw >> bh)
            s.boxes.emplace_back(cls, (cx - bw * 0.5) * W, (cy - bh * 0.5) * H,
                                 (cx + bw * 0.5) * W, (cy + bh * 0.5) * H);

        uint64_t expect = std::stoull(entry.at("hash").get<std::string>(), nullptr, 16);
        if (sample_hash(s) != expect)
            throw std::runtime_error("dataset: hash mismatch for " + image_rel +
                                     " (corrupt or stale)");
        out.push_back(std::move(s));
    }
    if (manifest.at("count").get<size_t>() != out.size())
        throw std::runtime_error("dataset: manifest count disagrees with sample list in " + dir);
    return out;
}

}  // namespace fedscope::datagen
