#include "biospix/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "biospix/common.hpp"

namespace biospix {

void SynthConfig::validate() const {
    if (h < 16 || w < 16 || h % 16 != 0 || w % 16 != 0)
        throw ParamError("synth: extents must be positive multiples of 16, got " +
                         std::to_string(h) + "x" + std::to_string(w));
    if (regions_min < 2 || regions_max < regions_min || regions_max > 50)
        throw ParamError("synth: region count range must satisfy 2 <= min <= max <= 50");
    if (!(jitter >= 0.0) || !(noise >= 0.0))
        throw ParamError("synth: jitter and noise must be non-negative");
    if (count < 1) throw ParamError("synth: count must be positive");
}

namespace {

struct Shape {
    bool ellipse = false;
    double cy = 0, cx = 0;
    // ellipse: half axes + rotation
    double a = 0, b = 0, theta = 0;
    // star polygon: per-vertex angle/radius, angles ascending
    std::vector<double> ang, rad;

    bool contains(double y, double x) const {
        double dy = y - cy, dx = x - cx;
        if (ellipse) {
            double c = std::cos(theta), s = std::sin(theta);
            double u = dx * c + dy * s, v = -dx * s + dy * c;
            return u * u / (a * a) + v * v / (b * b) <= 1.0;
        }
        double r = std::hypot(dy, dx);
        if (r == 0.0) return true;
        double phi = std::atan2(dy, dx);  // [-pi, pi]
        size_t n = ang.size();
        // find the wedge [ang[i], ang[i+1]) holding phi; angles cover [-pi, pi)
        size_t i = 0;
        while (i + 1 < n && ang[i + 1] <= phi) ++i;
        size_t j = (i + 1) % n;
        double a0 = ang[i], a1 = ang[j];
        double span = a1 - a0;
        if (span <= 0) span += 2.0 * kPi;
        double d = phi - a0;
        if (d < 0) d += 2.0 * kPi;
        double t = d / span;
        // boundary radius interpolated linearly in angle: star-convex fill
        double rb = rad[i] + (rad[j] - rad[i]) * t;
        return r <= rb;
    }

    static constexpr double kPi = 3.14159265358979323846;
};

Shape draw_shape(Rng& rng, int h, int w) {
    Shape sh;
    double m = static_cast<double>(std::min(h, w));
    sh.cy = rng.uniform(0.15, 0.85) * h;
    sh.cx = rng.uniform(0.15, 0.85) * w;
    sh.ellipse = rng.bernoulli(0.5);
    if (sh.ellipse) {
        sh.a = rng.uniform(0.10, 0.30) * m;
        sh.b = rng.uniform(0.10, 0.30) * m;
        sh.theta = rng.uniform(0.0, Shape::kPi);
        return sh;
    }
    int verts = 3 + static_cast<int>(rng.uniform_int(5));  // 3..7
    double base = rng.uniform(0.12, 0.30) * m;
    sh.ang.resize(verts);
    sh.rad.resize(verts);
    double phase = rng.uniform(0.0, 2.0 * Shape::kPi);
    for (int i = 0; i < verts; ++i) {
        double jig = rng.uniform(-0.3, 0.3);
        sh.ang[i] = phase + 2.0 * Shape::kPi * (i + jig) / verts;
        sh.rad[i] = base * rng.uniform(0.55, 1.0);
    }
    // fold angles into [-pi, pi) and sort with radii in tow
    std::vector<int> order(verts);
    for (int i = 0; i < verts; ++i) {
        sh.ang[i] = std::remainder(sh.ang[i], 2.0 * Shape::kPi);
        order[i] = i;
    }
    std::sort(order.begin(), order.end(),
              [&](int p, int q) { return sh.ang[p] < sh.ang[q]; });
    std::vector<double> ang(verts), rad(verts);
    for (int i = 0; i < verts; ++i) {
        ang[i] = sh.ang[order[i]];
        rad[i] = sh.rad[order[i]];
    }
    sh.ang = std::move(ang);
    sh.rad = std::move(rad);
    return sh;
}

}  // namespace

SynthScene make_scene(const SynthConfig& cfg) {
    cfg.validate();
    Rng rng(cfg.seed);
    const int h = cfg.h, w = cfg.w;
    const int span = cfg.regions_max - cfg.regions_min + 1;
    const int n = cfg.regions_min + static_cast<int>(rng.uniform_int(span));

    SynthScene out;
    out.labels.h = h;
    out.labels.w = w;
    out.labels.v.assign(static_cast<size_t>(h) * w, 0);
    out.n_categories = n;

    const int kMinPixels = 16;
    for (int attempt = 0;; ++attempt) {
        if (attempt >= 1000)
            throw NumericError("synth: could not place " + std::to_string(n) +
                               " regions of >= 16 px in " + std::to_string(h) + "x" +
                               std::to_string(w) + " after 1000 attempts");
        std::fill(out.labels.v.begin(), out.labels.v.end(), 0);
        for (int c = 1; c < n; ++c) {
            Shape sh = draw_shape(rng, h, w);
            for (int y = 0; y < h; ++y)
                for (int x = 0; x < w; ++x)
                    if (sh.contains(y + 0.5, x + 0.5)) out.labels.v[static_cast<size_t>(y) * w + x] = c;
        }
        std::vector<int> pix(n, 0);
        for (int lv : out.labels.v) ++pix[lv];
        if (*std::min_element(pix.begin(), pix.end()) >= kMinPixels) break;
    }

    // flat colors kept pairwise-distinct so boundaries stay learnable
    std::vector<double> color(static_cast<size_t>(n) * 3);
    for (int tries = 0; tries < 200; ++tries) {
        for (double& v : color) v = rng.uniform(0.15, 0.85);
        double worst = 1e30;
        for (int i = 0; i < n; ++i)
            for (int j = i + 1; j < n; ++j) {
                double d = 0;
                for (int k = 0; k < 3; ++k)
                    d = std::max(d, std::abs(color[i * 3 + k] - color[j * 3 + k]));
                worst = std::min(worst, d);
            }
        if (worst >= 0.12) break;
    }
    std::vector<double> off(static_cast<size_t>(n) * 3, 0.0);
    if (cfg.jitter > 0)
        for (double& v : off) v = cfg.jitter * rng.gaussian();

    out.image = Tensor<float>::zeros({1, 3, h, w});
    float* im = out.image.data();
    const size_t plane = static_cast<size_t>(h) * w;
    for (size_t p = 0; p < plane; ++p) {
        int c = out.labels.v[p];
        for (int k = 0; k < 3; ++k) {
            double v = color[c * 3 + k] + off[c * 3 + k];
            if (cfg.noise > 0) v += cfg.noise * rng.gaussian();
            im[k * plane + p] = static_cast<float>(std::clamp(v, 0.0, 1.0));
        }
    }
    return out;
}

}  // namespace biospix
