#include "mscff/synthetic.hpp"

#include <algorithm>
#include <cmath>

#include "mscff/errors.hpp"
#include "mscff/random.hpp"

namespace mscff {

namespace {

double smoothstep(double t) { return t * t * (3.0 - 2.0 * t); }

// Bilinearly interpolated lattice noise with values in [lo, hi].
std::vector<double> value_noise(std::size_t h, std::size_t w, double scale, double lo, double hi, Rng& rng) {
    const std::size_t gh = static_cast<std::size_t>(std::ceil(h / scale)) + 2;
    const std::size_t gw = static_cast<std::size_t>(std::ceil(w / scale)) + 2;
    std::vector<double> grid(gh * gw);
    for (auto& g : grid) g = rng.uniform(lo, hi);
    std::vector<double> out(h * w);
    for (std::size_t y = 0; y < h; ++y) {
        const double fy = y / scale;
        const auto iy = static_cast<std::size_t>(fy);
        const double ty = smoothstep(fy - iy);
        for (std::size_t x = 0; x < w; ++x) {
            const double fx = x / scale;
            const auto ix = static_cast<std::size_t>(fx);
            const double tx = smoothstep(fx - ix);
            const double top = grid[iy * gw + ix] * (1 - tx) + grid[iy * gw + ix + 1] * tx;
            const double bot = grid[(iy + 1) * gw + ix] * (1 - tx) + grid[(iy + 1) * gw + ix + 1] * tx;
            out[y * w + x] = top * (1 - ty) + bot * ty;
        }
    }
    return out;
}

double profile(const std::vector<CloudBlob>& clouds, double y, double x) {
    double p = 0.0;
    for (const auto& c : clouds) {
        const double d2 = ((y - c.cy) * (y - c.cy) + (x - c.cx) * (x - c.cx)) / (c.radius * c.radius);
        p = std::max(p, std::exp2(-d2));
    }
    return p;
}

}  // namespace

void SceneSpec::validate() const {
    if (h == 0 || w == 0 || h % 8 != 0 || w % 8 != 0)
        throw ArgumentError("scene size must be positive and divisible by 8");
    if (bands == 0) throw ArgumentError("scene needs at least one band");
    if (cloud_min > cloud_max) throw ArgumentError("cloud_min exceeds cloud_max");
    if (radius_min < 2.0 || radius_max < radius_min) throw ArgumentError("radii must satisfy 2 <= min <= max");
    if (std::hypot(shadow_dy, shadow_dx) >= std::min(h, w) / 2.0)
        throw ArgumentError("shadow offset must be shorter than half the scene size");
    if (!(background_min >= 0.0 && background_min <= background_max && background_max <= 1.0))
        throw ArgumentError("background range must lie in [0, 1]");
    if (!(cloud_level > background_max && cloud_level <= 1.0))
        throw ArgumentError("cloud_level must exceed the background and be <= 1");
    if (!(fringe_level >= 0.0 && fringe_level < 1.0)) throw ArgumentError("fringe_level must be in [0, 1)");
    if (!(shadow_darkening > 0.0 && shadow_darkening <= 1.0)) throw ArgumentError("shadow_darkening must be in (0, 1]");
    if (!(softness > 0.0 && softness < 1.0)) throw ArgumentError("softness must be in (0, 1)");
    if (!(texture_scale >= 1.0)) throw ArgumentError("texture_scale must be >= 1");
    for (const auto& c : clouds)
        if (c.radius < 2.0) throw ArgumentError("explicit cloud radius must be >= 2");
}

Scene generate_scene(const SceneSpec& spec) {
    spec.validate();
    Rng rng(spec.seed);
    Scene scene{RasterImage(spec.bands, spec.h, spec.w), MaskRaster(spec.h, spec.w), spec.seed};

    std::vector<CloudBlob> clouds = spec.clouds;
    if (clouds.empty()) {
        const std::size_t count = spec.cloud_min + rng.below(spec.cloud_max - spec.cloud_min + 1);
        for (std::size_t i = 0; i < count; ++i) {
            CloudBlob c;
            c.cy = rng.uniform(0.0, static_cast<double>(spec.h));
            c.cx = rng.uniform(0.0, static_cast<double>(spec.w));
            c.radius = rng.uniform(spec.radius_min, spec.radius_max);
            clouds.push_back(c);
        }
    }

    const std::size_t n = spec.h * spec.w;
    std::vector<double> cloud_p(n), shadow_p(n);
    for (std::size_t y = 0; y < spec.h; ++y)
        for (std::size_t x = 0; x < spec.w; ++x) {
            const double fy = static_cast<double>(y), fx = static_cast<double>(x);
            cloud_p[y * spec.w + x] = profile(clouds, fy, fx);
            shadow_p[y * spec.w + x] = profile(clouds, fy - spec.shadow_dy, fx - spec.shadow_dx);
        }

    for (std::size_t i = 0; i < n; ++i) {
        if (cloud_p[i] >= spec.softness)
            scene.mask.labels[i] = kLabelCloud;
        else if (shadow_p[i] >= spec.softness)
            scene.mask.labels[i] = kLabelShadow;
    }

    for (std::size_t b = 0; b < spec.bands; ++b) {
        const auto bg = value_noise(spec.h, spec.w, spec.texture_scale, spec.background_min, spec.background_max, rng);
        auto band = scene.image.band(b);
        for (std::size_t i = 0; i < n; ++i) {
            double v = bg[i];
            if (scene.mask.labels[i] == kLabelShadow) v = std::max(0.0, v - spec.shadow_darkening);
            if (scene.mask.labels[i] == kLabelCloud)
                v = spec.cloud_level;
            else if (scene.mask.labels[i] == kLabelClear)
                v += (spec.cloud_level - v) * spec.fringe_level * (cloud_p[i] / spec.softness);
            band[i] = static_cast<float>(v);
        }
    }
    return scene;
}

Dataset generate_dataset(std::size_t n, const SceneSpec& base, std::uint64_t seed) {
    if (n < 2) throw ArgumentError("generate_dataset needs n >= 2");
    const std::size_t n_train = std::clamp<std::size_t>(static_cast<std::size_t>(std::llround(0.8 * n)), 1, n - 1);
    Dataset d;
    for (std::size_t i = 0; i < n; ++i) {
        SceneSpec spec = base;
        spec.seed = derive_seed(seed, i);
        (i < n_train ? d.train : d.val).push_back(generate_scene(spec));
    }
    return d;
}

}  // namespace mscff
