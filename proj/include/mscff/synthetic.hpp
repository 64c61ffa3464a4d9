#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "mscff/raster.hpp"

namespace mscff {

struct CloudBlob {
    double cy = 0.0;
    double cx = 0.0;
    double radius = 4.0;
};

/// Toy cloudy scene. Each cloud is a Gaussian-profiled disc
/// P(d) = 2^(-(d/r)^2); pixels with P >= softness are labelled cloud and
/// painted at cloud_level, weaker fringe pixels are brightened towards
/// fringe_level. The shadow is the cloud footprint moved by (shadow_dy,
/// shadow_dx), darkened by shadow_darkening where no cloud covers it.
struct SceneSpec {
    std::size_t h = 64;
    std::size_t w = 64;
    std::size_t bands = 4;
    std::size_t cloud_min = 1;
    std::size_t cloud_max = 3;
    double radius_min = 5.0;
    double radius_max = 12.0;
    int shadow_dy = 8;
    int shadow_dx = 8;
    double cloud_level = 1.0;
    double fringe_level = 0.6;
    double shadow_darkening = 0.3;
    double background_min = 0.35;
    double background_max = 0.6;
    double texture_scale = 8.0;  // lattice spacing of the background noise
    double softness = 0.5;
    std::uint64_t seed = 1;
    /// When non-empty, used instead of random placement.
    std::vector<CloudBlob> clouds;

    /// Throws ArgumentError on any broken invariant.
    void validate() const;
};

struct Scene {
    RasterImage image;
    MaskRaster mask;
    std::uint64_t seed = 0;
};

Scene generate_scene(const SceneSpec& spec);

struct Dataset {
    std::vector<Scene> train;
    std::vector<Scene> val;
};

/// n scenes from `base` with per-scene seeds derived from `seed`; the first
/// round(0.8 n) (at least 1, at most n - 1) are training scenes. Throws
/// ArgumentError when n < 2.
Dataset generate_dataset(std::size_t n, const SceneSpec& base, std::uint64_t seed);

}  // namespace mscff
