#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "mscff/network.hpp"
#include "mscff/raster.hpp"

namespace mscff {

struct InferenceConfig {
    double threshold = 0.5;
    std::size_t patch = 256;
    std::size_t min_overlap = 32;
    bool normalize = false;  // apply normalize_max before tiling

    /// Throws ConfigError on any broken invariant.
    void validate() const;
};

/// Divides each band by its maximum over valid pixels. Bands whose maximum
/// is not positive become zero; negative values clamp to 0 and nodata pixels
/// are set to 0.
RasterImage normalize_max(const RasterImage& img);

/// v' = clamp(gain * v + offset, 0, 1) per band. ArgumentError when the
/// coefficient counts differ from the band count.
RasterImage linear_stretch(const RasterImage& img, std::span<const double> gains, std::span<const double> offsets);

/// Tile origins for an h x w image. Dimensions below `patch` are reflect-padded
/// to `patch` (padded_h, padded_w) and get a single origin.
struct TileGrid {
    std::size_t patch = 0;
    std::size_t h = 0;
    std::size_t w = 0;
    std::size_t padded_h = 0;
    std::size_t padded_w = 0;
    std::vector<std::size_t> rows;
    std::vector<std::size_t> cols;

    /// (row, col) pairs in row-major order.
    std::vector<std::pair<std::size_t, std::size_t>> origins() const;
};

/// Origins step by patch - min_overlap; the last one is clamped to dim - patch.
TileGrid tile_plan(std::size_t h, std::size_t w, const InferenceConfig& cfg);

/// Reflect-pads (without repeating the edge) to at least padded_h x padded_w.
RasterImage reflect_pad(const RasterImage& img, std::size_t padded_h, std::size_t padded_w);

struct TileOutput {
    std::size_t row = 0;
    std::size_t col = 0;
    Tensor4<float> maps;  // 1 x 2 x patch x patch
};

/// Per-channel maximum over every tile covering each pixel of the h x w
/// output; tile parts beyond h or w are ignored. ContractViolation when a
/// pixel is left uncovered.
Tensor4<float> stitch_max(std::span<const TileOutput> tiles, std::size_t h, std::size_t w);

/// 1 where clamp(v, 0, 1) >= t. ArgumentError unless 0 < t < 1.
std::vector<std::uint8_t> binarize(std::span<const float> map, double t);

/// cloud -> 255, shadow and not cloud -> 128, else 0.
MaskRaster merge_masks(std::span<const std::uint8_t> cloud, std::span<const std::uint8_t> shadow, std::size_t h,
                       std::size_t w);

/// Thresholds both stitched maps and merges them; nodata pixels get 0.
MaskRaster maps_to_mask(const Tensor4<float>& maps, double t, const RasterImage* nodata_source = nullptr);

struct Prediction {
    MaskRaster mask;
    Tensor4<float> maps;  // raw stitched 1 x 2 x h x w, before clamping
};

/// normalize (optional) -> tile_plan -> eval forward per tile -> stitch_max ->
/// binarize -> merge_masks. ArgumentError on a band-count mismatch.
Prediction predict_image(const ModelParams<float>& params, const RasterImage& img, const InferenceConfig& cfg);

/// The eval-mode output of each tile, before stitching.
std::vector<TileOutput> predict_tiles(const ModelParams<float>& params, const RasterImage& img, const TileGrid& grid);

}  // namespace mscff
