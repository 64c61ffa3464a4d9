#include "mscff/inference.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "mscff/errors.hpp"
#include "mscff/parallel.hpp"

namespace mscff {

namespace {

std::vector<std::size_t> axis_origins(std::size_t dim, std::size_t patch, std::size_t overlap) {
    if (dim <= patch) return {0};
    const std::size_t stride = patch - overlap;
    std::vector<std::size_t> out{0};
    while (out.back() + patch < dim) out.push_back(std::min(out.back() + stride, dim - patch));
    return out;
}

std::size_t reflect_index(long i, std::size_t n) {
    if (n == 1) return 0;
    const long period = 2 * (static_cast<long>(n) - 1);
    long m = i % period;
    if (m < 0) m += period;
    return static_cast<std::size_t>(m < static_cast<long>(n) ? m : period - m);
}

}  // namespace

void InferenceConfig::validate() const {
    if (!(threshold > 0.0 && threshold < 1.0)) throw ConfigError("threshold must be in (0, 1)");
    if (patch == 0 || patch % 8 != 0) throw ConfigError("patch must be a positive multiple of 8");
    if (min_overlap >= patch) throw ConfigError("min_overlap must be smaller than patch");
}

RasterImage normalize_max(const RasterImage& img) {
    if (img.values.empty()) throw ArgumentError("normalize_max: empty image");
    RasterImage out = img;
    for (std::size_t b = 0; b < img.bands; ++b) {
        const auto src = img.band(b);
        float max = 0.0f;
        for (std::size_t i = 0; i < src.size(); ++i)
            if (img.valid(i)) max = std::max(max, src[i]);
        auto dst = out.band(b);
        for (std::size_t i = 0; i < dst.size(); ++i)
            dst[i] = (max > 0.0f && img.valid(i)) ? std::clamp(src[i] / max, 0.0f, 1.0f) : 0.0f;
    }
    return out;
}

RasterImage linear_stretch(const RasterImage& img, std::span<const double> gains, std::span<const double> offsets) {
    if (gains.size() != img.bands || offsets.size() != img.bands)
        throw ArgumentError("linear_stretch: need " + std::to_string(img.bands) + " gains and offsets, got " +
                            std::to_string(gains.size()) + " and " + std::to_string(offsets.size()));
    RasterImage out = img;
    for (std::size_t b = 0; b < img.bands; ++b)
        for (float& v : out.band(b)) v = static_cast<float>(std::clamp(gains[b] * v + offsets[b], 0.0, 1.0));
    return out;
}

std::vector<std::pair<std::size_t, std::size_t>> TileGrid::origins() const {
    std::vector<std::pair<std::size_t, std::size_t>> out;
    for (auto r : rows)
        for (auto c : cols) out.emplace_back(r, c);
    return out;
}

TileGrid tile_plan(std::size_t h, std::size_t w, const InferenceConfig& cfg) {
    cfg.validate();
    if (h < 8 || w < 8) throw ArgumentError("tile_plan: image must be at least 8x8");
    TileGrid g;
    g.patch = cfg.patch;
    g.h = h;
    g.w = w;
    g.padded_h = std::max(h, cfg.patch);
    g.padded_w = std::max(w, cfg.patch);
    g.rows = axis_origins(h, cfg.patch, cfg.min_overlap);
    g.cols = axis_origins(w, cfg.patch, cfg.min_overlap);
    return g;
}

RasterImage reflect_pad(const RasterImage& img, std::size_t padded_h, std::size_t padded_w) {
    if (padded_h <= img.h && padded_w <= img.w) return img;
    const std::size_t ph = std::max(padded_h, img.h), pw = std::max(padded_w, img.w);
    RasterImage out(img.bands, ph, pw);
    for (std::size_t b = 0; b < img.bands; ++b)
        for (std::size_t y = 0; y < ph; ++y)
            for (std::size_t x = 0; x < pw; ++x)
                out.at(b, y, x) = img.at(b, reflect_index(static_cast<long>(y), img.h),
                                         reflect_index(static_cast<long>(x), img.w));
    if (img.nodata) {
        std::vector<std::uint8_t> nd(ph * pw);
        for (std::size_t y = 0; y < ph; ++y)
            for (std::size_t x = 0; x < pw; ++x)
                nd[y * pw + x] = (*img.nodata)[reflect_index(static_cast<long>(y), img.h) * img.w +
                                               reflect_index(static_cast<long>(x), img.w)];
        out.nodata = std::move(nd);
    }
    return out;
}

Tensor4<float> stitch_max(std::span<const TileOutput> tiles, std::size_t h, std::size_t w) {
    constexpr float lowest = -std::numeric_limits<float>::infinity();
    std::vector<float> acc(2 * h * w, lowest);
    std::vector<std::uint8_t> covered(h * w, 0);
    for (const auto& t : tiles) {
        if (t.maps.n() != 1 || t.maps.c() != 2) throw ShapeError("stitch_max: tile maps must be 1 x 2 x p x p");
        const std::size_t th = std::min(t.maps.h(), h > t.row ? h - t.row : 0);
        const std::size_t tw = std::min(t.maps.w(), w > t.col ? w - t.col : 0);
        for (std::size_t c = 0; c < 2; ++c)
            for (std::size_t y = 0; y < th; ++y)
                for (std::size_t x = 0; x < tw; ++x) {
                    float& dst = acc[(c * h + t.row + y) * w + t.col + x];
                    dst = std::max(dst, t.maps(0, c, y, x));
                }
        for (std::size_t y = 0; y < th; ++y)
            for (std::size_t x = 0; x < tw; ++x) covered[(t.row + y) * w + t.col + x] = 1;
    }
    for (std::size_t i = 0; i < covered.size(); ++i)
        if (!covered[i])
            throw ContractViolation("stitch_max: pixel (" + std::to_string(i / w) + ", " + std::to_string(i % w) +
                                    ") is not covered by any tile");
    return Tensor4<float>(Shape4{1, 2, h, w}, acc);
}

std::vector<std::uint8_t> binarize(std::span<const float> map, double t) {
    if (!(t > 0.0 && t < 1.0)) throw ArgumentError("binarize: threshold must be in (0, 1)");
    std::vector<std::uint8_t> out(map.size());
    for (std::size_t i = 0; i < map.size(); ++i) out[i] = std::clamp<double>(map[i], 0.0, 1.0) >= t ? 1 : 0;
    return out;
}

MaskRaster merge_masks(std::span<const std::uint8_t> cloud, std::span<const std::uint8_t> shadow, std::size_t h,
                       std::size_t w) {
    if (cloud.size() != h * w || shadow.size() != h * w)
        throw ShapeError("merge_masks: planes of " + std::to_string(cloud.size()) + " and " +
                         std::to_string(shadow.size()) + " pixels for a " + std::to_string(h) + "x" +
                         std::to_string(w) + " mask");
    MaskRaster m(h, w);
    for (std::size_t i = 0; i < m.labels.size(); ++i)
        m.labels[i] = cloud[i] ? kLabelCloud : shadow[i] ? kLabelShadow : kLabelClear;
    return m;
}

MaskRaster maps_to_mask(const Tensor4<float>& maps, double t, const RasterImage* nodata_source) {
    MaskRaster m = merge_masks(binarize(maps.plane(0, 0), t), binarize(maps.plane(0, 1), t), maps.h(), maps.w());
    if (nodata_source && nodata_source->nodata)
        for (std::size_t i = 0; i < m.labels.size(); ++i)
            if ((*nodata_source->nodata)[i]) m.labels[i] = kLabelClear;
    return m;
}

std::vector<TileOutput> predict_tiles(const ModelParams<float>& params, const RasterImage& img, const TileGrid& grid) {
    const RasterImage padded = reflect_pad(img, grid.padded_h, grid.padded_w);
    const auto origins = grid.origins();
    std::vector<TileOutput> out(origins.size());
    parallel_for(origins.size(), [&](std::size_t i) {
        const auto [r, c] = origins[i];
        Tensor4<float> x(1, padded.bands, grid.patch, grid.patch);
        for (std::size_t b = 0; b < padded.bands; ++b)
            for (std::size_t y = 0; y < grid.patch; ++y)
                for (std::size_t xx = 0; xx < grid.patch; ++xx) x(0, b, y, xx) = padded.at(b, r + y, c + xx);
        out[i] = {r, c, model_predict(x, params)};
    });
    return out;
}

Prediction predict_image(const ModelParams<float>& params, const RasterImage& img, const InferenceConfig& cfg) {
    cfg.validate();
    if (img.bands != params.config.in_channels)
        throw ArgumentError("predict_image: image has " + std::to_string(img.bands) + " bands, model expects " +
                            std::to_string(params.config.in_channels));
    const RasterImage input = cfg.normalize ? normalize_max(img) : img;
    const TileGrid grid = tile_plan(input.h, input.w, cfg);
    const auto tiles = predict_tiles(params, input, grid);
    Prediction p;
    p.maps = stitch_max(tiles, input.h, input.w);
    p.mask = maps_to_mask(p.maps, cfg.threshold, &img);
    return p;
}

}  // namespace mscff
