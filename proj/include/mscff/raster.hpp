#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mscff/tensor.hpp"

namespace mscff {

inline constexpr std::uint8_t kLabelClear = 0;
inline constexpr std::uint8_t kLabelShadow = 128;
inline constexpr std::uint8_t kLabelCloud = 255;

/// Band-planar multispectral image. `nodata`, when present, holds one byte
/// per pixel (nonzero = no data).
struct RasterImage {
    std::size_t bands = 0;
    std::size_t h = 0;
    std::size_t w = 0;
    std::vector<float> values;
    std::optional<std::vector<std::uint8_t>> nodata;

    RasterImage() = default;
    RasterImage(std::size_t bands, std::size_t h, std::size_t w, float fill = 0.0f);

    std::size_t plane() const { return h * w; }
    float& at(std::size_t b, std::size_t y, std::size_t x) { return values[(b * h + y) * w + x]; }
    float at(std::size_t b, std::size_t y, std::size_t x) const { return values[(b * h + y) * w + x]; }
    std::span<float> band(std::size_t b) { return {values.data() + b * plane(), plane()}; }
    std::span<const float> band(std::size_t b) const { return {values.data() + b * plane(), plane()}; }
    bool valid(std::size_t i) const { return !nodata || (*nodata)[i] == 0; }

    /// 1 x bands x h x w copy.
    Tensor4<float> to_tensor() const;
    static RasterImage from_tensor(const Tensor4<float>& t, std::size_t sample = 0);
};

/// Byte labels: 0 clear, 128 cloud shadow, 255 cloud.
struct MaskRaster {
    std::size_t h = 0;
    std::size_t w = 0;
    std::vector<std::uint8_t> labels;

    MaskRaster() = default;
    MaskRaster(std::size_t h, std::size_t w, std::uint8_t fill = kLabelClear) : h(h), w(w), labels(h * w, fill) {}

    std::uint8_t& at(std::size_t y, std::size_t x) { return labels[y * w + x]; }
    std::uint8_t at(std::size_t y, std::size_t x) const { return labels[y * w + x]; }

    friend bool operator==(const MaskRaster&, const MaskRaster&) = default;
};

enum class SampleType { U8, U16, F32 };

std::string to_string(SampleType t);
SampleType parse_sample_type(const std::string& s);

/// Reads a JSON header `{bands, height, width, dtype, nodata?, data?}` and the
/// raw little-endian band-planar file next to it (`data`, relative to the
/// header, or the header path with extension .raw). A pixel is nodata when
/// every band equals the nodata value.
RasterImage read_rsb(const std::filesystem::path& header);

/// Integer types round to nearest; values outside the type's range throw
/// ArgumentError. Nodata pixels are written as `nodata` in every band.
void write_rsb(const std::filesystem::path& header, const RasterImage& img, SampleType type,
               std::optional<double> nodata = std::nullopt);

/// Binary P5, maxval 255. Reading rejects labels outside {0, 128, 255}.
MaskRaster read_pgm(const std::filesystem::path& path);
void write_pgm(const std::filesystem::path& path, const MaskRaster& mask);

/// Raw byte plane of an 8-bit single-band .rsb (stratum rasters).
std::vector<std::uint8_t> read_byte_plane(const std::filesystem::path& header, std::size_t h, std::size_t w);

}  // namespace mscff
