#include "mscff/raster.hpp"

#include <bit>
#include <cmath>
#include <fstream>
#include <iterator>
#include <json.hpp>
#include <limits>
#include <sstream>

#include "mscff/errors.hpp"

namespace mscff {

namespace {

std::size_t sample_bytes(SampleType t) {
    switch (t) {
        case SampleType::U8: return 1;
        case SampleType::U16: return 2;
        case SampleType::F32: return 4;
    }
    return 0;
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot read " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("short write to " + path.string());
}

double decode(const std::uint8_t* p, SampleType t) {
    switch (t) {
        case SampleType::U8: return p[0];
        case SampleType::U16: return static_cast<double>(p[0] | (p[1] << 8));
        case SampleType::F32: {
            std::uint32_t u = 0;
            for (int i = 0; i < 4; ++i) u |= static_cast<std::uint32_t>(p[i]) << (8 * i);
            return std::bit_cast<float>(u);
        }
    }
    return 0.0;
}

void encode(double v, SampleType t, std::vector<std::uint8_t>& out) {
    if (t == SampleType::F32) {
        const auto u = std::bit_cast<std::uint32_t>(static_cast<float>(v));
        for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(u >> (8 * i)));
        return;
    }
    const double max = t == SampleType::U8 ? 255.0 : 65535.0;
    const double r = std::round(v);
    if (!(r >= 0.0 && r <= max))
        throw ArgumentError("value " + std::to_string(v) + " does not fit " + to_string(t));
    const auto u = static_cast<std::uint32_t>(r);
    out.push_back(static_cast<std::uint8_t>(u));
    if (t == SampleType::U16) out.push_back(static_cast<std::uint8_t>(u >> 8));
}

std::filesystem::path data_path(const std::filesystem::path& header, const nlohmann::json& j) {
    if (j.contains("data")) return header.parent_path() / j["data"].get<std::string>();
    auto p = header;
    return p.replace_extension(".raw");
}

// Next whitespace-delimited PGM header token, skipping comments.
std::string pgm_token(const std::vector<std::uint8_t>& bytes, std::size_t& pos) {
    while (pos < bytes.size()) {
        if (bytes[pos] == '#') {
            while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
        } else if (std::isspace(bytes[pos])) {
            ++pos;
        } else {
            break;
        }
    }
    std::string tok;
    while (pos < bytes.size() && !std::isspace(bytes[pos])) tok.push_back(static_cast<char>(bytes[pos++]));
    return tok;
}

}  // namespace

RasterImage::RasterImage(std::size_t bands, std::size_t h, std::size_t w, float fill)
    : bands(bands), h(h), w(w), values(bands * h * w, fill) {
    if (bands == 0 || h == 0 || w == 0) throw ShapeError("raster dimensions must be positive");
}

Tensor4<float> RasterImage::to_tensor() const { return Tensor4<float>(Shape4{1, bands, h, w}, values); }

RasterImage RasterImage::from_tensor(const Tensor4<float>& t, std::size_t sample) {
    RasterImage img(t.c(), t.h(), t.w());
    const auto s = t.sample(sample);
    std::copy(s.begin(), s.end(), img.values.begin());
    return img;
}

std::string to_string(SampleType t) {
    switch (t) {
        case SampleType::U8: return "u8";
        case SampleType::U16: return "u16";
        case SampleType::F32: return "f32";
    }
    return "?";
}

SampleType parse_sample_type(const std::string& s) {
    if (s == "u8") return SampleType::U8;
    if (s == "u16") return SampleType::U16;
    if (s == "f32") return SampleType::F32;
    throw FormatError("unknown dtype '" + s + "' (expected u8, u16 or f32)");
}

RasterImage read_rsb(const std::filesystem::path& header) {
    const auto text = read_file(header);
    nlohmann::json j;
    std::size_t bands = 0, h = 0, w = 0;
    SampleType type{};
    std::optional<double> nodata;
    try {
        j = nlohmann::json::parse(text.begin(), text.end());
        bands = j.at("bands").get<std::size_t>();
        h = j.at("height").get<std::size_t>();
        w = j.at("width").get<std::size_t>();
        type = parse_sample_type(j.at("dtype").get<std::string>());
        if (j.contains("nodata") && !j["nodata"].is_null()) nodata = j["nodata"].get<double>();
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(header.string() + ": bad raster header: " + e.what());
    }
    if (bands == 0 || h == 0 || w == 0) throw FormatError(header.string() + ": zero raster dimension");
    const auto raw = read_file(data_path(header, j));
    const std::size_t bytes = sample_bytes(type);
    if (raw.size() != bands * h * w * bytes)
        throw FormatError(header.string() + ": data file holds " + std::to_string(raw.size()) + " bytes, expected " +
                          std::to_string(bands * h * w * bytes));

    RasterImage img(bands, h, w);
    for (std::size_t i = 0; i < img.values.size(); ++i) {
        const double v = decode(raw.data() + i * bytes, type);
        if (!std::isfinite(v)) throw FormatError(header.string() + ": non-finite sample at index " + std::to_string(i));
        img.values[i] = static_cast<float>(v);
    }
    if (nodata) {
        std::vector<std::uint8_t> mask(img.plane(), 1);
        const float nd = static_cast<float>(*nodata);
        for (std::size_t b = 0; b < bands; ++b) {
            const auto band = img.band(b);
            for (std::size_t i = 0; i < band.size(); ++i)
                if (band[i] != nd) mask[i] = 0;
        }
        img.nodata = std::move(mask);
    }
    return img;
}

void write_rsb(const std::filesystem::path& header, const RasterImage& img, SampleType type,
               std::optional<double> nodata) {
    if (img.nodata && !nodata) throw ArgumentError("write_rsb: image has a nodata mask but no nodata value was given");
    std::vector<std::uint8_t> raw;
    raw.reserve(img.values.size() * sample_bytes(type));
    for (std::size_t b = 0; b < img.bands; ++b) {
        const auto band = img.band(b);
        for (std::size_t i = 0; i < band.size(); ++i) encode(img.valid(i) ? band[i] : *nodata, type, raw);
    }
    auto raw_path = header;
    raw_path.replace_extension(".raw");
    nlohmann::json j = {{"bands", img.bands},
                        {"height", img.h},
                        {"width", img.w},
                        {"dtype", to_string(type)},
                        {"data", raw_path.filename().string()}};
    if (nodata) j["nodata"] = *nodata;
    const std::string text = j.dump(2) + "\n";
    write_file(raw_path, raw);
    write_file(header, std::vector<std::uint8_t>(text.begin(), text.end()));
}

MaskRaster read_pgm(const std::filesystem::path& path) {
    const auto bytes = read_file(path);
    std::size_t pos = 0;
    if (pgm_token(bytes, pos) != "P5") throw FormatError(path.string() + ": not a binary PGM (P5)");
    std::size_t w = 0, h = 0, maxval = 0;
    try {
        w = std::stoul(pgm_token(bytes, pos));
        h = std::stoul(pgm_token(bytes, pos));
        maxval = std::stoul(pgm_token(bytes, pos));
    } catch (const std::exception&) {
        throw FormatError(path.string() + ": malformed PGM header");
    }
    if (maxval != 255) throw FormatError(path.string() + ": PGM maxval must be 255");
    if (w == 0 || h == 0) throw FormatError(path.string() + ": zero PGM dimension");
    ++pos;  // single whitespace byte before the raster
    if (bytes.size() != pos + w * h)
        throw FormatError(path.string() + ": PGM raster holds " + std::to_string(bytes.size() - std::min(pos, bytes.size())) +
                          " bytes, expected " + std::to_string(w * h));
    MaskRaster m(h, w);
    std::copy(bytes.begin() + static_cast<std::ptrdiff_t>(pos), bytes.end(), m.labels.begin());
    for (auto v : m.labels)
        if (v != kLabelClear && v != kLabelShadow && v != kLabelCloud)
            throw FormatError(path.string() + ": label " + std::to_string(v) + " is not 0, 128 or 255");
    return m;
}

void write_pgm(const std::filesystem::path& path, const MaskRaster& mask) {
    const std::string head = "P5\n" + std::to_string(mask.w) + " " + std::to_string(mask.h) + "\n255\n";
    std::vector<std::uint8_t> bytes(head.begin(), head.end());
    bytes.insert(bytes.end(), mask.labels.begin(), mask.labels.end());
    write_file(path, bytes);
}

std::vector<std::uint8_t> read_byte_plane(const std::filesystem::path& header, std::size_t h, std::size_t w) {
    const auto img = read_rsb(header);
    if (img.bands != 1 || img.h != h || img.w != w)
        throw ShapeError(header.string() + ": expected a 1-band " + std::to_string(h) + "x" + std::to_string(w) +
                         " raster");
    std::vector<std::uint8_t> out(img.plane());
    for (std::size_t i = 0; i < out.size(); ++i) {
        const float v = img.values[i];
        if (v < 0.0f || v > 255.0f || v != std::floor(v))
            throw FormatError(header.string() + ": stratum ids must be integers in [0, 255]");
        out[i] = static_cast<std::uint8_t>(v);
    }
    return out;
}

}  // namespace mscff
