#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <json.hpp>

#include "mscff/errors.hpp"
#include "mscff/network.hpp"

namespace mscff {

namespace {

constexpr char kMagic[4] = {'M', 'S', 'C', 'F'};
constexpr std::uint8_t kVersion = 1;

nlohmann::json config_to_json(const NetworkConfig& c) {
    return {{"in_channels", c.in_channels},           {"filters", c.filters},
            {"encoder_dilations", c.encoder_dilations}, {"decoder_dilations", c.decoder_dilations},
            {"fusion_enabled", c.fusion_enabled},     {"residual_enabled", c.residual_enabled},
            {"out_channels", c.out_channels}};
}

NetworkConfig config_from_json(const nlohmann::json& j) {
    NetworkConfig c;
    try {
        c.in_channels = j.at("in_channels").get<std::size_t>();
        c.filters = j.at("filters").get<std::array<std::size_t, kBlocks>>();
        c.encoder_dilations = j.at("encoder_dilations").get<std::array<int, kBlocks>>();
        c.decoder_dilations = j.at("decoder_dilations").get<std::array<int, kBlocks>>();
        c.fusion_enabled = j.at("fusion_enabled").get<bool>();
        c.residual_enabled = j.at("residual_enabled").get<bool>();
        c.out_channels = j.at("out_channels").get<std::size_t>();
        c.validate();
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("checkpoint manifest config: ") + e.what());
    } catch (const ConfigError& e) {
        throw FormatError(std::string("checkpoint manifest config: ") + e.what());
    }
    return c;
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint32_t get_u32(const std::uint8_t* p) {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(p[i]) << (8 * i);
    return v;
}

}  // namespace

std::vector<std::uint8_t> serialize_params(const ModelParams<float>& params) {
    nlohmann::json manifest;
    manifest["config"] = config_to_json(params.config);
    manifest["tensors"] = nlohmann::json::array();
    const auto tensors = params.tensors();
    std::size_t total = 0;
    for (const auto& t : tensors) {
        manifest["tensors"].push_back({{"name", t.name}, {"shape", t.shape}});
        total += t.data.size();
    }
    const std::string text = manifest.dump();

    std::vector<std::uint8_t> out;
    out.reserve(9 + text.size() + 4 * total);
    out.insert(out.end(), std::begin(kMagic), std::end(kMagic));
    out.push_back(kVersion);
    put_u32(out, static_cast<std::uint32_t>(text.size()));
    out.insert(out.end(), text.begin(), text.end());
    for (const auto& t : tensors)
        for (float v : t.data) put_u32(out, std::bit_cast<std::uint32_t>(v));
    return out;
}

ModelParams<float> deserialize_params(std::span<const std::uint8_t> bytes) {
    if (bytes.size() < 9 || std::memcmp(bytes.data(), kMagic, 4) != 0)
        throw FormatError("checkpoint: missing MSCF magic");
    if (bytes[4] != kVersion) throw FormatError("checkpoint: unsupported version " + std::to_string(bytes[4]));
    const std::size_t len = get_u32(bytes.data() + 5);
    if (bytes.size() < 9 + len) throw FormatError("checkpoint: truncated manifest");
    nlohmann::json manifest;
    try {
        manifest = nlohmann::json::parse(bytes.begin() + 9, bytes.begin() + 9 + static_cast<std::ptrdiff_t>(len));
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("checkpoint: manifest is not JSON: ") + e.what());
    }
    if (!manifest.contains("config") || !manifest.contains("tensors") || !manifest["tensors"].is_array())
        throw FormatError("checkpoint: manifest lacks config or tensors");

    ModelParams<float> shell;
    shell.config = config_from_json(manifest["config"]);
    ModelParams<float> params = shell.zeros_like();
    auto tensors = params.tensors();
    const auto& listed = manifest["tensors"];
    if (listed.size() != tensors.size())
        throw FormatError("checkpoint: manifest lists " + std::to_string(listed.size()) + " tensors, config implies " +
                          std::to_string(tensors.size()));
    std::size_t offset = 9 + len;
    for (std::size_t i = 0; i < tensors.size(); ++i) {
        auto& t = tensors[i];
        try {
            if (listed[i].at("name").get<std::string>() != t.name ||
                listed[i].at("shape").get<std::vector<std::size_t>>() != t.shape)
                throw FormatError("checkpoint: manifest entry " + std::to_string(i) + " does not match " + t.name);
        } catch (const nlohmann::json::exception& e) {
            throw FormatError(std::string("checkpoint: bad manifest entry: ") + e.what());
        }
        if (bytes.size() < offset + 4 * t.data.size()) throw FormatError("checkpoint: truncated tensor data");
        for (float& v : t.data) {
            v = std::bit_cast<float>(get_u32(bytes.data() + offset));
            offset += 4;
        }
    }
    if (offset != bytes.size()) throw FormatError("checkpoint: trailing bytes after tensor data");
    if (!params.all_finite()) throw FormatError("checkpoint: non-finite parameter values");
    return params;
}

void save_params(const ModelParams<float>& params, const std::filesystem::path& path) {
    const auto bytes = serialize_params(params);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write checkpoint " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("short write to " + path.string());
}

ModelParams<float> load_params(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot read checkpoint " + path.string());
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return deserialize_params(bytes);
}

ModelParams<float> load_params(const std::filesystem::path& path, const NetworkConfig& expected) {
    ModelParams<float> p = load_params(path);
    if (!(p.config == expected)) throw FormatError("checkpoint: stored network config differs from the requested one");
    return p;
}

}  // namespace mscff
