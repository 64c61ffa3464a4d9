#include "mscff/run_config.hpp"

#include <fstream>
#include <functional>
#include <json.hpp>
#include <map>
#include <sstream>

#include "mscff/errors.hpp"

namespace mscff {

namespace {

using nlohmann::json;

struct Field {
    std::function<void(RunConfig&, const json&)> set;
    std::function<json(const RunConfig&)> get;
};

std::size_t as_count(const std::string& key, const json& v) {
    if (!v.is_number_unsigned()) throw ConfigError(key + ": expected a non-negative integer");
    return v.get<std::size_t>();
}

int as_int(const std::string& key, const json& v) {
    if (!v.is_number_integer()) throw ConfigError(key + ": expected an integer");
    const auto i = v.get<std::int64_t>();
    if (i < -1'000'000 || i > 1'000'000) throw ConfigError(key + ": out of range");
    return static_cast<int>(i);
}

double as_real(const std::string& key, const json& v) {
    if (!v.is_number()) throw ConfigError(key + ": expected a number");
    return v.get<double>();
}

bool as_bool(const std::string& key, const json& v) {
    if (!v.is_boolean()) throw ConfigError(key + ": expected true or false");
    return v.get<bool>();
}

// A scalar fills all six entries.
template <typename T, typename Convert>
std::array<T, kBlocks> as_six(const std::string& key, const json& v, Convert convert) {
    std::array<T, kBlocks> out{};
    if (!v.is_array()) {
        out.fill(convert(key, v));
        return out;
    }
    if (v.size() != kBlocks) throw ConfigError(key + ": expected " + std::to_string(kBlocks) + " values");
    for (std::size_t i = 0; i < kBlocks; ++i) out[i] = convert(key, v[i]);
    return out;
}

#define COUNT(key, member) \
    {key, {[](RunConfig& c, const json& v) { c.member = as_count(key, v); }, [](const RunConfig& c) { return json(c.member); }}}
#define INT(key, member) \
    {key, {[](RunConfig& c, const json& v) { c.member = as_int(key, v); }, [](const RunConfig& c) { return json(c.member); }}}
#define REAL(key, member) \
    {key, {[](RunConfig& c, const json& v) { c.member = as_real(key, v); }, [](const RunConfig& c) { return json(c.member); }}}
#define BOOL(key, member) \
    {key, {[](RunConfig& c, const json& v) { c.member = as_bool(key, v); }, [](const RunConfig& c) { return json(c.member); }}}

const std::map<std::string, Field>& fields() {
    static const std::map<std::string, Field> table{
        // network
        COUNT("in_channels", network.in_channels),
        {"filters",
         {[](RunConfig& c, const json& v) { c.network.filters = as_six<std::size_t>("filters", v, as_count); },
          [](const RunConfig& c) { return json(c.network.filters); }}},
        {"encoder_dilations",
         {[](RunConfig& c, const json& v) { c.network.encoder_dilations = as_six<int>("encoder_dilations", v, as_int); },
          [](const RunConfig& c) { return json(c.network.encoder_dilations); }}},
        {"decoder_dilations",
         {[](RunConfig& c, const json& v) { c.network.decoder_dilations = as_six<int>("decoder_dilations", v, as_int); },
          [](const RunConfig& c) { return json(c.network.decoder_dilations); }}},
        BOOL("fusion", network.fusion_enabled),
        BOOL("residual", network.residual_enabled),
        COUNT("out_channels", network.out_channels),
        // training
        REAL("lr0", train.lr0),
        COUNT("max_iter", train.max_iter),
        REAL("poly_power", train.poly_power),
        COUNT("batch_size", train.batch_size),
        REAL("clip_norm", train.clip_norm),
        REAL("momentum", train.momentum),
        COUNT("seed", train.seed),
        COUNT("checkpoint_every", train.checkpoint_every),
        COUNT("eval_every", train.eval_every),
        {"loss_reduction",
         {[](RunConfig& c, const json& v) {
              if (v == "per_element")
                  c.train.loss_reduction = LossReduction::PerElement;
              else if (v == "per_sample")
                  c.train.loss_reduction = LossReduction::PerSample;
              else
                  throw ConfigError("loss_reduction: expected \"per_element\" or \"per_sample\"");
          },
          [](const RunConfig& c) {
              return json(c.train.loss_reduction == LossReduction::PerElement ? "per_element" : "per_sample");
          }}},
        // inference
        REAL("threshold", inference.threshold),
        COUNT("patch", inference.patch),
        COUNT("min_overlap", inference.min_overlap),
        BOOL("normalize", inference.normalize),
        // synthetic scenes
        COUNT("scene_count", scene_count),
        COUNT("scene_height", scene.h),
        COUNT("scene_width", scene.w),
        COUNT("cloud_min", scene.cloud_min),
        COUNT("cloud_max", scene.cloud_max),
        REAL("radius_min", scene.radius_min),
        REAL("radius_max", scene.radius_max),
        INT("shadow_dy", scene.shadow_dy),
        INT("shadow_dx", scene.shadow_dx),
        REAL("cloud_level", scene.cloud_level),
        REAL("fringe_level", scene.fringe_level),
        REAL("shadow_darkening", scene.shadow_darkening),
        REAL("background_min", scene.background_min),
        REAL("background_max", scene.background_max),
        REAL("texture_scale", scene.texture_scale),
        REAL("softness", scene.softness),
    };
    return table;
}

#undef COUNT
#undef INT
#undef REAL
#undef BOOL

void apply_value(RunConfig& cfg, const std::string& key, const json& value) {
    const auto& table = fields();
    const auto it = table.find(key);
    if (it == table.end()) throw ConfigError("unknown key '" + key + "'");
    it->second.set(cfg, value);
}

}  // namespace

void RunConfig::validate() const {
    network.validate();
    train.validate();
    inference.validate();
    if (scene_count < 2) throw ConfigError("scene_count must be >= 2");
    SceneSpec s = scene;
    s.bands = network.in_channels;
    try {
        s.validate();
    } catch (const ArgumentError& e) {
        throw ConfigError(e.what());
    }
}

std::vector<std::string> run_config_keys() {
    std::vector<std::string> keys;
    for (const auto& [k, f] : fields()) keys.push_back(k);
    return keys;
}

void apply_json(RunConfig& cfg, const std::string& json_text) {
    json doc;
    try {
        doc = json::parse(json_text);
    } catch (const json::parse_error& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    if (!doc.is_object()) throw ConfigError("config must be a JSON object");
    for (const auto& [key, value] : doc.items()) apply_value(cfg, key, value);
    cfg.scene.bands = cfg.network.in_channels;
}

void apply_override(RunConfig& cfg, const std::string& key, const std::string& value) {
    json v = json::parse(value, nullptr, false);
    if (v.is_discarded()) v = value;
    apply_value(cfg, key, v);
    cfg.scene.bands = cfg.network.in_channels;
}

RunConfig load_run_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config " + path.string());
    std::stringstream buf;
    buf << in.rdbuf();
    RunConfig cfg;
    apply_json(cfg, buf.str());
    return cfg;
}

std::string to_json(const RunConfig& cfg) {
    json doc = json::object();
    for (const auto& [k, f] : fields()) doc[k] = f.get(cfg);
    return doc.dump(2);
}

}  // namespace mscff
