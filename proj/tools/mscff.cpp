// mscff: synthesize scenes, train, predict, evaluate, gradient-check and
// describe the network from one executable.

#include <CLI11.hpp>
#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <json.hpp>
#include <sstream>
#include <string>
#include <vector>

#include "mscff/errors.hpp"
#include "mscff/evaluation.hpp"
#include "mscff/gradcheck.hpp"
#include "mscff/inference.hpp"
#include "mscff/network.hpp"
#include "mscff/parallel.hpp"
#include "mscff/raster.hpp"
#include "mscff/run_config.hpp"
#include "mscff/synthetic.hpp"
#include "mscff/training.hpp"

namespace fs = std::filesystem;
using namespace mscff;

namespace {

enum Exit { kOk = 0, kConfig = 2, kIo = 3, kNumerical = 4, kContract = 5 };

// Raised for bad command lines so they share the config exit code.
struct UsageFailure : ConfigError {
    using ConfigError::ConfigError;
};

RunConfig resolve_config(const std::string& path, const std::vector<std::string>& extras) {
    RunConfig cfg;
    if (!path.empty()) cfg = load_run_config(path);
    for (std::size_t i = 0; i < extras.size(); ++i) {
        const std::string& tok = extras[i];
        if (tok.rfind("--", 0) != 0) throw UsageFailure("unexpected argument '" + tok + "'");
        std::string key = tok.substr(2), value;
        if (const auto eq = key.find('='); eq != std::string::npos) {
            value = key.substr(eq + 1);
            key.resize(eq);
        } else {
            if (i + 1 >= extras.size()) throw UsageFailure("missing value for --" + key);
            value = extras[++i];
        }
        apply_override(cfg, key, value);
    }
    cfg.validate();
    return cfg;
}

std::string scene_name(std::size_t i) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "scene_%03zu", i);
    return buf;
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    out << text;
    if (!out) throw IoError("write failed: " + path.string());
}

void ensure_dir(const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create directory " + dir.string() + ": " + ec.message());
}

void cmd_synth(const RunConfig& cfg, const fs::path& out) {
    SceneSpec spec = cfg.scene;
    spec.bands = cfg.network.in_channels;
    const auto data = generate_dataset(cfg.scene_count, spec, cfg.train.seed);
    for (const auto& [split, scenes] : {std::pair{"train", &data.train}, std::pair{"val", &data.val}}) {
        ensure_dir(out / split);
        for (std::size_t i = 0; i < scenes->size(); ++i) {
            const auto& s = (*scenes)[i];
            write_rsb(out / split / (scene_name(i) + ".rsb"), s.image, SampleType::F32);
            write_pgm(out / split / (scene_name(i) + ".pgm"), s.mask);
        }
    }
    std::cout << "train\t" << data.train.size() << "\nval\t" << data.val.size() << "\n";
}

SampleSet load_split(const fs::path& dir, bool normalize) {
    SampleSet set;
    if (!fs::is_directory(dir)) return set;
    std::vector<fs::path> headers;
    for (const auto& e : fs::directory_iterator(dir))
        if (e.path().extension() == ".rsb") headers.push_back(e.path());
    std::sort(headers.begin(), headers.end());
    for (const auto& h : headers) {
        auto pgm = h;
        pgm.replace_extension(".pgm");
        RasterImage img = read_rsb(h);
        if (normalize) img = normalize_max(img);
        set.push_back(make_sample(img, read_pgm(pgm)));
    }
    return set;
}

void cmd_train(const RunConfig& cfg, const fs::path& data, const fs::path& out, fs::path curve_path) {
    const SampleSet train_set = load_split(data / "train", cfg.inference.normalize);
    const SampleSet val_set = load_split(data / "val", cfg.inference.normalize);
    if (train_set.empty()) throw IoError("no training scenes under " + (data / "train").string());
    if (curve_path.empty()) curve_path = out.string() + ".curve.tsv";
    std::ofstream curve(curve_path);
    if (!curve) throw IoError("cannot write " + curve_path.string());

    TrainHooks hooks;
    hooks.on_point = [&](const CurvePoint& p) {
        const auto line = format_curve_line(p);
        curve << line << '\n';
        std::cout << line << '\n';
    };
    hooks.on_checkpoint = [&](std::size_t iter, const ModelParams<float>& params) {
        save_params(params, out.string() + ".iter" + std::to_string(iter));
    };
    const auto result = train(cfg.network, cfg.train, train_set, val_set, hooks);
    save_params(result.params, out);
    if (!curve.flush()) throw IoError("write failed: " + curve_path.string());
}

std::vector<double> parse_numbers(const std::string& text) {
    std::vector<double> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        try {
            std::size_t used = 0;
            out.push_back(std::stod(item, &used));
            if (used != item.size()) throw std::invalid_argument(item);
        } catch (const std::exception&) {
            throw UsageFailure("--stretch: '" + item + "' is not a number");
        }
    }
    return out;
}

// "gain,offset" for every band, or all gains followed by all offsets.
RasterImage apply_stretch(const RasterImage& img, const std::string& spec) {
    const auto v = parse_numbers(spec);
    std::vector<double> gains, offsets;
    if (v.size() == 2) {
        gains.assign(img.bands, v[0]);
        offsets.assign(img.bands, v[1]);
    } else if (v.size() == 2 * img.bands) {
        gains.assign(v.begin(), v.begin() + img.bands);
        offsets.assign(v.begin() + img.bands, v.end());
    } else {
        throw UsageFailure("--stretch needs 2 or " + std::to_string(2 * img.bands) + " numbers");
    }
    return linear_stretch(img, gains, offsets);
}

void cmd_predict(const RunConfig& cfg, const fs::path& checkpoint, const fs::path& image, const fs::path& out,
                 fs::path maps_path, const std::string& stretch) {
    const auto params = load_params(checkpoint);
    RasterImage img = read_rsb(image);
    if (!stretch.empty()) img = apply_stretch(img, stretch);
    const auto pred = predict_image(params, img, cfg.inference);
    write_pgm(out, pred.mask);
    if (maps_path.empty()) maps_path = fs::path(out).replace_extension(".maps.rsb");
    write_rsb(maps_path, RasterImage::from_tensor(pred.maps), SampleType::F32);
}

std::string drop_class_lines(const std::string& text, const std::string& keep) {
    std::stringstream in(text);
    std::string line, out;
    while (std::getline(in, line)) {
        const auto a = line.find('\t');
        const auto b = line.find('\t', a + 1);
        if (keep == "both" || line.substr(a + 1, b - a - 1) == keep) out += line + '\n';
    }
    return out;
}

void cmd_evaluate(const fs::path& pred_path, const fs::path& ref_path, const fs::path& strata_path,
                  const std::string& cls, const fs::path& json_path) {
    const auto pred = read_pgm(pred_path);
    const auto ref = read_pgm(ref_path);
    const auto report = evaluate_masks(pred, ref);
    std::map<std::uint8_t, MetricReport> strata;
    if (!strata_path.empty()) strata = stratified_accuracy(pred, ref, read_byte_plane(strata_path, ref.h, ref.w));
    std::cout << drop_class_lines(report_text(report, strata), cls);
    if (json_path.empty()) return;
    auto doc = nlohmann::json::parse(report_json(report, strata));
    if (cls != "both") {
        const std::string other = cls == "cloud" ? "shadow" : "cloud";
        doc.erase(other);
        for (auto& [id, s] : doc["strata"].items()) s.erase(other);
    }
    write_text(json_path, doc.dump(2) + "\n");
}

int cmd_gradcheck(const std::string& layer, std::uint64_t seed) {
    std::vector<GradCheckResult> rows;
    if (layer == "all") {
        rows = grad_check_all(seed);
    } else {
        const auto target = parse_grad_check_target(layer);
        if (!target) throw UsageFailure("unknown layer '" + layer + "'");
        rows.push_back(grad_check(*target, seed));
    }
    bool ok = true;
    std::printf("layer\tmax_error\ttolerance\tprobes\tskipped\tresult\n");
    for (const auto& r : rows) {
        std::printf("%s\t%.3e\t%.0e\t%zu\t%zu\t%s\n", r.name.c_str(), r.max_error, r.tolerance, r.probes, r.skipped,
                    r.passed() ? "PASS" : "FAIL");
        ok = ok && r.passed();
    }
    return ok ? kOk : kNumerical;
}

std::string shape_text(const Shape4& s) {
    return std::to_string(s.c) + "x" + std::to_string(s.h) + "x" + std::to_string(s.w);
}

void cmd_describe(const NetworkConfig& net, std::size_t h, std::size_t w) {
    const auto layers = describe_layers(net, h, w);
    std::size_t total = 0;
    std::printf("layer\tkind\tinput\toutput\tkernel\tstride\tdilation\tparameters\treceptive_field\n");
    for (const auto& l : layers) {
        std::printf("%s\t%s\t%s\t%s\t%zu\t%d\t%d\t%zu\t%zu\n", l.name.c_str(), l.kind.c_str(),
                    shape_text(l.input).c_str(), shape_text(l.output).c_str(), l.kernel, l.stride, l.dilation,
                    l.parameters, l.receptive_field);
        total += l.parameters;
    }
    std::printf("parameters\t%zu\n", total);
    std::printf("depth\tbasic\tdilated\n");
    for (std::size_t d = 1; d <= 4; ++d)
        std::printf("%zu\t%zu\t%zu\n", d, receptive_field(d, ReceptiveFieldMode::Basic),
                    receptive_field(d, ReceptiveFieldMode::DilatedDoubling));
}

template <typename E>
bool is(const std::exception& e) {
    return dynamic_cast<const E*>(&e) != nullptr;
}

std::pair<const char*, int> classify(const std::exception& e) {
    if (is<ConfigError>(e)) return {"ConfigError", kConfig};
    if (is<ArgumentError>(e)) return {"ArgumentError", kConfig};
    if (is<ShapeError>(e)) return {"ShapeError", kConfig};
    if (is<IoError>(e)) return {"IoError", kIo};
    if (is<FormatError>(e)) return {"FormatError", kIo};
    if (is<NumericalError>(e)) return {"NumericalError", kNumerical};
    if (is<ContractViolation>(e)) return {"ContractViolation", kContract};
    if (is<UsageError>(e)) return {"UsageError", kContract};
    return {"InternalError", kContract};
}

std::string one_line(std::string s) {
    std::replace(s.begin(), s.end(), '\n', ' ');
    std::replace(s.begin(), s.end(), '\t', ' ');
    return s;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Multi-scale convolutional feature fusion cloud and shadow detection"};
    app.require_subcommand(1);
    int threads = 1;
    const auto add_threads = [&](CLI::App* a) {
        a->add_option("--threads", threads, "Worker threads (results do not depend on it)")
            ->check(CLI::Range(1, 256));
    };
    add_threads(&app);

    std::string config_path;
    const auto add_config = [&](CLI::App* sub) {
        sub->add_option("--config", config_path, "JSON config; any key may also be given as --key value");
        sub->allow_extras();
    };

    auto* synth = app.add_subcommand("synth", "Write synthetic train/val scenes (.rsb + .pgm)");
    std::string out;
    add_config(synth);
    synth->add_option("--out", out, "Output directory")->required();

    auto* train_cmd = app.add_subcommand("train", "Train on a synth-style directory");
    std::string data, curve;
    add_config(train_cmd);
    train_cmd->add_option("--data", data, "Directory with train/ and val/")->required();
    train_cmd->add_option("--out", out, "Checkpoint path")->required();
    train_cmd->add_option("--curve", curve, "Curve log (default <out>.curve.tsv)");

    auto* predict = app.add_subcommand("predict", "Tiled prediction of one image");
    std::string checkpoint, image, maps, stretch;
    std::optional<double> threshold;
    std::optional<std::size_t> patch, overlap;
    bool normalize = false;
    add_config(predict);
    predict->add_option("--checkpoint", checkpoint)->required();
    predict->add_option("--image", image, ".rsb header")->required();
    predict->add_option("--out", out, "Mask .pgm")->required();
    predict->add_option("--maps", maps, "Raw maps .rsb (default <out>.maps.rsb)");
    predict->add_option("--threshold", threshold);
    predict->add_option("--patch", patch);
    predict->add_option("--overlap", overlap);
    predict->add_option("--stretch", stretch, "gain,offset or g1..gB,o1..oB");
    predict->add_flag("--normalize", normalize, "Divide each band by its maximum first");

    auto* evaluate = app.add_subcommand("evaluate", "Compare a predicted mask with a reference");
    std::string pred_path, ref_path, strata_path, json_path, cls = "both";
    evaluate->add_option("--pred", pred_path)->required();
    evaluate->add_option("--ref", ref_path)->required();
    evaluate->add_option("--strata", strata_path, "Single-band .rsb of integer stratum ids");
    evaluate->add_option("--class", cls)->check(CLI::IsMember({"cloud", "shadow", "both"}));
    evaluate->add_option("--json", json_path, "Also write the report as JSON");

    auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference gradient checks");
    std::string layer = "all";
    std::uint64_t seed = 1;
    gradcheck->add_option("--layer", layer, "all, conv, dilated_conv, deconv, bn, pool, relu, mse, cbrr, model");
    gradcheck->add_option("--seed", seed);

    auto* describe = app.add_subcommand("describe", "Layer inventory and receptive fields");
    std::size_t height = 256, width = 256;
    add_config(describe);
    describe->add_option("--checkpoint", checkpoint, "Describe the network stored in a checkpoint");
    describe->add_option("--height", height);
    describe->add_option("--width", width);

    for (auto* sub : app.get_subcommands({})) add_threads(sub);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << "error\tUsageError\t" << one_line(e.what()) << "\n";
        return kConfig;
    }

    try {
        set_num_threads(threads);
        auto* sub = app.get_subcommands().front();
        const auto extras = sub->remaining();
        if (sub == synth) {
            cmd_synth(resolve_config(config_path, extras), out);
        } else if (sub == train_cmd) {
            cmd_train(resolve_config(config_path, extras), data, out, curve);
        } else if (sub == predict) {
            RunConfig cfg = resolve_config(config_path, extras);
            if (threshold) cfg.inference.threshold = *threshold;
            if (patch) cfg.inference.patch = *patch;
            if (overlap) cfg.inference.min_overlap = *overlap;
            if (normalize) cfg.inference.normalize = true;
            cfg.inference.validate();
            cmd_predict(cfg, checkpoint, image, out, maps, stretch);
        } else if (sub == evaluate) {
            cmd_evaluate(pred_path, ref_path, strata_path, cls, json_path);
        } else if (sub == gradcheck) {
            return cmd_gradcheck(layer, seed);
        } else if (sub == describe) {
            if (!checkpoint.empty()) {
                if (!extras.empty() || !config_path.empty())
                    throw UsageFailure("describe takes either --checkpoint or a config, not both");
                cmd_describe(load_params(checkpoint).config, height, width);
            } else {
                cmd_describe(resolve_config(config_path, extras).network, height, width);
            }
        }
    } catch (const std::exception& e) {
        const auto [name, code] = classify(e);
        std::cerr << "error\t" << name << "\t" << one_line(e.what()) << "\n";
        return code;
    }
    return kOk;
}
