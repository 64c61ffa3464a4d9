#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "mscff/errors.hpp"
#include "mscff/gradcheck.hpp"
#include "mscff/network.hpp"
#include "mscff/parallel.hpp"
#include "mscff/random.hpp"

using namespace mscff;

namespace {

std::size_t block_params(std::size_t in, std::size_t out, bool residual) {
    std::size_t n = (in * out * 9 + out) + 2 * (out * out * 9 + out) + 3 * 4 * out;
    if (residual && in != out) n += in * out + out + 4 * out;
    return n;
}

// Closed-form count, written independently of the model builder.
std::size_t expected_parameter_count(const NetworkConfig& c) {
    const auto& f = c.filters;
    std::size_t n = 0;
    std::size_t in = c.in_channels;
    for (std::size_t i = 0; i < 6; ++i) {
        n += block_params(in, f[i], c.residual_enabled);
        in = f[i];
    }
    n += block_params(f[5], f[5], c.residual_enabled);  // D6
    n += block_params(f[5], f[4], c.residual_enabled);  // D5
    n += block_params(f[4], f[3], c.residual_enabled);  // D4
    for (std::size_t k : {2u, 1u, 0u}) {
        n += f[k + 1] * f[k] * 9 + f[k] + 4 * f[k];  // stride-2 deconv + BN
        n += block_params(f[k], f[k], c.residual_enabled);
    }
    std::size_t head_in = f[0];
    if (c.fusion_enabled) {
        const std::size_t strides[] = {8, 8, 8, 4, 2};
        for (std::size_t j = 0; j < 5; ++j) {
            const std::size_t ch = f[5 - j], k = 2 * strides[j];
            n += ch * ch * k * k + ch + 4 * ch;
        }
        head_in = 0;
        for (auto v : f) head_in += v;
    }
    n += head_in * c.out_channels * 9 + c.out_channels;
    return n;
}

std::size_t described_parameter_count(const std::vector<LayerInfo>& layers) {
    std::size_t n = 0;
    for (const auto& l : layers) n += l.parameters;
    return n;
}

bool has_layer(const std::vector<LayerInfo>& layers, const std::string& fragment) {
    return std::any_of(layers.begin(), layers.end(),
                       [&](const LayerInfo& l) { return l.name.find(fragment) != std::string::npos; });
}

std::filesystem::path temp_path(const std::string& name) {
    return std::filesystem::temp_directory_path() / ("mscff_test_" + name);
}

}  // namespace

TEST(BuildModel, DeterministicPerSeed) {
    const auto cfg = NetworkConfig::uniform(4, 8);
    EXPECT_EQ(build_model<float>(cfg, 3), build_model<float>(cfg, 3));
    EXPECT_FALSE(build_model<float>(cfg, 3) == build_model<float>(cfg, 4));
}

TEST(BuildModel, FirstConvShape) {
    const auto p = build_model<float>(NetworkConfig{}, 1);
    EXPECT_EQ(p.encoder[0].stages[0].conv.weights.shape(), (Shape4{64, 4, 3, 3}));
    EXPECT_EQ(p.tensors().front().name, "enc1.conv1.weight");
}

TEST(BuildModel, HeNormalScale) {
    const auto p = build_model<double>(NetworkConfig{}, 9);
    const auto& w = p.encoder[1].stages[1].conv.weights;  // fan_in 64 * 9
    double sq = 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) sq += w[i] * w[i];
    EXPECT_NEAR(std::sqrt(sq / w.size()), std::sqrt(2.0 / 576.0), 0.03 * std::sqrt(2.0 / 576.0));
}

TEST(BuildModel, ParameterCountMatchesClosedForm) {
    for (auto cfg : {NetworkConfig{}, NetworkConfig::uniform(3, 16), NetworkConfig::filter_sweep(4)}) {
        for (bool fusion : {true, false})
            for (bool residual : {true, false}) {
                cfg.fusion_enabled = fusion;
                cfg.residual_enabled = residual;
                const auto p = build_model<float>(cfg, 1);
                EXPECT_EQ(p.parameter_count(), expected_parameter_count(cfg));
                EXPECT_EQ(described_parameter_count(describe_layers(cfg, 64, 64)), p.parameter_count());
            }
    }
}

TEST(BuildModel, InvalidConfigRejected) {
    NetworkConfig cfg;
    cfg.filters[2] = 0;
    EXPECT_THROW(build_model<float>(cfg, 1), ConfigError);
    cfg = NetworkConfig{};
    cfg.encoder_dilations[4] = 0;
    EXPECT_THROW(build_model<float>(cfg, 1), ConfigError);
}

TEST(Encoder, SpatialSizes) {
    const auto cfg = NetworkConfig::uniform(4, 4);
    auto p = build_model<float>(cfg, 2);
    auto x = seeded_uniform<float>({1, 4, 256, 256}, 0, 1, 3);
    const auto e = encoder_forward(x, p, Mode::Eval);
    const std::size_t expect[] = {256, 128, 64, 32, 32, 32};
    for (std::size_t i = 0; i < 6; ++i) {
        EXPECT_EQ(e[i].h(), expect[i]);
        EXPECT_EQ(e[i].w(), expect[i]);
    }
}

TEST(Encoder, RejectsSizesNotDivisibleByEight) {
    auto p = build_model<float>(NetworkConfig::uniform(4, 4), 2);
    EXPECT_THROW(encoder_forward(Tensor4<float>(1, 4, 250, 256), p, Mode::Eval), ShapeError);
    EXPECT_THROW(encoder_forward(Tensor4<float>(1, 3, 64, 64), p, Mode::Eval), ShapeError);
}

TEST(Decoder, PyramidScales) {
    const auto cfg = NetworkConfig::uniform(4, 4);
    auto p = build_model<float>(cfg, 2);
    auto x = seeded_uniform<float>({1, 4, 256, 256}, 0, 1, 3);
    const auto pyr = decoder_forward(encoder_forward(x, p, Mode::Eval), p, Mode::Eval);
    const std::size_t expect[] = {32, 32, 32, 64, 128, 256};
    for (std::size_t i = 0; i < 6; ++i) EXPECT_EQ(pyr[i].h(), expect[i]) << i;
}

TEST(Fusion, ConcatenatesAllScales) {
    const auto layers = describe_layers(NetworkConfig{}, 256, 256);
    const auto concat = std::find_if(layers.begin(), layers.end(), [](const auto& l) { return l.kind == "concat"; });
    ASSERT_NE(concat, layers.end());
    EXPECT_EQ(concat->output, (Shape4{1, 384, 256, 256}));
    EXPECT_EQ(layers.back().name, "head");
    EXPECT_EQ(layers.back().output, (Shape4{1, 2, 256, 256}));
}

TEST(Fusion, OutputShape) {
    auto p = build_model<float>(NetworkConfig::uniform(4, 4), 5);
    auto y = model_forward(seeded_uniform<float>({2, 4, 64, 64}, 0, 1, 1), p, Mode::Eval);
    EXPECT_EQ(y.shape(), (Shape4{2, 2, 64, 64}));
}

TEST(Ablation, NoFusionHeadReadsFinestScale) {
    NetworkConfig cfg;
    cfg.fusion_enabled = false;
    const auto layers = describe_layers(cfg, 64, 64);
    EXPECT_FALSE(has_layer(layers, "fuse"));
    EXPECT_FALSE(has_layer(layers, "concat"));
    EXPECT_EQ(layers.back().input.c, 64u);
    EXPECT_TRUE(build_model<float>(cfg, 1).fusion.empty());
}

TEST(Ablation, NoResidualDropsShortcuts) {
    NetworkConfig cfg;
    cfg.residual_enabled = false;
    const auto layers = describe_layers(cfg, 64, 64);
    EXPECT_FALSE(has_layer(layers, "residual_sum"));
    EXPECT_FALSE(has_layer(layers, ".proj"));
    EXPECT_TRUE(has_layer(describe_layers(NetworkConfig{}, 64, 64), "enc1.proj"));
}

TEST(Cbrr, ZeroWeightsGiveReluOfInput) {
    const auto cfg = NetworkConfig::uniform(4, 4);
    auto block = build_model<float>(cfg, 1).zeros_like().encoder[1];  // 4 -> 4, identity shortcut
    for (auto& st : block.stages) st.bn = BNParams<float>::identity(4);
    ASSERT_FALSE(block.projection.has_value());
    auto x = seeded_normal<float>({2, 4, 8, 8}, 0, 1, 3);
    for (Mode mode : {Mode::Train, Mode::Eval}) {
        auto b = block;
        auto y = cbrr_forward(x, b, true, mode);
        for (std::size_t i = 0; i < x.size(); ++i) EXPECT_EQ(y[i], std::max(0.0f, x[i]));
    }
}

TEST(ReceptiveField, ClosedForms) {
    EXPECT_EQ(receptive_field(1, ReceptiveFieldMode::Basic), 3u);
    EXPECT_EQ(receptive_field(2, ReceptiveFieldMode::Basic), 5u);
    EXPECT_EQ(receptive_field(3, ReceptiveFieldMode::Basic), 7u);
    EXPECT_EQ(receptive_field(1, ReceptiveFieldMode::DilatedDoubling), 3u);
    EXPECT_EQ(receptive_field(2, ReceptiveFieldMode::DilatedDoubling), 7u);
    EXPECT_EQ(receptive_field(3, ReceptiveFieldMode::DilatedDoubling), 15u);
    EXPECT_THROW(receptive_field(0, ReceptiveFieldMode::Basic), ArgumentError);
}

TEST(ReceptiveField, DilatedStackMatchesImpulseResponse) {
    // Impulse through stacked 3x3 convs with dilation 1, 2, 4: nonzero support
    // must span exactly 2^(d+1) - 1 pixels.
    Tensor4<double> y(1, 1, 41, 41, 0.0);
    y(0, 0, 20, 20) = 1.0;
    for (std::size_t depth = 1; depth <= 3; ++depth) {
        auto p = ConvParams<double>::conv(1, 1, 3, 1 << (depth - 1));
        p.weights = Tensor4<double>(1, 1, 3, 3, 1.0);
        y = conv2d_forward(y, p);
        std::size_t lo = 41, hi = 0;
        for (std::size_t j = 0; j < 41; ++j)
            if (y(0, 0, 20, j) != 0.0) {
                lo = std::min(lo, j);
                hi = std::max(hi, j);
            }
        EXPECT_EQ(hi - lo + 1, receptive_field(depth, ReceptiveFieldMode::DilatedDoubling));
    }
}

TEST(Forward, EvalIsBitwiseRepeatable) {
    auto p = build_model<float>(NetworkConfig::uniform(4, 8), 7);
    auto x = seeded_uniform<float>({2, 4, 32, 32}, 0, 1, 8);
    const auto a = model_forward(x, p, Mode::Eval);
    const auto b = model_forward(x, p, Mode::Eval);
    EXPECT_EQ(a, b);
    EXPECT_EQ(model_predict(x, p), a);
}

TEST(Forward, TrainModeUpdatesOnlyRunningStatistics) {
    auto p = build_model<float>(NetworkConfig::uniform(4, 8), 7);
    const auto before = p;
    model_forward(seeded_uniform<float>({2, 4, 32, 32}, 0, 1, 8), p, Mode::Train);
    const auto a = before.tensors();
    const auto b = p.tensors();
    bool stats_moved = false;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const bool same = std::equal(a[i].data.begin(), a[i].data.end(), b[i].data.begin());
        if (a[i].learnable)
            EXPECT_TRUE(same) << a[i].name;
        else
            stats_moved |= !same;
    }
    EXPECT_TRUE(stats_moved);
}

TEST(Forward, ThreadCountDoesNotChangeResults) {
    const auto cfg = NetworkConfig::uniform(4, 8);
    auto x = seeded_uniform<float>({3, 4, 32, 32}, 0, 1, 8);
    auto run = [&](int threads) {
        set_num_threads(threads);
        auto p = build_model<float>(cfg, 7);
        ForwardCache<float> cache;
        auto y = model_forward(x, p, Mode::Train, &cache);
        auto g = model_backward(cache, p, y);
        set_num_threads(1);
        return std::make_pair(y, g.params);
    };
    const auto one = run(1);
    const auto four = run(4);
    EXPECT_EQ(one.first, four.first);
    EXPECT_TRUE(one.second == four.second);
}

TEST(Forward, TranslationCovariantAwayFromBorders) {
    // Shifting the input by a multiple of the total pooling factor shifts the
    // output by the same amount wherever the receptive field stays inside.
    const auto cfg = NetworkConfig::uniform(2, 2);
    const auto layers = describe_layers(cfg, 64, 64);
    const std::size_t rf = layers.back().receptive_field;
    const std::size_t half = rf / 2 + 1;
    const std::size_t shift = 16;
    const std::size_t side = ((2 * half + shift + 8 + 7) / 8) * 8;
    auto params = build_model<float>(cfg, 4);
    for (auto& t : params.tensors())  // non-trivial eval statistics
        if (t.name.ends_with("running_mean"))
            for (auto& v : t.data) v = 0.1f;
    auto big = seeded_uniform<float>({1, 2, side + shift, side + shift}, 0, 1, 5);
    Tensor4<float> a(1, 2, side, side), b(1, 2, side, side);
    for (std::size_t c = 0; c < 2; ++c)
        for (std::size_t y = 0; y < side; ++y)
            for (std::size_t x = 0; x < side; ++x) {
                a(0, c, y, x) = big(0, c, y + shift, x + shift);
                b(0, c, y, x) = big(0, c, y, x);
            }
    const auto ya = model_predict(a, params);
    const auto yb = model_predict(b, params);
    std::size_t compared = 0;
    for (std::size_t c = 0; c < 2; ++c)
        for (std::size_t y = half; y + half <= side; ++y)
            for (std::size_t x = half; x + half <= side; ++x) {
                if (y < half + shift || x < half + shift) continue;
                EXPECT_NEAR(ya(0, c, y - shift, x - shift), yb(0, c, y, x), 1e-5);
                ++compared;
            }
    EXPECT_GT(compared, 0u);
}

TEST(Checkpoint, RoundTripIsBitwise) {
    auto p = build_model<float>(NetworkConfig::uniform(3, 8), 11);
    p.encoder[0].stages[0].bn.running_var[0] = 2.5f;
    const auto path = temp_path("roundtrip.mscf");
    save_params(p, path);
    EXPECT_EQ(load_params(path), p);
    EXPECT_EQ(load_params(path, p.config), p);
    std::filesystem::remove(path);
}

TEST(Checkpoint, ConfigMismatchRejected) {
    auto p = build_model<float>(NetworkConfig::uniform(3, 8), 11);
    const auto path = temp_path("mismatch.mscf");
    save_params(p, path);
    EXPECT_THROW(load_params(path, NetworkConfig::uniform(3, 16)), FormatError);
    std::filesystem::remove(path);
}

TEST(Checkpoint, CorruptionRejected) {
    const auto bytes = serialize_params(build_model<float>(NetworkConfig::uniform(3, 4), 1));
    auto truncated = bytes;
    truncated.resize(bytes.size() - 3);
    EXPECT_THROW(deserialize_params(truncated), FormatError);
    auto trailing = bytes;
    trailing.push_back(0);
    EXPECT_THROW(deserialize_params(trailing), FormatError);
    auto magic = bytes;
    magic[0] = 'X';
    EXPECT_THROW(deserialize_params(magic), FormatError);
    auto version = bytes;
    version[4] = 9;
    EXPECT_THROW(deserialize_params(version), FormatError);
    auto nan = bytes;
    const std::uint32_t qnan = 0x7fc00000u;
    for (int i = 0; i < 4; ++i) nan[nan.size() - 4 + i] = static_cast<std::uint8_t>(qnan >> (8 * i));
    EXPECT_THROW(deserialize_params(nan), FormatError);
    EXPECT_THROW(load_params(temp_path("does_not_exist.mscf")), IoError);
}

TEST(ModelGradient, MatchesCentralDifferences) {
    const auto r = grad_check(GradCheckTarget::Model, 2024);
    EXPECT_GT(r.probes, 100u);
    EXPECT_LE(r.skipped, r.probes / 4);
    EXPECT_TRUE(r.passed()) << "max error " << r.max_error;
    std::cout << "model gradcheck: " << r.probes << " probes, " << r.skipped << " skipped, max rel error "
              << r.max_error << "\n";
}
