#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <set>

#include "mscff/errors.hpp"
#include "mscff/random.hpp"
#include "mscff/synthetic.hpp"
#include "mscff/training.hpp"

using namespace mscff;

namespace {

SampleSet small_set(std::size_t n, std::uint64_t seed, std::size_t size = 16) {
    SceneSpec spec;
    spec.h = spec.w = size;
    spec.bands = 3;
    spec.radius_min = 2.0;
    spec.radius_max = 4.0;
    spec.shadow_dy = spec.shadow_dx = 2;
    SampleSet out;
    for (std::size_t i = 0; i < n; ++i) {
        spec.seed = derive_seed(seed, i);
        const auto s = generate_scene(spec);
        out.push_back(make_sample(s.image, s.mask));
    }
    return out;
}

ModelParams<float> filled_like(const ModelParams<float>& p, float value) {
    auto g = p.zeros_like();
    for (auto& t : g.tensors())
        if (t.learnable) std::fill(t.data.begin(), t.data.end(), value);
    return g;
}

}  // namespace

TEST(PolyLr, Endpoints) {
    TrainConfig cfg;
    cfg.max_iter = 1000;
    EXPECT_DOUBLE_EQ(poly_lr(0, cfg), 0.1);
    EXPECT_EQ(poly_lr(1000, cfg), 0.0);
    EXPECT_DOUBLE_EQ(poly_lr(500, cfg), 0.1 * std::pow(0.5, 0.9));
    EXPECT_THROW(poly_lr(1001, cfg), ArgumentError);
}

TEST(PolyLr, StrictlyDecreasing) {
    TrainConfig cfg;
    cfg.max_iter = 3000;
    for (std::size_t i = 1; i <= cfg.max_iter; ++i) ASSERT_LT(poly_lr(i, cfg), poly_lr(i - 1, cfg));
}

TEST(ClipGradients, SmallNormUnchanged) {
    const auto p = build_model<float>(NetworkConfig::uniform(3, 4), 1);
    auto g = filled_like(p, 1.0f);
    const double n0 = gradient_norm(g);
    const float scale = static_cast<float>(0.5 / n0);
    for (auto& t : g.tensors())
        for (float& v : t.data) v *= scale;
    const auto before = g;
    clip_gradients(g, 1.0);
    EXPECT_TRUE(g == before);
}

TEST(ClipGradients, LargeNormScaledAndCollinear) {
    const auto p = build_model<float>(NetworkConfig::uniform(3, 4), 1);
    auto g = p.zeros_like();
    Rng rng(3);
    for (auto& t : g.tensors())
        if (t.learnable)
            for (float& v : t.data) v = static_cast<float>(rng.normal());
    const double n0 = gradient_norm(g);
    const float to_four = static_cast<float>(4.0 / n0);
    for (auto& t : g.tensors())
        for (float& v : t.data) v *= to_four;
    const auto before = g;
    EXPECT_NEAR(clip_gradients(g, 1.0), 4.0, 1e-4);
    EXPECT_NEAR(gradient_norm(g), 1.0, 1e-6);
    const auto a = before.tensors();
    const auto b = g.tensors();
    for (std::size_t i = 0; i < a.size(); ++i)
        for (std::size_t k = 0; k < a[i].data.size(); ++k)
            if (a[i].data[k] != 0.0f) ASSERT_GT(a[i].data[k] * b[i].data[k], 0.0f);
}

TEST(Sgd, ZeroLearningRateKeepsParameters) {
    auto p = build_model<float>(NetworkConfig::uniform(3, 4), 1);
    const auto before = p;
    auto v = p.zeros_like();
    sgd_step(p, filled_like(p, 1.0f), 0.0, 0.0, v);
    EXPECT_TRUE(p == before);
}

TEST(Sgd, UnitRateSubtractsGradient) {
    std::vector<float> w{1.0f, -2.0f}, g{0.5f, 0.25f}, v(2, 0.0f);
    sgd_update(std::span<float>(w), std::span<const float>(g), std::span<float>(v), 1.0, 0.0);
    EXPECT_EQ(w, (std::vector<float>{0.5f, -2.25f}));
    std::vector<float> short_v(1);
    EXPECT_THROW(sgd_update(std::span<float>(w), std::span<const float>(g), std::span<float>(short_v), 1.0, 0.0),
                 ShapeError);
}

TEST(Sgd, QuadraticBowlConverges) {
    // f(w) = w^2, grad 2w: w_k = (1 - 2 lr)^k = 0.2^50.
    std::vector<double> w{1.0}, g(1), v(1, 0.0);
    for (int k = 0; k < 50; ++k) {
        g[0] = 2.0 * w[0];
        sgd_update(std::span<double>(w), std::span<const double>(g), std::span<double>(v), 0.4, 0.0);
    }
    EXPECT_LT(std::abs(w[0]), 1e-3);
}

TEST(Sgd, MomentumAccumulatesVelocity) {
    std::vector<double> w{0.0}, g{1.0}, v{0.0};
    sgd_update(std::span<double>(w), std::span<const double>(g), std::span<double>(v), 1.0, 0.5);
    sgd_update(std::span<double>(w), std::span<const double>(g), std::span<double>(v), 1.0, 0.5);
    EXPECT_DOUBLE_EQ(v[0], 1.5);
    EXPECT_DOUBLE_EQ(w[0], -2.5);
}

TEST(Sgd, UnclippedStepIsPlainGradientDescent) {
    auto p = build_model<float>(NetworkConfig::uniform(3, 4), 1);
    auto g = p.zeros_like();
    Rng rng(5);
    for (auto& t : g.tensors())
        if (t.learnable)
            for (float& v : t.data) v = static_cast<float>(rng.normal());
    auto expected = p;
    const auto et = expected.tensors();
    const auto gt = g.tensors();
    for (std::size_t t = 0; t < et.size(); ++t)
        if (et[t].learnable)
            for (std::size_t i = 0; i < et[t].data.size(); ++i) et[t].data[i] -= 0.01f * gt[t].data[i];
    clip_gradients(g, std::numeric_limits<double>::infinity());
    auto v = p.zeros_like();
    sgd_step(p, g, 0.01, 0.0, v);
    EXPECT_TRUE(p == expected);
}

TEST(BatchSampler, EpochsArePermutations) {
    BatchSampler s(20, 10, 1);
    EXPECT_EQ(s.batches_per_epoch(), 2u);
    for (int epoch = 0; epoch < 3; ++epoch) {
        std::set<std::size_t> seen;
        for (int b = 0; b < 2; ++b) {
            const auto batch = s.next();
            EXPECT_EQ(batch.size(), 10u);
            for (auto i : batch) EXPECT_TRUE(seen.insert(i).second);
        }
        EXPECT_EQ(seen.size(), 20u);
    }
}

TEST(BatchSampler, PartialLastBatch) {
    BatchSampler s(16, 10, 2);
    EXPECT_EQ(s.next().size(), 10u);
    EXPECT_EQ(s.next().size(), 6u);
    EXPECT_EQ(s.next().size(), 10u);
}

TEST(BatchSampler, DeterministicPerSeed) {
    BatchSampler a(20, 10, 9), b(20, 10, 9), c(20, 10, 10);
    bool differs = false;
    for (int i = 0; i < 6; ++i) {
        const auto x = a.next();
        EXPECT_EQ(x, b.next());
        differs |= x != c.next();
    }
    EXPECT_TRUE(differs);
}

TEST(BatchSampler, InvalidArguments) {
    EXPECT_THROW(BatchSampler(0, 1, 1), ArgumentError);
    EXPECT_THROW(BatchSampler(5, 6, 1), ArgumentError);
}

TEST(Samples, MaskRoundTrip) {
    const auto set = small_set(3, 4);
    for (const auto& s : set) {
        validate_samples({s});
        const auto m = target_mask(s.target);
        const auto back = make_sample(RasterImage::from_tensor(s.image), m);
        EXPECT_EQ(back.target, s.target);
    }
    auto bad = set;
    bad[1].target[0] = 0.5f;
    EXPECT_THROW(validate_samples(bad), ArgumentError);
}

TEST(CurveLog, LineFormat) {
    EXPECT_EQ(format_curve_line({3, 0.05, 0.25, false, std::nullopt}), "3\t0.05\t0.25");
    EXPECT_EQ(format_curve_line({9, 0.1, 1.5, true, 0.75}), "9\t0.1\t1.5\t0.750000");
    EXPECT_EQ(format_curve_line({9, 0.1, 1.5, true, std::nullopt}), "9\t0.1\t1.5\tundefined");
}

TEST(Train, DeterministicAndFinite) {
    const auto set = small_set(6, 1);
    const auto cfg = NetworkConfig::uniform(3, 4);
    TrainConfig tc;
    tc.max_iter = 6;
    tc.batch_size = 3;
    tc.eval_every = 3;
    std::vector<std::size_t> checkpoints;
    TrainHooks hooks;
    tc.checkpoint_every = 2;
    hooks.on_checkpoint = [&](std::size_t iter, const ModelParams<float>&) { checkpoints.push_back(iter); };
    const auto a = train(cfg, tc, set, set, hooks);
    const auto b = train(cfg, tc, set, set);
    EXPECT_EQ(serialize_params(a.params), serialize_params(b.params));
    ASSERT_EQ(a.curve.size(), 6u);
    EXPECT_TRUE(std::isfinite(a.curve[0].loss));
    EXPECT_GT(a.curve[0].loss, 0.0);
    EXPECT_TRUE(a.curve[2].evaluated);
    EXPECT_FALSE(a.curve[3].evaluated);
    EXPECT_TRUE(a.curve[5].evaluated);
    EXPECT_EQ(checkpoints, (std::vector<std::size_t>{2, 4, 6}));
    tc.seed = 2;
    EXPECT_NE(serialize_params(train(cfg, tc, set, set).params), serialize_params(a.params));
}

TEST(Train, DivergenceIsNumericalError) {
    const auto set = small_set(4, 1);
    TrainConfig tc;
    tc.max_iter = 50;
    tc.batch_size = 2;
    tc.lr0 = 1e30;
    tc.clip_norm = 1e30;
    EXPECT_THROW(train(NetworkConfig::uniform(3, 4), tc, set, {}), NumericalError);
}

TEST(Train, RejectsBadInputs) {
    const auto set = small_set(4, 1);
    TrainConfig tc;
    tc.max_iter = 1;
    tc.batch_size = 2;
    EXPECT_THROW(train(NetworkConfig::uniform(4, 4), tc, set, {}), ArgumentError);
    tc.lr0 = 0.0;
    EXPECT_THROW(train(NetworkConfig::uniform(3, 4), tc, set, {}), ConfigError);
}
