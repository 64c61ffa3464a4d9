#include <gtest/gtest.h>

#include <cmath>

#include "mscff/errors.hpp"
#include "mscff/gradcheck.hpp"
#include "mscff/layers.hpp"
#include "mscff/random.hpp"

using namespace mscff;

namespace {

// Direct nested-loop same-padded convolution.
Tensor4<double> conv_oracle(const Tensor4<double>& x, const ConvParams<double>& p) {
    const auto s = x.shape();
    const std::size_t out_c = p.out_channels();
    const long r = static_cast<long>(p.kernel());
    const long d = p.dilation;
    const long pad = d * (r - 1) / 2;
    Tensor4<double> y(s.n, out_c, s.h, s.w);
    for (std::size_t n = 0; n < s.n; ++n)
        for (std::size_t o = 0; o < out_c; ++o)
            for (long i = 0; i < static_cast<long>(s.h); ++i)
                for (long j = 0; j < static_cast<long>(s.w); ++j) {
                    double acc = p.bias[o];
                    for (std::size_t c = 0; c < s.c; ++c)
                        for (long u = 0; u < r; ++u)
                            for (long v = 0; v < r; ++v) {
                                const long yi = i + u * d - pad, xj = j + v * d - pad;
                                if (yi < 0 || xj < 0 || yi >= static_cast<long>(s.h) || xj >= static_cast<long>(s.w))
                                    continue;
                                acc += p.weights(o, c, u, v) * x(n, c, yi, xj);
                            }
                    y(n, o, i, j) = acc;
                }
    return y;
}

// Scatter definition of a transposed convolution.
Tensor4<double> deconv_oracle(const Tensor4<double>& x, const ConvParams<double>& p) {
    const auto s = x.shape();
    const std::size_t stride = p.stride, k = p.kernel();
    const auto geo = deconv_geometry(k, stride);
    const std::size_t oh = s.h * stride, ow = s.w * stride;
    Tensor4<double> y(s.n, p.out_channels(), oh, ow);
    for (std::size_t n = 0; n < s.n; ++n)
        for (std::size_t o = 0; o < p.out_channels(); ++o)
            for (std::size_t i = 0; i < oh; ++i)
                for (std::size_t j = 0; j < ow; ++j) y(n, o, i, j) = p.bias[o];
    for (std::size_t n = 0; n < s.n; ++n)
        for (std::size_t c = 0; c < s.c; ++c)
            for (std::size_t i = 0; i < s.h; ++i)
                for (std::size_t j = 0; j < s.w; ++j)
                    for (std::size_t o = 0; o < p.out_channels(); ++o)
                        for (std::size_t u = 0; u < k; ++u)
                            for (std::size_t v = 0; v < k; ++v) {
                                const long yi = static_cast<long>(i * stride + u) - static_cast<long>(geo.padding);
                                const long xj = static_cast<long>(j * stride + v) - static_cast<long>(geo.padding);
                                if (yi < 0 || xj < 0 || yi >= static_cast<long>(oh) || xj >= static_cast<long>(ow))
                                    continue;
                                y(n, o, yi, xj) += p.weights(c, o, u, v) * x(n, c, i, j);
                            }
    return y;
}

double max_abs_diff(const Tensor4<double>& a, const Tensor4<double>& b) {
    EXPECT_EQ(a.shape(), b.shape());
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

ConvParams<double> random_conv(std::size_t in, std::size_t out, std::size_t k, int d, std::uint64_t seed) {
    auto p = ConvParams<double>::conv(in, out, k, d);
    p.weights = seeded_normal<double>(p.weights.shape(), 0, 1, seed);
    Rng rng(seed ^ 0x55);
    for (auto& b : p.bias) b = rng.normal();
    return p;
}

}  // namespace

TEST(Conv2d, OnesKernelCountsNeighbours) {
    Tensor4<double> x(1, 1, 3, 3, 1.0);
    auto p = ConvParams<double>::conv(1, 1, 3);
    p.weights = Tensor4<double>(1, 1, 3, 3, 1.0);
    auto y = conv2d_forward(x, p);
    EXPECT_EQ(y(0, 0, 1, 1), 9.0);
    EXPECT_EQ(y(0, 0, 0, 0), 4.0);
    EXPECT_EQ(y(0, 0, 0, 2), 4.0);
    EXPECT_EQ(y(0, 0, 2, 0), 4.0);
    EXPECT_EQ(y(0, 0, 2, 2), 4.0);
    EXPECT_EQ(y(0, 0, 0, 1), 6.0);
}

TEST(Conv2d, DilationKeepsSpatialSize) {
    auto x = seeded_normal<float>({1, 4, 16, 16}, 0, 1, 1);
    auto p = ConvParams<float>::conv(4, 8, 3, 2);
    EXPECT_EQ(conv2d_forward(x, p).shape(), (Shape4{1, 8, 16, 16}));
}

TEST(Conv2d, MatchesDirectLoop) {
    for (int d : {1, 2, 4}) {
        auto x = seeded_normal<double>({2, 3, 9, 11}, 0, 1, 10 + d);
        auto p = random_conv(3, 5, 3, d, 20 + d);
        EXPECT_LT(max_abs_diff(conv2d_forward(x, p), conv_oracle(x, p)), 1e-12) << "dilation " << d;
    }
    auto x = seeded_normal<double>({1, 6, 5, 5}, 0, 1, 3);
    auto p = random_conv(6, 2, 1, 1, 4);
    EXPECT_LT(max_abs_diff(conv2d_forward(x, p), conv_oracle(x, p)), 1e-12);
}

TEST(Conv2d, FloatAgreesWithDouble) {
    auto x = seeded_normal<double>({2, 3, 8, 8}, 0, 1, 5);
    auto p = random_conv(3, 4, 3, 2, 6);
    ConvParams<float> pf{p.weights.cast<float>(), std::vector<float>(p.bias.begin(), p.bias.end()), 2, false, 1};
    auto yf = conv2d_forward(x.cast<float>(), pf).cast<double>();
    EXPECT_LT(max_abs_diff(yf, conv2d_forward(x, p)), 1e-4);
}

TEST(Conv2d, LinearInInput) {
    auto p = random_conv(2, 3, 3, 1, 7);
    std::fill(p.bias.begin(), p.bias.end(), 0.0);
    auto a = seeded_normal<double>({1, 2, 6, 6}, 0, 1, 8);
    auto b = seeded_normal<double>({1, 2, 6, 6}, 0, 1, 9);
    const double alpha = 1.7, beta = -0.3;
    Tensor4<double> mix(a.shape());
    for (std::size_t i = 0; i < a.size(); ++i) mix[i] = alpha * a[i] + beta * b[i];
    auto ya = conv2d_forward(a, p), yb = conv2d_forward(b, p);
    Tensor4<double> expect(ya.shape());
    for (std::size_t i = 0; i < ya.size(); ++i) expect[i] = alpha * ya[i] + beta * yb[i];
    EXPECT_LT(max_abs_diff(conv2d_forward(mix, p), expect), 1e-12);
}

TEST(Conv2d, ChannelMismatchIsShapeError) {
    auto p = ConvParams<float>::conv(3, 2, 3);
    EXPECT_THROW(conv2d_forward(Tensor4<float>(1, 4, 4, 4), p), ShapeError);
}

TEST(Deconv, GeometryFormula) {
    EXPECT_EQ(deconv_geometry(3, 2).padding, 1u);
    EXPECT_EQ(deconv_geometry(3, 2).output_padding, 1u);
    for (std::size_t s : {2u, 4u, 8u}) {
        const auto g = deconv_geometry(2 * s, s);
        EXPECT_EQ(g.padding, s / 2);
        EXPECT_EQ(g.output_padding, 0u);
    }
}

TEST(Deconv, ScalesSpatialSize) {
    for (int s : {2, 4, 8}) {
        auto p = ConvParams<float>::deconv(4, 3, 2 * s, s);
        auto y = deconv2d_forward(Tensor4<float>(2, 4, 5, 7), p);
        EXPECT_EQ(y.shape(), (Shape4{2, 3, 5u * s, 7u * s}));
    }
    auto p = ConvParams<float>::deconv(4, 3, 3, 2);
    EXPECT_EQ(deconv2d_forward(Tensor4<float>(1, 4, 16, 16), p).shape(), (Shape4{1, 3, 32, 32}));
}

TEST(Deconv, ZeroInputGivesBias) {
    auto p = ConvParams<double>::deconv(2, 3, 3, 2);
    p.weights = seeded_normal<double>(p.weights.shape(), 0, 1, 1);
    p.bias = {0.5, -1.0, 2.0};
    auto y = deconv2d_forward(Tensor4<double>(1, 2, 4, 4), p);
    for (std::size_t o = 0; o < 3; ++o)
        for (std::size_t i = 0; i < 8; ++i)
            for (std::size_t j = 0; j < 8; ++j) EXPECT_EQ(y(0, o, i, j), p.bias[o]);
}

TEST(Deconv, MatchesScatterDefinition) {
    for (auto [k, s] : {std::pair<std::size_t, int>{3, 2}, {4, 2}, {8, 4}, {16, 8}}) {
        auto x = seeded_normal<double>({2, 3, 4, 5}, 0, 1, k);
        auto p = ConvParams<double>::deconv(3, 2, k, s);
        p.weights = seeded_normal<double>(p.weights.shape(), 0, 1, k + 1);
        p.bias = {0.25, -0.5};
        EXPECT_LT(max_abs_diff(deconv2d_forward(x, p), deconv_oracle(x, p)), 1e-12) << "k " << k;
    }
}

TEST(Deconv, AdjointOfStridedConv) {
    // <conv_s(a), b> == <a, deconv_s(b)> with shared weights and zero bias.
    for (auto [k, s] : {std::pair<std::size_t, int>{3, 2}, {4, 2}, {8, 4}}) {
        auto p = ConvParams<float>::deconv(3, 5, k, s);  // deconv maps 3 -> 5, conv maps 5 -> 3
        p.weights = seeded_normal<float>(p.weights.shape(), 0, 1, 30 + k);
        auto a = seeded_normal<float>({2, 5, 8u * s, 8u * s}, 0, 1, 40 + k);
        auto b = seeded_normal<float>({2, 3, 8, 8}, 0, 1, 50 + k);
        const double lhs = dot(conv2d_strided_forward(a, p.weights, s), b);
        const double rhs = dot(a, deconv2d_forward(b, p));
        EXPECT_LT(std::abs(lhs - rhs) / std::max(1.0, std::abs(lhs)), 1e-5) << "k " << k;
    }
}

TEST(Relu, ClampsNegativesAndZero) {
    Tensor4<float> x(1, 1, 1, 3, std::vector<float>{-1, 0, 2});
    EXPECT_EQ(relu_forward(x), Tensor4<float>(1, 1, 1, 3, std::vector<float>{0, 0, 2}));
    Tensor4<float> g(1, 1, 1, 3, 1.0f);
    EXPECT_EQ(relu_backward(x, g), Tensor4<float>(1, 1, 1, 3, std::vector<float>{0, 0, 1}));
}

TEST(MaxPool, MatchesBruteForce) {
    auto x = seeded_normal<float>({2, 3, 6, 8}, 0, 1, 1);
    auto [y, idx] = maxpool_forward(x);
    ASSERT_EQ(y.shape(), (Shape4{2, 3, 3, 4}));
    for (std::size_t n = 0; n < 2; ++n)
        for (std::size_t c = 0; c < 3; ++c)
            for (std::size_t i = 0; i < 3; ++i)
                for (std::size_t j = 0; j < 4; ++j) {
                    float m = x(n, c, 2 * i, 2 * j);
                    for (std::size_t u = 0; u < 2; ++u)
                        for (std::size_t v = 0; v < 2; ++v) m = std::max(m, x(n, c, 2 * i + u, 2 * j + v));
                    EXPECT_EQ(y(n, c, i, j), m);
                }
}

TEST(MaxPool, TiesGoToFirstRowMajor) {
    Tensor4<float> x(1, 1, 2, 2, std::vector<float>{3, 5, 5, 1});
    auto [y, idx] = maxpool_forward(x);
    EXPECT_EQ(y[0], 5.0f);
    EXPECT_EQ(idx.argmax[0], 1u);
    Tensor4<float> flat(1, 1, 2, 2, 7.0f);
    EXPECT_EQ(maxpool_forward(flat).second.argmax[0], 0u);
}

TEST(MaxPool, BackwardRoutesOnePositionPerWindow) {
    auto x = seeded_normal<double>({1, 2, 8, 8}, 0, 1, 3);
    auto [y, idx] = maxpool_forward(x);
    auto g = maxpool_backward(idx, Tensor4<double>(y.shape(), 1.0));
    for (std::size_t c = 0; c < 2; ++c)
        for (std::size_t i = 0; i < 4; ++i)
            for (std::size_t j = 0; j < 4; ++j) {
                int nonzero = 0;
                for (std::size_t u = 0; u < 2; ++u)
                    for (std::size_t v = 0; v < 2; ++v) {
                        const double gv = g(0, c, 2 * i + u, 2 * j + v);
                        if (gv != 0.0) {
                            ++nonzero;
                            EXPECT_EQ(gv, 1.0);
                            EXPECT_EQ(x(0, c, 2 * i + u, 2 * j + v), y(0, c, i, j));
                        }
                    }
                EXPECT_EQ(nonzero, 1);
            }
}

TEST(MaxPool, OddSizeIsShapeError) { EXPECT_THROW(maxpool_forward(Tensor4<float>(1, 1, 3, 4)), ShapeError); }

TEST(BatchNorm, TrainModeStandardises) {
    auto x = seeded_normal<double>({4, 3, 8, 8}, 2.0, 3.0, 1);
    auto p = BNParams<double>::identity(3);
    auto y = batchnorm_forward(x, p, Mode::Train);
    const std::size_t per = 4 * 64;
    for (std::size_t c = 0; c < 3; ++c) {
        double sum = 0, sq = 0;
        for (std::size_t n = 0; n < 4; ++n)
            for (double v : y.plane(n, c)) {
                sum += v;
                sq += v * v;
            }
        const double mean = sum / per;
        EXPECT_NEAR(mean, 0.0, 1e-9);
        EXPECT_NEAR(sq / per - mean * mean, 1.0, 1e-5);
    }
}

TEST(BatchNorm, RunningStatisticsUpdate) {
    Tensor4<double> x(2, 1, 1, 2, std::vector<double>{1, 3, 5, 7});
    auto p = BNParams<double>::identity(1);
    batchnorm_forward(x, p, Mode::Train);
    // batch mean 4, unbiased variance 20/3
    EXPECT_NEAR(p.running_mean[0], 0.1 * 4.0, 1e-12);
    EXPECT_NEAR(p.running_var[0], 0.9 + 0.1 * 20.0 / 3.0, 1e-12);
}

TEST(BatchNorm, EvalWithIdentityStatsIsNearIdentity) {
    auto x = seeded_normal<float>({2, 3, 4, 4}, 0, 1, 2);
    const auto p = BNParams<float>::identity(3);
    auto y = batchnorm_forward(x, p);
    for (std::size_t i = 0; i < x.size(); ++i) EXPECT_NEAR(y[i], x[i], 1e-5 * (1 + std::abs(x[i])));
}

TEST(BatchNorm, BackwardOnEvalCacheIsUsageError) {
    auto x = seeded_normal<float>({2, 3, 4, 4}, 0, 1, 2);
    auto p = BNParams<float>::identity(3);
    BNCache<float> cache;
    batchnorm_forward(x, p, Mode::Eval, &cache);
    EXPECT_THROW(batchnorm_backward(cache, p, x), UsageError);
}

TEST(Mse, HandComputedExample) {
    Tensor4<double> pred(1, 1, 1, 2, std::vector<double>{0, 0});
    Tensor4<double> target(1, 1, 1, 2, std::vector<double>{1, 0});
    auto r = mse_loss(pred, target);
    EXPECT_DOUBLE_EQ(r.loss, 0.5);
    EXPECT_DOUBLE_EQ(r.grad[0], -1.0);
    EXPECT_DOUBLE_EQ(r.grad[1], 0.0);
    auto s = mse_loss(pred, target, LossReduction::PerSample);
    EXPECT_DOUBLE_EQ(s.loss, 1.0);
    EXPECT_DOUBLE_EQ(s.grad[0], -2.0);
}

TEST(Mse, ShapeMismatchIsShapeError) {
    EXPECT_THROW(mse_loss(Tensor4<float>(1, 2, 2, 2), Tensor4<float>(1, 1, 2, 2)), ShapeError);
}

TEST(GradCheck, RelativeErrorFloor) {
    EXPECT_DOUBLE_EQ(relative_error(1.0, 1.0), 0.0);
    EXPECT_DOUBLE_EQ(relative_error(2.0, 1.0), 0.5);
    EXPECT_DOUBLE_EQ(relative_error(0.0, 1e-9), 1e-9 / 1e-4);
}

TEST(GradCheck, TargetNamesRoundTrip) {
    for (auto t : {GradCheckTarget::Conv, GradCheckTarget::DilatedConv, GradCheckTarget::Deconv,
                   GradCheckTarget::BatchNorm, GradCheckTarget::MaxPool, GradCheckTarget::Relu, GradCheckTarget::Mse,
                   GradCheckTarget::Cbrr, GradCheckTarget::Model})
        EXPECT_EQ(parse_grad_check_target(to_string(t)), t);
    EXPECT_FALSE(parse_grad_check_target("softmax").has_value());
}

class LayerGradients : public ::testing::TestWithParam<GradCheckTarget> {};

TEST_P(LayerGradients, MatchCentralDifferences) {
    const auto r = grad_check(GetParam(), 2024);
    EXPECT_GT(r.probes, 0u);
    EXPECT_LE(r.skipped, r.probes / 4);
    EXPECT_TRUE(r.passed()) << r.name << " max error " << r.max_error << " tolerance " << r.tolerance;
}

INSTANTIATE_TEST_SUITE_P(All, LayerGradients,
                         ::testing::Values(GradCheckTarget::Conv, GradCheckTarget::DilatedConv,
                                           GradCheckTarget::Deconv, GradCheckTarget::BatchNorm,
                                           GradCheckTarget::MaxPool, GradCheckTarget::Relu, GradCheckTarget::Mse,
                                           GradCheckTarget::Cbrr),
                         [](const auto& info) { return to_string(info.param); });
