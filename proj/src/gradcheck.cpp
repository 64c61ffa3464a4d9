#include "mscff/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <functional>

#include "mscff/layers.hpp"
#include "mscff/network.hpp"
#include "mscff/random.hpp"

namespace mscff {

namespace {

constexpr double kEps = 1e-4;
constexpr double kLayerTol = 1e-5;
constexpr double kReluTol = 1e-6;
constexpr double kMseTol = 1e-8;
constexpr double kModelTol = 1e-3;
// Smooth points give step-size estimates that agree far closer than this.
constexpr double kKinkTol = 1e-6;

using Loss = std::function<double()>;

double central_difference(double& value, const Loss& loss, double eps) {
    const double saved = value;
    value = saved + eps;
    const double plus = loss();
    value = saved - eps;
    const double minus = loss();
    value = saved;
    return (plus - minus) / (2.0 * eps);
}

class Checker {
public:
    Checker(std::string name, double tolerance, bool absolute = false, bool detect_kinks = false)
        : absolute_(absolute), detect_kinks_(detect_kinks) {
        result_.name = std::move(name);
        result_.tolerance = tolerance;
    }

    void probe(double& value, double analytic, const Loss& loss) {
        const double numeric = central_difference(value, loss, kEps);
        if (detect_kinks_) {
            // A ReLU or max-pool switch inside [v - eps, v + eps] makes the
            // two step sizes disagree; such points have no derivative.
            const double half = central_difference(value, loss, kEps / 2);
            if (relative_error(numeric, half) > kKinkTol) {
                ++result_.skipped;
                return;
            }
        }
        const double err = absolute_ ? std::abs(analytic - numeric) : relative_error(analytic, numeric);
        result_.max_error = std::max(result_.max_error, err);
        ++result_.probes;
    }

    void skip() { ++result_.skipped; }

    void merge(const GradCheckResult& other) {
        result_.max_error = std::max(result_.max_error, other.max_error);
        result_.probes += other.probes;
        result_.skipped += other.skipped;
    }

    const GradCheckResult& result() const { return result_; }

private:
    GradCheckResult result_;
    bool absolute_;
    bool detect_kinks_;
};

ConvParams<double> random_conv(std::size_t in, std::size_t out, std::size_t k, int dilation, std::uint64_t seed) {
    auto p = ConvParams<double>::conv(in, out, k, dilation);
    p.weights = seeded_normal<double>(p.weights.shape(), 0.0, 0.5, seed);
    Rng rng(seed + 1);
    for (auto& b : p.bias) b = rng.normal(0.0, 0.5);
    return p;
}

ConvParams<double> random_deconv(std::size_t in, std::size_t out, std::size_t k, int stride, std::uint64_t seed) {
    auto p = ConvParams<double>::deconv(in, out, k, stride);
    p.weights = seeded_normal<double>(p.weights.shape(), 0.0, 0.5, seed);
    Rng rng(seed + 1);
    for (auto& b : p.bias) b = rng.normal(0.0, 0.5);
    return p;
}

BNParams<double> random_bn(std::size_t channels, std::uint64_t seed) {
    auto p = BNParams<double>::identity(channels);
    Rng rng(seed);
    for (auto& g : p.gamma) g = rng.uniform(0.5, 1.5);
    for (auto& b : p.beta) b = rng.normal(0.0, 0.3);
    return p;
}

GradCheckResult check_conv(const std::string& name, int dilation, std::uint64_t seed) {
    auto x = seeded_normal<double>({2, 3, 8, 8}, 0.0, 1.0, derive_seed(seed, 1));
    auto p = random_conv(3, 4, 3, dilation, derive_seed(seed, 2));
    const auto r = seeded_normal<double>({2, 4, 8, 8}, 0.0, 1.0, derive_seed(seed, 3));
    const auto g = conv2d_backward(x, p, r);
    Loss loss = [&] { return dot(r, conv2d_forward(x, p)); };
    Checker c(name, kLayerTol);
    for (std::size_t i = 0; i < x.size(); ++i) c.probe(x[i], g.input[i], loss);
    for (std::size_t i = 0; i < p.weights.size(); ++i) c.probe(p.weights[i], g.weights[i], loss);
    for (std::size_t i = 0; i < p.bias.size(); ++i) c.probe(p.bias[i], g.bias[i], loss);
    return c.result();
}

GradCheckResult check_deconv(std::uint64_t seed) {
    Checker c("deconv", kLayerTol);
    // The decoder's 3x3 stride-2 upsampler and a fusion-style 8x8 stride-4 one.
    const std::pair<std::size_t, int> variants[] = {{3, 2}, {8, 4}};
    std::uint64_t stream = 0;
    for (auto [k, s] : variants) {
        auto x = seeded_normal<double>({2, 3, 3, 3}, 0.0, 1.0, derive_seed(seed, stream++));
        auto p = random_deconv(3, 2, k, s, derive_seed(seed, stream++));
        const std::size_t oh = 3 * static_cast<std::size_t>(s);
        const auto r = seeded_normal<double>({2, 2, oh, oh}, 0.0, 1.0, derive_seed(seed, stream++));
        const auto g = deconv2d_backward(x, p, r);
        Loss loss = [&] { return dot(r, deconv2d_forward(x, p)); };
        for (std::size_t i = 0; i < x.size(); ++i) c.probe(x[i], g.input[i], loss);
        for (std::size_t i = 0; i < p.weights.size(); ++i) c.probe(p.weights[i], g.weights[i], loss);
        for (std::size_t i = 0; i < p.bias.size(); ++i) c.probe(p.bias[i], g.bias[i], loss);
    }
    return c.result();
}

GradCheckResult check_batchnorm(std::uint64_t seed) {
    auto x = seeded_normal<double>({2, 3, 4, 4}, 0.5, 2.0, derive_seed(seed, 1));
    auto p = random_bn(3, derive_seed(seed, 2));
    const auto r = seeded_normal<double>(x.shape(), 0.0, 1.0, derive_seed(seed, 3));
    BNCache<double> cache;
    BNParams<double> scratch = p;
    batchnorm_forward(x, scratch, Mode::Train, &cache);
    const auto g = batchnorm_backward(cache, p, r);
    Loss loss = [&] {
        BNParams<double> q = p;  // running statistics do not affect train-mode output
        return dot(r, batchnorm_forward(x, q, Mode::Train));
    };
    Checker c("bn", kLayerTol);
    for (std::size_t i = 0; i < x.size(); ++i) c.probe(x[i], g.input[i], loss);
    for (std::size_t i = 0; i < p.gamma.size(); ++i) c.probe(p.gamma[i], g.gamma[i], loss);
    for (std::size_t i = 0; i < p.beta.size(); ++i) c.probe(p.beta[i], g.beta[i], loss);
    return c.result();
}

GradCheckResult check_maxpool(std::uint64_t seed) {
    // Distinct values 0.01 apart so an eps-sized nudge never changes a winner.
    const Shape4 shape{2, 3, 6, 6};
    std::vector<double> values(shape.numel());
    for (std::size_t i = 0; i < values.size(); ++i) values[i] = 0.01 * static_cast<double>(i);
    Rng rng(derive_seed(seed, 1));
    for (std::size_t i = values.size(); i > 1; --i) std::swap(values[i - 1], values[rng.below(i)]);
    Tensor4<double> x(shape, values);
    const auto r = seeded_normal<double>({2, 3, 3, 3}, 0.0, 1.0, derive_seed(seed, 2));
    auto [out, idx] = maxpool_forward(x);
    const auto g = maxpool_backward(idx, r);
    Loss loss = [&] { return dot(r, maxpool_forward(x).first); };
    Checker c("pool", kLayerTol);
    for (std::size_t i = 0; i < x.size(); ++i) c.probe(x[i], g[i], loss);
    return c.result();
}

GradCheckResult check_relu(std::uint64_t seed) {
    auto x = seeded_normal<double>({2, 3, 8, 8}, 0.0, 1.0, derive_seed(seed, 1));
    for (std::size_t i = 0; i < x.size(); ++i) {
        if (i % 7 == 0)
            x[i] = 0.0;  // subgradient point, excluded below
        else if (std::abs(x[i]) < 0.05)
            x[i] = std::copysign(0.05, x[i]);
    }
    const auto r = seeded_normal<double>(x.shape(), 0.0, 1.0, derive_seed(seed, 2));
    const auto g = relu_backward(x, r);
    Loss loss = [&] { return dot(r, relu_forward(x)); };
    Checker c("relu", kReluTol);
    for (std::size_t i = 0; i < x.size(); ++i) {
        if (x[i] == 0.0)
            c.skip();
        else
            c.probe(x[i], g[i], loss);
    }
    return c.result();
}

GradCheckResult check_mse(std::uint64_t seed) {
    auto pred = seeded_uniform<double>({2, 2, 4, 4}, -0.5, 1.5, derive_seed(seed, 1));
    auto target = seeded_uniform<double>(pred.shape(), 0.0, 1.0, derive_seed(seed, 2));
    for (std::size_t i = 0; i < target.size(); ++i) target[i] = target[i] < 0.5 ? 0.0 : 1.0;
    Checker c("mse", kMseTol, /*absolute=*/true);
    for (auto reduction : {LossReduction::PerElement, LossReduction::PerSample}) {
        const auto g = mse_loss(pred, target, reduction).grad;
        Loss loss = [&] { return mse_loss(pred, target, reduction).loss; };
        for (std::size_t i = 0; i < pred.size(); ++i) c.probe(pred[i], g[i], loss);
    }
    return c.result();
}

void randomize_bn(ModelParams<double>& p, std::uint64_t seed) {
    Rng rng(seed);
    for (auto& t : p.tensors()) {
        if (t.name.ends_with(".gamma"))
            for (auto& v : t.data) v = rng.uniform(0.5, 1.5);
        else if (t.name.ends_with(".beta") || t.name.ends_with(".bias"))
            for (auto& v : t.data) v = rng.normal(0.0, 0.1);
    }
}

GradCheckResult check_cbrr(std::uint64_t seed) {
    Checker c("cbrr", kLayerTol, false, /*detect_kinks=*/true);
    // With a projection shortcut (3 -> 4), an identity shortcut (4 -> 4) and
    // without the residual unit.
    struct Variant {
        std::size_t in, out;
        int dilation;
        bool residual;
    };
    const Variant variants[] = {{3, 4, 2, true}, {4, 4, 1, true}, {3, 4, 1, false}};
    std::uint64_t stream = 0;
    for (const auto& v : variants) {
        NetworkConfig cfg = NetworkConfig::uniform(v.in, v.out);
        cfg.residual_enabled = v.residual;
        // Borrow block construction from a model and keep only the first encoder block.
        ModelParams<double> model = build_model<double>(cfg, derive_seed(seed, stream++));
        randomize_bn(model, derive_seed(seed, stream++));
        CbrrParams<double> block = model.encoder[0];
        block.dilation = v.dilation;
        for (auto& st : block.stages) st.conv.dilation = v.dilation;
        auto x = seeded_normal<double>({2, v.in, 8, 8}, 0.0, 1.0, derive_seed(seed, stream++));
        const auto r = seeded_normal<double>({2, v.out, 8, 8}, 0.0, 1.0, derive_seed(seed, stream++));

        CbrrParams<double> scratch = block;
        CbrrCache<double> cache;
        cbrr_forward(x, scratch, v.residual, Mode::Train, &cache);
        CbrrParams<double> grads = model.zeros_like().encoder[0];
        const auto gx = cbrr_backward(cache, block, v.residual, r, grads);

        Loss loss = [&] {
            CbrrParams<double> q = block;
            return dot(r, cbrr_forward(x, q, v.residual, Mode::Train));
        };
        for (std::size_t i = 0; i < x.size(); ++i) c.probe(x[i], gx[i], loss);
        auto visit = [&](ConvBN<double>& p, ConvBN<double>& g) {
            for (std::size_t i = 0; i < p.conv.weights.size(); ++i) c.probe(p.conv.weights[i], g.conv.weights[i], loss);
            for (std::size_t i = 0; i < p.conv.bias.size(); ++i) c.probe(p.conv.bias[i], g.conv.bias[i], loss);
            for (std::size_t i = 0; i < p.bn.gamma.size(); ++i) c.probe(p.bn.gamma[i], g.bn.gamma[i], loss);
            for (std::size_t i = 0; i < p.bn.beta.size(); ++i) c.probe(p.bn.beta[i], g.bn.beta[i], loss);
        };
        for (std::size_t s = 0; s < 3; ++s) visit(block.stages[s], grads.stages[s]);
        if (block.projection) visit(*block.projection, *grads.projection);
    }
    return c.result();
}

GradCheckResult check_model(std::uint64_t seed) {
    const NetworkConfig cfg = NetworkConfig::uniform(3, 4);
    ModelParams<double> params = build_model<double>(cfg, derive_seed(seed, 1));
    randomize_bn(params, derive_seed(seed, 2));
    auto x = seeded_uniform<double>({1, 3, 16, 16}, 0.0, 1.0, derive_seed(seed, 3));
    const auto r = seeded_normal<double>({1, 2, 16, 16}, 0.0, 1.0, derive_seed(seed, 4));

    ModelParams<double> scratch = params;
    ForwardCache<double> cache;
    model_forward(x, scratch, Mode::Train, &cache);
    GradStore<double> grads = model_backward(cache, params, r);

    Loss loss = [&] { return dot(r, model_forward(x, params, Mode::Train)); };
    Checker c("model", kModelTol, false, /*detect_kinks=*/true);
    Rng rng(derive_seed(seed, 5));
    auto tensors = params.tensors();
    auto grad_tensors = grads.params.tensors();
    for (std::size_t t = 0; t < tensors.size(); ++t) {
        if (!tensors[t].learnable) continue;
        for (int k = 0; k < 2; ++k) {
            const std::size_t i = rng.below(tensors[t].data.size());
            c.probe(tensors[t].data[i], grad_tensors[t].data[i], loss);
        }
    }
    for (int k = 0; k < 16; ++k) {
        const std::size_t i = rng.below(x.size());
        c.probe(x[i], grads.input[i], loss);
    }
    return c.result();
}

}  // namespace

double relative_error(double analytic, double numeric, double floor) {
    const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
    return std::abs(analytic - numeric) / denom;
}

GradCheckResult grad_check(GradCheckTarget target, std::uint64_t seed) {
    switch (target) {
        case GradCheckTarget::Conv: return check_conv("conv", 1, seed);
        case GradCheckTarget::DilatedConv: return check_conv("dilated_conv", 2, seed);
        case GradCheckTarget::Deconv: return check_deconv(seed);
        case GradCheckTarget::BatchNorm: return check_batchnorm(seed);
        case GradCheckTarget::MaxPool: return check_maxpool(seed);
        case GradCheckTarget::Relu: return check_relu(seed);
        case GradCheckTarget::Mse: return check_mse(seed);
        case GradCheckTarget::Cbrr: return check_cbrr(seed);
        case GradCheckTarget::Model: return check_model(seed);
    }
    return {};
}

std::vector<GradCheckResult> grad_check_all(std::uint64_t seed) {
    std::vector<GradCheckResult> out;
    for (auto t : {GradCheckTarget::Conv, GradCheckTarget::DilatedConv, GradCheckTarget::Deconv,
                   GradCheckTarget::BatchNorm, GradCheckTarget::MaxPool, GradCheckTarget::Relu, GradCheckTarget::Mse,
                   GradCheckTarget::Cbrr, GradCheckTarget::Model})
        out.push_back(grad_check(t, seed));
    return out;
}

std::optional<GradCheckTarget> parse_grad_check_target(const std::string& name) {
    if (name == "conv") return GradCheckTarget::Conv;
    if (name == "dilated_conv") return GradCheckTarget::DilatedConv;
    if (name == "deconv") return GradCheckTarget::Deconv;
    if (name == "bn") return GradCheckTarget::BatchNorm;
    if (name == "pool") return GradCheckTarget::MaxPool;
    if (name == "relu") return GradCheckTarget::Relu;
    if (name == "mse") return GradCheckTarget::Mse;
    if (name == "cbrr") return GradCheckTarget::Cbrr;
    if (name == "model") return GradCheckTarget::Model;
    return std::nullopt;
}

std::string to_string(GradCheckTarget target) {
    switch (target) {
        case GradCheckTarget::Conv: return "conv";
        case GradCheckTarget::DilatedConv: return "dilated_conv";
        case GradCheckTarget::Deconv: return "deconv";
        case GradCheckTarget::BatchNorm: return "bn";
        case GradCheckTarget::MaxPool: return "pool";
        case GradCheckTarget::Relu: return "relu";
        case GradCheckTarget::Mse: return "mse";
        case GradCheckTarget::Cbrr: return "cbrr";
        case GradCheckTarget::Model: return "model";
    }
    return "unknown";
}

}  // namespace mscff
