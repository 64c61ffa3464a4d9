#include "mscff/network.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <type_traits>

#include "mscff/errors.hpp"
#include "mscff/random.hpp"

namespace mscff {

// ---------------------------------------------------------------------------
// Config

void NetworkConfig::validate() const {
    if (in_channels == 0) throw ConfigError("in_channels must be >= 1");
    if (out_channels != 2) throw ConfigError("out_channels must be 2 (cloud, shadow)");
    for (std::size_t i = 0; i < kBlocks; ++i) {
        if (filters[i] == 0) throw ConfigError("filters must all be >= 1");
        if (encoder_dilations[i] < 1 || decoder_dilations[i] < 1) throw ConfigError("dilations must be >= 1");
    }
}

NetworkConfig NetworkConfig::uniform(std::size_t in_channels, std::size_t filters) {
    NetworkConfig c;
    c.in_channels = in_channels;
    c.filters.fill(filters);
    return c;
}

NetworkConfig NetworkConfig::filter_sweep(std::size_t in_channels) {
    NetworkConfig c;
    c.in_channels = in_channels;
    c.filters = {64, 128, 256, 512, 512, 512};
    return c;
}

namespace {

constexpr std::array<std::size_t, 5> kFusionStrides{8, 8, 8, 4, 2};
constexpr std::size_t kKernel = 3;

template <typename T>
ConvBN<T> make_convbn(std::size_t in, std::size_t out, std::size_t kernel, int dilation) {
    return {ConvParams<T>::conv(in, out, kernel, dilation), BNParams<T>::identity(out)};
}

template <typename T>
ConvBN<T> make_deconvbn(std::size_t in, std::size_t out, std::size_t kernel, int stride) {
    return {ConvParams<T>::deconv(in, out, kernel, stride), BNParams<T>::identity(out)};
}

template <typename T>
CbrrParams<T> make_block(std::size_t in, std::size_t out, int dilation, bool residual) {
    CbrrParams<T> b;
    b.dilation = dilation;
    b.stages[0] = make_convbn<T>(in, out, kKernel, dilation);
    b.stages[1] = make_convbn<T>(out, out, kKernel, dilation);
    b.stages[2] = make_convbn<T>(out, out, kKernel, dilation);
    if (residual && in != out) b.projection = make_convbn<T>(in, out, 1, 1);
    return b;
}

// Zero weights, identity batch norm.
template <typename T>
ModelParams<T> make_skeleton(const NetworkConfig& cfg) {
    cfg.validate();
    ModelParams<T> p;
    p.config = cfg;
    const auto& f = cfg.filters;
    for (std::size_t i = 0; i < kBlocks; ++i) {
        const std::size_t in = i == 0 ? cfg.in_channels : f[i - 1];
        p.encoder[i] = make_block<T>(in, f[i], cfg.encoder_dilations[i], cfg.residual_enabled);
    }
    for (std::size_t i = 0; i < kBlocks; ++i) {
        // D6 takes E6's output; D5 and D4 take the previous decoder sum;
        // D3..D1 take the matching upsampler's output, already at width f[i].
        const std::size_t in = i >= 3 ? f[std::min(i + 1, kBlocks - 1)] : f[i];
        p.decoder[i] = make_block<T>(in, f[i], cfg.decoder_dilation(i), cfg.residual_enabled);
    }
    for (std::size_t i = 0; i < 3; ++i) p.upsample[i] = make_deconvbn<T>(f[i + 1], f[i], kKernel, 2);
    if (cfg.fusion_enabled) {
        for (std::size_t j = 0; j < kFusionStrides.size(); ++j) {
            const std::size_t level = kBlocks - 1 - j;
            const std::size_t s = kFusionStrides[j];
            p.fusion.push_back(make_deconvbn<T>(f[level], f[level], 2 * s, static_cast<int>(s)));
        }
    }
    std::size_t head_in = f[0];
    if (cfg.fusion_enabled) {
        head_in = 0;
        for (auto c : f) head_in += c;
    }
    p.head = ConvParams<T>::conv(head_in, cfg.out_channels, kKernel, 1);
    return p;
}

template <typename V>
auto as_span(V& v) {
    return std::span(v.data(), v.size());
}

template <typename T, typename P, typename Visit>
void visit_tensors(P& p, Visit&& visit) {
    auto conv = [&](const std::string& name, auto& c) {
        const auto& s = c.weights.shape();
        visit(name + ".weight", std::vector<std::size_t>{s.n, s.c, s.h, s.w}, c.weights.values(), true);
        visit(name + ".bias", std::vector<std::size_t>{c.bias.size()}, as_span(c.bias), true);
    };
    auto bn = [&](const std::string& name, auto& b) {
        const std::vector<std::size_t> shape{b.gamma.size()};
        visit(name + ".gamma", shape, as_span(b.gamma), true);
        visit(name + ".beta", shape, as_span(b.beta), true);
        visit(name + ".running_mean", shape, as_span(b.running_mean), false);
        visit(name + ".running_var", shape, as_span(b.running_var), false);
    };
    auto block = [&](const std::string& name, auto& b) {
        for (std::size_t s = 0; s < 3; ++s) {
            conv(name + ".conv" + std::to_string(s + 1), b.stages[s].conv);
            bn(name + ".bn" + std::to_string(s + 1), b.stages[s].bn);
        }
        if (b.projection) {
            conv(name + ".proj", b.projection->conv);
            bn(name + ".proj_bn", b.projection->bn);
        }
    };
    for (std::size_t i = 0; i < kBlocks; ++i) block("enc" + std::to_string(i + 1), p.encoder[i]);
    for (std::size_t k = kBlocks; k-- > 0;) {
        block("dec" + std::to_string(k + 1), p.decoder[k]);
        if (k >= 1 && k <= 3) {
            auto& up = p.upsample[k - 1];
            conv("up" + std::to_string(k) + ".deconv", up.conv);
            bn("up" + std::to_string(k) + ".bn", up.bn);
        }
    }
    for (std::size_t j = 0; j < p.fusion.size(); ++j) {
        const std::string name = "fuse" + std::to_string(kBlocks - j);
        conv(name + ".deconv", p.fusion[j].conv);
        bn(name + ".bn", p.fusion[j].bn);
    }
    conv("head", p.head);
}

}  // namespace

// ---------------------------------------------------------------------------
// ModelParams

template <typename T>
std::vector<TensorRef<T>> ModelParams<T>::tensors() {
    std::vector<TensorRef<T>> out;
    visit_tensors<T>(*this, [&](std::string name, std::vector<std::size_t> shape, std::span<T> data,
                                bool learnable) {
        out.push_back({std::move(name), std::move(shape), data, learnable});
    });
    return out;
}

template <typename T>
std::vector<TensorRef<const T>> ModelParams<T>::tensors() const {
    std::vector<TensorRef<const T>> out;
    visit_tensors<T>(*this, [&](std::string name, std::vector<std::size_t> shape, std::span<const T> data,
                                bool learnable) {
        out.push_back({std::move(name), std::move(shape), data, learnable});
    });
    return out;
}

template <typename T>
std::size_t ModelParams<T>::parameter_count() const {
    std::size_t n = 0;
    for (const auto& t : tensors()) n += t.data.size();
    return n;
}

template <typename T>
std::size_t ModelParams<T>::learnable_count() const {
    std::size_t n = 0;
    for (const auto& t : tensors())
        if (t.learnable) n += t.data.size();
    return n;
}

template <typename T>
ModelParams<T> ModelParams<T>::zeros_like() const {
    ModelParams<T> z = make_skeleton<T>(config);
    for (auto& t : z.tensors()) std::fill(t.data.begin(), t.data.end(), T(0));
    return z;
}

template <typename T>
template <typename U>
ModelParams<U> ModelParams<T>::cast() const {
    ModelParams<U> out = make_skeleton<U>(config);
    auto dst = out.tensors();
    auto src = tensors();
    for (std::size_t i = 0; i < src.size(); ++i)
        for (std::size_t j = 0; j < src[i].data.size(); ++j) dst[i].data[j] = static_cast<U>(src[i].data[j]);
    return out;
}

template <typename T>
bool ModelParams<T>::all_finite() const {
    for (const auto& t : tensors())
        for (T v : t.data)
            if (!std::isfinite(v)) return false;
    return true;
}

template <typename T>
bool ModelParams<T>::bitwise_equal(const ModelParams& other) const {
    if (!(config == other.config)) return false;
    auto a = tensors();
    auto b = other.tensors();
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (a[i].name != b[i].name || a[i].shape != b[i].shape) return false;
        if (std::memcmp(a[i].data.data(), b[i].data.data(), a[i].data.size_bytes()) != 0) return false;
    }
    return true;
}

template <typename T>
ModelParams<T> build_model(const NetworkConfig& config, std::uint64_t seed) {
    ModelParams<T> p = make_skeleton<T>(config);
    auto init = [&](ConvParams<T>& c, std::uint64_t stream) {
        const auto& s = c.weights.shape();
        // Transposed layers: each output sees in * (k / stride)^2 taps.
        const double fan_in = c.transposed
                                  ? static_cast<double>(s.n * s.h * s.w) / static_cast<double>(c.stride * c.stride)
                                  : static_cast<double>(s.c * s.h * s.w);
        c.weights = seeded_normal<T>(s, 0.0, std::sqrt(2.0 / fan_in), derive_seed(seed, stream));
    };
    std::uint64_t stream = 0;
    auto init_block = [&](CbrrParams<T>& b) {
        for (auto& st : b.stages) init(st.conv, stream++);
        if (b.projection) init(b.projection->conv, stream++);
    };
    for (auto& b : p.encoder) init_block(b);
    for (std::size_t k = kBlocks; k-- > 0;) init_block(p.decoder[k]);
    for (auto& u : p.upsample) init(u.conv, stream++);
    for (auto& f : p.fusion) init(f.conv, stream++);
    init(p.head, stream++);
    return p;
}

// ---------------------------------------------------------------------------
// Forward / backward

namespace {

template <typename T>
void accumulate(Tensor4<T>& dst, const Tensor4<T>& src) {
    if (src.empty()) return;
    if (dst.empty())
        dst = src;
    else
        add_inplace(dst, src);
}

template <typename T>
void accumulate(std::vector<T>& dst, const std::vector<T>& src) {
    for (std::size_t i = 0; i < src.size(); ++i) dst[i] += src[i];
}

template <typename T>
void accumulate(ConvParams<T>& dst, const ConvGrads<T>& g) {
    for (std::size_t i = 0; i < g.weights.size(); ++i) dst.weights[i] += g.weights[i];
    accumulate(dst.bias, g.bias);
}

template <typename T, typename CB>
Tensor4<T> convbn_forward(const Tensor4<T>& x, CB& p, Mode mode, bool relu, ConvBNCache<T>* cache) {
    Tensor4<T> z = p.conv.transposed ? deconv2d_forward(x, p.conv) : conv2d_forward(x, p.conv);
    Tensor4<T> y;
    if constexpr (std::is_const_v<CB>) {
        if (mode != Mode::Eval) throw UsageError("train-mode forward needs mutable parameters");
        y = batchnorm_forward(z, p.bn);
        if (cache) cache->bn = BNCache<T>{Mode::Eval, {}, {}};
    } else {
        y = batchnorm_forward(z, p.bn, mode, cache ? &cache->bn : nullptr);
    }
    if (cache) cache->input = x;
    if (!relu) return y;
    if (cache) cache->activation_input = y;
    return relu_forward(y);
}

// `grad_out` is w.r.t. the BN output (pre-ReLU). Returns the input gradient.
template <typename T>
Tensor4<T> convbn_backward(const ConvBNCache<T>& cache, const ConvBN<T>& p, const Tensor4<T>& grad_out,
                           ConvBN<T>& grads) {
    BNGrads<T> bg = batchnorm_backward(cache.bn, p.bn, grad_out);
    accumulate(grads.bn.gamma, bg.gamma);
    accumulate(grads.bn.beta, bg.beta);
    ConvGrads<T> cg = p.conv.transposed ? deconv2d_backward(cache.input, p.conv, bg.input)
                                        : conv2d_backward(cache.input, p.conv, bg.input);
    accumulate(grads.conv, cg);
    return std::move(cg.input);
}

template <typename T, typename B>
Tensor4<T> cbrr_impl(const Tensor4<T>& x, B& block, bool residual, Mode mode, CbrrCache<T>* cache) {
    Tensor4<T> h = x;
    for (std::size_t s = 0; s < 3; ++s)
        h = convbn_forward<T>(h, block.stages[s], mode, s < 2, cache ? &cache->stages[s] : nullptr);
    if (residual) {
        if (block.projection) {
            if (cache) cache->projection.emplace();
            add_inplace(h, convbn_forward<T>(x, *block.projection, mode, false,
                                             cache ? &*cache->projection : nullptr));
        } else {
            add_inplace(h, x);
        }
    }
    if (cache) cache->stages[2].activation_input = h;
    return relu_forward(h);
}

template <typename T, typename P>
std::array<Tensor4<T>, kBlocks> encoder_impl(const Tensor4<T>& x, P& params, Mode mode, ForwardCache<T>* cache) {
    if (x.h() % 8 != 0 || x.w() % 8 != 0)
        throw ShapeError("encoder: input height and width must be divisible by 8, got " + to_string(x.shape()));
    if (x.c() != params.config.in_channels)
        throw ShapeError("encoder: input has " + std::to_string(x.c()) + " channels, network expects " +
                         std::to_string(params.config.in_channels));
    const bool residual = params.config.residual_enabled;
    std::array<Tensor4<T>, kBlocks> e;
    Tensor4<T> h = x;
    for (std::size_t i = 0; i < kBlocks; ++i) {
        e[i] = cbrr_impl<T>(h, params.encoder[i], residual, mode, cache ? &cache->encoder[i] : nullptr);
        if (i < 3) {
            auto [pooled, idx] = maxpool_forward(e[i]);
            if (cache) cache->pools[i] = std::move(idx);
            h = std::move(pooled);
        } else {
            h = e[i];
        }
    }
    return e;
}

template <typename T, typename P>
FeaturePyramid<T> decoder_impl(const std::array<Tensor4<T>, kBlocks>& e, P& params, Mode mode,
                               ForwardCache<T>* cache) {
    const bool residual = params.config.residual_enabled;
    FeaturePyramid<T> pyr;
    Tensor4<T> h = e[kBlocks - 1];
    for (std::size_t k = kBlocks; k-- > 0;) {
        if (k <= 2)
            h = convbn_forward<T>(h, params.upsample[k], mode, true, cache ? &cache->upsample[k] : nullptr);
        Tensor4<T> d = cbrr_impl<T>(h, params.decoder[k], residual, mode, cache ? &cache->decoder[k] : nullptr);
        if (d.shape() != e[k].shape())
            throw ShapeError("decoder: skip pair " + std::to_string(k + 1) + " mismatch " + to_string(d.shape()) +
                             " vs " + to_string(e[k].shape()));
        add_inplace(d, e[k]);
        h = d;
        pyr[kBlocks - 1 - k] = std::move(d);
    }
    return pyr;
}

template <typename T, typename P>
Tensor4<T> fusion_impl(const FeaturePyramid<T>& pyr, P& params, Mode mode, ForwardCache<T>* cache) {
    const Shape4 full = pyr[kBlocks - 1].shape();
    Tensor4<T> head_in;
    if (params.config.fusion_enabled) {
        if (params.fusion.size() != kBlocks - 1) throw ShapeError("fusion: parameters missing upsamplers");
        std::vector<Tensor4<T>> parts;
        if (cache) cache->fusion.assign(kBlocks - 1, {});
        for (std::size_t j = 0; j + 1 < kBlocks; ++j) {
            parts.push_back(convbn_forward<T>(pyr[j], params.fusion[j], mode, true,
                                              cache ? &cache->fusion[j] : nullptr));
            if (parts.back().h() != full.h || parts.back().w() != full.w)
                throw ShapeError("fusion: upsampled scale " + std::to_string(j) + " is " +
                                 to_string(parts.back().shape()) + ", expected spatial " + to_string(full));
        }
        parts.push_back(pyr[kBlocks - 1]);
        if (cache) {
            cache->concat_channels.clear();
            for (const auto& t : parts) cache->concat_channels.push_back(t.c());
        }
        head_in = concat_channels<T>(parts);
    } else {
        head_in = pyr[kBlocks - 1];
    }
    Tensor4<T> out = conv2d_forward(head_in, params.head);
    if (cache) cache->head_input = std::move(head_in);
    return out;
}

}  // namespace

template <typename T>
Tensor4<T> cbrr_forward(const Tensor4<T>& x, CbrrParams<T>& block, bool residual_enabled, Mode mode,
                        CbrrCache<T>* cache) {
    if (x.c() != block.in_channels())
        throw ShapeError("cbrr_forward: input has " + std::to_string(x.c()) + " channels, block expects " +
                         std::to_string(block.in_channels()));
    if (residual_enabled && !block.projection && block.in_channels() != block.out_channels())
        throw ShapeError("cbrr_forward: residual needs a projection when widths differ");
    return cbrr_impl<T>(x, block, residual_enabled, mode, cache);
}

template <typename T>
Tensor4<T> cbrr_backward(const CbrrCache<T>& cache, const CbrrParams<T>& block, bool residual_enabled,
                         const Tensor4<T>& grad_out, CbrrParams<T>& grads) {
    Tensor4<T> g = relu_backward(cache.stages[2].activation_input, grad_out);
    const Tensor4<T> g_sum = g;
    for (std::size_t s = 3; s-- > 0;) {
        if (s < 2) g = relu_backward(cache.stages[s].activation_input, g);
        g = convbn_backward(cache.stages[s], block.stages[s], g, grads.stages[s]);
    }
    if (residual_enabled) {
        if (block.projection) {
            if (!cache.projection || !grads.projection) throw UsageError("cbrr_backward: projection cache missing");
            add_inplace(g, convbn_backward(*cache.projection, *block.projection, g_sum, *grads.projection));
        } else {
            add_inplace(g, g_sum);
        }
    }
    return g;
}

template <typename T>
std::array<Tensor4<T>, kBlocks> encoder_forward(const Tensor4<T>& x, ModelParams<T>& params, Mode mode) {
    return encoder_impl<T>(x, params, mode, nullptr);
}

template <typename T>
FeaturePyramid<T> decoder_forward(const std::array<Tensor4<T>, kBlocks>& encoded, ModelParams<T>& params,
                                  Mode mode) {
    return decoder_impl<T>(encoded, params, mode, nullptr);
}

template <typename T>
Tensor4<T> fusion_forward(const FeaturePyramid<T>& pyramid, ModelParams<T>& params, Mode mode) {
    return fusion_impl<T>(pyramid, params, mode, nullptr);
}

template <typename T>
Tensor4<T> model_forward(const Tensor4<T>& x, ModelParams<T>& params, Mode mode, ForwardCache<T>* cache) {
    auto e = encoder_impl<T>(x, params, mode, cache);
    auto pyr = decoder_impl<T>(e, params, mode, cache);
    return fusion_impl<T>(pyr, params, mode, cache);
}

template <typename T>
Tensor4<T> model_predict(const Tensor4<T>& x, const ModelParams<T>& params) {
    auto e = encoder_impl<T>(x, params, Mode::Eval, nullptr);
    auto pyr = decoder_impl<T>(e, params, Mode::Eval, nullptr);
    return fusion_impl<T>(pyr, params, Mode::Eval, nullptr);
}

template <typename T>
GradStore<T> model_backward(const ForwardCache<T>& cache, const ModelParams<T>& params,
                            const Tensor4<T>& grad_out) {
    const bool residual = params.config.residual_enabled;
    GradStore<T> out{params.zeros_like(), {}};
    ModelParams<T>& g = out.params;

    ConvGrads<T> hg = conv2d_backward(cache.head_input, params.head, grad_out);
    accumulate(g.head, hg);

    // Gradients w.r.t. the pyramid entries, deepest first.
    std::array<Tensor4<T>, kBlocks> g_pyr;
    if (params.config.fusion_enabled) {
        auto parts = split_channels(hg.input, std::span<const std::size_t>(cache.concat_channels));
        for (std::size_t j = 0; j + 1 < kBlocks; ++j) {
            const auto& fc = cache.fusion[j];
            g_pyr[j] = convbn_backward(fc, params.fusion[j], relu_backward(fc.activation_input, parts[j]),
                                       g.fusion[j]);
        }
        g_pyr[kBlocks - 1] = std::move(parts[kBlocks - 1]);
    } else {
        g_pyr[kBlocks - 1] = std::move(hg.input);
    }

    // Decoder, shallowest first. `g_s` is the gradient of the sum D_k + E_k.
    std::array<Tensor4<T>, kBlocks> g_enc;
    Tensor4<T> g_s = g_pyr[kBlocks - 1];
    for (std::size_t k = 0; k < kBlocks; ++k) {
        accumulate(g_enc[k], g_s);
        Tensor4<T> g_in = cbrr_backward(cache.decoder[k], params.decoder[k], residual, g_s, g.decoder[k]);
        if (k <= 2) {
            const auto& uc = cache.upsample[k];
            g_in = convbn_backward(uc, params.upsample[k], relu_backward(uc.activation_input, g_in), g.upsample[k]);
        }
        if (k + 1 < kBlocks) {
            accumulate(g_in, g_pyr[kBlocks - 2 - k]);
            g_s = std::move(g_in);
        } else {
            accumulate(g_enc[kBlocks - 1], g_in);  // D6 consumed E6 directly
        }
    }

    // Encoder, deepest first.
    for (std::size_t i = kBlocks; i-- > 0;) {
        Tensor4<T> g_in = cbrr_backward(cache.encoder[i], params.encoder[i], residual, g_enc[i], g.encoder[i]);
        if (i == 0) {
            out.input = std::move(g_in);
        } else if (i <= 3) {
            accumulate(g_enc[i - 1], maxpool_backward(cache.pools[i - 1], g_in));
        } else {
            accumulate(g_enc[i - 1], g_in);
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Structure

std::size_t receptive_field(std::size_t depth, ReceptiveFieldMode mode) {
    if (depth == 0) throw ArgumentError("receptive_field: depth must be >= 1");
    if (mode == ReceptiveFieldMode::Basic) return 2 * depth + 1;
    if (depth >= 62) throw ArgumentError("receptive_field: depth too large");
    return (std::size_t{1} << (depth + 1)) - 1;
}

std::vector<LayerInfo> describe_layers(const NetworkConfig& cfg, std::size_t h, std::size_t w) {
    cfg.validate();
    if (h % 8 != 0 || w % 8 != 0) throw ShapeError("describe_layers: h and w must be divisible by 8");
    std::vector<LayerInfo> layers;
    // Receptive-field bookkeeping: `rf` is the input-space side length seen
    // by one unit, `jump` the input-space distance between adjacent units.
    struct State {
        Shape4 shape;
        std::size_t rf = 1;
        double jump = 1.0;
    };
    auto conv = [&](const std::string& name, State s, std::size_t out_c, std::size_t k, int d) {
        State o = s;
        o.shape.c = out_c;
        o.rf = s.rf + static_cast<std::size_t>((k - 1) * d * s.jump);
        layers.push_back({name, "conv", s.shape, o.shape, d, 1, k, out_c * s.shape.c * k * k + out_c, o.rf});
        return o;
    };
    auto deconv = [&](const std::string& name, State s, std::size_t out_c, std::size_t k, std::size_t stride) {
        State o = s;
        o.shape.c = out_c;
        o.shape.h *= stride;
        o.shape.w *= stride;
        o.rf = s.rf + static_cast<std::size_t>(((k + stride - 1) / stride - 1) * s.jump);
        o.jump = s.jump / static_cast<double>(stride);
        layers.push_back({name, "deconv", s.shape, o.shape, 1, static_cast<int>(stride), k,
                          s.shape.c * out_c * k * k + out_c, o.rf});
        return o;
    };
    auto pointwise = [&](const std::string& name, const std::string& kind, State s, std::size_t params) {
        layers.push_back({name, kind, s.shape, s.shape, 1, 1, 0, params, s.rf});
        return s;
    };
    auto bn_relu = [&](const std::string& prefix, const std::string& suffix, State s, bool relu) {
        s = pointwise(prefix + ".bn" + suffix, "bn", s, 4 * s.shape.c);
        if (relu) s = pointwise(prefix + ".relu" + suffix, "relu", s, 0);
        return s;
    };
    auto block = [&](const std::string& name, State in, std::size_t out_c, int d) {
        State s = in;
        for (int st = 1; st <= 3; ++st) {
            s = conv(name + ".conv" + std::to_string(st), s, out_c, kKernel, d);
            s = bn_relu(name, std::to_string(st), s, st < 3);
        }
        if (cfg.residual_enabled) {
            if (in.shape.c != out_c) {
                State p = conv(name + ".proj", in, out_c, 1, 1);
                bn_relu(name, "_proj", p, false);
            }
            s = pointwise(name + ".residual_sum", "sum", s, 0);
        }
        return pointwise(name + ".relu3", "relu", s, 0);
    };
    auto pool = [&](const std::string& name, State s) {
        State o = s;
        o.shape.h /= 2;
        o.shape.w /= 2;
        o.rf = s.rf + static_cast<std::size_t>(s.jump);
        o.jump = s.jump * 2.0;
        layers.push_back({name, "pool", s.shape, o.shape, 1, 2, 2, 0, o.rf});
        return o;
    };

    const auto& f = cfg.filters;
    State s{{1, cfg.in_channels, h, w}};
    std::array<State, kBlocks> enc;
    for (std::size_t i = 0; i < kBlocks; ++i) {
        s = block("enc" + std::to_string(i + 1), s, f[i], cfg.encoder_dilations[i]);
        enc[i] = s;
        if (i < 3) s = pool("pool" + std::to_string(i + 1), s);
    }
    std::array<State, kBlocks> pyr;
    for (std::size_t k = kBlocks; k-- > 0;) {
        if (k <= 2) {
            const std::string up = "up" + std::to_string(k + 1);
            s = deconv(up + ".deconv", s, f[k], kKernel, 2);
            s = bn_relu(up, "", s, true);
        }
        s = block("dec" + std::to_string(k + 1), s, f[k], cfg.decoder_dilation(k));
        s.rf = std::max(s.rf, enc[k].rf);
        s = pointwise("dec" + std::to_string(k + 1) + ".skip_sum", "sum", s, 0);
        pyr[kBlocks - 1 - k] = s;
    }
    if (cfg.fusion_enabled) {
        State cat = pyr[kBlocks - 1];
        std::size_t channels = cat.shape.c;
        for (std::size_t j = 0; j + 1 < kBlocks; ++j) {
            const std::string name = "fuse" + std::to_string(kBlocks - j);
            State u = deconv(name + ".deconv", pyr[j], pyr[j].shape.c, 2 * kFusionStrides[j], kFusionStrides[j]);
            u = bn_relu(name, "", u, true);
            channels += u.shape.c;
            cat.rf = std::max(cat.rf, u.rf);
        }
        State o = cat;
        o.shape.c = channels;
        layers.push_back({"concat", "concat", cat.shape, o.shape, 1, 1, 0, 0, o.rf});
        s = o;
    }
    conv("head", s, cfg.out_channels, kKernel, 1);
    return layers;
}

// ---------------------------------------------------------------------------
// Explicit instantiations

#define MSCFF_INSTANTIATE(T)                                                                                  \
    template struct ModelParams<T>;                                                                           \
    template ModelParams<T> build_model<T>(const NetworkConfig&, std::uint64_t);                              \
    template Tensor4<T> cbrr_forward<T>(const Tensor4<T>&, CbrrParams<T>&, bool, Mode, CbrrCache<T>*);        \
    template Tensor4<T> cbrr_backward<T>(const CbrrCache<T>&, const CbrrParams<T>&, bool, const Tensor4<T>&,  \
                                         CbrrParams<T>&);                                                     \
    template std::array<Tensor4<T>, kBlocks> encoder_forward<T>(const Tensor4<T>&, ModelParams<T>&, Mode);    \
    template FeaturePyramid<T> decoder_forward<T>(const std::array<Tensor4<T>, kBlocks>&, ModelParams<T>&,    \
                                                  Mode);                                                      \
    template Tensor4<T> fusion_forward<T>(const FeaturePyramid<T>&, ModelParams<T>&, Mode);                   \
    template Tensor4<T> model_forward<T>(const Tensor4<T>&, ModelParams<T>&, Mode, ForwardCache<T>*);         \
    template Tensor4<T> model_predict<T>(const Tensor4<T>&, const ModelParams<T>&);                           \
    template GradStore<T> model_backward<T>(const ForwardCache<T>&, const ModelParams<T>&, const Tensor4<T>&);

MSCFF_INSTANTIATE(float)
MSCFF_INSTANTIATE(double)

template ModelParams<double> ModelParams<float>::cast<double>() const;
template ModelParams<float> ModelParams<double>::cast<float>() const;
template ModelParams<float> ModelParams<float>::cast<float>() const;
template ModelParams<double> ModelParams<double>::cast<double>() const;

}  // namespace mscff
