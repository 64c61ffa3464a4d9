#include "mscff/layers.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <string>

#include "mscff/errors.hpp"
#include "mscff/parallel.hpp"

namespace mscff {

namespace {

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatrixMap = Eigen::Map<RowMatrix<T>>;
template <typename T>
using ConstMatrixMap = Eigen::Map<const RowMatrix<T>>;

// Patch-matrix geometry: an image of `channels` x height x width sampled by a
// kernel x kernel window at `rows` x `cols` positions.
struct PatchGeometry {
    std::size_t channels, height, width;
    std::size_t kernel, stride, pad, dilation;
    std::size_t rows, cols;

    std::size_t patch_size() const { return channels * kernel * kernel; }
    std::size_t positions() const { return rows * cols; }
};

// Per-thread patch buffer; im2col and the GEMMs overwrite it fully, so it is
// never cleared.
template <typename T>
T* scratch(std::size_t size) {
    thread_local std::vector<T> buf;
    if (buf.size() < size) buf.resize(size);
    return buf.data();
}

// Output columns [lo, hi) whose input column ox * stride + offset lies in [0, W).
inline std::pair<std::size_t, std::size_t> valid_span(std::ptrdiff_t offset, std::size_t stride, std::size_t cols,
                                                      std::ptrdiff_t W) {
    const auto s = static_cast<std::ptrdiff_t>(stride);
    const std::ptrdiff_t lo = offset >= 0 ? 0 : (-offset + s - 1) / s;
    const std::ptrdiff_t hi = W - offset <= 0 ? 0 : (W - offset + s - 1) / s;
    const auto c = static_cast<std::ptrdiff_t>(cols);
    const std::ptrdiff_t a = std::min(lo, c), b = std::clamp(hi, a, c);
    return {static_cast<std::size_t>(a), static_cast<std::size_t>(b)};
}

template <typename T>
void im2col(const T* image, const PatchGeometry& g, T* col) {
    const auto H = static_cast<std::ptrdiff_t>(g.height);
    const auto W = static_cast<std::ptrdiff_t>(g.width);
    const auto pad = static_cast<std::ptrdiff_t>(g.pad);
    for (std::size_t c = 0; c < g.channels; ++c) {
        const T* plane = image + c * g.height * g.width;
        for (std::size_t ky = 0; ky < g.kernel; ++ky) {
            for (std::size_t kx = 0; kx < g.kernel; ++kx) {
                T* out = col + ((c * g.kernel + ky) * g.kernel + kx) * g.positions();
                const std::ptrdiff_t off = static_cast<std::ptrdiff_t>(kx * g.dilation) - pad;
                const auto [lo, hi] = valid_span(off, g.stride, g.cols, W);
                for (std::size_t oy = 0; oy < g.rows; ++oy) {
                    const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky * g.dilation) - pad;
                    T* row = out + oy * g.cols;
                    if (iy < 0 || iy >= H) {
                        std::fill(row, row + g.cols, T(0));
                        continue;
                    }
                    std::fill(row, row + lo, T(0));
                    std::fill(row + hi, row + g.cols, T(0));
                    const T* src = plane + iy * W;
                    if (g.stride == 1) {
                        std::copy_n(src + (off + static_cast<std::ptrdiff_t>(lo)), hi - lo, row + lo);
                    } else {
                        const auto s = static_cast<std::ptrdiff_t>(g.stride);
                        for (std::size_t ox = lo; ox < hi; ++ox) row[ox] = src[off + static_cast<std::ptrdiff_t>(ox) * s];
                    }
                }
            }
        }
    }
}

// Adjoint of im2col: scatters-and-adds patch columns back into `image`,
// which must be zeroed by the caller.
template <typename T>
void col2im(const T* col, const PatchGeometry& g, T* image) {
    const auto H = static_cast<std::ptrdiff_t>(g.height);
    const auto W = static_cast<std::ptrdiff_t>(g.width);
    const auto pad = static_cast<std::ptrdiff_t>(g.pad);
    for (std::size_t c = 0; c < g.channels; ++c) {
        T* plane = image + c * g.height * g.width;
        for (std::size_t ky = 0; ky < g.kernel; ++ky) {
            for (std::size_t kx = 0; kx < g.kernel; ++kx) {
                const T* in = col + ((c * g.kernel + ky) * g.kernel + kx) * g.positions();
                const std::ptrdiff_t off = static_cast<std::ptrdiff_t>(kx * g.dilation) - pad;
                const auto [lo, hi] = valid_span(off, g.stride, g.cols, W);
                for (std::size_t oy = 0; oy < g.rows; ++oy) {
                    const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky * g.dilation) - pad;
                    if (iy < 0 || iy >= H) continue;
                    const T* row = in + oy * g.cols;
                    T* dst = plane + iy * W;
                    if (g.stride == 1) {
                        T* __restrict d = dst + (off + static_cast<std::ptrdiff_t>(lo));
                        const T* __restrict r = row + lo;
                        for (std::size_t i = 0; i < hi - lo; ++i) d[i] += r[i];
                    } else {
                        for (std::size_t ox = lo; ox < hi; ++ox)
                            dst[off + static_cast<std::ptrdiff_t>(ox * g.stride)] += row[ox];
                    }
                }
            }
        }
    }
}

template <typename T>
void check_square_kernel(const Tensor4<T>& weights, const char* op) {
    if (weights.h() != weights.w())
        throw ShapeError(std::string(op) + ": kernel must be square, got " + to_string(weights.shape()));
}

// out[n] = W * im2col(x[n]) (+ bias). Weights [out, in, k, k].
template <typename T>
Tensor4<T> conv_general(const Tensor4<T>& x, const Tensor4<T>& weights, const std::vector<T>* bias,
                        std::size_t stride, std::size_t pad, std::size_t dilation, std::size_t out_h,
                        std::size_t out_w) {
    const std::size_t out_c = weights.n();
    const PatchGeometry g{x.c(), x.h(), x.w(), weights.h(), stride, pad, dilation, out_h, out_w};
    Tensor4<T> out(x.n(), out_c, out_h, out_w);
    ConstMatrixMap<T> w(weights.data(), out_c, g.patch_size());
    parallel_for(x.n(), [&](std::size_t n) {
        T* const col = scratch<T>(g.patch_size() * g.positions());
        im2col(x.sample(n).data(), g, col);
        MatrixMap<T> y(out.sample(n).data(), out_c, g.positions());
        y.noalias() = w * ConstMatrixMap<T>(col, g.patch_size(), g.positions());
        if (bias) {
            for (std::size_t k = 0; k < out_c; ++k) {
                const T b = (*bias)[k];
                for (auto& v : out.plane(n, k)) v += b;
            }
        }
    });
    return out;
}

template <typename T>
ConvGrads<T> conv_general_backward(const Tensor4<T>& x, const Tensor4<T>& weights, std::size_t stride,
                                   std::size_t pad, std::size_t dilation, const Tensor4<T>& grad_out) {
    const std::size_t out_c = weights.n();
    const PatchGeometry g{x.c(), x.h(), x.w(), weights.h(), stride, pad, dilation, grad_out.h(), grad_out.w()};
    ConvGrads<T> grads{Tensor4<T>(weights.shape()), std::vector<T>(out_c, T(0)), Tensor4<T>(x.shape())};
    ConstMatrixMap<T> w(weights.data(), out_c, g.patch_size());
    std::vector<RowMatrix<T>> per_sample(x.n());
    parallel_for(x.n(), [&](std::size_t n) {
        T* const col = scratch<T>(g.patch_size() * g.positions());
        im2col(x.sample(n).data(), g, col);
        ConstMatrixMap<T> gy(grad_out.sample(n).data(), out_c, g.positions());
        per_sample[n].noalias() = gy * ConstMatrixMap<T>(col, g.patch_size(), g.positions()).transpose();
        MatrixMap<T>(col, g.patch_size(), g.positions()).noalias() = w.transpose() * gy;
        col2im(col, g, grads.input.sample(n).data());
    });
    // Fixed summation order keeps the result independent of the thread count.
    MatrixMap<T> dw(grads.weights.data(), out_c, g.patch_size());
    for (const auto& m : per_sample) dw += m;
    for (std::size_t k = 0; k < out_c; ++k) {
        double s = 0.0;
        for (std::size_t n = 0; n < x.n(); ++n)
            for (T v : grad_out.plane(n, k)) s += v;
        grads.bias[k] = static_cast<T>(s);
    }
    return grads;
}

template <typename T>
void check_conv(const Tensor4<T>& x, const ConvParams<T>& p, const char* op) {
    check_square_kernel(p.weights, op);
    if (x.c() != p.in_channels())
        throw ShapeError(std::string(op) + ": input has " + std::to_string(x.c()) + " channels, weights expect " +
                         std::to_string(p.in_channels()));
    if (!p.bias.empty() && p.bias.size() != p.out_channels())
        throw ShapeError(std::string(op) + ": bias length does not match filter count");
}

}  // namespace

DeconvGeometry deconv_geometry(std::size_t kernel, std::size_t stride) {
    if (stride == 0 || kernel < stride) throw ArgumentError("deconv_geometry: kernel must be >= stride >= 1");
    // (h-1)s + k - 2p + op = s*h  <=>  2p - op = k - s
    const std::size_t diff = kernel - stride;
    return diff % 2 == 0 ? DeconvGeometry{diff / 2, 0} : DeconvGeometry{(diff + 1) / 2, 1};
}

template <typename T>
ConvParams<T> ConvParams<T>::conv(std::size_t in, std::size_t out, std::size_t kernel, int dilation) {
    ConvParams p;
    p.weights = Tensor4<T>(out, in, kernel, kernel);
    p.bias.assign(out, T(0));
    p.dilation = dilation;
    return p;
}

template <typename T>
ConvParams<T> ConvParams<T>::deconv(std::size_t in, std::size_t out, std::size_t kernel, int stride) {
    ConvParams p;
    p.weights = Tensor4<T>(in, out, kernel, kernel);
    p.bias.assign(out, T(0));
    p.transposed = true;
    p.stride = stride;
    return p;
}

template <typename T>
BNParams<T> BNParams<T>::identity(std::size_t channels) {
    BNParams p;
    p.gamma.assign(channels, T(1));
    p.beta.assign(channels, T(0));
    p.running_mean.assign(channels, T(0));
    p.running_var.assign(channels, T(1));
    return p;
}

template <typename T>
Tensor4<T> conv2d_forward(const Tensor4<T>& x, const ConvParams<T>& p) {
    check_conv(x, p, "conv2d_forward");
    if (p.transposed || p.stride != 1) throw ArgumentError("conv2d_forward: expects a stride-1 convolution");
    if (p.dilation < 1) throw ArgumentError("conv2d_forward: dilation must be >= 1");
    const std::size_t d = static_cast<std::size_t>(p.dilation);
    const std::size_t pad = d * (p.kernel() - 1) / 2;
    return conv_general(x, p.weights, p.bias.empty() ? nullptr : &p.bias, 1, pad, d, x.h(), x.w());
}

template <typename T>
ConvGrads<T> conv2d_backward(const Tensor4<T>& x, const ConvParams<T>& p, const Tensor4<T>& grad_out) {
    check_conv(x, p, "conv2d_backward");
    if (grad_out.shape() != Shape4{x.n(), p.out_channels(), x.h(), x.w()})
        throw ShapeError("conv2d_backward: grad_out shape " + to_string(grad_out.shape()) +
                         " does not match forward output");
    const std::size_t d = static_cast<std::size_t>(p.dilation);
    return conv_general_backward(x, p.weights, 1, d * (p.kernel() - 1) / 2, d, grad_out);
}

template <typename T>
Tensor4<T> conv2d_strided_forward(const Tensor4<T>& x, const Tensor4<T>& weights, std::size_t stride) {
    check_square_kernel(weights, "conv2d_strided_forward");
    if (x.c() != weights.c()) throw ShapeError("conv2d_strided_forward: channel mismatch");
    if (x.h() % stride != 0 || x.w() % stride != 0)
        throw ShapeError("conv2d_strided_forward: input not divisible by stride");
    const auto geo = deconv_geometry(weights.h(), stride);
    return conv_general<T>(x, weights, nullptr, stride, geo.padding, 1, x.h() / stride, x.w() / stride);
}

template <typename T>
Tensor4<T> deconv2d_forward(const Tensor4<T>& x, const ConvParams<T>& p) {
    check_conv(x, p, "deconv2d_forward");
    if (!p.transposed) throw ArgumentError("deconv2d_forward: parameters are not transposed");
    const std::size_t s = static_cast<std::size_t>(p.stride);
    const std::size_t out_c = p.out_channels();
    const auto geo = deconv_geometry(p.kernel(), s);
    const PatchGeometry g{out_c, x.h() * s, x.w() * s, p.kernel(), s, geo.padding, 1, x.h(), x.w()};
    Tensor4<T> out(x.n(), out_c, g.height, g.width);
    ConstMatrixMap<T> w(p.weights.data(), x.c(), g.patch_size());
    parallel_for(x.n(), [&](std::size_t n) {
        T* const col = scratch<T>(g.patch_size() * g.positions());
        MatrixMap<T>(col, g.patch_size(), g.positions()).noalias() =
            w.transpose() * ConstMatrixMap<T>(x.sample(n).data(), x.c(), g.positions());
        col2im(col, g, out.sample(n).data());
        if (!p.bias.empty()) {
            for (std::size_t k = 0; k < out_c; ++k) {
                const T b = p.bias[k];
                for (auto& v : out.plane(n, k)) v += b;
            }
        }
    });
    return out;
}

template <typename T>
ConvGrads<T> deconv2d_backward(const Tensor4<T>& x, const ConvParams<T>& p, const Tensor4<T>& grad_out) {
    check_conv(x, p, "deconv2d_backward");
    if (!p.transposed) throw ArgumentError("deconv2d_backward: parameters are not transposed");
    const std::size_t s = static_cast<std::size_t>(p.stride);
    const std::size_t out_c = p.out_channels();
    if (grad_out.shape() != Shape4{x.n(), out_c, x.h() * s, x.w() * s})
        throw ShapeError("deconv2d_backward: grad_out shape " + to_string(grad_out.shape()) +
                         " does not match forward output");
    const auto geo = deconv_geometry(p.kernel(), s);
    const PatchGeometry g{out_c, x.h() * s, x.w() * s, p.kernel(), s, geo.padding, 1, x.h(), x.w()};
    ConvGrads<T> grads{Tensor4<T>(p.weights.shape()), std::vector<T>(out_c, T(0)), Tensor4<T>(x.shape())};
    ConstMatrixMap<T> w(p.weights.data(), x.c(), g.patch_size());
    std::vector<RowMatrix<T>> per_sample(x.n());
    parallel_for(x.n(), [&](std::size_t n) {
        T* const col = scratch<T>(g.patch_size() * g.positions());
        im2col(grad_out.sample(n).data(), g, col);
        ConstMatrixMap<T> gcol(col, g.patch_size(), g.positions());
        ConstMatrixMap<T> xin(x.sample(n).data(), x.c(), g.positions());
        MatrixMap<T>(grads.input.sample(n).data(), x.c(), g.positions()).noalias() = w * gcol;
        per_sample[n].noalias() = xin * gcol.transpose();
    });
    MatrixMap<T> dw(grads.weights.data(), x.c(), g.patch_size());
    for (const auto& m : per_sample) dw += m;
    for (std::size_t k = 0; k < out_c; ++k) {
        double sum = 0.0;
        for (std::size_t n = 0; n < x.n(); ++n)
            for (T v : grad_out.plane(n, k)) sum += v;
        grads.bias[k] = static_cast<T>(sum);
    }
    return grads;
}

template <typename T>
Tensor4<T> relu_forward(const Tensor4<T>& x) {
    Tensor4<T> out = x;
    for (std::size_t i = 0; i < out.size(); ++i)
        if (!(out[i] > T(0))) out[i] = T(0);
    return out;
}

template <typename T>
Tensor4<T> relu_backward(const Tensor4<T>& x, const Tensor4<T>& grad_out) {
    if (x.shape() != grad_out.shape()) throw ShapeError("relu_backward: shape mismatch");
    Tensor4<T> out(x.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] > T(0) ? grad_out[i] : T(0);
    return out;
}

template <typename T>
std::pair<Tensor4<T>, PoolIndices> maxpool_forward(const Tensor4<T>& x) {
    if (x.h() % 2 != 0 || x.w() % 2 != 0)
        throw ShapeError("maxpool_forward: spatial dims must be even, got " + to_string(x.shape()));
    const std::size_t oh = x.h() / 2, ow = x.w() / 2;
    Tensor4<T> out(x.n(), x.c(), oh, ow);
    PoolIndices idx{x.shape(), std::vector<std::size_t>(out.size())};
    parallel_for(x.n() * x.c(), [&](std::size_t nc) {
        const std::size_t n = nc / x.c(), c = nc % x.c();
        for (std::size_t oy = 0; oy < oh; ++oy) {
            for (std::size_t ox = 0; ox < ow; ++ox) {
                std::size_t best = x.index(n, c, 2 * oy, 2 * ox);
                for (std::size_t dy = 0; dy < 2; ++dy) {
                    for (std::size_t dx = 0; dx < 2; ++dx) {
                        const std::size_t i = x.index(n, c, 2 * oy + dy, 2 * ox + dx);
                        if (x[i] > x[best]) best = i;  // strict: first occurrence wins ties
                    }
                }
                const std::size_t o = out.index(n, c, oy, ox);
                out[o] = x[best];
                idx.argmax[o] = best;
            }
        }
    });
    return {std::move(out), std::move(idx)};
}

template <typename T>
Tensor4<T> maxpool_backward(const PoolIndices& indices, const Tensor4<T>& grad_out) {
    if (grad_out.size() != indices.argmax.size())
        throw ShapeError("maxpool_backward: grad_out does not match stored indices");
    Tensor4<T> dx(indices.input_shape);
    for (std::size_t o = 0; o < grad_out.size(); ++o) dx[indices.argmax[o]] += grad_out[o];
    return dx;
}

namespace {

template <typename T>
void check_bn(const Tensor4<T>& x, const BNParams<T>& p, const char* op) {
    if (x.c() != p.channels() || p.beta.size() != p.channels() || p.running_mean.size() != p.channels() ||
        p.running_var.size() != p.channels())
        throw ShapeError(std::string(op) + ": input has " + std::to_string(x.c()) +
                         " channels, parameters have " + std::to_string(p.channels()));
}

template <typename T>
Tensor4<T> batchnorm_eval(const Tensor4<T>& x, const BNParams<T>& p) {
    Tensor4<T> out(x.shape());
    parallel_for(x.c(), [&](std::size_t c) {
        const double inv_std = 1.0 / std::sqrt(static_cast<double>(p.running_var[c]) + p.epsilon);
        const T scale = static_cast<T>(p.gamma[c] * inv_std);
        const T shift = static_cast<T>(p.beta[c] - p.gamma[c] * p.running_mean[c] * inv_std);
        for (std::size_t n = 0; n < x.n(); ++n) {
            auto src = x.plane(n, c);
            auto dst = out.plane(n, c);
            for (std::size_t i = 0; i < src.size(); ++i) dst[i] = src[i] * scale + shift;
        }
    });
    return out;
}

}  // namespace

template <typename T>
Tensor4<T> batchnorm_forward(const Tensor4<T>& x, BNParams<T>& p, Mode mode, BNCache<T>* cache) {
    check_bn(x, p, "batchnorm_forward");
    if (mode == Mode::Eval) {
        if (cache) *cache = BNCache<T>{Mode::Eval, {}, {}};
        return batchnorm_eval(x, p);
    }
    const std::size_t channels = x.c();
    const double count = static_cast<double>(x.n() * x.shape().plane());
    Tensor4<T> out(x.shape());
    Tensor4<T> normalized(x.shape());
    std::vector<double> inv_std(channels);
    parallel_for(channels, [&](std::size_t c) {
        double sum = 0.0;
        for (std::size_t n = 0; n < x.n(); ++n)
            for (T v : x.plane(n, c)) sum += v;
        const double mean = sum / count;
        double sq = 0.0;
        for (std::size_t n = 0; n < x.n(); ++n)
            for (T v : x.plane(n, c)) sq += (v - mean) * (v - mean);
        const double var = sq / count;
        const double istd = 1.0 / std::sqrt(var + p.epsilon);
        inv_std[c] = istd;
        for (std::size_t n = 0; n < x.n(); ++n) {
            auto src = x.plane(n, c);
            auto xh = normalized.plane(n, c);
            auto dst = out.plane(n, c);
            for (std::size_t i = 0; i < src.size(); ++i) {
                xh[i] = static_cast<T>((src[i] - mean) * istd);
                dst[i] = p.gamma[c] * xh[i] + p.beta[c];
            }
        }
        const double unbiased = count > 1.0 ? var * count / (count - 1.0) : var;
        p.running_mean[c] = static_cast<T>(p.momentum * p.running_mean[c] + (1.0 - p.momentum) * mean);
        p.running_var[c] = static_cast<T>(p.momentum * p.running_var[c] + (1.0 - p.momentum) * unbiased);
    });
    if (cache) *cache = BNCache<T>{Mode::Train, std::move(normalized), std::move(inv_std)};
    return out;
}

template <typename T>
Tensor4<T> batchnorm_forward(const Tensor4<T>& x, const BNParams<T>& p) {
    check_bn(x, p, "batchnorm_forward");
    return batchnorm_eval(x, p);
}

template <typename T>
BNGrads<T> batchnorm_backward(const BNCache<T>& cache, const BNParams<T>& p, const Tensor4<T>& grad_out) {
    if (cache.mode != Mode::Train) throw UsageError("batchnorm_backward: cache comes from an eval-mode forward");
    const Tensor4<T>& xhat = cache.normalized;
    if (grad_out.shape() != xhat.shape()) throw ShapeError("batchnorm_backward: grad_out shape mismatch");
    if (p.channels() != xhat.c()) throw ShapeError("batchnorm_backward: parameter channel mismatch");
    const std::size_t channels = xhat.c();
    const double count = static_cast<double>(xhat.n() * xhat.shape().plane());
    BNGrads<T> g{std::vector<T>(channels), std::vector<T>(channels), Tensor4<T>(xhat.shape())};
    parallel_for(channels, [&](std::size_t c) {
        double sum_dy = 0.0, sum_dy_xhat = 0.0;
        for (std::size_t n = 0; n < xhat.n(); ++n) {
            auto dy = grad_out.plane(n, c);
            auto xh = xhat.plane(n, c);
            for (std::size_t i = 0; i < dy.size(); ++i) {
                sum_dy += dy[i];
                sum_dy_xhat += static_cast<double>(dy[i]) * xh[i];
            }
        }
        g.gamma[c] = static_cast<T>(sum_dy_xhat);
        g.beta[c] = static_cast<T>(sum_dy);
        const double k = p.gamma[c] * cache.inv_std[c] / count;
        for (std::size_t n = 0; n < xhat.n(); ++n) {
            auto dy = grad_out.plane(n, c);
            auto xh = xhat.plane(n, c);
            auto dx = g.input.plane(n, c);
            for (std::size_t i = 0; i < dy.size(); ++i)
                dx[i] = static_cast<T>(k * (count * dy[i] - sum_dy - xh[i] * sum_dy_xhat));
        }
    });
    return g;
}

template <typename T>
LossResult<T> mse_loss(const Tensor4<T>& pred, const Tensor4<T>& target, LossReduction reduction) {
    if (pred.shape() != target.shape())
        throw ShapeError("mse_loss: prediction " + to_string(pred.shape()) + " vs target " +
                         to_string(target.shape()));
    const double denom = reduction == LossReduction::PerElement
                             ? static_cast<double>(pred.size())
                             : static_cast<double>(pred.n());
    LossResult<T> r{0.0, Tensor4<T>(pred.shape())};
    double sum = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const double diff = static_cast<double>(pred[i]) - target[i];
        sum += diff * diff;
        r.grad[i] = static_cast<T>(2.0 * diff / denom);
    }
    r.loss = sum / denom;
    return r;
}

#define MSCFF_INSTANTIATE(T)                                                                              \
    template struct ConvParams<T>;                                                                        \
    template struct BNParams<T>;                                                                          \
    template Tensor4<T> conv2d_forward<T>(const Tensor4<T>&, const ConvParams<T>&);                       \
    template ConvGrads<T> conv2d_backward<T>(const Tensor4<T>&, const ConvParams<T>&, const Tensor4<T>&); \
    template Tensor4<T> conv2d_strided_forward<T>(const Tensor4<T>&, const Tensor4<T>&, std::size_t);     \
    template Tensor4<T> deconv2d_forward<T>(const Tensor4<T>&, const ConvParams<T>&);                     \
    template ConvGrads<T> deconv2d_backward<T>(const Tensor4<T>&, const ConvParams<T>&,                   \
                                               const Tensor4<T>&);                                        \
    template Tensor4<T> relu_forward<T>(const Tensor4<T>&);                                               \
    template Tensor4<T> relu_backward<T>(const Tensor4<T>&, const Tensor4<T>&);                           \
    template std::pair<Tensor4<T>, PoolIndices> maxpool_forward<T>(const Tensor4<T>&);                    \
    template Tensor4<T> maxpool_backward<T>(const PoolIndices&, const Tensor4<T>&);                       \
    template Tensor4<T> batchnorm_forward<T>(const Tensor4<T>&, BNParams<T>&, Mode, BNCache<T>*);         \
    template Tensor4<T> batchnorm_forward<T>(const Tensor4<T>&, const BNParams<T>&);                      \
    template BNGrads<T> batchnorm_backward<T>(const BNCache<T>&, const BNParams<T>&, const Tensor4<T>&);  \
    template LossResult<T> mse_loss<T>(const Tensor4<T>&, const Tensor4<T>&, LossReduction);

MSCFF_INSTANTIATE(float)
MSCFF_INSTANTIATE(double)

}  // namespace mscff
