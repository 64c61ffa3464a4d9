#pragma once

#include <cstddef>
#include <utility>
#include <vector>

#include "mscff/tensor.hpp"

namespace mscff {

enum class Mode { Train, Eval };

/// Convolution or transposed-convolution parameters.
///
/// Weight layout is [out, in, r, r] for a plain convolution and [in, out, r, r]
/// for a transposed one, so a stride-s convolution and the transposed
/// convolution built from the same tensor are exact adjoints.
template <typename T>
struct ConvParams {
    Tensor4<T> weights;
    std::vector<T> bias;
    int dilation = 1;
    bool transposed = false;
    int stride = 1;

    std::size_t kernel() const { return weights.h(); }
    std::size_t in_channels() const { return transposed ? weights.n() : weights.c(); }
    std::size_t out_channels() const { return transposed ? weights.c() : weights.n(); }

    /// Zero-initialised same-padding convolution.
    static ConvParams conv(std::size_t in, std::size_t out, std::size_t kernel, int dilation = 1);
    /// Zero-initialised transposed convolution that scales h, w by `stride`.
    static ConvParams deconv(std::size_t in, std::size_t out, std::size_t kernel, int stride);
};

template <typename T>
struct BNParams {
    std::vector<T> gamma;
    std::vector<T> beta;
    std::vector<T> running_mean;
    std::vector<T> running_var;
    /// Weight on the previous running value: r <- m*r + (1-m)*batch.
    double momentum = 0.9;
    double epsilon = 1e-5;

    std::size_t channels() const { return gamma.size(); }

    /// gamma 1, beta 0, running mean 0, running variance 1.
    static BNParams identity(std::size_t channels);
};

template <typename T>
struct ConvGrads {
    Tensor4<T> weights;
    std::vector<T> bias;
    Tensor4<T> input;
};

template <typename T>
struct BNGrads {
    std::vector<T> gamma;
    std::vector<T> beta;
    Tensor4<T> input;
};

/// Everything batchnorm_backward needs from a forward pass.
template <typename T>
struct BNCache {
    Mode mode = Mode::Eval;
    Tensor4<T> normalized;       // x-hat
    std::vector<double> inv_std;  // per channel
};

struct PoolIndices {
    Shape4 input_shape;
    std::vector<std::size_t> argmax;  // flat input index per output element
};

enum class LossReduction {
    PerElement,  // divide by batch * elements-per-sample
    PerSample,   // divide by batch only
};

template <typename T>
struct LossResult {
    double loss = 0.0;
    Tensor4<T> grad;
};

/// Padding and output padding for a transposed convolution with the given
/// kernel and stride whose output is exactly stride times its input.
struct DeconvGeometry {
    std::size_t padding;
    std::size_t output_padding;
};
DeconvGeometry deconv_geometry(std::size_t kernel, std::size_t stride);

/// Stride-1, same-padded (dilation * (r - 1) / 2) convolution.
template <typename T>
Tensor4<T> conv2d_forward(const Tensor4<T>& x, const ConvParams<T>& p);

template <typename T>
ConvGrads<T> conv2d_backward(const Tensor4<T>& x, const ConvParams<T>& p, const Tensor4<T>& grad_out);

/// Plain strided convolution without bias, padded so that an input of
/// stride*h rows produces h rows. Its adjoint is deconv2d_forward with the same
/// weights; the network itself never downsamples by convolution.
template <typename T>
Tensor4<T> conv2d_strided_forward(const Tensor4<T>& x, const Tensor4<T>& weights, std::size_t stride);

template <typename T>
Tensor4<T> deconv2d_forward(const Tensor4<T>& x, const ConvParams<T>& p);

template <typename T>
ConvGrads<T> deconv2d_backward(const Tensor4<T>& x, const ConvParams<T>& p, const Tensor4<T>& grad_out);

template <typename T>
Tensor4<T> relu_forward(const Tensor4<T>& x);

/// Gradient passes where x > 0; the subgradient at 0 is 0.
template <typename T>
Tensor4<T> relu_backward(const Tensor4<T>& x, const Tensor4<T>& grad_out);

/// 2x2, stride-2 max pooling. Ties go to the first element in row-major
/// window order. Throws ShapeError on odd h or w.
template <typename T>
std::pair<Tensor4<T>, PoolIndices> maxpool_forward(const Tensor4<T>& x);

template <typename T>
Tensor4<T> maxpool_backward(const PoolIndices& indices, const Tensor4<T>& grad_out);

/// Train mode normalises with batch statistics over (n, h, w) and updates the
/// running statistics in `p`; eval mode uses the running statistics only.
template <typename T>
Tensor4<T> batchnorm_forward(const Tensor4<T>& x, BNParams<T>& p, Mode mode, BNCache<T>* cache = nullptr);

/// Eval-mode forward on immutable parameters.
template <typename T>
Tensor4<T> batchnorm_forward(const Tensor4<T>& x, const BNParams<T>& p);

/// Throws UsageError when `cache` came from an eval-mode forward.
template <typename T>
BNGrads<T> batchnorm_backward(const BNCache<T>& cache, const BNParams<T>& p, const Tensor4<T>& grad_out);

template <typename T>
LossResult<T> mse_loss(const Tensor4<T>& pred, const Tensor4<T>& target,
                       LossReduction reduction = LossReduction::PerElement);

}  // namespace mscff
