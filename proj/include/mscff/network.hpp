#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mscff/layers.hpp"
#include "mscff/tensor.hpp"

namespace mscff {

inline constexpr std::size_t kBlocks = 6;

/// Architectural switches of the encoder-decoder.
///
/// Index i of `filters` and `encoder_dilations` refers to encoder block
/// E(i+1); decoder block D(i+1) mirrors it and uses the same filter count.
/// `decoder_dilations` is listed in processing order, deepest block first
/// (D6, D5, ..., D1).
struct NetworkConfig {
    std::size_t in_channels = 4;
    std::array<std::size_t, kBlocks> filters{64, 64, 64, 64, 64, 64};
    std::array<int, kBlocks> encoder_dilations{1, 1, 1, 1, 2, 4};
    std::array<int, kBlocks> decoder_dilations{4, 2, 1, 1, 1, 1};
    bool fusion_enabled = true;
    bool residual_enabled = true;
    std::size_t out_channels = 2;

    /// Dilation of the decoder block mirroring encoder block i.
    int decoder_dilation(std::size_t i) const { return decoder_dilations[kBlocks - 1 - i]; }

    /// Throws ConfigError on any broken invariant.
    void validate() const;

    static NetworkConfig uniform(std::size_t in_channels, std::size_t filters);
    /// The wider {64, 128, 256, 512, 512, 512} variant.
    static NetworkConfig filter_sweep(std::size_t in_channels);

    friend bool operator==(const NetworkConfig&, const NetworkConfig&) = default;
};

template <typename T>
struct ConvBN {
    ConvParams<T> conv;
    BNParams<T> bn;
};

/// Three Conv-BN-ReLU stages with an optional residual shortcut. The
/// shortcut is a 1x1 Conv-BN projection when input and output widths differ.
template <typename T>
struct CbrrParams {
    std::array<ConvBN<T>, 3> stages;
    std::optional<ConvBN<T>> projection;
    int dilation = 1;

    std::size_t in_channels() const { return stages[0].conv.in_channels(); }
    std::size_t out_channels() const { return stages[2].conv.out_channels(); }
};

/// Non-owning view of one named parameter tensor.
template <typename T>
struct TensorRef {
    std::string name;
    std::vector<std::size_t> shape;
    std::span<T> data;
    bool learnable = true;  // false for batch-norm running statistics
};

/// All tensors of the network, keyed by block. decoder[i] mirrors
/// encoder[i]; upsample[i] is the stride-2 deconvolution feeding decoder[i]
/// (i = 0, 1, 2); fusion holds the per-scale upsamplers for decoder[5..1]
/// (deepest first) and is empty when fusion is disabled.
template <typename T>
struct ModelParams {
    NetworkConfig config;
    std::array<CbrrParams<T>, kBlocks> encoder;
    std::array<CbrrParams<T>, kBlocks> decoder;
    std::array<ConvBN<T>, 3> upsample;
    std::vector<ConvBN<T>> fusion;
    ConvParams<T> head;

    /// Every tensor in checkpoint order.
    std::vector<TensorRef<T>> tensors();
    std::vector<TensorRef<const T>> tensors() const;

    /// Total element count over all tensors, including running statistics.
    std::size_t parameter_count() const;
    std::size_t learnable_count() const;

    /// Same structure, every tensor zero. Used as a gradient store.
    ModelParams zeros_like() const;

    template <typename U>
    ModelParams<U> cast() const;

    bool all_finite() const;

    friend bool operator==(const ModelParams& a, const ModelParams& b) { return a.bitwise_equal(b); }

private:
    bool bitwise_equal(const ModelParams& other) const;
};

/// Gradients of every learnable tensor (held in a ModelParams-shaped store;
/// running-statistic slots stay zero) plus the gradient w.r.t. the input.
template <typename T>
struct GradStore {
    ModelParams<T> params;
    Tensor4<T> input;
};

/// Decoder outputs after their skip sums, deepest first: scales
/// 1/8, 1/8, 1/8, 1/4, 1/2, 1 of the input.
template <typename T>
using FeaturePyramid = std::array<Tensor4<T>, kBlocks>;

template <typename T>
struct ConvBNCache {
    Tensor4<T> input;
    BNCache<T> bn;
    Tensor4<T> activation_input;  // value fed to ReLU
};

template <typename T>
struct CbrrCache {
    std::array<ConvBNCache<T>, 3> stages;
    std::optional<ConvBNCache<T>> projection;
};

template <typename T>
struct ForwardCache {
    std::array<CbrrCache<T>, kBlocks> encoder;
    std::array<PoolIndices, 3> pools;
    std::array<CbrrCache<T>, kBlocks> decoder;
    std::array<ConvBNCache<T>, 3> upsample;
    std::vector<ConvBNCache<T>> fusion;
    std::vector<std::size_t> concat_channels;
    Tensor4<T> head_input;
};

/// He-normal weights (stddev sqrt(2 / fan_in)), zero biases, identity batch
/// norm. Deterministic per seed; every tensor draws from its own stream.
template <typename T>
ModelParams<T> build_model(const NetworkConfig& config, std::uint64_t seed);

template <typename T>
Tensor4<T> cbrr_forward(const Tensor4<T>& x, CbrrParams<T>& block, bool residual_enabled, Mode mode,
                        CbrrCache<T>* cache = nullptr);

/// Returns the input gradient; parameter gradients are added into `grads`.
template <typename T>
Tensor4<T> cbrr_backward(const CbrrCache<T>& cache, const CbrrParams<T>& block, bool residual_enabled,
                         const Tensor4<T>& grad_out, CbrrParams<T>& grads);

/// E1 -> pool -> E2 -> pool -> E3 -> pool -> E4 -> E5 -> E6.
/// Throws ShapeError unless h and w are divisible by 8.
template <typename T>
std::array<Tensor4<T>, kBlocks> encoder_forward(const Tensor4<T>& x, ModelParams<T>& params, Mode mode);

template <typename T>
FeaturePyramid<T> decoder_forward(const std::array<Tensor4<T>, kBlocks>& encoded, ModelParams<T>& params,
                                  Mode mode);

/// n x out_channels x H x W maps (linear, unbounded).
template <typename T>
Tensor4<T> fusion_forward(const FeaturePyramid<T>& pyramid, ModelParams<T>& params, Mode mode);

template <typename T>
Tensor4<T> model_forward(const Tensor4<T>& x, ModelParams<T>& params, Mode mode,
                         ForwardCache<T>* cache = nullptr);

/// Eval-mode forward on immutable parameters; safe to call concurrently.
template <typename T>
Tensor4<T> model_predict(const Tensor4<T>& x, const ModelParams<T>& params);

/// Requires a cache from a train-mode model_forward.
template <typename T>
GradStore<T> model_backward(const ForwardCache<T>& cache, const ModelParams<T>& params,
                            const Tensor4<T>& grad_out);

enum class ReceptiveFieldMode { Basic, DilatedDoubling };

/// Side length R of the receptive field after `depth` stacked 3x3 layers:
/// 2d + 1 for plain convolutions, 2^(d+1) - 1 when the dilation doubles per
/// layer. Throws ArgumentError when depth is 0.
std::size_t receptive_field(std::size_t depth, ReceptiveFieldMode mode);

struct LayerInfo {
    std::string name;
    std::string kind;  // conv, deconv, bn, relu, pool, sum, concat
    Shape4 input;
    Shape4 output;
    int dilation = 1;
    int stride = 1;
    std::size_t kernel = 0;
    std::size_t parameters = 0;
    std::size_t receptive_field = 0;  // input-space side length after this layer
};

/// Static layer inventory for an n x in_channels x h x w input.
std::vector<LayerInfo> describe_layers(const NetworkConfig& config, std::size_t h, std::size_t w);

/// Writes "MSCF", a version byte, a u32 length-prefixed JSON manifest and the
/// tensors as little-endian float32 in manifest order.
void save_params(const ModelParams<float>& params, const std::filesystem::path& path);
std::vector<std::uint8_t> serialize_params(const ModelParams<float>& params);

/// Throws FormatError on bad magic/version, a truncated body or a manifest
/// that does not match the structure implied by its own config.
ModelParams<float> load_params(const std::filesystem::path& path);
/// As above, and also requires the stored config to equal `expected`.
ModelParams<float> load_params(const std::filesystem::path& path, const NetworkConfig& expected);
ModelParams<float> deserialize_params(std::span<const std::uint8_t> bytes);

}  // namespace mscff
