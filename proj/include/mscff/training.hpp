#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mscff/evaluation.hpp"
#include "mscff/network.hpp"
#include "mscff/raster.hpp"

namespace mscff {

struct TrainConfig {
    double lr0 = 0.1;
    std::size_t max_iter = 3000;
    double poly_power = 0.9;
    std::size_t batch_size = 10;
    double clip_norm = 1.0;
    double momentum = 0.0;
    std::uint64_t seed = 1;
    std::size_t checkpoint_every = 0;  // 0 disables
    std::size_t eval_every = 0;        // 0: only after the last iteration
    LossReduction loss_reduction = LossReduction::PerElement;

    /// Throws ConfigError on any broken invariant.
    void validate() const;
};

/// One training pair: 1 x C x h x w image in [0, 1] and a 1 x 2 x h x w
/// target (channel 0 cloud, channel 1 shadow) with values in {0, 1}.
struct Sample {
    Tensor4<float> image;
    Tensor4<float> target;
};

using SampleSet = std::vector<Sample>;

Sample make_sample(const RasterImage& image, const MaskRaster& mask);
/// 0/1 target planes to a merged mask, cloud first.
MaskRaster target_mask(const Tensor4<float>& target, std::size_t sample = 0);

/// Throws ArgumentError unless samples share one shape and targets are binary.
void validate_samples(const SampleSet& samples);

/// lr0 * (1 - iter / max_iter)^poly_power; ArgumentError when iter > max_iter.
double poly_lr(std::size_t iter, const TrainConfig& cfg);

/// Global L2 norm over all learnable gradient tensors.
double gradient_norm(const ModelParams<float>& grads);

/// Rescales all learnable gradients by clip_norm / g when their global norm g
/// exceeds clip_norm. Returns g (before clipping).
double clip_gradients(ModelParams<float>& grads, double clip_norm);

/// v <- momentum * v + g; w <- w - lr * v, element-wise. ShapeError on size
/// mismatch.
void sgd_update(std::span<float> weights, std::span<const float> grads, std::span<float> velocity, double lr,
                double momentum);
void sgd_update(std::span<double> weights, std::span<const double> grads, std::span<double> velocity, double lr,
                double momentum);

/// Applies sgd_update to every learnable tensor. `velocity` must have the
/// structure of `params` (see ModelParams::zeros_like).
void sgd_step(ModelParams<float>& params, const ModelParams<float>& grads, double lr, double momentum,
              ModelParams<float>& velocity);

/// Endless stream of batches; each epoch is a fresh permutation of the sample
/// indices cut into batch_size pieces (the last one may be shorter), so every
/// sample appears exactly once per epoch.
class BatchSampler {
public:
    BatchSampler(std::size_t count, std::size_t batch_size, std::uint64_t seed);

    std::vector<std::size_t> next();
    std::size_t batches_per_epoch() const { return (count_ + batch_size_ - 1) / batch_size_; }

private:
    void reshuffle();

    std::size_t count_;
    std::size_t batch_size_;
    std::uint64_t seed_;
    std::size_t epoch_ = 0;
    std::size_t cursor_ = 0;
    std::vector<std::size_t> order_;
};

/// Stacks the chosen samples into one batch (images, targets).
std::pair<Tensor4<float>, Tensor4<float>> assemble_batch(const SampleSet& samples,
                                                        std::span<const std::size_t> indices);

struct CurvePoint {
    std::size_t iter = 0;
    double lr = 0.0;
    double loss = 0.0;
    bool evaluated = false;       // validation ran at this iteration
    std::optional<double> val_f1;  // nullopt when evaluated but undefined
};

/// `iter<TAB>lr<TAB>loss[<TAB>val_f1]`; an undefined F-score prints as "undefined".
std::string format_curve_line(const CurvePoint& p);

struct TrainHooks {
    std::function<void(const CurvePoint&)> on_point;
    std::function<void(std::size_t iter, const ModelParams<float>&)> on_checkpoint;
};

struct TrainResult {
    ModelParams<float> params;
    std::vector<CurvePoint> curve;
};

/// Eval-mode prediction on each sample, binarized at `threshold` and pooled
/// into one metric report.
MetricReport evaluate_samples(const ModelParams<float>& params, const SampleSet& samples, double threshold = 0.5);

/// Mini-batch SGD on the MSE loss with poly learning-rate decay and global
/// gradient clipping, for iterations 0 .. max_iter - 1. The validation
/// F-score (cloud, t = 0.5) is recorded every eval_every iterations and after
/// the last one when `val` is non-empty. Throws NumericalError when the loss
/// stops being finite.
TrainResult train(const NetworkConfig& config, const TrainConfig& tcfg, const SampleSet& train_set,
                  const SampleSet& val_set, const TrainHooks& hooks = {});

}  // namespace mscff
