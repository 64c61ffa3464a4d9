#include "mscff/training.hpp"

#include <cmath>
#include <cstdio>

#include "mscff/errors.hpp"
#include "mscff/inference.hpp"
#include "mscff/random.hpp"

namespace mscff {

namespace {

template <typename T>
void sgd_update_impl(std::span<T> w, std::span<const T> g, std::span<T> v, double lr, double momentum) {
    if (w.size() != g.size() || w.size() != v.size())
        throw ShapeError("sgd_update: sizes differ (" + std::to_string(w.size()) + ", " + std::to_string(g.size()) +
                         ", " + std::to_string(v.size()) + ")");
    const T m = static_cast<T>(momentum), rate = static_cast<T>(lr);
    for (std::size_t i = 0; i < w.size(); ++i) {
        v[i] = m * v[i] + g[i];
        w[i] -= rate * v[i];
    }
}

}  // namespace

void TrainConfig::validate() const {
    if (!(lr0 > 0.0)) throw ConfigError("lr0 must be > 0");
    if (max_iter == 0) throw ConfigError("max_iter must be >= 1");
    if (!(poly_power > 0.0)) throw ConfigError("poly_power must be > 0");
    if (batch_size == 0) throw ConfigError("batch_size must be >= 1");
    if (!(clip_norm > 0.0)) throw ConfigError("clip_norm must be > 0");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must be in [0, 1)");
}

Sample make_sample(const RasterImage& image, const MaskRaster& mask) {
    if (image.h != mask.h || image.w != mask.w) throw ShapeError("make_sample: image and mask sizes differ");
    Sample s{image.to_tensor(), Tensor4<float>(1, 2, mask.h, mask.w)};
    auto cloud = s.target.plane(0, 0);
    auto shadow = s.target.plane(0, 1);
    for (std::size_t i = 0; i < mask.labels.size(); ++i) {
        cloud[i] = mask.labels[i] == kLabelCloud ? 1.0f : 0.0f;
        shadow[i] = mask.labels[i] == kLabelShadow ? 1.0f : 0.0f;
    }
    return s;
}

MaskRaster target_mask(const Tensor4<float>& target, std::size_t sample) {
    MaskRaster m(target.h(), target.w());
    const auto cloud = target.plane(sample, 0);
    const auto shadow = target.plane(sample, 1);
    for (std::size_t i = 0; i < m.labels.size(); ++i)
        m.labels[i] = cloud[i] != 0.0f ? kLabelCloud : shadow[i] != 0.0f ? kLabelShadow : kLabelClear;
    return m;
}

void validate_samples(const SampleSet& samples) {
    if (samples.empty()) throw ArgumentError("sample set is empty");
    const Shape4 image = samples.front().image.shape();
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const auto& s = samples[i];
        if (!(s.image.shape() == image) || image.n != 1)
            throw ArgumentError("sample " + std::to_string(i) + ": image shape " + to_string(s.image.shape()) +
                                " differs from " + to_string(image));
        if (!(s.target.shape() == Shape4{1, 2, image.h, image.w}))
            throw ArgumentError("sample " + std::to_string(i) + ": target shape " + to_string(s.target.shape()));
        for (float v : s.target.values())
            if (v != 0.0f && v != 1.0f) throw ArgumentError("sample " + std::to_string(i) + ": target is not binary");
    }
}

double poly_lr(std::size_t iter, const TrainConfig& cfg) {
    if (iter > cfg.max_iter)
        throw ArgumentError("poly_lr: iteration " + std::to_string(iter) + " exceeds max_iter " +
                            std::to_string(cfg.max_iter));
    const double frac = static_cast<double>(iter) / static_cast<double>(cfg.max_iter);
    return cfg.lr0 * std::pow(1.0 - frac, cfg.poly_power);
}

double gradient_norm(const ModelParams<float>& grads) {
    double sq = 0.0;
    for (const auto& t : grads.tensors())
        if (t.learnable)
            for (float v : t.data) sq += static_cast<double>(v) * v;
    return std::sqrt(sq);
}

double clip_gradients(ModelParams<float>& grads, double clip_norm) {
    if (!(clip_norm > 0.0)) throw ArgumentError("clip_gradients: clip_norm must be > 0");
    const double g = gradient_norm(grads);
    if (g > clip_norm) {
        const auto scale = static_cast<float>(clip_norm / g);
        for (auto& t : grads.tensors())
            if (t.learnable)
                for (float& v : t.data) v *= scale;
    }
    return g;
}

void sgd_update(std::span<float> w, std::span<const float> g, std::span<float> v, double lr, double momentum) {
    sgd_update_impl(w, g, v, lr, momentum);
}

void sgd_update(std::span<double> w, std::span<const double> g, std::span<double> v, double lr, double momentum) {
    sgd_update_impl(w, g, v, lr, momentum);
}

void sgd_step(ModelParams<float>& params, const ModelParams<float>& grads, double lr, double momentum,
              ModelParams<float>& velocity) {
    auto p = params.tensors();
    const auto g = grads.tensors();
    auto v = velocity.tensors();
    if (p.size() != g.size() || p.size() != v.size()) throw ShapeError("sgd_step: parameter structures differ");
    for (std::size_t i = 0; i < p.size(); ++i) {
        if (!p[i].learnable) continue;
        if (p[i].name != g[i].name || p[i].name != v[i].name)
            throw ShapeError("sgd_step: tensor " + p[i].name + " has no matching gradient");
        sgd_update(p[i].data, g[i].data, v[i].data, lr, momentum);
    }
}

BatchSampler::BatchSampler(std::size_t count, std::size_t batch_size, std::uint64_t seed)
    : count_(count), batch_size_(batch_size), seed_(seed) {
    if (count == 0) throw ArgumentError("BatchSampler: empty sample set");
    if (batch_size == 0 || batch_size > count)
        throw ArgumentError("BatchSampler: batch size " + std::to_string(batch_size) + " must be in [1, " +
                            std::to_string(count) + "]");
    reshuffle();
}

void BatchSampler::reshuffle() {
    order_.resize(count_);
    for (std::size_t i = 0; i < count_; ++i) order_[i] = i;
    Rng rng(derive_seed(seed_, epoch_));
    for (std::size_t i = count_; i > 1; --i) std::swap(order_[i - 1], order_[rng.below(i)]);
    cursor_ = 0;
}

std::vector<std::size_t> BatchSampler::next() {
    if (cursor_ == count_) {
        ++epoch_;
        reshuffle();
    }
    const std::size_t end = std::min(cursor_ + batch_size_, count_);
    std::vector<std::size_t> batch(order_.begin() + static_cast<std::ptrdiff_t>(cursor_),
                                   order_.begin() + static_cast<std::ptrdiff_t>(end));
    cursor_ = end;
    return batch;
}

std::pair<Tensor4<float>, Tensor4<float>> assemble_batch(const SampleSet& samples,
                                                        std::span<const std::size_t> indices) {
    if (indices.empty()) throw ArgumentError("assemble_batch: no indices");
    const Shape4 is = samples.at(indices[0]).image.shape();
    const Shape4 ts = samples.at(indices[0]).target.shape();
    Tensor4<float> images(indices.size(), is.c, is.h, is.w);
    Tensor4<float> targets(indices.size(), ts.c, ts.h, ts.w);
    for (std::size_t k = 0; k < indices.size(); ++k) {
        const auto& s = samples.at(indices[k]);
        std::copy(s.image.values().begin(), s.image.values().end(), images.sample(k).begin());
        std::copy(s.target.values().begin(), s.target.values().end(), targets.sample(k).begin());
    }
    return {std::move(images), std::move(targets)};
}

std::string format_curve_line(const CurvePoint& p) {
    char buf[96];
    std::snprintf(buf, sizeof buf, "%zu\t%.9g\t%.9g", p.iter, p.lr, p.loss);
    std::string line = buf;
    if (p.evaluated && p.val_f1) {
        std::snprintf(buf, sizeof buf, "\t%.6f", *p.val_f1);
        line += buf;
    } else if (p.evaluated) {
        line += "\tundefined";
    }
    return line;
}

MetricReport evaluate_samples(const ModelParams<float>& params, const SampleSet& samples, double threshold) {
    ConfusionCounts cloud, shadow;
    for (const auto& s : samples) {
        const auto maps = model_predict(s.image, params);
        const MaskRaster pred = maps_to_mask(maps, threshold);
        const MaskRaster ref = target_mask(s.target);
        cloud += confusion(pred, ref, MaskClass::Cloud);
        shadow += confusion(pred, ref, MaskClass::Shadow);
    }
    return {class_metrics(cloud), class_metrics(shadow)};
}

TrainResult train(const NetworkConfig& config, const TrainConfig& tcfg, const SampleSet& train_set,
                  const SampleSet& val_set, const TrainHooks& hooks) {
    tcfg.validate();
    validate_samples(train_set);
    if (!val_set.empty()) validate_samples(val_set);
    const Shape4 shape = train_set.front().image.shape();
    if (shape.c != config.in_channels)
        throw ArgumentError("train: samples have " + std::to_string(shape.c) + " bands, network expects " +
                            std::to_string(config.in_channels));
    if (shape.h % 8 != 0 || shape.w % 8 != 0) throw ArgumentError("train: patch size must be divisible by 8");

    TrainResult result{build_model<float>(config, derive_seed(tcfg.seed, 0)), {}};
    ModelParams<float> velocity = result.params.zeros_like();
    BatchSampler sampler(train_set.size(), std::min(tcfg.batch_size, train_set.size()), derive_seed(tcfg.seed, 1));

    for (std::size_t iter = 0; iter < tcfg.max_iter; ++iter) {
        const double lr = poly_lr(iter, tcfg);
        const auto indices = sampler.next();
        const auto [images, targets] = assemble_batch(train_set, indices);

        ForwardCache<float> cache;
        const auto out = model_forward(images, result.params, Mode::Train, &cache);
        const auto loss = mse_loss(out, targets, tcfg.loss_reduction);
        if (!std::isfinite(loss.loss))
            throw NumericalError("training diverged: loss is " + std::to_string(loss.loss) + " at iteration " +
                                 std::to_string(iter) + " (lr " + std::to_string(lr) + ")");
        auto grads = model_backward(cache, result.params, loss.grad);
        clip_gradients(grads.params, tcfg.clip_norm);
        sgd_step(result.params, grads.params, lr, tcfg.momentum, velocity);

        CurvePoint point{iter, lr, loss.loss, false, std::nullopt};
        const bool last = iter + 1 == tcfg.max_iter;
        const bool eval_now = last || (tcfg.eval_every > 0 && (iter + 1) % tcfg.eval_every == 0);
        if (eval_now && !val_set.empty()) {
            point.evaluated = true;
            point.val_f1 = evaluate_samples(result.params, val_set).cloud.f1;
        }
        result.curve.push_back(point);
        if (hooks.on_point) hooks.on_point(point);
        if (hooks.on_checkpoint && tcfg.checkpoint_every > 0 && (iter + 1) % tcfg.checkpoint_every == 0)
            hooks.on_checkpoint(iter + 1, result.params);
    }
    if (!result.params.all_finite()) throw NumericalError("training produced non-finite parameters");
    return result;
}

}  // namespace mscff
