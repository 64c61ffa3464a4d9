#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace mscff {

struct Shape4 {
    std::size_t n = 1, c = 1, h = 1, w = 1;

    std::size_t numel() const { return n * c * h * w; }
    std::size_t plane() const { return h * w; }
    std::size_t sample() const { return c * h * w; }

    friend bool operator==(const Shape4&, const Shape4&) = default;
};

std::string to_string(const Shape4& s);

/// Dense rank-4 tensor in row-major (n, c, h, w) order.
///
/// Float is used for training and inference; double instantiations exist so
/// finite-difference gradient checks have enough precision.
template <typename T>
class Tensor4 {
public:
    using value_type = T;

    Tensor4() = default;

    /// Constant fill. Throws ShapeError when any dimension is zero.
    Tensor4(std::size_t n, std::size_t c, std::size_t h, std::size_t w, T fill = T(0));
    explicit Tensor4(Shape4 shape, T fill = T(0));

    /// Fill from a flat row-major list. Throws ShapeError on a length mismatch
    /// and ArgumentError on a non-finite value.
    Tensor4(std::size_t n, std::size_t c, std::size_t h, std::size_t w, std::vector<T> values);
    Tensor4(Shape4 shape, std::vector<T> values);

    const Shape4& shape() const { return shape_; }
    std::size_t n() const { return shape_.n; }
    std::size_t c() const { return shape_.c; }
    std::size_t h() const { return shape_.h; }
    std::size_t w() const { return shape_.w; }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    std::size_t index(std::size_t n, std::size_t c, std::size_t y, std::size_t x) const {
        return ((n * shape_.c + c) * shape_.h + y) * shape_.w + x;
    }

    T& operator()(std::size_t n, std::size_t c, std::size_t y, std::size_t x) {
        return data_[index(n, c, y, x)];
    }
    T operator()(std::size_t n, std::size_t c, std::size_t y, std::size_t x) const {
        return data_[index(n, c, y, x)];
    }

    T& operator[](std::size_t i) { return data_[i]; }
    T operator[](std::size_t i) const { return data_[i]; }

    T* data() { return data_.data(); }
    const T* data() const { return data_.data(); }
    std::span<T> values() { return data_; }
    std::span<const T> values() const { return data_; }

    /// One (n, c) plane of h*w values.
    std::span<T> plane(std::size_t n, std::size_t c) {
        return {data_.data() + index(n, c, 0, 0), shape_.plane()};
    }
    std::span<const T> plane(std::size_t n, std::size_t c) const {
        return {data_.data() + index(n, c, 0, 0), shape_.plane()};
    }

    /// All channels of one batch item.
    std::span<T> sample(std::size_t n) { return {data_.data() + n * shape_.sample(), shape_.sample()}; }
    std::span<const T> sample(std::size_t n) const {
        return {data_.data() + n * shape_.sample(), shape_.sample()};
    }

    bool all_finite() const;

    template <typename U>
    Tensor4<U> cast() const {
        Tensor4<U> out(shape_);
        for (std::size_t i = 0; i < data_.size(); ++i) out[i] = static_cast<U>(data_[i]);
        return out;
    }

    friend bool operator==(const Tensor4&, const Tensor4&) = default;

private:
    Shape4 shape_{0, 0, 0, 0};
    std::vector<T> data_;
};

/// Normal(mean, stddev) fill from a seeded Rng. Throws ArgumentError when
/// stddev is negative.
template <typename T>
Tensor4<T> seeded_normal(Shape4 shape, double mean, double stddev, std::uint64_t seed);

/// Uniform [lo, hi) fill, for tests and synthetic inputs.
template <typename T>
Tensor4<T> seeded_uniform(Shape4 shape, double lo, double hi, std::uint64_t seed);

/// Elementwise sum; throws ShapeError unless shapes match.
template <typename T>
Tensor4<T> add(const Tensor4<T>& a, const Tensor4<T>& b);

template <typename T>
void add_inplace(Tensor4<T>& a, const Tensor4<T>& b);

/// Stacks along the channel axis in argument order. Inputs must share n, h, w.
template <typename T>
Tensor4<T> concat_channels(std::span<const Tensor4<T>> parts);

/// Inverse of concat_channels: splits into consecutive channel blocks.
template <typename T>
std::vector<Tensor4<T>> split_channels(const Tensor4<T>& t, std::span<const std::size_t> channel_counts);

/// Sum over all elements of a*b, accumulated in double.
template <typename T>
double dot(const Tensor4<T>& a, const Tensor4<T>& b);

}  // namespace mscff
