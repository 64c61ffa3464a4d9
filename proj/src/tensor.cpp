#include "mscff/tensor.hpp"

#include <cmath>
#include <sstream>

#include "mscff/errors.hpp"
#include "mscff/random.hpp"

namespace mscff {

std::string to_string(const Shape4& s) {
    std::ostringstream os;
    os << s.n << "x" << s.c << "x" << s.h << "x" << s.w;
    return os.str();
}

namespace {

void check_dims(const Shape4& s) {
    if (s.n == 0 || s.c == 0 || s.h == 0 || s.w == 0)
        throw ShapeError("tensor dimensions must be >= 1, got " + to_string(s));
}

}  // namespace

template <typename T>
Tensor4<T>::Tensor4(std::size_t n, std::size_t c, std::size_t h, std::size_t w, T fill)
    : Tensor4(Shape4{n, c, h, w}, fill) {}

template <typename T>
Tensor4<T>::Tensor4(Shape4 shape, T fill) : shape_(shape) {
    check_dims(shape_);
    data_.assign(shape_.numel(), fill);
}

template <typename T>
Tensor4<T>::Tensor4(std::size_t n, std::size_t c, std::size_t h, std::size_t w, std::vector<T> values)
    : Tensor4(Shape4{n, c, h, w}, std::move(values)) {}

template <typename T>
Tensor4<T>::Tensor4(Shape4 shape, std::vector<T> values) : shape_(shape), data_(std::move(values)) {
    check_dims(shape_);
    if (data_.size() != shape_.numel()) {
        throw ShapeError("fill list has " + std::to_string(data_.size()) + " values, shape " +
                         to_string(shape_) + " needs " + std::to_string(shape_.numel()));
    }
    if (!all_finite()) throw ArgumentError("tensor fill contains a non-finite value");
}

template <typename T>
bool Tensor4<T>::all_finite() const {
    for (T v : data_)
        if (!std::isfinite(v)) return false;
    return true;
}

template <typename T>
Tensor4<T> seeded_normal(Shape4 shape, double mean, double stddev, std::uint64_t seed) {
    if (!(stddev >= 0.0)) throw ArgumentError("seeded_normal: stddev must be >= 0");
    Tensor4<T> out(shape);
    Rng rng(seed);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<T>(rng.normal(mean, stddev));
    return out;
}

template <typename T>
Tensor4<T> seeded_uniform(Shape4 shape, double lo, double hi, std::uint64_t seed) {
    Tensor4<T> out(shape);
    Rng rng(seed);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<T>(rng.uniform(lo, hi));
    return out;
}

template <typename T>
Tensor4<T> add(const Tensor4<T>& a, const Tensor4<T>& b) {
    Tensor4<T> out = a;
    add_inplace(out, b);
    return out;
}

template <typename T>
void add_inplace(Tensor4<T>& a, const Tensor4<T>& b) {
    if (a.shape() != b.shape())
        throw ShapeError("add: shape " + to_string(a.shape()) + " vs " + to_string(b.shape()));
    for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
}

template <typename T>
Tensor4<T> concat_channels(std::span<const Tensor4<T>> parts) {
    if (parts.empty()) throw ShapeError("concat_channels: no inputs");
    const Shape4 first = parts.front().shape();
    std::size_t channels = 0;
    for (const auto& p : parts) {
        if (p.n() != first.n || p.h() != first.h || p.w() != first.w)
            throw ShapeError("concat_channels: " + to_string(p.shape()) + " does not match " +
                             to_string(first));
        channels += p.c();
    }
    Tensor4<T> out(first.n, channels, first.h, first.w);
    for (std::size_t n = 0; n < first.n; ++n) {
        T* dst = out.sample(n).data();
        for (const auto& p : parts) {
            auto src = p.sample(n);
            std::copy(src.begin(), src.end(), dst);
            dst += src.size();
        }
    }
    return out;
}

template <typename T>
std::vector<Tensor4<T>> split_channels(const Tensor4<T>& t, std::span<const std::size_t> channel_counts) {
    std::size_t total = 0;
    for (auto c : channel_counts) total += c;
    if (total != t.c()) throw ShapeError("split_channels: counts do not sum to channel count");
    std::vector<Tensor4<T>> out;
    std::size_t offset = 0;
    for (auto c : channel_counts) {
        Tensor4<T> part(t.n(), c, t.h(), t.w());
        for (std::size_t n = 0; n < t.n(); ++n) {
            auto src = t.sample(n).subspan(offset * t.shape().plane(), c * t.shape().plane());
            std::copy(src.begin(), src.end(), part.sample(n).begin());
        }
        offset += c;
        out.push_back(std::move(part));
    }
    return out;
}

template <typename T>
double dot(const Tensor4<T>& a, const Tensor4<T>& b) {
    if (a.shape() != b.shape()) throw ShapeError("dot: shape mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += static_cast<double>(a[i]) * static_cast<double>(b[i]);
    return s;
}

#define MSCFF_INSTANTIATE(T)                                                                  \
    template class Tensor4<T>;                                                                \
    template Tensor4<T> seeded_normal<T>(Shape4, double, double, std::uint64_t);              \
    template Tensor4<T> seeded_uniform<T>(Shape4, double, double, std::uint64_t);             \
    template Tensor4<T> add<T>(const Tensor4<T>&, const Tensor4<T>&);                         \
    template void add_inplace<T>(Tensor4<T>&, const Tensor4<T>&);                             \
    template Tensor4<T> concat_channels<T>(std::span<const Tensor4<T>>);                      \
    template std::vector<Tensor4<T>> split_channels<T>(const Tensor4<T>&,                     \
                                                       std::span<const std::size_t>);         \
    template double dot<T>(const Tensor4<T>&, const Tensor4<T>&);

MSCFF_INSTANTIATE(float)
MSCFF_INSTANTIATE(double)

}  // namespace mscff
