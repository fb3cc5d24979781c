#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace dda {

/// Dense C x H x W tensor, row-major within a plane, planes contiguous.
/// Images use values in [-1, 1]; flows use pixel displacements.
template <typename T>
struct Tensor3 {
    int c = 0;
    int h = 0;
    int w = 0;
    std::vector<T> v;

    Tensor3() = default;
    Tensor3(int c_, int h_, int w_, T fill = T(0))
        : c(c_), h(h_), w(w_), v(static_cast<size_t>(c_) * h_ * w_, fill) {
        if (c_ < 0 || h_ < 0 || w_ < 0) throw std::invalid_argument("Tensor3: negative dims");
    }

    size_t size() const { return v.size(); }
    bool empty() const { return v.empty(); }

    T& operator()(int ci, int yi, int xi) {
        return v[(static_cast<size_t>(ci) * h + yi) * w + xi];
    }
    const T& operator()(int ci, int yi, int xi) const {
        return v[(static_cast<size_t>(ci) * h + yi) * w + xi];
    }

    T* plane(int ci) { return v.data() + static_cast<size_t>(ci) * h * w; }
    const T* plane(int ci) const { return v.data() + static_cast<size_t>(ci) * h * w; }

    bool same_shape(const Tensor3& o) const { return c == o.c && h == o.h && w == o.w; }

    template <typename U>
    Tensor3<U> cast() const {
        Tensor3<U> out(c, h, w);
        for (size_t i = 0; i < v.size(); ++i) out.v[i] = static_cast<U>(v[i]);
        return out;
    }
};

template <typename T>
bool all_finite(const Tensor3<T>& t) {
    for (T x : t.v)
        if (!std::isfinite(static_cast<double>(x))) return false;
    return true;
}

template <typename T>
void clamp_unit(Tensor3<T>& t) {
    for (T& x : t.v) x = std::clamp(x, T(-1), T(1));
}

template <typename T>
Tensor3<T> operator+(const Tensor3<T>& a, const Tensor3<T>& b) {
    if (!a.same_shape(b)) throw std::invalid_argument("Tensor3 +: shape mismatch");
    Tensor3<T> out = a;
    for (size_t i = 0; i < out.v.size(); ++i) out.v[i] += b.v[i];
    return out;
}

template <typename T>
Tensor3<T> operator-(const Tensor3<T>& a, const Tensor3<T>& b) {
    if (!a.same_shape(b)) throw std::invalid_argument("Tensor3 -: shape mismatch");
    Tensor3<T> out = a;
    for (size_t i = 0; i < out.v.size(); ++i) out.v[i] -= b.v[i];
    return out;
}

template <typename T>
Tensor3<T> operator*(T s, const Tensor3<T>& a) {
    Tensor3<T> out = a;
    for (T& x : out.v) x *= s;
    return out;
}

template <typename T>
double mean_value(const Tensor3<T>& t) {
    if (t.empty()) return 0.0;
    double s = 0.0;
    for (T x : t.v) s += static_cast<double>(x);
    return s / static_cast<double>(t.size());
}

template <typename T>
double max_abs(const Tensor3<T>& t) {
    double m = 0.0;
    for (T x : t.v) m = std::max(m, std::abs(static_cast<double>(x)));
    return m;
}

template <typename T>
double max_abs_diff(const Tensor3<T>& a, const Tensor3<T>& b) {
    if (!a.same_shape(b)) throw std::invalid_argument("max_abs_diff: shape mismatch");
    double m = 0.0;
    for (size_t i = 0; i < a.v.size(); ++i)
        m = std::max(m, std::abs(static_cast<double>(a.v[i]) - static_cast<double>(b.v[i])));
    return m;
}

/// Per-pixel displacement (in pixels of the target grid) plus validity.
/// Plane 0 holds x displacements, plane 1 holds y displacements.
template <typename T>
struct FlowField {
    Tensor3<T> data;              // 2 x H x W
    std::vector<uint8_t> valid;   // H*W, 1 where the displaced sample lands inside the source

    FlowField() = default;
    FlowField(int h, int w) : data(2, h, w), valid(static_cast<size_t>(h) * w, 1) {}

    int h() const { return data.h; }
    int w() const { return data.w; }

    T& dx(int y, int x) { return data(0, y, x); }
    T& dy(int y, int x) { return data(1, y, x); }
    T dx(int y, int x) const { return data(0, y, x); }
    T dy(int y, int x) const { return data(1, y, x); }

    uint8_t& valid_at(int y, int x) { return valid[static_cast<size_t>(y) * data.w + x]; }
    uint8_t valid_at(int y, int x) const { return valid[static_cast<size_t>(y) * data.w + x]; }
};

}  // namespace dda
