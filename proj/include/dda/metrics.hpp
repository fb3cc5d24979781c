#pragma once

#include <cmath>
#include <optional>
#include <stdexcept>
#include <vector>

#include "dda/tensor.hpp"

namespace dda::metrics {

inline constexpr double kPsnrCapDb = 99.0;

using Mask = std::vector<uint8_t>;  // H*W, 1 = evaluate this pixel

/// Mean squared error on [0,1]-rescaled values over masked pixels.
template <typename T>
double mse(const Tensor3<T>& a, const Tensor3<T>& b, const Mask* mask = nullptr) {
    if (!a.same_shape(b)) throw std::invalid_argument("mse: shape mismatch");
    if (mask && mask->size() != static_cast<size_t>(a.h) * a.w)
        throw std::invalid_argument("mse: mask size mismatch");
    double sum = 0.0;
    size_t count = 0;
    for (int y = 0; y < a.h; ++y) {
        for (int x = 0; x < a.w; ++x) {
            if (mask && !(*mask)[static_cast<size_t>(y) * a.w + x]) continue;
            for (int ci = 0; ci < a.c; ++ci) {
                double da = (static_cast<double>(a(ci, y, x)) + 1.0) * 0.5;
                double db = (static_cast<double>(b(ci, y, x)) + 1.0) * 0.5;
                double d = da - db;
                sum += d * d;
                ++count;
            }
        }
    }
    if (count == 0) throw std::invalid_argument("mse: empty mask");
    return sum / static_cast<double>(count);
}

/// 10*log10(1/MSE) in dB, capped at 99 dB for (near-)identical inputs.
template <typename T>
double psnr(const Tensor3<T>& a, const Tensor3<T>& b, const Mask* mask = nullptr) {
    double m = mse(a, b, mask);
    if (m < 1e-10) return kPsnrCapDb;
    return 10.0 * std::log10(1.0 / m);
}

namespace detail {

inline std::vector<double> gaussian_window(int size, double sigma) {
    std::vector<double> w(static_cast<size_t>(size) * size);
    double sum = 0.0;
    int half = size / 2;
    for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x) {
            double dx = x - half, dy = y - half;
            double g = std::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma));
            w[static_cast<size_t>(y) * size + x] = g;
            sum += g;
        }
    for (double& g : w) g /= sum;
    return w;
}

struct SsimSums {
    double luminance = 0.0;  // mean of the luminance term over valid windows
    double cs = 0.0;         // mean of the contrast-structure term
    double full = 0.0;       // mean of luminance * cs
    size_t windows = 0;
};

template <typename T>
SsimSums ssim_components(const Tensor3<T>& a, const Tensor3<T>& b, const Mask* mask) {
    constexpr int kWin = 11;
    constexpr double kSigma = 1.5;
    constexpr double kK1 = 0.01, kK2 = 0.03, kRange = 1.0;
    const double c1 = (kK1 * kRange) * (kK1 * kRange);
    const double c2 = (kK2 * kRange) * (kK2 * kRange);

    if (a.h < kWin || a.w < kWin) throw std::invalid_argument("ssim: image smaller than 11x11 window");
    static const std::vector<double> win = gaussian_window(kWin, kSigma);

    SsimSums s;
    for (int ci = 0; ci < a.c; ++ci) {
        for (int y = 0; y + kWin <= a.h; ++y) {
            for (int x = 0; x + kWin <= a.w; ++x) {
                if (mask) {
                    bool ok = true;
                    for (int wy = 0; wy < kWin && ok; ++wy)
                        for (int wx = 0; wx < kWin; ++wx)
                            if (!(*mask)[static_cast<size_t>(y + wy) * a.w + (x + wx)]) {
                                ok = false;
                                break;
                            }
                    if (!ok) continue;
                }
                double ma = 0, mb = 0, vaa = 0, vbb = 0, vab = 0;
                for (int wy = 0; wy < kWin; ++wy)
                    for (int wx = 0; wx < kWin; ++wx) {
                        double wgt = win[static_cast<size_t>(wy) * kWin + wx];
                        double va = (static_cast<double>(a(ci, y + wy, x + wx)) + 1.0) * 0.5;
                        double vb = (static_cast<double>(b(ci, y + wy, x + wx)) + 1.0) * 0.5;
                        ma += wgt * va;
                        mb += wgt * vb;
                        vaa += wgt * va * va;
                        vbb += wgt * vb * vb;
                        vab += wgt * va * vb;
                    }
                vaa -= ma * ma;
                vbb -= mb * mb;
                vab -= ma * mb;
                double lum = (2.0 * ma * mb + c1) / (ma * ma + mb * mb + c1);
                double cs = (2.0 * vab + c2) / (vaa + vbb + c2);
                s.luminance += lum;
                s.cs += cs;
                s.full += lum * cs;
                ++s.windows;
            }
        }
    }
    if (s.windows == 0) throw std::invalid_argument("ssim: no valid windows under mask");
    double n = static_cast<double>(s.windows);
    s.luminance /= n;
    s.cs /= n;
    s.full /= n;
    return s;
}

/// 2x2 average-pool downsampling (truncates odd trailing row/col).
template <typename T>
Tensor3<T> downsample2(const Tensor3<T>& img) {
    int h = img.h / 2, w = img.w / 2;
    Tensor3<T> out(img.c, h, w);
    for (int ci = 0; ci < img.c; ++ci)
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x)
                out(ci, y, x) = static_cast<T>(
                    0.25 * (static_cast<double>(img(ci, 2 * y, 2 * x)) + img(ci, 2 * y, 2 * x + 1) +
                            img(ci, 2 * y + 1, 2 * x) + img(ci, 2 * y + 1, 2 * x + 1)));
    return out;
}

}  // namespace detail

/// Windowed SSIM: 11x11 Gaussian window (sigma 1.5), k1=0.01, k2=0.03,
/// dynamic range 1.0 after rescale to [0,1]; mean over valid windows.
template <typename T>
double ssim(const Tensor3<T>& a, const Tensor3<T>& b, const Mask* mask = nullptr) {
    if (!a.same_shape(b)) throw std::invalid_argument("ssim: shape mismatch");
    return detail::ssim_components(a, b, mask).full;
}

inline constexpr std::array<double, 5> kMsSsimWeights = {0.0448, 0.2856, 0.3001, 0.2363, 0.1333};

/// Multi-scale SSIM with the standard 5-scale weights, renormalized when the
/// image supports fewer dyadic scales (each scale must fit the 11x11 window).
template <typename T>
double ms_ssim(const Tensor3<T>& a, const Tensor3<T>& b) {
    if (!a.same_shape(b)) throw std::invalid_argument("ms_ssim: shape mismatch");
    if (a.h < 16 || a.w < 16) throw std::invalid_argument("ms_ssim: image smaller than 16x16");

    int scales = 0;
    {
        int h = a.h, w = a.w;
        while (scales < 5 && h >= 11 && w >= 11) {
            ++scales;
            h /= 2;
            w /= 2;
        }
    }
    double wsum = 0.0;
    for (int i = 0; i < scales; ++i) wsum += kMsSsimWeights[i];

    Tensor3<T> ca = a, cb = b;
    double result = 1.0;
    for (int i = 0; i < scales; ++i) {
        detail::SsimSums s = detail::ssim_components(ca, cb, nullptr);
        double weight = kMsSsimWeights[i] / wsum;
        double term = (i == scales - 1) ? s.full : s.cs;
        term = std::max(term, 0.0);  // fractional powers need a nonnegative base
        result *= std::pow(term, weight);
        if (i + 1 < scales) {
            ca = detail::downsample2(ca);
            cb = detail::downsample2(cb);
        }
    }
    return result;
}

/// Number of dyadic scales ms_ssim will use for a given image size.
inline int ms_ssim_scale_count(int h, int w) {
    int scales = 0;
    while (scales < 5 && h >= 11 && w >= 11) {
        ++scales;
        h /= 2;
        w /= 2;
    }
    return scales;
}

}  // namespace dda::metrics
