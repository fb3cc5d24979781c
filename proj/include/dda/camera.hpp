#pragma once

#include <array>
#include <cmath>
#include <stdexcept>

#include "dda/tensor.hpp"

namespace dda::camera {

enum class DistortionModel { Polynomial, Division };

/// Radial distortion description in normalized [-1,1]^2 coordinates.
/// The map fisheye -> perspective is p = center + scale(r') * (p' - center),
/// with r' the distance of the fisheye point p' from the distortion center.
struct DistortionParams {
    DistortionModel model = DistortionModel::Polynomial;
    std::array<double, 4> lambda = {0.0, 0.0, 0.0, 0.0};
    double center_x = 0.0;
    double center_y = 0.0;
};

inline DistortionParams identity_params() { return DistortionParams{}; }

/// Radial multiplier taking fisheye coordinates to perspective coordinates.
inline double radial_scale(double r_norm, const DistortionParams& p) {
    if (!std::isfinite(r_norm) || r_norm < 0.0)
        throw std::invalid_argument("radial_scale: radius must be finite and >= 0");
    double r2 = r_norm * r_norm;
    double poly = 1.0 + r2 * (p.lambda[0] + r2 * (p.lambda[1] + r2 * (p.lambda[2] + r2 * p.lambda[3])));
    if (p.model == DistortionModel::Polynomial) return poly;
    return 1.0 / poly;
}

/// Fisheye radius -> perspective radius.
inline double forward_radius(double r_prime, const DistortionParams& p) {
    return r_prime * radial_scale(r_prime, p);
}

inline constexpr double kMaxNormRadius = 1.4142135623730951;  // sqrt(2), frame corner
// Tolerance for on-boundary sample positions, in pixels; absorbs radial
// bisection noise (1e-8 normalized units) at any desk-scale image size.
inline constexpr double kEdgeEps = 1e-5;

/// Strict monotonicity of r' -> r'*scale(r') on [0, sqrt(2)], sampled on a
/// 1024-point grid. Samplers must reject parameter draws that fail this.
inline bool is_monotone(const DistortionParams& p) {
    for (double l : p.lambda)
        if (!std::isfinite(l)) return false;
    const int n = 1024;
    double prev = 0.0;
    for (int i = 1; i <= n; ++i) {
        double r = kMaxNormRadius * i / n;
        double f = forward_radius(r, p);
        if (!std::isfinite(f) || f <= prev) return false;
        prev = f;
    }
    return true;
}

// Pixel center <-> normalized [-1,1] coordinates.
inline double px_to_norm(double idx, int n) { return (2.0 * (idx + 0.5)) / n - 1.0; }
inline double norm_to_px(double u, int n) { return (u + 1.0) * 0.5 * n - 0.5; }

/// Bilinear sample at continuous pixel position (x, y), border clamped.
template <typename T>
T bilinear_sample(const Tensor3<T>& img, int ci, double x, double y) {
    double xc = std::clamp(x, 0.0, static_cast<double>(img.w - 1));
    double yc = std::clamp(y, 0.0, static_cast<double>(img.h - 1));
    int x0 = static_cast<int>(std::floor(xc));
    int y0 = static_cast<int>(std::floor(yc));
    int x1 = std::min(x0 + 1, img.w - 1);
    int y1 = std::min(y0 + 1, img.h - 1);
    double fx = xc - x0;
    double fy = yc - y0;
    double v00 = img(ci, y0, x0), v01 = img(ci, y0, x1);
    double v10 = img(ci, y1, x0), v11 = img(ci, y1, x1);
    double top = v00 + fx * (v01 - v00);
    double bot = v10 + fx * (v11 - v10);
    return static_cast<T>(top + fy * (bot - top));
}

template <typename T>
struct Synthesized {
    Tensor3<T> image;
    std::vector<uint8_t> mask;  // H*W, 1 where the source sample fell inside the perspective image
};

/// Renders a fisheye view of a perspective image by backward warping: each
/// fisheye pixel samples the perspective image at center + scale(r')*(p'-center).
/// Out-of-bounds sources are filled with `fill` and masked out.
template <typename T>
Synthesized<T> synthesize_fisheye(const Tensor3<T>& perspective, const DistortionParams& p, T fill = T(-1)) {
    if (perspective.h != perspective.w) throw std::invalid_argument("synthesize_fisheye: image must be square");
    if (perspective.h < 1) throw std::invalid_argument("synthesize_fisheye: empty image");
    if (!is_monotone(p)) throw std::invalid_argument("synthesize_fisheye: non-monotone radial map");

    const int n = perspective.h;
    Synthesized<T> out;
    out.image = Tensor3<T>(perspective.c, n, n, fill);
    out.mask.assign(static_cast<size_t>(n) * n, 0);

    for (int y = 0; y < n; ++y) {
        for (int x = 0; x < n; ++x) {
            double ux = px_to_norm(x, n) - p.center_x;
            double uy = px_to_norm(y, n) - p.center_y;
            double r = std::sqrt(ux * ux + uy * uy);
            double s = radial_scale(r, p);
            double sx = p.center_x + s * ux;
            double sy = p.center_y + s * uy;
            double px = norm_to_px(sx, n);
            double py = norm_to_px(sy, n);
            bool inside = px >= -kEdgeEps && px <= n - 1.0 + kEdgeEps && py >= -kEdgeEps && py <= n - 1.0 + kEdgeEps;
            if (!inside) continue;
            out.mask[static_cast<size_t>(y) * n + x] = 1;
            for (int ci = 0; ci < perspective.c; ++ci)
                out.image(ci, y, x) = bilinear_sample(perspective, ci, px, py);
        }
    }
    return out;
}

/// Inverts r = r' * scale(r') for r' by bisection. The radial map is monotone,
/// so a bracket gives guaranteed convergence; tolerance 1e-8 in normalized radius.
inline double invert_radius(double r, const DistortionParams& p) {
    if (r <= 0.0) return 0.0;
    double lo = 0.0;
    double hi = kMaxNormRadius;
    int grow = 0;
    while (forward_radius(hi, p) < r) {
        hi *= 2.0;
        if (++grow > 4) throw std::runtime_error("invert_radius: radius unreachable by radial map");
    }
    const double tol = 1e-8;
    for (int it = 0; it < 200; ++it) {
        double mid = 0.5 * (lo + hi);
        if (forward_radius(mid, p) < r)
            lo = mid;
        else
            hi = mid;
        if (hi - lo < tol) return 0.5 * (lo + hi);
    }
    throw std::runtime_error("invert_radius: bisection did not converge in 200 iterations");
}

/// Per-pixel flow that rectifies a fisheye image of the given size: for each
/// perspective-grid pixel it finds the fisheye source point by inverting the
/// radial map. Used for evaluation and golden tests only; the one-pass network
/// never sees it.
template <typename T>
FlowField<T> ground_truth_rectify_flow(const DistortionParams& p, int h, int w) {
    if (h < 1 || w < 1) throw std::invalid_argument("ground_truth_rectify_flow: empty grid");
    if (!is_monotone(p)) throw std::invalid_argument("ground_truth_rectify_flow: non-monotone radial map");

    FlowField<T> flow(h, w);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            double ux = px_to_norm(x, w) - p.center_x;
            double uy = px_to_norm(y, h) - p.center_y;
            double r = std::sqrt(ux * ux + uy * uy);
            double sx, sy;
            if (r < 1e-12) {
                sx = p.center_x;
                sy = p.center_y;
            } else {
                double rp = invert_radius(r, p);
                double ratio = rp / r;
                sx = p.center_x + ratio * ux;
                sy = p.center_y + ratio * uy;
            }
            double px = norm_to_px(sx, w);
            double py = norm_to_px(sy, h);
            flow.dx(y, x) = static_cast<T>(px - x);
            flow.dy(y, x) = static_cast<T>(py - y);
            bool inside = px >= -kEdgeEps && px <= w - 1.0 + kEdgeEps && py >= -kEdgeEps && py <= h - 1.0 + kEdgeEps;
            flow.valid_at(y, x) = inside ? 1 : 0;
        }
    }
    return flow;
}

/// Backward bilinear warp: out(p) = src(p + flow(p)), border clamped.
/// Differentiable in both src values and flow values (see the autodiff op).
template <typename T>
Tensor3<T> warp(const Tensor3<T>& src, const FlowField<T>& flow) {
    if (flow.h() != src.h || flow.w() != src.w) throw std::invalid_argument("warp: flow/image shape mismatch");
    Tensor3<T> out(src.c, src.h, src.w);
    for (int y = 0; y < src.h; ++y) {
        for (int x = 0; x < src.w; ++x) {
            double sx = x + static_cast<double>(flow.dx(y, x));
            double sy = y + static_cast<double>(flow.dy(y, x));
            for (int ci = 0; ci < src.c; ++ci) out(ci, y, x) = bilinear_sample(src, ci, sx, sy);
        }
    }
    return out;
}

}  // namespace dda::camera
