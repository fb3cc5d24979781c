#include <gtest/gtest.h>

#include <cmath>

#include "dda/autodiff.hpp"
#include "dda/camera.hpp"
#include "dda/metrics.hpp"
#include "dda/rng.hpp"
#include "dda/scenes.hpp"

using namespace dda;
using camera::DistortionModel;
using camera::DistortionParams;

namespace {

DistortionParams poly(double l1, double l2 = 0, double l3 = 0, double l4 = 0) {
    DistortionParams p;
    p.model = DistortionModel::Polynomial;
    p.lambda = {l1, l2, l3, l4};
    return p;
}

// ---------------------------------------------------------------------------
// Independent reference: a brute-force double warp that shares no code with
// camera.hpp. Radial inversion uses a dense monotone table with linear
// interpolation instead of bisection.
// ---------------------------------------------------------------------------

double ref_scale(double r, const DistortionParams& p) {
    double r2 = r * r;
    double s = 1.0 + p.lambda[0] * r2 + p.lambda[1] * r2 * r2 + p.lambda[2] * r2 * r2 * r2 +
               p.lambda[3] * r2 * r2 * r2 * r2;
    return p.model == DistortionModel::Polynomial ? s : 1.0 / s;
}

double ref_bilinear(const Tensor3<double>& img, double x, double y) {
    x = std::clamp(x, 0.0, img.w - 1.0);
    y = std::clamp(y, 0.0, img.h - 1.0);
    int x0 = (int)std::floor(x), y0 = (int)std::floor(y);
    int x1 = std::min(x0 + 1, img.w - 1), y1 = std::min(y0 + 1, img.h - 1);
    double fx = x - x0, fy = y - y0;
    return (1 - fy) * ((1 - fx) * img(0, y0, x0) + fx * img(0, y0, x1)) +
           (1 - fy) * 0.0 + fy * ((1 - fx) * img(0, y1, x0) + fx * img(0, y1, x1));
}

// Forward warp (perspective -> fisheye grid) done directly from the model.
Tensor3<double> ref_fisheye(const Tensor3<double>& persp, const DistortionParams& p) {
    int n = persp.h;
    Tensor3<double> out(1, n, n, -1.0);
    for (int y = 0; y < n; ++y)
        for (int x = 0; x < n; ++x) {
            double ux = (2.0 * (x + 0.5)) / n - 1.0;
            double uy = (2.0 * (y + 0.5)) / n - 1.0;
            double r = std::sqrt(ux * ux + uy * uy);
            double s = ref_scale(r, p);
            double px = ((s * ux + 1.0) * 0.5) * n - 0.5;
            double py = ((s * uy + 1.0) * 0.5) * n - 0.5;
            if (px < 0 || px > n - 1 || py < 0 || py > n - 1) continue;
            out(0, y, x) = ref_bilinear(persp, px, py);
        }
    return out;
}

// Rectification via a dense monotone lookup table of r' -> r' * scale(r').
Tensor3<double> ref_rectify(const Tensor3<double>& fisheye, const DistortionParams& p) {
    const int tab = 1 << 16;
    const double rmax = 4.0;
    std::vector<double> fwd(tab + 1);
    for (int i = 0; i <= tab; ++i) {
        double rp = rmax * i / tab;
        fwd[i] = rp * ref_scale(rp, p);
    }
    int n = fisheye.h;
    Tensor3<double> out(1, n, n, -1.0);
    for (int y = 0; y < n; ++y)
        for (int x = 0; x < n; ++x) {
            double ux = (2.0 * (x + 0.5)) / n - 1.0;
            double uy = (2.0 * (y + 0.5)) / n - 1.0;
            double r = std::sqrt(ux * ux + uy * uy);
            // table lookup with linear interpolation inside the cell
            auto it = std::lower_bound(fwd.begin(), fwd.end(), r);
            double rp;
            if (it == fwd.begin())
                rp = 0.0;
            else {
                size_t hi = it - fwd.begin();
                double f0 = fwd[hi - 1], f1 = fwd[hi];
                double t = (r - f0) / std::max(1e-18, f1 - f0);
                rp = rmax * (hi - 1 + t) / tab;
            }
            double ratio = r > 1e-12 ? rp / r : 0.0;
            double px = ((ratio * ux + 1.0) * 0.5) * n - 0.5;
            double py = ((ratio * uy + 1.0) * 0.5) * n - 0.5;
            out(0, y, x) = ref_bilinear(fisheye, px, py);
        }
    return out;
}

Tensor3<double> smooth_test_image(int n, uint64_t seed) {
    Rng rng(seed);
    double a1 = rng.uniform(0.3, 0.8), a2 = rng.uniform(0.2, 0.6);
    double p1 = rng.uniform(0, 6.28), p2 = rng.uniform(0, 6.28);
    Tensor3<double> img(1, n, n);
    for (int y = 0; y < n; ++y)
        for (int x = 0; x < n; ++x)
            img(0, y, x) = a1 * std::sin(2 * M_PI * x / n + p1) * std::cos(2 * M_PI * y / n + p2) +
                           a2 * std::sin(4 * M_PI * (x + y) / (2.0 * n));
    clamp_unit(img);
    return img;
}

metrics::Mask interior_mask(int n) {
    metrics::Mask m(static_cast<size_t>(n) * n, 0);
    for (int y = n / 4; y < 3 * n / 4; ++y)
        for (int x = n / 4; x < 3 * n / 4; ++x) m[static_cast<size_t>(y) * n + x] = 1;
    return m;
}

}  // namespace

TEST(RadialScale, ZeroCoefficientsGiveIdentity) {
    EXPECT_DOUBLE_EQ(camera::radial_scale(0.5, poly(0, 0, 0, 0)), 1.0);
}

TEST(RadialScale, ZeroRadiusKillsAllTerms) {
    EXPECT_DOUBLE_EQ(camera::radial_scale(0.0, poly(0.7, -0.3, 0.2, 0.1)), 1.0);
}

TEST(RadialScale, HandComputedPolynomialValue) {
    // 1 + 0.2*1 + 0.05*1 at r = 1
    EXPECT_NEAR(camera::radial_scale(1.0, poly(0.2, 0.05)), 1.25, 1e-15);
}

TEST(RadialScale, DivisionIsReciprocal) {
    DistortionParams p = poly(0.25);
    p.model = DistortionModel::Division;
    EXPECT_NEAR(camera::radial_scale(1.0, p), 0.8, 1e-15);
}

TEST(RadialScale, RejectsBadRadius) {
    EXPECT_THROW(camera::radial_scale(-0.1, poly(0.1)), std::invalid_argument);
    EXPECT_THROW(camera::radial_scale(std::nan(""), poly(0.1)), std::invalid_argument);
}

TEST(Monotonicity, PositivePolynomialIsMonotone) { EXPECT_TRUE(camera::is_monotone(poly(0.3, 0.05))); }

TEST(Monotonicity, StrongNegativeCoefficientIsNot) { EXPECT_FALSE(camera::is_monotone(poly(-0.5))); }

TEST(Synthesize, IdentityWarp) {
    auto img = scenes::gen_scene(3, scenes::SceneKind::Mixed, 24).cast<double>();
    auto syn = camera::synthesize_fisheye(img, poly(0, 0, 0, 0));
    EXPECT_LT(max_abs_diff(syn.image, img), 1e-12);
    for (uint8_t m : syn.mask) EXPECT_EQ(m, 1);
}

TEST(Synthesize, CenterPixelAlwaysValid) {
    auto img = scenes::gen_scene(5, scenes::SceneKind::Gradient, 32).cast<double>();
    for (double l1 : {0.1, 0.3, 0.6}) {
        auto syn = camera::synthesize_fisheye(img, poly(l1, 0.05));
        // the four pixels around the exact center for an even-sized grid
        EXPECT_EQ(syn.mask[15 * 32 + 15], 1);
        EXPECT_EQ(syn.mask[16 * 32 + 16], 1);
    }
}

TEST(Synthesize, ConstantImageStaysConstantOnMask) {
    Tensor3<double> img(1, 32, 32, 0.25);
    auto syn = camera::synthesize_fisheye(img, poly(0.35, 0.02));
    for (int y = 0; y < 32; ++y)
        for (int x = 0; x < 32; ++x)
            if (syn.mask[y * 32 + x]) EXPECT_NEAR(syn.image(0, y, x), 0.25, 1e-12);
}

TEST(Synthesize, RejectsNonMonotoneParams) {
    Tensor3<double> img(1, 16, 16, 0.0);
    EXPECT_THROW(camera::synthesize_fisheye(img, poly(-0.5)), std::invalid_argument);
}

TEST(Synthesize, RejectsNonSquare) {
    Tensor3<double> img(1, 16, 8, 0.0);
    EXPECT_THROW(camera::synthesize_fisheye(img, poly(0.1)), std::invalid_argument);
}

TEST(RectifyFlow, IdentityModelGivesZeroFlow) {
    auto flow = camera::ground_truth_rectify_flow<double>(poly(0, 0, 0, 0), 16, 16);
    EXPECT_LT(max_abs(flow.data), 1e-7);
    for (uint8_t v : flow.valid) EXPECT_EQ(v, 1);
}

TEST(RectifyFlow, CenterIsFixedPoint) {
    // odd grid: pixel (8,8) of a 17-grid sits exactly at the center
    auto flow = camera::ground_truth_rectify_flow<double>(poly(0.3, 0.05), 17, 17);
    EXPECT_NEAR(flow.dx(8, 8), 0.0, 1e-7);
    EXPECT_NEAR(flow.dy(8, 8), 0.0, 1e-7);
}

TEST(RectifyFlow, TwoSidedRadialInverse) {
    Rng rng(99);
    for (int trial = 0; trial < 10; ++trial) {
        DistortionParams p = poly(rng.uniform(0.05, 0.4), rng.uniform(0.0, 0.08));
        for (int i = 1; i <= 1024; ++i) {
            double r = camera::kMaxNormRadius * i / 1024;
            double rp = camera::invert_radius(r, p);
            EXPECT_LT(std::abs(camera::forward_radius(rp, p) - r), 1e-6);
        }
        // other direction on the reachable range
        for (int i = 1; i <= 1024; ++i) {
            double rp = camera::kMaxNormRadius * i / 1024;
            double r = camera::forward_radius(rp, p);
            EXPECT_LT(std::abs(camera::invert_radius(r, p) - rp), 1e-6);
        }
    }
}

TEST(RectifyFlow, RoundTripMatchesBruteForceOracle) {
    // The reference double-warp oracle measured a minimum interior-crop PSNR
    // of 59.72 dB over the 50-draw protocol at 64x64 (binding bound in the
    // acceptance suite). This spot check runs 8 independent draws with a
    // margin for the different draw set.
    const double kFrozenThresholdDb = 55.0;
    Rng rng(1234);
    auto mask = interior_mask(64);
    for (int trial = 0; trial < 8; ++trial) {
        DistortionParams p = poly(rng.uniform(0.08, 0.35), rng.uniform(0.0, 0.08), rng.uniform(0.0, 0.02));
        auto img = smooth_test_image(64, 1000 + trial);

        auto syn = camera::synthesize_fisheye(img, p);
        auto flow = camera::ground_truth_rectify_flow<double>(p, 64, 64);
        auto rec = camera::warp(syn.image, flow);
        double impl_psnr = metrics::psnr(rec, img, &mask);

        auto ref_fish = ref_fisheye(img, p);
        auto ref_rec = ref_rectify(ref_fish, p);
        double ref_psnr = metrics::psnr(ref_rec, img, &mask);

        EXPECT_GT(impl_psnr, kFrozenThresholdDb) << "trial " << trial;
        EXPECT_GT(ref_psnr, kFrozenThresholdDb) << "trial " << trial;
        // the two routes also agree pixelwise up to their interpolation schemes
        EXPECT_LT(max_abs_diff(rec, ref_rec), 0.02) << "trial " << trial;
    }
}

TEST(Warp, ZeroFlowIsIdentity) {
    auto img = scenes::gen_scene(11, scenes::SceneKind::Polygons, 20).cast<double>();
    FlowField<double> flow(20, 20);
    std::fill(flow.data.v.begin(), flow.data.v.end(), 0.0);
    EXPECT_LT(max_abs_diff(camera::warp(img, flow), img), 1e-12);
}

TEST(Warp, IntegerTranslationIsExact) {
    auto img = scenes::gen_scene(12, scenes::SceneKind::Checkerboard, 16).cast<double>();
    FlowField<double> flow(16, 16);
    for (int y = 0; y < 16; ++y)
        for (int x = 0; x < 16; ++x) {
            flow.dx(y, x) = 1.0;
            flow.dy(y, x) = 0.0;
        }
    auto out = camera::warp(img, flow);
    for (int y = 0; y < 16; ++y) {
        for (int x = 0; x < 15; ++x) EXPECT_DOUBLE_EQ(out(0, y, x), img(0, y, x + 1));
        EXPECT_DOUBLE_EQ(out(0, y, 15), img(0, y, 15));  // border column duplicated
    }
}

TEST(Warp, ShapeMismatchThrows) {
    Tensor3<double> img(1, 8, 8, 0.0);
    FlowField<double> flow(8, 9);
    EXPECT_THROW(camera::warp(img, flow), std::invalid_argument);
}

TEST(Warp, LinearInSource) {
    Rng rng(5);
    auto x = random_uniform<double>(1, 12, 12, rng);
    auto y = random_uniform<double>(1, 12, 12, rng);
    FlowField<double> flow(12, 12);
    for (auto& v : flow.data.v) v = rng.uniform(-2.0, 2.0);
    double a = 0.7, b = -1.3;
    Tensor3<double> combo = a * x + b * y;
    auto lhs = camera::warp(combo, flow);
    Tensor3<double> rhs = a * camera::warp(x, flow) + b * camera::warp(y, flow);
    EXPECT_LT(max_abs_diff(lhs, rhs), 1e-6);
}

TEST(Warp, BilinearReproducesAffineFieldsExactly) {
    int n = 16;
    Tensor3<double> img(1, n, n);
    for (int y = 0; y < n; ++y)
        for (int x = 0; x < n; ++x) img(0, y, x) = 0.03 * x - 0.02 * y + 0.1;
    FlowField<double> flow(n, n);
    Rng rng(6);
    for (int y = 2; y < n - 2; ++y)
        for (int x = 2; x < n - 2; ++x) {
            flow.dx(y, x) = rng.uniform(-1.5, 1.5);
            flow.dy(y, x) = rng.uniform(-1.5, 1.5);
        }
    auto out = camera::warp(img, flow);
    for (int y = 2; y < n - 2; ++y)
        for (int x = 2; x < n - 2; ++x) {
            double ex = 0.03 * (x + flow.dx(y, x)) - 0.02 * (y + flow.dy(y, x)) + 0.1;
            EXPECT_NEAR(out(0, y, x), ex, 1e-12);
        }
}

TEST(Warp, GradientWrtFlowMatchesFiniteDifferences) {
    // central differences, step 1e-4, 8x8 random image, 64-bit
    const int n = 8;
    Rng rng(77);
    Tensor3<double> img = random_uniform<double>(1, n, n, rng);
    Tensor3<double> flow0(2, n, n);
    for (auto& v : flow0.v) v = rng.uniform(-1.3, 1.3);
    Tensor3<double> weights = random_uniform<double>(1, n, n, rng);

    auto loss_of = [&](const Tensor3<double>& f) {
        FlowField<double> ff(n, n);
        ff.data = f;
        auto out = camera::warp(img, ff);
        double s = 0;
        for (size_t i = 0; i < out.v.size(); ++i) s += out.v[i] * weights.v[i];
        return s;
    };

    autodiff::Tape<double> tape;
    auto src = tape.leaf(img, true);
    auto flow = tape.leaf(flow0, true);
    auto out = tape.warp(src, flow);
    // loss = sum(out * weights): seed d(loss)/d(out) = weights and run the
    // warp op's backward closure directly.
    out->grad = weights;
    out->back();

    const double h = 1e-4;
    double max_rel = 0;
    for (size_t i = 0; i < flow0.v.size(); ++i) {
        Tensor3<double> fp = flow0, fm = flow0;
        fp.v[i] += h;
        fm.v[i] -= h;
        double fd = (loss_of(fp) - loss_of(fm)) / (2 * h);
        double an = flow->grad.v[i];
        double denom = std::max({std::abs(fd), std::abs(an), 1e-6});
        if (std::max(std::abs(fd), std::abs(an)) < 1e-6) continue;
        max_rel = std::max(max_rel, std::abs(fd - an) / denom);
    }
    EXPECT_LT(max_rel, 1e-3);

    // same check for d(warp)/d(src)
    auto loss_of_src = [&](const Tensor3<double>& s) {
        FlowField<double> ff(n, n);
        ff.data = flow0;
        auto o = camera::warp(s, ff);
        double acc = 0;
        for (size_t i = 0; i < o.v.size(); ++i) acc += o.v[i] * weights.v[i];
        return acc;
    };
    max_rel = 0;
    for (size_t i = 0; i < img.v.size(); ++i) {
        Tensor3<double> sp = img, sm = img;
        sp.v[i] += h;
        sm.v[i] -= h;
        double fd = (loss_of_src(sp) - loss_of_src(sm)) / (2 * h);
        double an = src->grad.v[i];
        if (std::max(std::abs(fd), std::abs(an)) < 1e-6) continue;
        max_rel = std::max(max_rel, std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1e-6}));
    }
    EXPECT_LT(max_rel, 1e-3);
}

TEST(IdentityLaw, ZeroLambdaComposesToIdentity) {
    auto img = scenes::gen_scene(21, scenes::SceneKind::Mixed, 32).cast<double>();
    DistortionParams p = poly(0, 0, 0, 0);
    auto syn = camera::synthesize_fisheye(img, p);
    auto flow = camera::ground_truth_rectify_flow<double>(p, 32, 32);
    auto rec = camera::warp(syn.image, flow);
    EXPECT_LT(max_abs_diff(rec, img), 1e-6);
}
