#include <gtest/gtest.h>

#include <cmath>

#include "dda/diffusion.hpp"
#include "dda/rng.hpp"

using namespace dda;
using diffusion::make_schedule;
using diffusion::NoiseSchedule;

TEST(Schedule, SingleStepProduct) {
    NoiseSchedule s = make_schedule(1, 0.5, 0.5);
    EXPECT_DOUBLE_EQ(s.alpha_bar(1), 0.5);
    EXPECT_DOUBLE_EQ(s.posterior_var(1), 0.0);  // abar_0 = 1 convention
}

TEST(Schedule, TwoStepProduct) {
    NoiseSchedule s = make_schedule(2, 0.1, 0.2);
    EXPECT_NEAR(s.alpha_bar(2), 0.9 * 0.8, 1e-15);
    EXPECT_NEAR(s.alpha_bar(1), 0.9, 1e-15);
}

TEST(Schedule, LongScheduleMatchesDirectProduct) {
    NoiseSchedule s = make_schedule(1000, 1e-4, 0.02);
    // independent direct computation of the product
    double abar = 1.0;
    for (int i = 0; i < 1000; ++i) {
        double b = 1e-4 + (0.02 - 1e-4) * i / 999.0;
        abar *= 1.0 - b;
    }
    EXPECT_NEAR(s.alpha_bar(1000), abar, 1e-18);
    EXPECT_LT(s.alpha_bar(1000), 1e-4);
}

TEST(Schedule, InvariantsHold) {
    NoiseSchedule s = make_schedule(1000, 1e-4, 0.02);
    EXPECT_DOUBLE_EQ(s.alpha_bar(0), 1.0);
    EXPECT_DOUBLE_EQ(s.alpha_bar(1), 1.0 - s.beta(1));
    for (int t = 1; t <= s.T; ++t) {
        EXPECT_GT(s.beta(t), 0.0);
        EXPECT_LT(s.beta(t), 1.0);
        EXPECT_LT(s.alpha_bar(t), s.alpha_bar(t - 1));  // strictly decreasing
        EXPECT_LE(s.posterior_var(t), s.beta(t));       // beta~_t <= beta_t
        if (t > 1) EXPECT_GE(s.beta(t), s.beta(t - 1)); // non-decreasing betas
    }
    EXPECT_LT(s.alpha_bar(s.T), 0.05);
}

TEST(Schedule, RejectsBadRanges) {
    EXPECT_THROW(make_schedule(0, 1e-4, 0.02), std::invalid_argument);
    EXPECT_THROW(make_schedule(10, 0.0, 0.02), std::invalid_argument);
    EXPECT_THROW(make_schedule(10, 0.3, 0.2), std::invalid_argument);
    EXPECT_THROW(make_schedule(10, 0.5, 1.0), std::invalid_argument);
}

TEST(QSample, NoiselessEndpoint) {
    Rng rng(1);
    auto x0 = random_uniform<double>(1, 4, 4, rng);
    auto eps = random_normal<double>(1, 4, 4, rng);
    EXPECT_LT(max_abs_diff(diffusion::q_sample(x0, 1.0, eps), x0), 1e-15);
}

TEST(QSample, PureNoiseEndpoint) {
    Rng rng(2);
    auto x0 = random_uniform<double>(1, 4, 4, rng);
    auto eps = random_normal<double>(1, 4, 4, rng);
    auto out = diffusion::q_sample(x0, 0.0, eps);
    EXPECT_LT(max_abs_diff(out, eps), 1e-15);
}

TEST(QSample, ShapeMismatchThrows) {
    Tensor3<double> x0(1, 4, 4, 0.0), eps(1, 4, 5, 0.0);
    EXPECT_THROW(diffusion::q_sample(x0, 0.5, eps), std::invalid_argument);
}

TEST(QSample, MonteCarloMomentsMatchTheory) {
    // mean -> sqrt(abar) x0 within 3 sigma (pooled), variance -> 1 - abar within 2%
    Rng rng(42);
    Tensor3<double> x0(1, 4, 4);
    for (auto& v : x0.v) v = rng.uniform(-0.9, 0.9);
    const int draws = 100000;
    for (double abar : {0.9, 0.5, 0.05}) {
        double sum = 0.0, sumsq = 0.0;
        double target_mean = 0.0;
        size_t n_elem = x0.v.size();
        for (auto v : x0.v) target_mean += std::sqrt(abar) * v;
        target_mean /= static_cast<double>(n_elem);
        for (int d = 0; d < draws; ++d) {
            auto eps = random_normal<double>(1, 4, 4, rng);
            auto xt = diffusion::q_sample(x0, abar, eps);
            for (size_t i = 0; i < xt.v.size(); ++i) {
                sum += xt.v[i];
                double centered = xt.v[i] - std::sqrt(abar) * x0.v[i];
                sumsq += centered * centered;
            }
        }
        double n_total = static_cast<double>(draws) * n_elem;
        double mean = sum / n_total;
        double var = sumsq / n_total;
        double sigma_mean = std::sqrt((1.0 - abar) / n_total);
        EXPECT_LT(std::abs(mean - target_mean), 3.0 * sigma_mean) << "abar=" << abar;
        EXPECT_LT(std::abs(var - (1.0 - abar)) / (1.0 - abar), 0.02) << "abar=" << abar;
    }
}

TEST(NoiseLevel, StaysInsideStepInterval) {
    NoiseSchedule s = make_schedule(50, 1e-4, 0.02);
    Rng rng(7);
    for (int trial = 0; trial < 2000; ++trial) {
        int t = 1 + static_cast<int>(rng.uniform_int(50));
        double a = diffusion::sample_noise_level(s, t, rng);
        EXPECT_GE(a, s.alpha_bar(t));
        EXPECT_LE(a, s.alpha_bar(t - 1));
    }
}

TEST(NoiseLevel, FirstStepUsesAlphaBarZeroConvention) {
    NoiseSchedule s = make_schedule(50, 1e-4, 0.02);
    Rng rng(8);
    for (int trial = 0; trial < 500; ++trial) {
        double a = diffusion::sample_noise_level(s, 1, rng);
        EXPECT_GE(a, s.alpha_bar(1));
        EXPECT_LE(a, 1.0);
    }
}

TEST(NoiseLevel, EmpiricalMeanHitsMidpoint) {
    NoiseSchedule s = make_schedule(50, 1e-4, 0.02);
    Rng rng(9);
    int t = 25;
    double sum = 0.0;
    const int draws = 10000;
    for (int d = 0; d < draws; ++d) sum += diffusion::sample_noise_level(s, t, rng);
    double mid = 0.5 * (s.alpha_bar(t) + s.alpha_bar(t - 1));
    double width = s.alpha_bar(t - 1) - s.alpha_bar(t);
    EXPECT_LT(std::abs(sum / draws - mid), 0.01 * width + 3.0 * width / std::sqrt(12.0 * draws));
}

TEST(NoiseLevel, OutOfRangeThrows) {
    NoiseSchedule s = make_schedule(50, 1e-4, 0.02);
    Rng rng(10);
    EXPECT_THROW(diffusion::sample_noise_level(s, 0, rng), std::invalid_argument);
    EXPECT_THROW(diffusion::sample_noise_level(s, 51, rng), std::invalid_argument);
}

TEST(PredictX0, ExactAlgebraicInverse) {
    Rng rng(11);
    auto x0 = random_uniform<double>(2, 6, 6, rng);
    auto eps = random_normal<double>(2, 6, 6, rng);
    for (double abar : {1.0, 0.73, 0.2, 1e-3}) {
        auto xt = diffusion::q_sample(x0, abar, eps);
        auto rec = diffusion::predict_x0(xt, eps, abar);
        EXPECT_LT(max_abs_diff(rec, x0), 1e-6) << "abar=" << abar;
    }
}

TEST(PredictX0, AlphaBarOneReturnsInput) {
    Rng rng(12);
    auto xt = random_normal<double>(1, 4, 4, rng);
    auto eps = random_normal<double>(1, 4, 4, rng);
    EXPECT_LT(max_abs_diff(diffusion::predict_x0(xt, eps, 1.0), xt), 1e-15);
}

TEST(PredictX0, StabilitySweepIn32Bit) {
    Rng rng(13);
    double worst = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
        auto x0 = random_uniform<float>(1, 8, 8, rng);
        auto eps = random_normal<float>(1, 8, 8, rng);
        double abar = std::pow(10.0, rng.uniform(-3.0, 0.0));  // [1e-3, 1]
        auto xt = diffusion::q_sample(x0, abar, eps);
        auto rec = diffusion::predict_x0(xt, eps, abar);
        worst = std::max(worst, max_abs_diff(rec, x0));
    }
    EXPECT_LT(worst, 1e-5);
}

TEST(PredictX0, RejectsNonPositiveAlphaBar) {
    Tensor3<double> x(1, 2, 2, 0.0);
    EXPECT_THROW(diffusion::predict_x0(x, x, 0.0), std::invalid_argument);
}

TEST(PosteriorMean, BothParameterizationsAgree) {
    NoiseSchedule s = make_schedule(50, 1e-4, 0.02);
    Rng rng(14);
    for (int trial = 0; trial < 50; ++trial) {
        int t = 1 + static_cast<int>(rng.uniform_int(50));
        auto xt = random_normal<double>(1, 8, 8, rng);
        auto eps = random_normal<double>(1, 8, 8, rng);
        auto mu_eps = diffusion::posterior_mean(xt, eps, t, s);
        auto x0_hat = diffusion::predict_x0(xt, eps, s.alpha_bar(t));
        auto mu_x0 = diffusion::posterior_mean_from_x0(xt, x0_hat, t, s);
        EXPECT_LT(max_abs_diff(mu_eps, mu_x0), 1e-5) << "t=" << t;
    }
}

TEST(PosteriorMean, FirstStepWithCleanSignalReturnsX0) {
    NoiseSchedule s = make_schedule(50, 1e-4, 0.02);
    Rng rng(15);
    auto x0 = random_uniform<double>(1, 4, 4, rng);
    Tensor3<double> eps(1, 4, 4, 0.0);
    auto xt = diffusion::q_sample(x0, s.alpha_bar(1), Tensor3<double>(1, 4, 4, 0.0));
    auto mu = diffusion::posterior_mean(xt, eps, 1, s);
    // abar_1 = alpha_1, so (1/sqrt(alpha_1)) * sqrt(abar_1) * x0 = x0
    EXPECT_LT(max_abs_diff(mu, x0), 1e-12);
}

TEST(PosteriorMean, PureNoiseShrinkageFactor) {
    NoiseSchedule s = make_schedule(50, 1e-4, 0.02);
    Rng rng(16);
    auto eps = random_normal<double>(1, 4, 4, rng);
    int t = s.T;
    auto mu = diffusion::posterior_mean(eps, eps, t, s);
    double factor = (1.0 / std::sqrt(s.alpha(t))) * (1.0 - s.beta(t) / std::sqrt(1.0 - s.alpha_bar(t)));
    Tensor3<double> expected = factor * eps;
    EXPECT_LT(max_abs_diff(mu, expected), 1e-12);
}

TEST(ReverseStep, NoiselessFirstStep) {
    NoiseSchedule s = make_schedule(50, 1e-4, 0.02);
    Rng rng(17);
    auto x1 = random_normal<double>(1, 4, 4, rng);
    auto eps = random_normal<double>(1, 4, 4, rng);
    Tensor3<double> z(1, 4, 4, 0.0);
    auto out = diffusion::reverse_step(x1, eps, 1, z, s);
    auto mu = diffusion::posterior_mean(x1, eps, 1, s);
    EXPECT_LT(max_abs_diff(out, mu), 1e-15);  // sigma_1 = 0
}

TEST(ReverseStep, NonzeroZAtFirstStepThrows) {
    NoiseSchedule s = make_schedule(50, 1e-4, 0.02);
    Tensor3<double> x(1, 2, 2, 0.5), z(1, 2, 2, 0.1);
    EXPECT_THROW(diffusion::reverse_step(x, x, 1, z, s), std::invalid_argument);
}

TEST(ReverseStep, MatchesPosteriorMeanWithOracleEps) {
    NoiseSchedule s = make_schedule(50, 1e-4, 0.02);
    Rng rng(18);
    auto x0 = random_uniform<double>(1, 6, 6, rng);
    for (int t = 1; t <= s.T; ++t) {
        auto eps = random_normal<double>(1, 6, 6, rng);
        auto xt = diffusion::q_sample(x0, s.alpha_bar(t), eps);
        Tensor3<double> z(1, 6, 6, 0.0);
        auto stepped = diffusion::reverse_step(xt, eps, t, z, s);
        auto mu = diffusion::posterior_mean(xt, eps, t, s);
        EXPECT_LT(max_abs_diff(stepped, mu), 1e-12) << "t=" << t;
    }
}

TEST(ReverseStep, ZeroPredictionIsPureRescale) {
    NoiseSchedule s = make_schedule(50, 1e-4, 0.02);
    Rng rng(19);
    auto xt = random_normal<double>(1, 4, 4, rng);
    Tensor3<double> zero(1, 4, 4, 0.0);
    int t = 20;
    auto out = diffusion::reverse_step(xt, zero, t, zero, s);
    Tensor3<double> expected = (1.0 / std::sqrt(s.alpha(t))) * xt;
    EXPECT_LT(max_abs_diff(out, expected), 1e-12);
}

TEST(Telescoping, ComposedSingleStepsMatchDirectSampling) {
    // Compose Eq.-3 single-step noising T times and compare marginal mean and
    // variance against the closed form at t in {T/4, T/2, T}; 1e4 samples, 3
    // sigma bounds on the pooled statistics.
    NoiseSchedule s = make_schedule(40, 1e-3, 0.05);
    Rng rng(20);
    const int draws = 10000;
    Tensor3<double> x0(1, 2, 2);
    for (auto& v : x0.v) v = rng.uniform(-0.8, 0.8);
    for (int target_t : {10, 20, 40}) {
        double sum = 0.0, sumsq = 0.0;
        for (int d = 0; d < draws; ++d) {
            Tensor3<double> x = x0;
            for (int t = 1; t <= target_t; ++t) {
                // x_t = sqrt(1-beta_t) x_{t-1} + sqrt(beta_t) eps_t
                double sa = std::sqrt(1.0 - s.beta(t));
                double sb = std::sqrt(s.beta(t));
                for (auto& v : x.v) v = sa * v + sb * rng.normal();
            }
            double abar = s.alpha_bar(target_t);
            for (size_t i = 0; i < x.v.size(); ++i) {
                double centered = x.v[i] - std::sqrt(abar) * x0.v[i];
                sum += centered;
                sumsq += centered * centered;
            }
        }
        double n = static_cast<double>(draws) * x0.v.size();
        double abar = s.alpha_bar(target_t);
        double mean = sum / n;
        double var = sumsq / n;
        double sigma_mean = std::sqrt((1.0 - abar) / n);
        // var of sample variance of a normal ~ 2 sigma^4 / n
        double sigma_var = std::sqrt(2.0 / n) * (1.0 - abar);
        EXPECT_LT(std::abs(mean), 3.0 * sigma_mean) << "t=" << target_t;
        EXPECT_LT(std::abs(var - (1.0 - abar)), 3.0 * sigma_var) << "t=" << target_t;
    }
}
