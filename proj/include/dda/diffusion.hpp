#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "dda/rng.hpp"
#include "dda/tensor.hpp"

namespace dda::diffusion {

enum class ScheduleKind { Linear };

/// Fixed forward-process schedule and every closed-form quantity derived from it.
/// Index convention: arrays are 0-based, step t in [1, T] maps to index t-1;
/// alpha_bar(0) == 1 by convention, which makes posterior_var(1) == 0.
struct NoiseSchedule {
    int T = 0;
    std::vector<double> betas;           // beta_t
    std::vector<double> alphas;          // 1 - beta_t
    std::vector<double> alpha_bars;      // prod_{s<=t} (1 - beta_s)
    std::vector<double> posterior_vars;  // beta~_t = (1-abar_{t-1})/(1-abar_t) * beta_t

    double beta(int t) const { return betas.at(t - 1); }
    double alpha(int t) const { return alphas.at(t - 1); }
    double alpha_bar(int t) const { return t == 0 ? 1.0 : alpha_bars.at(t - 1); }
    double posterior_var(int t) const { return posterior_vars.at(t - 1); }
};

inline NoiseSchedule make_schedule(int T, double beta_start, double beta_end,
                                   ScheduleKind kind = ScheduleKind::Linear) {
    if (kind != ScheduleKind::Linear) throw std::invalid_argument("make_schedule: unknown schedule kind");
    if (T < 1) throw std::invalid_argument("make_schedule: T must be >= 1");
    if (!(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0))
        throw std::invalid_argument("make_schedule: require 0 < beta_start <= beta_end < 1");

    NoiseSchedule s;
    s.T = T;
    s.betas.resize(T);
    s.alphas.resize(T);
    s.alpha_bars.resize(T);
    s.posterior_vars.resize(T);
    double abar = 1.0;
    for (int i = 0; i < T; ++i) {
        double b = (T == 1) ? beta_start : beta_start + (beta_end - beta_start) * i / (T - 1);
        double abar_prev = abar;
        s.betas[i] = b;
        s.alphas[i] = 1.0 - b;
        abar *= 1.0 - b;
        s.alpha_bars[i] = abar;
        s.posterior_vars[i] = (1.0 - abar_prev) / (1.0 - abar) * b;
    }
    return s;
}

/// x_t = sqrt(abar) x0 + sqrt(1-abar) eps. abar = 1 returns x0 exactly,
/// abar = 0 returns eps exactly.
template <typename T>
Tensor3<T> q_sample(const Tensor3<T>& x0, double alpha_bar, const Tensor3<T>& eps) {
    if (!x0.same_shape(eps)) throw std::invalid_argument("q_sample: shape mismatch");
    if (!(alpha_bar >= 0.0 && alpha_bar <= 1.0)) throw std::invalid_argument("q_sample: alpha_bar out of [0,1]");
    double sa = std::sqrt(alpha_bar);
    double sn = std::sqrt(1.0 - alpha_bar);
    Tensor3<T> out(x0.c, x0.h, x0.w);
    for (size_t i = 0; i < out.v.size(); ++i)
        out.v[i] = static_cast<T>(sa * x0.v[i] + sn * eps.v[i]);
    return out;
}

/// Continuous noise level: uniform draw from [abar_t, abar_{t-1}] with abar_0 = 1.
/// This value (as sqrt(abar)) conditions the denoisers during training.
inline double sample_noise_level(const NoiseSchedule& s, int t, Rng& rng) {
    if (t < 1 || t > s.T) throw std::invalid_argument("sample_noise_level: t out of range");
    double lo = s.alpha_bar(t);
    double hi = s.alpha_bar(t - 1);
    return rng.uniform(lo, hi);
}

/// Exact inverse of q_sample: x0 = (x_t - sqrt(1-abar) eps) / sqrt(abar).
template <typename T>
Tensor3<T> predict_x0(const Tensor3<T>& x_t, const Tensor3<T>& eps, double alpha_bar) {
    if (!x_t.same_shape(eps)) throw std::invalid_argument("predict_x0: shape mismatch");
    if (!(alpha_bar > 0.0 && alpha_bar <= 1.0)) throw std::invalid_argument("predict_x0: alpha_bar out of (0,1]");
    double inv_sa = 1.0 / std::sqrt(alpha_bar);
    double sn = std::sqrt(1.0 - alpha_bar);
    Tensor3<T> out(x_t.c, x_t.h, x_t.w);
    for (size_t i = 0; i < out.v.size(); ++i)
        out.v[i] = static_cast<T>((x_t.v[i] - sn * eps.v[i]) * inv_sa);
    return out;
}

/// Posterior mean in the eps parameterization:
/// mu~_t = (x_t - beta_t/sqrt(1-abar_t) * eps) / sqrt(alpha_t).
template <typename T>
Tensor3<T> posterior_mean(const Tensor3<T>& x_t, const Tensor3<T>& eps, int t, const NoiseSchedule& s) {
    if (t < 1 || t > s.T) throw std::invalid_argument("posterior_mean: t out of range");
    if (!x_t.same_shape(eps)) throw std::invalid_argument("posterior_mean: shape mismatch");
    double inv_sa = 1.0 / std::sqrt(s.alpha(t));
    double coef = s.beta(t) / std::sqrt(1.0 - s.alpha_bar(t));
    Tensor3<T> out(x_t.c, x_t.h, x_t.w);
    for (size_t i = 0; i < out.v.size(); ++i)
        out.v[i] = static_cast<T>(inv_sa * (x_t.v[i] - coef * eps.v[i]));
    return out;
}

/// Same posterior mean via the (x_t, x0_hat) parameterization; must agree with
/// the eps form to 1e-5 on any input (algebraic identity, tested).
template <typename T>
Tensor3<T> posterior_mean_from_x0(const Tensor3<T>& x_t, const Tensor3<T>& x0_hat, int t,
                                  const NoiseSchedule& s) {
    if (t < 1 || t > s.T) throw std::invalid_argument("posterior_mean_from_x0: t out of range");
    if (!x_t.same_shape(x0_hat)) throw std::invalid_argument("posterior_mean_from_x0: shape mismatch");
    double abar_t = s.alpha_bar(t);
    double abar_prev = s.alpha_bar(t - 1);
    double c0 = std::sqrt(abar_prev) * s.beta(t) / (1.0 - abar_t);
    double ct = std::sqrt(s.alpha(t)) * (1.0 - abar_prev) / (1.0 - abar_t);
    Tensor3<T> out(x_t.c, x_t.h, x_t.w);
    for (size_t i = 0; i < out.v.size(); ++i)
        out.v[i] = static_cast<T>(c0 * x0_hat.v[i] + ct * x_t.v[i]);
    return out;
}

/// One reverse update: x_{t-1} = mu~_t(x_t, eps_pred) + sqrt(beta~_t) z,
/// with z required to be zero at t = 1.
template <typename T>
Tensor3<T> reverse_step(const Tensor3<T>& x_t, const Tensor3<T>& eps_pred, int t, const Tensor3<T>& z,
                        const NoiseSchedule& s) {
    if (t < 1 || t > s.T) throw std::invalid_argument("reverse_step: t out of range");
    if (!x_t.same_shape(eps_pred) || !x_t.same_shape(z))
        throw std::invalid_argument("reverse_step: shape mismatch");
    if (t == 1) {
        for (T zi : z.v)
            if (zi != T(0)) throw std::invalid_argument("reverse_step: z must be zero at t = 1");
    }
    Tensor3<T> out = posterior_mean(x_t, eps_pred, t, s);
    double sigma = std::sqrt(s.posterior_var(t));
    if (sigma > 0.0)
        for (size_t i = 0; i < out.v.size(); ++i) out.v[i] += static_cast<T>(sigma * z.v[i]);
    return out;
}

}  // namespace dda::diffusion
