#pragma once

#include <functional>
#include <optional>
#include <stdexcept>
#include <string>

#include "dda/diffusion.hpp"
#include "dda/nets.hpp"
#include "dda/rng.hpp"
#include "dda/training.hpp"

namespace dda::inference {

enum class SlotPolicy { Duplicate, CrossDomain };

/// Fills the conditional denoiser's two condition slots. Duplicate passes the
/// target's own one-pass correction twice; CrossDomain keeps the target's
/// correction in its training-time slot and a fixed domain-representative
/// correction in the other.
template <typename T>
std::pair<Tensor3<T>, Tensor3<T>> condition_slots(const Tensor3<T>& c_target, SlotPolicy policy,
                                                  const Tensor3<T>* cross_reference = nullptr) {
    if (policy == SlotPolicy::Duplicate) return {c_target, c_target};
    if (!cross_reference) throw std::invalid_argument("condition_slots: CrossDomain needs a reference");
    return {c_target, *cross_reference};
}

/// Instantaneous correction: a single OPN forward pass, no sampling.
template <typename T>
Tensor3<T> one_pass_correct(const Tensor3<T>& fisheye, training::TrainState<T>& state) {
    if (!state.has_opn()) throw std::invalid_argument("one_pass_correct: checkpoint has no one-pass network");
    if (fisheye.h != state.cfg.image_size || fisheye.w != state.cfg.image_size ||
        fisheye.c != state.cfg.channels)
        throw std::invalid_argument("one_pass_correct: input size does not match checkpoint config");
    return training::run_one_pass(state, fisheye);
}

/// The flow itself, with validity mask, for inspection and figures.
template <typename T>
FlowField<T> one_pass_flow(const Tensor3<T>& fisheye, training::TrainState<T>& state) {
    if (!state.has_opn()) throw std::invalid_argument("one_pass_flow: checkpoint has no one-pass network");
    autodiff::Tape<T> tape;
    nets::ParamLeaves<T> pl(tape, state.opn_ps, false);
    auto in = tape.constant(fisheye);
    auto flow = nets::opn_flow(tape, pl, state.opn, in);
    return nets::to_flow_field(flow->val);
}

template <typename T>
using DenoiseFn = std::function<Tensor3<T>(const Tensor3<T>& x_t, double sqrt_alpha_bar, int t)>;

/// Reverse chain driver: draws x_start ~ N(0, I) element by element (c, y, x
/// order), then runs reverse_step from t = steps down to 1 with z = 0 at t = 1.
/// steps = 0 returns the clamped Gaussian draw (plumbing degenerate).
template <typename T>
Tensor3<T> reverse_chain(const DenoiseFn<T>& denoise, const diffusion::NoiseSchedule& schedule, int channels,
                         int size, Rng& rng, int steps) {
    if (steps < 0 || steps > schedule.T) throw std::invalid_argument("reverse_chain: steps out of range");
    Tensor3<T> x = random_normal<T>(channels, size, size, rng);
    for (int t = steps; t >= 1; --t) {
        double sqrt_abar = std::sqrt(schedule.alpha_bar(t));
        Tensor3<T> eps_hat = denoise(x, sqrt_abar, t);
        Tensor3<T> z(channels, size, size, T(0));
        if (t > 1)
            for (auto& zi : z.v) zi = static_cast<T>(rng.normal());
        x = diffusion::reverse_step(x, eps_hat, t, z, schedule);
        if (!all_finite(x))
            throw std::runtime_error("reverse_chain: non-finite latent at step t=" + std::to_string(t));
    }
    clamp_unit(x);
    return x;
}

/// Iterative correction (Algorithm-2 style): one-pass correct the input, fill
/// both condition slots, then denoise a Gaussian latent down the full chain.
template <typename T>
Tensor3<T> iterative_correct(const Tensor3<T>& fisheye, scenes::Domain /*domain*/,
                             training::TrainState<T>& state, Rng& rng, int steps = -1,
                             SlotPolicy policy = SlotPolicy::Duplicate,
                             const Tensor3<T>* cross_reference = nullptr) {
    const auto& cfg = state.cfg;
    if (fisheye.h != cfg.image_size || fisheye.w != cfg.image_size || fisheye.c != cfg.channels)
        throw std::invalid_argument("iterative_correct: input size does not match checkpoint config");
    if (steps < 0) steps = cfg.T;

    Tensor3<T> c_target = state.has_opn() ? training::run_one_pass(state, fisheye) : fisheye;
    auto [slot_a, slot_b] = condition_slots(c_target, policy, cross_reference);

    DenoiseFn<T> denoise = [&](const Tensor3<T>& x_t, double sqrt_abar, int /*t*/) {
        autodiff::Tape<T> tape;
        nets::ParamLeaves<T> pl(tape, state.cond_ps, false);
        auto noisy = tape.constant(x_t);
        auto a = tape.constant(slot_a);
        auto b = tape.constant(slot_b);
        auto out = nets::cond_denoise(tape, pl, state.cond, noisy, sqrt_abar, a, b);
        return out->val;
    };
    return reverse_chain(denoise, state.schedule, cfg.channels, cfg.image_size, rng, steps);
}

}  // namespace dda::inference
