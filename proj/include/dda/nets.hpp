#pragma once

#include <cmath>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "dda/autodiff.hpp"
#include "dda/camera.hpp"
#include "dda/rng.hpp"
#include "dda/tensor.hpp"

namespace dda::nets {

using autodiff::NodeP;
using autodiff::Tape;

/// Flat list of named parameter tensors with deterministic iteration order.
/// Gradient and Adam moment buffers live alongside each value.
template <typename T>
struct ParamSet {
    struct Entry {
        std::string name;
        Tensor3<T> value;
        Tensor3<T> grad;
        Tensor3<T> m;
        Tensor3<T> v;
    };
    std::vector<Entry> entries;

    int add(std::string name, Tensor3<T> init) {
        Entry e;
        e.name = std::move(name);
        e.grad = Tensor3<T>(init.c, init.h, init.w, T(0));
        e.m = e.grad;
        e.v = e.grad;
        e.value = std::move(init);
        entries.push_back(std::move(e));
        return static_cast<int>(entries.size()) - 1;
    }

    size_t total_count() const {
        size_t n = 0;
        for (auto& e : entries) n += e.value.size();
        return n;
    }

    void zero_grads() {
        for (auto& e : entries) std::fill(e.grad.v.begin(), e.grad.v.end(), T(0));
    }

    bool all_finite_values() const {
        for (auto& e : entries)
            if (!all_finite(e.value)) return false;
        return true;
    }
};

/// Per-tape cache creating exactly one leaf per parameter, so a parameter used
/// in several places accumulates its gradient in a single node.
template <typename T>
class ParamLeaves {
  public:
    ParamLeaves(Tape<T>& tape, ParamSet<T>& ps, bool trainable)
        : tape_(tape), ps_(ps), trainable_(trainable), nodes_(ps.entries.size()) {}

    NodeP<T> operator[](int idx) {
        if (idx < 0 || idx >= static_cast<int>(ps_.entries.size()))
            throw std::out_of_range("ParamLeaves: bad index");
        if (nodes_.size() < ps_.entries.size()) nodes_.resize(ps_.entries.size());
        if (!nodes_[idx]) nodes_[idx] = tape_.leaf(ps_.entries[idx].value, trainable_);
        return nodes_[idx];
    }

    /// Adds accumulated leaf gradients into the ParamSet gradient buffers.
    void flush_grads() {
        if (!trainable_) return;
        for (size_t i = 0; i < nodes_.size(); ++i) {
            if (!nodes_[i]) continue;
            auto& g = ps_.entries[i].grad;
            for (size_t k = 0; k < g.v.size(); ++k) g.v[k] += nodes_[i]->grad.v[k];
        }
    }

  private:
    Tape<T>& tape_;
    ParamSet<T>& ps_;
    bool trainable_;
    std::vector<NodeP<T>> nodes_;
};

namespace init {

template <typename T>
Tensor3<T> he_conv(int cout, int cin, int k, Rng& rng) {
    Tensor3<T> w(cout, cin, k * k);
    double std = std::sqrt(2.0 / (static_cast<double>(cin) * k * k));
    for (auto& x : w.v) x = static_cast<T>(rng.normal() * std);
    return w;
}

template <typename T>
Tensor3<T> zeros(int c, int h = 1, int w = 1) {
    return Tensor3<T>(c, h, w, T(0));
}

template <typename T>
Tensor3<T> ones(int c) {
    return Tensor3<T>(c, 1, 1, T(1));
}

}  // namespace init

inline int pick_groups(int channels, int preferred) {
    for (int g : {preferred, 8, 4, 2, 1})
        if (g >= 1 && g <= channels && channels % g == 0) return g;
    return 1;
}

// ---------------------------------------------------------------------------
// One-Pass Network: encoder-decoder producing a two-channel rectification flow.
// ---------------------------------------------------------------------------

struct OPNConfig {
    int image_channels = 1;
    std::vector<int> enc_channels = {8, 8, 16, 32, 64, 128};
    std::vector<int> enc_strides = {1, 2, 1, 2, 1, 2};
    int kernel = 3;
    int norm_groups = 4;
    double leaky_slope = 0.1;
    double max_disp_frac = 0.30;  // flow bound as fraction of image width

    /// Channel widths from the paper's description, kept for reference runs.
    static OPNConfig paper() {
        OPNConfig c;
        c.enc_channels = {32, 32, 64, 128, 256, 512};
        c.enc_strides = {1, 2, 1, 2, 1, 2};
        return c;
    }

    void validate() const {
        if (enc_channels.empty() || enc_channels.size() != enc_strides.size())
            throw std::invalid_argument("OPNConfig: channels/strides length mismatch");
        for (int s : enc_strides)
            if (s != 1 && s != 2) throw std::invalid_argument("OPNConfig: strides must be 1 or 2");
        if (kernel % 2 == 0 || kernel < 1) throw std::invalid_argument("OPNConfig: kernel must be odd");
        if (!(max_disp_frac > 0.0)) throw std::invalid_argument("OPNConfig: max_disp_frac must be > 0");
    }

    int downsample_factor() const {
        int f = 1;
        for (int s : enc_strides) f *= s;
        return f;
    }
};

/// Parameter indices for one OPN instance inside a ParamSet.
struct OPNLayout {
    OPNConfig cfg;
    struct ConvIdx {
        int w = -1, b = -1, gn_g = -1, gn_b = -1;
    };
    std::vector<ConvIdx> enc;
    std::vector<ConvIdx> dec;
    int head_w = -1, head_b = -1;
};

template <typename T>
OPNLayout build_opn(ParamSet<T>& ps, const OPNConfig& cfg, Rng& rng, const std::string& prefix = "opn") {
    cfg.validate();
    OPNLayout L;
    L.cfg = cfg;
    const int k = cfg.kernel;
    int prev = cfg.image_channels;
    for (size_t i = 0; i < cfg.enc_channels.size(); ++i) {
        int ch = cfg.enc_channels[i];
        OPNLayout::ConvIdx ci;
        std::string nm = prefix + ".enc" + std::to_string(i);
        ci.w = ps.add(nm + ".w", init::he_conv<T>(ch, prev, k, rng));
        ci.b = ps.add(nm + ".b", init::zeros<T>(ch));
        ci.gn_g = ps.add(nm + ".gn_g", init::ones<T>(ch));
        ci.gn_b = ps.add(nm + ".gn_b", init::zeros<T>(ch));
        L.enc.push_back(ci);
        prev = ch;
    }
    const int n = static_cast<int>(cfg.enc_channels.size());
    for (int i = n - 1; i >= 0; --i) {
        int out_ch = (i == 0) ? cfg.enc_channels[0] : cfg.enc_channels[i - 1];
        OPNLayout::ConvIdx ci;
        std::string nm = prefix + ".dec" + std::to_string(i);
        ci.w = ps.add(nm + ".w", init::he_conv<T>(out_ch, prev, k, rng));
        ci.b = ps.add(nm + ".b", init::zeros<T>(out_ch));
        ci.gn_g = ps.add(nm + ".gn_g", init::ones<T>(out_ch));
        ci.gn_b = ps.add(nm + ".gn_b", init::zeros<T>(out_ch));
        L.dec.push_back(ci);
        prev = out_ch;
    }
    // Zero-initialized head: training starts from the identity correction.
    L.head_w = ps.add(prefix + ".head.w", init::zeros<T>(2, prev, k * k));
    L.head_b = ps.add(prefix + ".head.b", init::zeros<T>(2));
    return L;
}

/// Flow prediction: bounded by tanh and scaled to max_disp_frac * width pixels.
template <typename T>
NodeP<T> opn_flow(Tape<T>& tape, ParamLeaves<T>& pl, const OPNLayout& L, const NodeP<T>& image) {
    const OPNConfig& cfg = L.cfg;
    if (image->val.c != cfg.image_channels) throw std::invalid_argument("opn_flow: channel mismatch");
    if (image->val.h != image->val.w) throw std::invalid_argument("opn_flow: input must be square");
    if (image->val.h % cfg.downsample_factor() != 0)
        throw std::invalid_argument("opn_flow: size not divisible by downsample factor");

    NodeP<T> h = image;
    for (size_t i = 0; i < L.enc.size(); ++i) {
        const auto& ci = L.enc[i];
        h = tape.conv2d(h, pl[ci.w], pl[ci.b], cfg.enc_strides[i]);
        h = tape.group_norm(h, pl[ci.gn_g], pl[ci.gn_b], pick_groups(h->val.c, cfg.norm_groups));
        h = tape.leaky_relu(h, cfg.leaky_slope);
    }
    const int n = static_cast<int>(L.enc.size());
    for (int j = 0; j < n; ++j) {
        int i = n - 1 - j;  // mirrored encoder layer
        const auto& ci = L.dec[j];
        if (cfg.enc_strides[i] == 2) h = tape.upsample2(h);
        h = tape.conv2d(h, pl[ci.w], pl[ci.b], 1);
        h = tape.group_norm(h, pl[ci.gn_g], pl[ci.gn_b], pick_groups(h->val.c, cfg.norm_groups));
        h = tape.leaky_relu(h, cfg.leaky_slope);
    }
    h = tape.conv2d(h, pl[L.head_w], pl[L.head_b], 1);
    h = tape.tanh_op(h);
    return tape.scale(h, cfg.max_disp_frac * image->val.w);
}

/// C = warp(F, OPN(F)); the only training-signal path into the OPN.
template <typename T>
NodeP<T> opn_correct(Tape<T>& tape, ParamLeaves<T>& pl, const OPNLayout& L, const NodeP<T>& image) {
    return tape.warp(image, opn_flow(tape, pl, L, image));
}

/// Converts a flow tensor (2,H,W, pixel units) into a FlowField with the
/// validity mask derived from the displaced sample locations.
template <typename T>
FlowField<T> to_flow_field(const Tensor3<T>& flow) {
    if (flow.c != 2) throw std::invalid_argument("to_flow_field: expected 2 channels");
    FlowField<T> f(flow.h, flow.w);
    f.data = flow;
    for (int y = 0; y < flow.h; ++y)
        for (int x = 0; x < flow.w; ++x) {
            double sx = x + static_cast<double>(flow(0, y, x));
            double sy = y + static_cast<double>(flow(1, y, x));
            bool inside = sx >= -camera::kEdgeEps && sx <= flow.w - 1.0 + camera::kEdgeEps &&
                          sy >= -camera::kEdgeEps && sy <= flow.h - 1.0 + camera::kEdgeEps;
            f.valid_at(y, x) = inside ? 1 : 0;
        }
    return f;
}

// ---------------------------------------------------------------------------
// Denoisers: U-Net epsilon predictors with sinusoidal noise-level conditioning
// injected per residual block by feature-wise affine modulation.
// ---------------------------------------------------------------------------

struct DenoiserConfig {
    int image_channels = 1;
    int in_stacks = 3;  // conditional: noisy + two condition stacks; unconditional: 2
    std::vector<int> widths = {16, 32, 64};
    int blocks_per_scale = 1;
    int emb_dim = 32;
    int norm_groups = 4;
    int kernel = 3;

    /// Scale widths from the paper's description, kept for reference runs.
    static DenoiserConfig paper(int in_stacks) {
        DenoiserConfig c;
        c.widths = {64, 128, 256, 512};
        c.in_stacks = in_stacks;
        c.emb_dim = 128;
        c.blocks_per_scale = 2;
        return c;
    }

    void validate() const {
        if (widths.empty()) throw std::invalid_argument("DenoiserConfig: no scales");
        if (in_stacks < 1) throw std::invalid_argument("DenoiserConfig: in_stacks must be >= 1");
        if (blocks_per_scale < 1) throw std::invalid_argument("DenoiserConfig: blocks_per_scale >= 1");
        if (emb_dim < 4 || emb_dim % 2 != 0) throw std::invalid_argument("DenoiserConfig: emb_dim even, >= 4");
        if (kernel % 2 == 0) throw std::invalid_argument("DenoiserConfig: kernel must be odd");
    }

    int scales() const { return static_cast<int>(widths.size()); }
    int emb_hidden() const { return 2 * emb_dim; }
};

struct ResBlockIdx {
    int gn1_g = -1, gn1_b = -1, conv1_w = -1, conv1_b = -1;
    int film_w = -1, film_b = -1;
    int gn2_g = -1, gn2_b = -1, conv2_w = -1, conv2_b = -1;
    int skip_w = -1, skip_b = -1;  // only when channel count changes
};

struct DenoiserLayout {
    DenoiserConfig cfg;
    int emb_fc1_w = -1, emb_fc1_b = -1, emb_fc2_w = -1, emb_fc2_b = -1;
    int stem_w = -1, stem_b = -1;
    std::vector<std::vector<ResBlockIdx>> down;  // per scale
    std::vector<int> down_conv_w, down_conv_b;   // between scales
    ResBlockIdx mid;
    std::vector<int> up_conv_w, up_conv_b;       // after upsample, per ascent
    std::vector<ResBlockIdx> up_block;           // one fusion block per ascent
    int tail_gn_g = -1, tail_gn_b = -1, out_w = -1, out_b = -1;
};

namespace detail {

template <typename T>
ResBlockIdx add_res_block(ParamSet<T>& ps, const DenoiserConfig& cfg, int cin, int cout, Rng& rng,
                          const std::string& nm) {
    ResBlockIdx r;
    r.gn1_g = ps.add(nm + ".gn1_g", init::ones<T>(cin));
    r.gn1_b = ps.add(nm + ".gn1_b", init::zeros<T>(cin));
    r.conv1_w = ps.add(nm + ".conv1_w", init::he_conv<T>(cout, cin, cfg.kernel, rng));
    r.conv1_b = ps.add(nm + ".conv1_b", init::zeros<T>(cout));
    r.film_w = ps.add(nm + ".film_w", init::he_conv<T>(2 * cout, cfg.emb_hidden(), 1, rng));
    r.film_b = ps.add(nm + ".film_b", init::zeros<T>(2 * cout));
    r.gn2_g = ps.add(nm + ".gn2_g", init::ones<T>(cout));
    r.gn2_b = ps.add(nm + ".gn2_b", init::zeros<T>(cout));
    r.conv2_w = ps.add(nm + ".conv2_w", init::he_conv<T>(cout, cout, cfg.kernel, rng));
    r.conv2_b = ps.add(nm + ".conv2_b", init::zeros<T>(cout));
    if (cin != cout) {
        r.skip_w = ps.add(nm + ".skip_w", init::he_conv<T>(cout, cin, 1, rng));
        r.skip_b = ps.add(nm + ".skip_b", init::zeros<T>(cout));
    }
    return r;
}

template <typename T>
NodeP<T> res_block(Tape<T>& tape, ParamLeaves<T>& pl, const DenoiserConfig& cfg, const ResBlockIdx& r,
                   const NodeP<T>& x, const NodeP<T>& emb) {
    NodeP<T> h = tape.group_norm(x, pl[r.gn1_g], pl[r.gn1_b], pick_groups(x->val.c, cfg.norm_groups));
    h = tape.silu(h);
    h = tape.conv2d(h, pl[r.conv1_w], pl[r.conv1_b], 1);
    NodeP<T> mod = tape.conv2d(emb, pl[r.film_w], pl[r.film_b], 1);
    h = tape.film(h, mod);
    h = tape.group_norm(h, pl[r.gn2_g], pl[r.gn2_b], pick_groups(h->val.c, cfg.norm_groups));
    h = tape.silu(h);
    h = tape.conv2d(h, pl[r.conv2_w], pl[r.conv2_b], 1);
    NodeP<T> skip = x;
    if (r.skip_w >= 0) skip = tape.conv2d(x, pl[r.skip_w], pl[r.skip_b], 1);
    return tape.add(skip, h);
}

}  // namespace detail

template <typename T>
DenoiserLayout build_denoiser(ParamSet<T>& ps, const DenoiserConfig& cfg, Rng& rng,
                              const std::string& prefix) {
    cfg.validate();
    DenoiserLayout L;
    L.cfg = cfg;
    const int k = cfg.kernel;
    L.emb_fc1_w = ps.add(prefix + ".emb_fc1_w", init::he_conv<T>(cfg.emb_hidden(), cfg.emb_dim, 1, rng));
    L.emb_fc1_b = ps.add(prefix + ".emb_fc1_b", init::zeros<T>(cfg.emb_hidden()));
    L.emb_fc2_w = ps.add(prefix + ".emb_fc2_w", init::he_conv<T>(cfg.emb_hidden(), cfg.emb_hidden(), 1, rng));
    L.emb_fc2_b = ps.add(prefix + ".emb_fc2_b", init::zeros<T>(cfg.emb_hidden()));

    const int cin = cfg.in_stacks * cfg.image_channels;
    L.stem_w = ps.add(prefix + ".stem_w", init::he_conv<T>(cfg.widths[0], cin, k, rng));
    L.stem_b = ps.add(prefix + ".stem_b", init::zeros<T>(cfg.widths[0]));

    const int S = cfg.scales();
    for (int s = 0; s < S; ++s) {
        std::vector<ResBlockIdx> blocks;
        for (int b = 0; b < cfg.blocks_per_scale; ++b)
            blocks.push_back(detail::add_res_block(ps, cfg, cfg.widths[s], cfg.widths[s], rng,
                                                   prefix + ".down" + std::to_string(s) + "_" + std::to_string(b)));
        L.down.push_back(std::move(blocks));
        if (s + 1 < S) {
            L.down_conv_w.push_back(
                ps.add(prefix + ".dsconv" + std::to_string(s) + "_w", init::he_conv<T>(cfg.widths[s + 1], cfg.widths[s], k, rng)));
            L.down_conv_b.push_back(ps.add(prefix + ".dsconv" + std::to_string(s) + "_b", init::zeros<T>(cfg.widths[s + 1])));
        }
    }
    L.mid = detail::add_res_block(ps, cfg, cfg.widths[S - 1], cfg.widths[S - 1], rng, prefix + ".mid");
    for (int s = S - 1; s >= 1; --s) {
        L.up_conv_w.push_back(
            ps.add(prefix + ".usconv" + std::to_string(s) + "_w", init::he_conv<T>(cfg.widths[s - 1], cfg.widths[s], k, rng)));
        L.up_conv_b.push_back(ps.add(prefix + ".usconv" + std::to_string(s) + "_b", init::zeros<T>(cfg.widths[s - 1])));
        L.up_block.push_back(detail::add_res_block(ps, cfg, 2 * cfg.widths[s - 1], cfg.widths[s - 1], rng,
                                                   prefix + ".up" + std::to_string(s)));
    }
    L.tail_gn_g = ps.add(prefix + ".tail_gn_g", init::ones<T>(cfg.widths[0]));
    L.tail_gn_b = ps.add(prefix + ".tail_gn_b", init::zeros<T>(cfg.widths[0]));
    // Zero-initialized output: the untrained denoiser predicts eps = 0.
    L.out_w = ps.add(prefix + ".out_w", init::zeros<T>(cfg.image_channels, cfg.widths[0], k * k));
    L.out_b = ps.add(prefix + ".out_b", init::zeros<T>(cfg.image_channels));
    return L;
}

/// Sinusoidal features of the continuous noise level sqrt(alpha_bar).
template <typename T>
Tensor3<T> noise_level_embedding(double sqrt_alpha_bar, int dim) {
    Tensor3<T> e(dim, 1, 1);
    int half = dim / 2;
    for (int i = 0; i < half; ++i) {
        double freq = std::pow(10.0, 4.0 * i / std::max(1, half - 1));
        double arg = sqrt_alpha_bar * freq;
        e.v[i] = static_cast<T>(std::sin(arg));
        e.v[half + i] = static_cast<T>(std::cos(arg));
    }
    return e;
}

/// U-Net forward pass. `inputs` are channel-concatenated in order; their stack
/// count must match the config (conditional: noisy + 2 conditions; unconditional:
/// noisy real + companion). Output has the noisy input's channel count.
template <typename T>
NodeP<T> denoiser_forward(Tape<T>& tape, ParamLeaves<T>& pl, const DenoiserLayout& L,
                          const std::vector<NodeP<T>>& inputs, double sqrt_alpha_bar) {
    const DenoiserConfig& cfg = L.cfg;
    if (static_cast<int>(inputs.size()) != cfg.in_stacks)
        throw std::invalid_argument("denoiser_forward: wrong number of input stacks");
    for (auto& in : inputs)
        if (in->val.c != cfg.image_channels) throw std::invalid_argument("denoiser_forward: channel mismatch");
    const int size = inputs[0]->val.h;
    if (size % (1 << (cfg.scales() - 1)) != 0)
        throw std::invalid_argument("denoiser_forward: size not divisible by 2^(scales-1)");

    NodeP<T> emb = tape.constant(noise_level_embedding<T>(sqrt_alpha_bar, cfg.emb_dim));
    emb = tape.conv2d(emb, pl[L.emb_fc1_w], pl[L.emb_fc1_b], 1);
    emb = tape.silu(emb);
    emb = tape.conv2d(emb, pl[L.emb_fc2_w], pl[L.emb_fc2_b], 1);
    emb = tape.silu(emb);

    NodeP<T> h = tape.concat(inputs);
    h = tape.conv2d(h, pl[L.stem_w], pl[L.stem_b], 1);

    const int S = cfg.scales();
    std::vector<NodeP<T>> skips;
    for (int s = 0; s < S; ++s) {
        for (const auto& blk : L.down[s]) h = detail::res_block(tape, pl, cfg, blk, h, emb);
        if (s + 1 < S) {
            skips.push_back(h);
            h = tape.conv2d(h, pl[L.down_conv_w[s]], pl[L.down_conv_b[s]], 2);
        }
    }
    h = detail::res_block(tape, pl, cfg, L.mid, h, emb);
    for (size_t j = 0; j < L.up_block.size(); ++j) {
        h = tape.upsample2(h);
        h = tape.conv2d(h, pl[L.up_conv_w[j]], pl[L.up_conv_b[j]], 1);
        h = tape.concat({h, skips[skips.size() - 1 - j]});
        h = detail::res_block(tape, pl, cfg, L.up_block[j], h, emb);
    }
    h = tape.group_norm(h, pl[L.tail_gn_g], pl[L.tail_gn_b], pick_groups(h->val.c, cfg.norm_groups));
    h = tape.silu(h);
    return tape.conv2d(h, pl[L.out_w], pl[L.out_b], 1);
}

/// Conditional denoiser S_theta: predicts eps from (noisy ' C_s ' C_r) plus the
/// continuous noise level.
template <typename T>
NodeP<T> cond_denoise(Tape<T>& tape, ParamLeaves<T>& pl, const DenoiserLayout& L, const NodeP<T>& noisy,
                      double sqrt_alpha_bar, const NodeP<T>& cond_a, const NodeP<T>& cond_b) {
    return denoiser_forward(tape, pl, L, {noisy, cond_a, cond_b}, sqrt_alpha_bar);
}

/// Unconditional denoiser R_theta: predicts the shared eps from the noisy real
/// image and its noisy companion input.
template <typename T>
NodeP<T> uncond_denoise(Tape<T>& tape, ParamLeaves<T>& pl, const DenoiserLayout& L,
                        const NodeP<T>& noisy_real, const NodeP<T>& noisy_companion, double sqrt_alpha_bar) {
    return denoiser_forward(tape, pl, L, {noisy_real, noisy_companion}, sqrt_alpha_bar);
}

}  // namespace dda::nets
