#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "dda/diffusion.hpp"
#include "dda/metrics.hpp"
#include "dda/nets.hpp"
#include "dda/rng.hpp"
#include "dda/scenes.hpp"

namespace dda::training {

enum class LossMode { SumOfL1, CombinedResidual };
enum class SecondInput { NoisyPerspective, NoisyFisheye };
enum class Arch { CDM, CDM_OPN, DDA };

inline const char* loss_mode_name(LossMode m) { return m == LossMode::SumOfL1 ? "sum_of_l1" : "combined_residual"; }
inline const char* second_input_name(SecondInput s) {
    return s == SecondInput::NoisyPerspective ? "noisy_perspective" : "noisy_fisheye";
}
inline const char* arch_name(Arch a) {
    switch (a) {
        case Arch::CDM: return "cdm";
        case Arch::CDM_OPN: return "cdm_opn";
        default: return "dda";
    }
}

struct TrainConfig {
    // schedule
    int T = 50;
    double beta_start = 1e-4;
    double beta_end = 0.02;
    // optimization
    int batch_size = 2;
    double lr = 1e-4;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    double grad_clip = 0.0;  // global-norm clip, 0 disables
    int total_steps = 5000;
    int checkpoint_every = 1000;
    int val_every = 250;
    int val_count = 32;
    uint64_t seed = 1;
    // variants
    LossMode loss_mode = LossMode::SumOfL1;
    SecondInput uncond_second_input = SecondInput::NoisyPerspective;
    Arch arch = Arch::DDA;
    bool shared_eps = true;  // one eps for both branches (Algorithm-1 reading)
    // data/geometry
    int image_size = 32;
    int channels = 1;
    // networks
    nets::OPNConfig opn;
    nets::DenoiserConfig denoiser;  // in_stacks is forced per role below

    void validate() const {
        if (batch_size < 1) throw std::invalid_argument("TrainConfig: batch_size must be >= 1");
        if (!(lr > 0.0)) throw std::invalid_argument("TrainConfig: learning rate must be > 0");
        if (total_steps < 0) throw std::invalid_argument("TrainConfig: negative step budget");
        if (loss_mode == LossMode::CombinedResidual && arch != Arch::DDA)
            throw std::invalid_argument("TrainConfig: combined residual needs both branches");
        opn.validate();
        denoiser.validate();
    }

    nets::DenoiserConfig cond_config() const {
        nets::DenoiserConfig c = denoiser;
        c.image_channels = channels;
        c.in_stacks = 3;
        return c;
    }
    nets::DenoiserConfig uncond_config() const {
        nets::DenoiserConfig c = denoiser;
        c.image_channels = channels;
        c.in_stacks = 2;
        return c;
    }
    nets::OPNConfig opn_config() const {
        nets::OPNConfig c = opn;
        c.image_channels = channels;
        return c;
    }
};

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
    j = nlohmann::json{{"T", c.T},
                       {"beta_start", c.beta_start},
                       {"beta_end", c.beta_end},
                       {"batch_size", c.batch_size},
                       {"lr", c.lr},
                       {"adam_beta1", c.adam_beta1},
                       {"adam_beta2", c.adam_beta2},
                       {"adam_eps", c.adam_eps},
                       {"grad_clip", c.grad_clip},
                       {"total_steps", c.total_steps},
                       {"checkpoint_every", c.checkpoint_every},
                       {"val_every", c.val_every},
                       {"val_count", c.val_count},
                       {"seed", c.seed},
                       {"loss_mode", loss_mode_name(c.loss_mode)},
                       {"uncond_second_input", second_input_name(c.uncond_second_input)},
                       {"arch", arch_name(c.arch)},
                       {"shared_eps", c.shared_eps},
                       {"image_size", c.image_size},
                       {"channels", c.channels},
                       {"opn_channels", c.opn.enc_channels},
                       {"opn_strides", c.opn.enc_strides},
                       {"opn_max_disp_frac", c.opn.max_disp_frac},
                       {"denoiser_widths", c.denoiser.widths},
                       {"denoiser_blocks", c.denoiser.blocks_per_scale},
                       {"denoiser_emb_dim", c.denoiser.emb_dim}};
}

inline void from_json(const nlohmann::json& j, TrainConfig& c) {
    c = TrainConfig{};
    auto get = [&](const char* key, auto& field) {
        if (j.contains(key)) j.at(key).get_to(field);
    };
    get("T", c.T);
    get("beta_start", c.beta_start);
    get("beta_end", c.beta_end);
    get("batch_size", c.batch_size);
    get("lr", c.lr);
    get("adam_beta1", c.adam_beta1);
    get("adam_beta2", c.adam_beta2);
    get("adam_eps", c.adam_eps);
    get("grad_clip", c.grad_clip);
    get("total_steps", c.total_steps);
    get("checkpoint_every", c.checkpoint_every);
    get("val_every", c.val_every);
    get("val_count", c.val_count);
    get("seed", c.seed);
    get("shared_eps", c.shared_eps);
    get("image_size", c.image_size);
    get("channels", c.channels);
    get("opn_channels", c.opn.enc_channels);
    get("opn_strides", c.opn.enc_strides);
    get("opn_max_disp_frac", c.opn.max_disp_frac);
    get("denoiser_widths", c.denoiser.widths);
    get("denoiser_blocks", c.denoiser.blocks_per_scale);
    get("denoiser_emb_dim", c.denoiser.emb_dim);
    if (j.contains("loss_mode"))
        c.loss_mode = j.at("loss_mode") == "combined_residual" ? LossMode::CombinedResidual : LossMode::SumOfL1;
    if (j.contains("uncond_second_input"))
        c.uncond_second_input = j.at("uncond_second_input") == "noisy_fisheye" ? SecondInput::NoisyFisheye
                                                                               : SecondInput::NoisyPerspective;
    if (j.contains("arch")) {
        std::string a = j.at("arch");
        c.arch = a == "cdm" ? Arch::CDM : (a == "cdm_opn" ? Arch::CDM_OPN : Arch::DDA);
    }
}

inline uint64_t config_hash(const TrainConfig& c) {
    nlohmann::json j = c;
    return fnv1a64(j.dump());
}

/// Hash for resume compatibility: everything except the step budget, so an
/// interrupted run can be extended or finished under the same config.
inline uint64_t resume_hash(const TrainConfig& c) {
    nlohmann::json j = c;
    j.erase("total_steps");
    return fnv1a64(j.dump());
}

/// In-memory training data. SimReal entries carry no labels by construction
/// of scenes::TrainSample.
struct Dataset {
    std::vector<scenes::TrainSample> synthetic;
    std::vector<scenes::TrainSample> simreal;
    std::vector<scenes::TrainSample> val_synthetic;  // held-out, labels present
};

inline Dataset load_dataset(const std::string& data_dir) {
    Dataset d;
    d.synthetic = scenes::load_training_split(data_dir, "train", scenes::Domain::Synthetic);
    d.simreal = scenes::load_training_split(data_dir, "train", scenes::Domain::SimReal);
    d.val_synthetic = scenes::load_training_split(data_dir, "test", scenes::Domain::Synthetic);
    return d;
}

template <typename T>
struct TrainState {
    TrainConfig cfg;
    diffusion::NoiseSchedule schedule;
    nets::ParamSet<T> opn_ps, cond_ps, uncond_ps;
    nets::OPNLayout opn;
    nets::DenoiserLayout cond, uncond;
    long step = 0;
    Rng data_rng, noise_rng;
    double running_loss_sum = 0.0;

    bool has_opn() const { return cfg.arch != Arch::CDM; }
    bool has_uncond() const { return cfg.arch == Arch::DDA; }
};

template <typename T>
TrainState<T> init_state(const TrainConfig& cfg) {
    cfg.validate();
    TrainState<T> s;
    s.cfg = cfg;
    s.schedule = diffusion::make_schedule(cfg.T, cfg.beta_start, cfg.beta_end);
    Rng init_rng = named_stream(cfg.seed, "init");
    if (s.has_opn()) s.opn = nets::build_opn(s.opn_ps, cfg.opn_config(), init_rng, "opn");
    s.cond = nets::build_denoiser(s.cond_ps, cfg.cond_config(), init_rng, "cond");
    if (s.has_uncond()) s.uncond = nets::build_denoiser(s.uncond_ps, cfg.uncond_config(), init_rng, "uncond");
    s.data_rng = named_stream(cfg.seed, "data");
    s.noise_rng = named_stream(cfg.seed, "noise");
    return s;
}

struct LossReport {
    double l_syn = 0.0;
    double l_real = 0.0;
    double total = 0.0;
};

struct BatchItem {
    const scenes::TrainSample* syn = nullptr;   // fisheye + target
    const scenes::TrainSample* real = nullptr;  // fisheye only (DDA)
    int syn_index = 0;
    int real_index = 0;
};

template <typename T>
std::vector<BatchItem> assemble_batch(TrainState<T>& s, const Dataset& data) {
    if (data.synthetic.empty()) throw std::invalid_argument("assemble_batch: no synthetic pairs");
    if (s.has_uncond() && data.simreal.empty()) throw std::invalid_argument("assemble_batch: no simreal images");
    std::vector<BatchItem> batch;
    for (int b = 0; b < s.cfg.batch_size; ++b) {
        BatchItem it;
        it.syn_index = static_cast<int>(s.data_rng.uniform_int(static_cast<uint32_t>(data.synthetic.size())));
        it.syn = &data.synthetic[it.syn_index];
        if (s.has_uncond()) {
            it.real_index = static_cast<int>(s.data_rng.uniform_int(static_cast<uint32_t>(data.simreal.size())));
            it.real = &data.simreal[it.real_index];
        }
        batch.push_back(it);
    }
    return batch;
}

namespace detail {

template <typename T>
void clip_global_norm(std::vector<nets::ParamSet<T>*> sets, double max_norm) {
    double sq = 0.0;
    for (auto* ps : sets)
        for (auto& e : ps->entries)
            for (T g : e.grad.v) sq += static_cast<double>(g) * g;
    double norm = std::sqrt(sq);
    if (norm <= max_norm || norm == 0.0) return;
    double scale = max_norm / norm;
    for (auto* ps : sets)
        for (auto& e : ps->entries)
            for (T& g : e.grad.v) g = static_cast<T>(g * scale);
}

template <typename T>
void adam_step(std::vector<nets::ParamSet<T>*> sets, const TrainConfig& cfg, long step_1based) {
    if (cfg.grad_clip > 0.0) clip_global_norm(sets, cfg.grad_clip);
    double bc1 = 1.0 - std::pow(cfg.adam_beta1, static_cast<double>(step_1based));
    double bc2 = 1.0 - std::pow(cfg.adam_beta2, static_cast<double>(step_1based));
    for (auto* ps : sets) {
        for (auto& e : ps->entries) {
            for (size_t i = 0; i < e.value.v.size(); ++i) {
                double g = e.grad.v[i];
                double m = cfg.adam_beta1 * e.m.v[i] + (1.0 - cfg.adam_beta1) * g;
                double v = cfg.adam_beta2 * e.v.v[i] + (1.0 - cfg.adam_beta2) * g * g;
                e.m.v[i] = static_cast<T>(m);
                e.v.v[i] = static_cast<T>(v);
                double update = cfg.lr * (m / bc1) / (std::sqrt(v / bc2) + cfg.adam_eps);
                e.value.v[i] = static_cast<T>(e.value.v[i] - update);
            }
        }
        ps->zero_grads();
        if (!ps->all_finite_values())
            throw std::runtime_error("adam_step: non-finite parameter after update");
    }
}

}  // namespace detail

/// One joint optimization step over OPN, S_theta and R_theta:
/// one-pass corrections, a single shared (t, eps) draw, dual L1 noise losses,
/// then one Adam update across every trainable parameter.
template <typename T>
LossReport training_step(TrainState<T>& s, const Dataset& data) {
    const TrainConfig& cfg = s.cfg;
    std::vector<BatchItem> batch = assemble_batch(s, data);

    autodiff::Tape<T> tape;
    nets::ParamLeaves<T> opn_pl(tape, s.opn_ps, true);
    nets::ParamLeaves<T> cond_pl(tape, s.cond_ps, true);
    nets::ParamLeaves<T> uncond_pl(tape, s.uncond_ps, true);

    autodiff::NodeP<T> l_syn_sum, l_real_sum, total_sum;
    for (const BatchItem& it : batch) {
        if (!it.syn->target) throw std::invalid_argument("training_step: synthetic sample lacks target");
        auto fisheye_s = tape.constant(it.syn->fisheye.template cast<T>());
        auto persp_s = tape.constant(it.syn->target->template cast<T>());

        autodiff::NodeP<T> cond_a, cond_b;
        autodiff::NodeP<T> fisheye_r;
        if (cfg.arch == Arch::CDM) {
            cond_a = fisheye_s;
            cond_b = fisheye_s;
        } else {
            auto c_s = nets::opn_correct(tape, opn_pl, s.opn, fisheye_s);
            cond_a = c_s;
            if (cfg.arch == Arch::CDM_OPN) {
                cond_b = c_s;
            } else {
                fisheye_r = tape.constant(it.real->fisheye.template cast<T>());
                cond_b = nets::opn_correct(tape, opn_pl, s.opn, fisheye_r);
            }
        }

        int t = 1 + static_cast<int>(s.noise_rng.uniform_int(static_cast<uint32_t>(cfg.T)));
        double abar = diffusion::sample_noise_level(s.schedule, t, s.noise_rng);
        double sqrt_abar = std::sqrt(abar);
        Tensor3<T> eps = random_normal<T>(cfg.channels, cfg.image_size, cfg.image_size, s.noise_rng);

        auto eps_node = tape.constant(eps);
        auto noisy_syn = tape.constant(diffusion::q_sample(persp_s->val, abar, eps));
        auto eps_hat_s = nets::cond_denoise(tape, cond_pl, s.cond, noisy_syn, sqrt_abar, cond_a, cond_b);

        autodiff::NodeP<T> eps_hat_r, eps_real_node;
        if (s.has_uncond()) {
            Tensor3<T> eps_real = eps;
            if (!cfg.shared_eps)
                eps_real = random_normal<T>(cfg.channels, cfg.image_size, cfg.image_size, s.noise_rng);
            eps_real_node = tape.constant(eps_real);
            auto noisy_real = tape.constant(diffusion::q_sample(it.real->fisheye.template cast<T>(), abar, eps_real));
            const Tensor3<T>& companion_src =
                cfg.uncond_second_input == SecondInput::NoisyPerspective ? persp_s->val : fisheye_s->val;
            auto companion = tape.constant(diffusion::q_sample(companion_src, abar, eps_real));
            eps_hat_r = nets::uncond_denoise(tape, uncond_pl, s.uncond, noisy_real, companion, sqrt_abar);
        }

        auto l_syn = tape.l1(eps_hat_s, eps_node);
        l_syn_sum = l_syn_sum ? tape.add(l_syn_sum, l_syn) : l_syn;

        autodiff::NodeP<T> item_total;
        if (cfg.loss_mode == LossMode::SumOfL1) {
            item_total = l_syn;
            if (s.has_uncond()) {
                auto l_real = tape.l1(eps_hat_r, eps_real_node);
                l_real_sum = l_real_sum ? tape.add(l_real_sum, l_real) : l_real;
                item_total = tape.add(item_total, l_real);
            }
        } else {
            // Algorithm-1 literal: || 2 eps - S(...) - R(...) ||_1 (documented variant)
            auto resid = tape.sub(tape.sub(tape.scale(eps_node, 2.0), eps_hat_s), eps_hat_r);
            auto zero = tape.constant(Tensor3<T>(cfg.channels, cfg.image_size, cfg.image_size, T(0)));
            item_total = tape.l1(resid, zero);
            auto l_real = tape.l1(eps_hat_r, eps_real_node);
            l_real_sum = l_real_sum ? tape.add(l_real_sum, l_real) : l_real;
        }
        total_sum = total_sum ? tape.add(total_sum, item_total) : item_total;
    }

    auto total = tape.scale(total_sum, 1.0 / cfg.batch_size);
    LossReport rep;
    rep.total = static_cast<double>(total->val.v[0]);
    rep.l_syn = static_cast<double>(l_syn_sum->val.v[0]) / cfg.batch_size;
    rep.l_real = l_real_sum ? static_cast<double>(l_real_sum->val.v[0]) / cfg.batch_size : 0.0;
    if (!std::isfinite(rep.total)) {
        std::string idx;
        for (const auto& it : batch)
            idx += " (syn=" + std::to_string(it.syn_index) + ", real=" + std::to_string(it.real_index) + ")";
        throw std::runtime_error("training_step: non-finite loss at step " + std::to_string(s.step + 1) +
                                 "; offending batch indices:" + idx);
    }

    tape.backward(total);
    opn_pl.flush_grads();
    cond_pl.flush_grads();
    uncond_pl.flush_grads();

    s.step += 1;
    detail::adam_step<T>({&s.opn_ps, &s.cond_ps, &s.uncond_ps}, cfg, s.step);
    s.running_loss_sum += rep.total;
    return rep;
}

/// One-pass correction with the current parameters (no gradient bookkeeping).
template <typename T>
Tensor3<T> run_one_pass(TrainState<T>& s, const Tensor3<T>& fisheye) {
    if (!s.has_opn()) {
        Tensor3<T> out = fisheye;
        clamp_unit(out);
        return out;
    }
    autodiff::Tape<T> tape;
    nets::ParamLeaves<T> pl(tape, s.opn_ps, false);
    auto in = tape.constant(fisheye);
    auto out = nets::opn_correct(tape, pl, s.opn, in);
    Tensor3<T> img = out->val;
    clamp_unit(img);
    return img;
}

/// Mean one-pass PSNR over the first `count` held-out synthetic pairs.
template <typename T>
double validate_one_pass_psnr(TrainState<T>& s, const Dataset& data, int count) {
    int n = std::min<int>(count, static_cast<int>(data.val_synthetic.size()));
    if (n == 0) return 0.0;
    double sum = 0.0;
    for (int i = 0; i < n; ++i) {
        const auto& sample = data.val_synthetic[i];
        Tensor3<T> corrected = run_one_pass(s, sample.fisheye.template cast<T>());
        sum += metrics::psnr(corrected, sample.target->template cast<T>());
    }
    return sum / n;
}

// ---------------------------------------------------------------------------
// Checkpoint format: one flat f32 blob per network plus optimizer moments and
// a JSON manifest carrying configs, schedule, step and RNG states.
// ---------------------------------------------------------------------------

namespace detail {

template <typename T>
void write_f32(std::ofstream& out, const Tensor3<T>& t) {
    for (T x : t.v) {
        float f = static_cast<float>(x);
        out.write(reinterpret_cast<const char*>(&f), sizeof(float));
    }
}

template <typename T>
void read_f32(std::ifstream& in, Tensor3<T>& t) {
    for (auto& x : t.v) {
        float f = 0;
        in.read(reinterpret_cast<char*>(&f), sizeof(float));
        x = static_cast<T>(f);
    }
    if (!in) throw std::runtime_error("checkpoint: truncated binary file");
}

template <typename T>
nlohmann::json param_manifest(const nets::ParamSet<T>& ps, const std::string& file) {
    nlohmann::json tensors = nlohmann::json::array();
    size_t offset = 0;
    for (const auto& e : ps.entries) {
        tensors.push_back({{"name", e.name},
                           {"shape", {e.value.c, e.value.h, e.value.w}},
                           {"offset", offset},
                           {"dtype", "f32"}});
        offset += e.value.size();
    }
    return nlohmann::json{{"file", file}, {"count", offset}, {"tensors", tensors}};
}

template <typename T>
void save_params(const std::string& dir, const std::string& file, const nets::ParamSet<T>& ps) {
    std::ofstream out(std::filesystem::path(dir) / file, std::ios::binary);
    for (const auto& e : ps.entries) write_f32(out, e.value);
}

template <typename T>
void load_params(const std::string& dir, const std::string& file, nets::ParamSet<T>& ps) {
    std::ifstream in(std::filesystem::path(dir) / file, std::ios::binary);
    if (!in) throw std::runtime_error("checkpoint: missing " + file);
    for (auto& e : ps.entries) read_f32(in, e.value);
}

inline std::string double_bits_hex(double d) {
    uint64_t u;
    std::memcpy(&u, &d, sizeof(u));
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(u));
    return buf;
}

inline double double_from_bits_hex(const std::string& s) {
    uint64_t u = std::stoull(s, nullptr, 16);
    double d;
    std::memcpy(&d, &u, sizeof(d));
    return d;
}

}  // namespace detail

template <typename T>
void save_checkpoint(const TrainState<T>& s, const std::string& dir) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    detail::save_params(dir, "opn.bin", s.opn_ps);
    detail::save_params(dir, "cond.bin", s.cond_ps);
    detail::save_params(dir, "uncond.bin", s.uncond_ps);
    {
        std::ofstream out(fs::path(dir) / "optimizer.bin", std::ios::binary);
        for (const nets::ParamSet<T>* ps : {&s.opn_ps, &s.cond_ps, &s.uncond_ps})
            for (const auto& e : ps->entries) {
                detail::write_f32(out, e.m);
                detail::write_f32(out, e.v);
            }
    }
    nlohmann::json manifest;
    manifest["format"] = "dda-checkpoint-1";
    manifest["step"] = s.step;
    manifest["config"] = s.cfg;
    manifest["config_hash"] = config_hash(s.cfg);
    manifest["schedule"] = {{"T", s.cfg.T}, {"beta_start", s.cfg.beta_start}, {"beta_end", s.cfg.beta_end}};
    manifest["rng"] = {{"data_state", s.data_rng.state()},
                       {"data_inc", s.data_rng.inc()},
                       {"noise_state", s.noise_rng.state()},
                       {"noise_inc", s.noise_rng.inc()}};
    manifest["running_loss_sum"] = detail::double_bits_hex(s.running_loss_sum);
    manifest["loss_mode"] = loss_mode_name(s.cfg.loss_mode);
    manifest["nets"] = {{"opn", detail::param_manifest(s.opn_ps, "opn.bin")},
                        {"cond", detail::param_manifest(s.cond_ps, "cond.bin")},
                        {"uncond", detail::param_manifest(s.uncond_ps, "uncond.bin")}};
    std::ofstream mf(fs::path(dir) / "manifest.json");
    mf << manifest.dump(2) << "\n";
}

template <typename T>
TrainState<T> load_checkpoint(const std::string& dir) {
    namespace fs = std::filesystem;
    std::ifstream mf(fs::path(dir) / "manifest.json");
    if (!mf) throw std::runtime_error("load_checkpoint: missing manifest in " + dir);
    nlohmann::json manifest = nlohmann::json::parse(mf);
    TrainConfig cfg = manifest.at("config").get<TrainConfig>();
    TrainState<T> s = init_state<T>(cfg);
    s.step = manifest.at("step").get<long>();
    detail::load_params(dir, "opn.bin", s.opn_ps);
    detail::load_params(dir, "cond.bin", s.cond_ps);
    detail::load_params(dir, "uncond.bin", s.uncond_ps);
    {
        std::ifstream in(fs::path(dir) / "optimizer.bin", std::ios::binary);
        if (!in) throw std::runtime_error("load_checkpoint: missing optimizer.bin");
        for (nets::ParamSet<T>* ps : {&s.opn_ps, &s.cond_ps, &s.uncond_ps})
            for (auto& e : ps->entries) {
                detail::read_f32(in, e.m);
                detail::read_f32(in, e.v);
            }
    }
    const auto& rng = manifest.at("rng");
    s.data_rng.restore(rng.at("data_state").get<uint64_t>(), rng.at("data_inc").get<uint64_t>());
    s.noise_rng.restore(rng.at("noise_state").get<uint64_t>(), rng.at("noise_inc").get<uint64_t>());
    s.running_loss_sum = detail::double_from_bits_hex(manifest.at("running_loss_sum").get<std::string>());
    return s;
}

/// Runs (or resumes) the training loop: per-step CSV metrics, periodic
/// checkpoints to <out_dir>/checkpoint, periodic one-pass validation.
template <typename T>
TrainState<T> train(const TrainConfig& cfg, const Dataset& data, const std::string& out_dir,
                    bool resume = false) {
    namespace fs = std::filesystem;
    cfg.validate();
    if (!data.synthetic.empty()) {
        const auto& probe = data.synthetic.front().fisheye;
        if (probe.h != cfg.image_size || probe.c != cfg.channels)
            throw std::invalid_argument("train: dataset geometry does not match config");
    }
    fs::create_directories(out_dir);
    std::string ckpt_dir = (fs::path(out_dir) / "checkpoint").string();
    std::string csv_path = (fs::path(out_dir) / "metrics.csv").string();

    TrainState<T> s;
    if (resume && fs::exists(fs::path(ckpt_dir) / "manifest.json")) {
        s = load_checkpoint<T>(ckpt_dir);
        if (resume_hash(s.cfg) != resume_hash(cfg))
            throw std::runtime_error("train: resume config differs from checkpoint config");
        s.cfg.total_steps = cfg.total_steps;
    } else {
        s = init_state<T>(cfg);
        std::ofstream csv(csv_path);
        csv << "step,L_syn,L_real,total,val_psnr_onepass\n";
        save_checkpoint(s, ckpt_dir);  // step-0 checkpoint equals initialization
    }

    std::ofstream csv(csv_path, std::ios::app);
    csv.setf(std::ios::fmtflags(0), std::ios::floatfield);
    while (s.step < cfg.total_steps) {
        LossReport rep = training_step(s, data);
        char row[256];
        std::snprintf(row, sizeof(row), "%ld,%.9g,%.9g,%.9g", s.step, rep.l_syn, rep.l_real, rep.total);
        csv << row;
        if (cfg.val_every > 0 && s.step % cfg.val_every == 0) {
            double vp = validate_one_pass_psnr(s, data, cfg.val_count);
            std::snprintf(row, sizeof(row), ",%.9g\n", vp);
            csv << row;
        } else {
            csv << ",\n";
        }
        if (cfg.checkpoint_every > 0 && (s.step % cfg.checkpoint_every == 0 || s.step == cfg.total_steps)) {
            csv.flush();
            save_checkpoint(s, ckpt_dir);
        }
    }
    csv.flush();
    save_checkpoint(s, ckpt_dir);
    return s;
}

}  // namespace dda::training
