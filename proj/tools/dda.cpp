// Command-line entry point: dataset synthesis, training, inference, evaluation
// and figure grids, each recording a run.json with the resolved configuration.

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "dda/camera.hpp"
#include "dda/image_io.hpp"
#include "dda/inference.hpp"
#include "dda/metrics.hpp"
#include "dda/scenes.hpp"
#include "dda/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kVersion = "dda-0.1.0";

uint64_t file_hash(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return dda::fnv1a64(ss.str());
}

std::string hex64(uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

std::optional<uint64_t> env_seed_override() {
    const char* s = std::getenv("DDA_SEED");
    if (!s || !*s) return std::nullopt;
    return std::strtoull(s, nullptr, 10);
}

void write_run_record(const fs::path& out_dir, const std::string& subcommand, const json& resolved_config,
                      const std::vector<fs::path>& inputs) {
    fs::create_directories(out_dir);
    json run;
    run["subcommand"] = subcommand;
    run["version"] = kVersion;
    run["config"] = resolved_config;
    json hashes = json::object();
    for (const auto& p : inputs)
        if (fs::exists(p) && fs::is_regular_file(p)) hashes[p.string()] = hex64(file_hash(p));
    run["input_hashes"] = hashes;
    std::ofstream f(out_dir / "run.json");
    f << run.dump(2) << "\n";
}

uint64_t checkpoint_hash(const fs::path& ckpt_dir) {
    uint64_t h = 0xcbf29ce484222325ULL;
    for (const char* bin : {"opn.bin", "cond.bin", "uncond.bin"}) {
        fs::path p = ckpt_dir / bin;
        if (fs::exists(p)) h ^= file_hash(p);
    }
    return h;
}

json load_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path);
    return json::parse(in);
}

// ---------------------------------------------------------------------------
// synth
// ---------------------------------------------------------------------------

int run_synth(const std::string& config_path, const std::string& out_dir) {
    dda::scenes::DatasetConfig cfg;
    if (!config_path.empty()) cfg = load_json_file(config_path).get<dda::scenes::DatasetConfig>();
    if (auto seed = env_seed_override()) cfg.master_seed = *seed;
    cfg.validate();
    dda::scenes::write_dataset(cfg, out_dir);
    write_run_record(out_dir, "synth", json(cfg), {config_path});
    std::cout << "dataset written to " << out_dir << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

int run_train(const std::string& config_path, const std::string& data_dir, const std::string& out_dir,
              bool resume) {
    dda::training::TrainConfig cfg;
    if (!config_path.empty()) cfg = load_json_file(config_path).get<dda::training::TrainConfig>();
    if (auto seed = env_seed_override()) cfg.seed = *seed;
    cfg.validate();
    auto data = dda::training::load_dataset(data_dir);
    write_run_record(out_dir, "train", json(cfg),
                     {config_path, fs::path(data_dir) / "train" / "synthetic" / "manifest.json",
                      fs::path(data_dir) / "train" / "simreal" / "manifest.json"});
    auto state = dda::training::train<float>(cfg, data, out_dir, resume);
    std::cout << "trained to step " << state.step << "; checkpoint at " << out_dir << "/checkpoint\n";
    return 0;
}

// ---------------------------------------------------------------------------
// infer
// ---------------------------------------------------------------------------

int run_infer(const std::string& ckpt_dir, const std::string& input, const std::string& mode,
              const std::string& domain, uint64_t seed, int steps, const std::string& out_dir) {
    auto state = dda::training::load_checkpoint<float>(ckpt_dir);
    auto dom = domain == "simreal" ? dda::scenes::Domain::SimReal : dda::scenes::Domain::Synthetic;
    if (auto s = env_seed_override()) seed = *s;

    std::vector<fs::path> files;
    if (fs::is_directory(input)) {
        for (const auto& e : fs::directory_iterator(input))
            if (e.path().extension() == ".png") files.push_back(e.path());
        std::sort(files.begin(), files.end());
    } else {
        files.push_back(input);
    }
    fs::create_directories(out_dir);

    int index = 0;
    for (const auto& f : files) {
        auto img = dda::read_png<float>(f.string());
        dda::Tensor3<float> out;
        if (mode == "onepass") {
            out = dda::inference::one_pass_correct(img, state);
        } else {
            dda::Rng rng = dda::named_stream(seed, "infer", index);
            out = dda::inference::iterative_correct(img, dom, state, rng, steps);
        }
        fs::path out_png = fs::path(out_dir) / (f.stem().string() + ".corrected.png");
        dda::write_png(out_png.string(), out);
        json sidecar = {{"mode", mode},
                        {"seed", seed},
                        {"steps", steps < 0 ? state.cfg.T : steps},
                        {"domain", domain},
                        {"source", f.string()},
                        {"checkpoint_hash", hex64(checkpoint_hash(ckpt_dir))}};
        std::ofstream sf(fs::path(out_dir) / (f.stem().string() + ".corrected.json"));
        sf << sidecar.dump(2) << "\n";
        ++index;
    }
    json cfgj = {{"ckpt", ckpt_dir}, {"in", input},  {"mode", mode},
                 {"domain", domain}, {"seed", seed}, {"steps", steps}};
    write_run_record(out_dir, "infer", cfgj, {fs::path(ckpt_dir) / "manifest.json"});
    std::cout << "corrected " << files.size() << " image(s) into " << out_dir << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

struct EvalItem {
    dda::Tensor3<float> fisheye;
    dda::Tensor3<float> target;
    dda::camera::DistortionParams params;
    int index = 0;
};

std::vector<EvalItem> load_eval_synthetic(const std::string& data_dir, const std::string& split) {
    fs::path dir = fs::path(data_dir) / split / "synthetic";
    json manifest = load_json_file((dir / "manifest.json").string());
    std::vector<EvalItem> items;
    for (const auto& it : manifest.at("items")) {
        EvalItem e;
        e.index = it.at("index").get<int>();
        e.fisheye = dda::read_png<float>((dir / it.at("file").get<std::string>()).string());
        e.target = dda::read_png<float>((dir / it.at("target_file").get<std::string>()).string());
        e.params.model = dda::camera::DistortionModel::Polynomial;
        it.at("lambda").get_to(e.params.lambda);
        e.params.center_x = it.at("center")[0];
        e.params.center_y = it.at("center")[1];
        items.push_back(std::move(e));
    }
    return items;
}

std::vector<EvalItem> load_eval_simreal(const std::string& data_dir, const std::string& split) {
    auto fisheyes = dda::scenes::load_training_split(data_dir, split, dda::scenes::Domain::SimReal);
    auto sealed = dda::scenes::eval_only::load_sealed(data_dir, split);
    if (fisheyes.size() != sealed.size()) throw std::runtime_error("eval: sealed/public size mismatch");
    std::vector<EvalItem> items;
    for (size_t i = 0; i < sealed.size(); ++i) {
        EvalItem e;
        e.index = sealed[i].index;
        e.fisheye = fisheyes[i].fisheye;
        e.target = sealed[i].target;
        e.params = sealed[i].params;
        items.push_back(std::move(e));
    }
    return items;
}

struct MetricRow {
    double psnr = 0, ssim = 0, ms_ssim = 0, psnr_masked = 0, ssim_masked = 0;
};

json to_json_row(const MetricRow& m) {
    return {{"psnr", m.psnr},
            {"ssim", m.ssim},
            {"ms_ssim", m.ms_ssim},
            {"psnr_masked", m.psnr_masked},
            {"ssim_masked", m.ssim_masked}};
}

MetricRow measure(const dda::Tensor3<float>& img, const dda::Tensor3<float>& target,
                  const dda::metrics::Mask& mask) {
    MetricRow m;
    m.psnr = dda::metrics::psnr(img, target);
    m.ssim = dda::metrics::ssim(img, target);
    m.ms_ssim = dda::metrics::ms_ssim(img, target);
    m.psnr_masked = dda::metrics::psnr(img, target, &mask);
    m.ssim_masked = dda::metrics::ssim(img, target, &mask);
    return m;
}

int run_eval(const std::string& ckpt_dir, const std::string& data_dir, const std::string& out_path,
             uint64_t seed) {
    auto state = dda::training::load_checkpoint<float>(ckpt_dir);
    if (auto s = env_seed_override()) seed = *s;
    const int n = state.cfg.image_size;

    json report;
    report["version"] = kVersion;
    report["checkpoint_hash"] = hex64(checkpoint_hash(ckpt_dir));
    report["seed"] = seed;

    for (const char* domain : {"synthetic", "simreal"}) {
        auto items = std::string(domain) == "synthetic" ? load_eval_synthetic(data_dir, "test")
                                                        : load_eval_simreal(data_dir, "test");
        auto dom = std::string(domain) == "synthetic" ? dda::scenes::Domain::Synthetic
                                                      : dda::scenes::Domain::SimReal;
        json per_image = json::array();
        std::map<std::string, MetricRow> sums;
        for (const auto& item : items) {
            // masks derived from the generating parameters (sealed for simreal,
            // loaded only here): synthesis mask for the uncorrected fisheye,
            // rectification-flow validity for corrected outputs
            dda::Tensor3<float> zeros(item.target.c, n, n, 0.0f);
            auto syn_mask = dda::camera::synthesize_fisheye(zeros, item.params).mask;
            auto flow = dda::camera::ground_truth_rectify_flow<float>(item.params, n, n);

            std::map<std::string, MetricRow> rows;
            rows["uncorrected"] = measure(item.fisheye, item.target, syn_mask);
            if (state.has_opn()) {
                auto onepass = dda::inference::one_pass_correct(item.fisheye, state);
                rows["onepass"] = measure(onepass, item.target, flow.valid);
            }
            dda::Rng rng = dda::named_stream(seed, "eval-infer", item.index);
            auto iter = dda::inference::iterative_correct(item.fisheye, dom, state, rng);
            rows["iterative"] = measure(iter, item.target, flow.valid);

            json row = {{"index", item.index}};
            for (auto& [name, m] : rows) {
                row[name] = to_json_row(m);
                auto& s = sums[name];
                s.psnr += m.psnr;
                s.ssim += m.ssim;
                s.ms_ssim += m.ms_ssim;
                s.psnr_masked += m.psnr_masked;
                s.ssim_masked += m.ssim_masked;
            }
            per_image.push_back(row);
        }
        json agg;
        for (auto& [name, s] : sums) {
            double c = static_cast<double>(items.size());
            MetricRow mean{s.psnr / c, s.ssim / c, s.ms_ssim / c, s.psnr_masked / c, s.ssim_masked / c};
            agg[name] = to_json_row(mean);
        }
        report[domain] = {{"count", items.size()}, {"aggregate", agg}, {"per_image", per_image}};
    }

    fs::path out(out_path);
    if (out.has_parent_path()) fs::create_directories(out.parent_path());
    std::ofstream f(out);
    f << report.dump(2) << "\n";
    write_run_record(out.has_parent_path() ? out.parent_path() : fs::path("."), "eval",
                     json{{"ckpt", ckpt_dir}, {"data", data_dir}, {"seed", seed}},
                     {fs::path(ckpt_dir) / "manifest.json"});
    std::cout << "report written to " << out_path << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// figures
// ---------------------------------------------------------------------------

int run_figures(const std::string& ckpt_dir, const std::string& data_dir, const std::string& out_path,
                int count, uint64_t seed) {
    auto state = dda::training::load_checkpoint<float>(ckpt_dir);
    if (auto s = env_seed_override()) seed = *s;
    auto items = load_eval_synthetic(data_dir, "test");
    count = std::min<int>(count, static_cast<int>(items.size()));
    if (count < 1) throw std::runtime_error("figures: no test images");
    const int n = state.cfg.image_size;
    const int pad = 2;

    // rows: input fisheye, one-pass, iterative, target
    const int rows = 4, cols = count;
    dda::Tensor3<float> grid(items[0].fisheye.c, rows * n + (rows + 1) * pad, cols * n + (cols + 1) * pad,
                             1.0f);
    auto blit = [&](const dda::Tensor3<float>& img, int row, int col) {
        int oy = pad + row * (n + pad), ox = pad + col * (n + pad);
        for (int c = 0; c < img.c; ++c)
            for (int y = 0; y < n; ++y)
                for (int x = 0; x < n; ++x) grid(c, oy + y, ox + x) = img(c, y, x);
    };
    for (int i = 0; i < count; ++i) {
        const auto& item = items[i];
        blit(item.fisheye, 0, i);
        if (state.has_opn()) blit(dda::inference::one_pass_correct(item.fisheye, state), 1, i);
        dda::Rng rng = dda::named_stream(seed, "figures", i);
        blit(dda::inference::iterative_correct(item.fisheye, dda::scenes::Domain::Synthetic, state, rng), 2,
             i);
        blit(item.target, 3, i);
    }
    fs::path out(out_path);
    if (out.has_parent_path()) fs::create_directories(out.parent_path());
    dda::write_png(out_path, grid);
    write_run_record(out.has_parent_path() ? out.parent_path() : fs::path("."), "figures",
                     json{{"ckpt", ckpt_dir}, {"data", data_dir}, {"count", count}, {"seed", seed}},
                     {fs::path(ckpt_dir) / "manifest.json"});
    std::cout << "figure grid written to " << out_path << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Dual-diffusion fisheye rectification toolkit"};
    app.require_subcommand(1);

    std::string config_path, out_dir = "out", data_dir, ckpt_dir, input, report_path = "report.json";
    std::string mode = "onepass", domain = "synthetic", fig_path = "figures.png";
    uint64_t seed = 0;
    int steps = -1, fig_count = 6;
    bool resume = false;

    auto* synth =
        app.add_subcommand("synth", "generate the labeled synthetic and sealed simulated-real datasets");
    synth->add_option("--config", config_path, "dataset config JSON");
    synth->add_option("--out", out_dir, "output dataset directory")->required();

    auto* train = app.add_subcommand("train", "train the dual diffusion architecture");
    train->add_option("--config", config_path, "training config JSON");
    train->add_option("--data", data_dir, "dataset directory")->required();
    train->add_option("--out", out_dir, "run output directory")->required();
    train->add_flag("--resume", resume, "resume from the run's checkpoint");

    auto* infer = app.add_subcommand("infer", "correct fisheye images with a trained checkpoint");
    infer->add_option("--ckpt", ckpt_dir, "checkpoint directory")->required();
    infer->add_option("--in", input, "input PNG or directory")->required();
    infer->add_option("--mode", mode, "onepass | iterative")->check(CLI::IsMember({"onepass", "iterative"}));
    infer->add_option("--domain", domain, "synthetic | simreal")
        ->check(CLI::IsMember({"synthetic", "simreal"}));
    infer->add_option("--seed", seed, "sampling seed");
    infer->add_option("--steps", steps, "reverse steps (default: schedule T)");
    infer->add_option("--out", out_dir, "output directory")->required();

    auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on the test split, both domains");
    eval->add_option("--ckpt", ckpt_dir, "checkpoint directory")->required();
    eval->add_option("--data", data_dir, "dataset directory")->required();
    eval->add_option("--out", report_path, "report JSON path");
    eval->add_option("--seed", seed, "sampling seed");

    auto* figures = app.add_subcommand("figures", "emit an input/one-pass/iterative/target grid");
    figures->add_option("--ckpt", ckpt_dir, "checkpoint directory")->required();
    figures->add_option("--data", data_dir, "dataset directory (with test split)")->required();
    figures->add_option("--out", fig_path, "output PNG path");
    figures->add_option("--count", fig_count, "columns in the grid");
    figures->add_option("--seed", seed, "sampling seed");

    CLI11_PARSE(app, argc, argv);

    try {
        if (synth->parsed()) return run_synth(config_path, out_dir);
        if (train->parsed()) return run_train(config_path, data_dir, out_dir, resume);
        if (infer->parsed()) return run_infer(ckpt_dir, input, mode, domain, seed, steps, out_dir);
        if (eval->parsed()) return run_eval(ckpt_dir, data_dir, report_path, seed);
        if (figures->parsed()) return run_figures(ckpt_dir, data_dir, fig_path, fig_count, seed);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 1;
}
