#pragma once

#include <array>
#include <filesystem>
#include <fstream>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "dda/camera.hpp"
#include "dda/image_io.hpp"
#include "dda/rng.hpp"
#include "dda/tensor.hpp"

namespace dda::scenes {

inline constexpr const char* kGeneratorVersion = "dda-synth-1";

enum class SceneKind { Checkerboard, RandomLines, Polygons, Gradient, Mixed };
enum class Domain { Synthetic, SimReal };

inline const char* domain_name(Domain d) { return d == Domain::Synthetic ? "synthetic" : "simreal"; }

// ---------------------------------------------------------------------------
// Procedural perspective scenes, rich in straight-line structure.
// ---------------------------------------------------------------------------

namespace detail {

inline void draw_checkerboard(Tensor3<float>& img, int cells, float lo, float hi) {
    int cell = std::max(1, img.w / cells);
    for (int y = 0; y < img.h; ++y)
        for (int x = 0; x < img.w; ++x) {
            bool even = ((x / cell) + (y / cell)) % 2 == 0;
            for (int c = 0; c < img.c; ++c) img(c, y, x) = even ? lo : hi;
        }
}

inline void draw_line(Tensor3<float>& img, double x0, double y0, double x1, double y1, double thick,
                      float value) {
    double vx = x1 - x0, vy = y1 - y0;
    double len2 = vx * vx + vy * vy;
    for (int y = 0; y < img.h; ++y)
        for (int x = 0; x < img.w; ++x) {
            double t = len2 > 0 ? ((x - x0) * vx + (y - y0) * vy) / len2 : 0.0;
            t = std::clamp(t, 0.0, 1.0);
            double dx = x - (x0 + t * vx), dy = y - (y0 + t * vy);
            if (dx * dx + dy * dy <= thick * thick)
                for (int c = 0; c < img.c; ++c) img(c, y, x) = value;
        }
}

inline void draw_polygon(Tensor3<float>& img, const std::vector<std::pair<double, double>>& pts, float value) {
    for (int y = 0; y < img.h; ++y)
        for (int x = 0; x < img.w; ++x) {
            bool inside = false;
            size_t n = pts.size();
            for (size_t i = 0, j = n - 1; i < n; j = i++) {
                double xi = pts[i].first, yi = pts[i].second;
                double xj = pts[j].first, yj = pts[j].second;
                if ((yi > y) != (yj > y) && x < (xj - xi) * (y - yi) / (yj - yi) + xi) inside = !inside;
            }
            if (inside)
                for (int c = 0; c < img.c; ++c) img(c, y, x) = value;
        }
}

inline void draw_gradient(Tensor3<float>& img, double angle, float lo, float hi) {
    double cx = std::cos(angle), cy = std::sin(angle);
    double pmin = 0, pmax = 0;
    for (int corner = 0; corner < 4; ++corner) {
        double px = (corner & 1) ? img.w - 1.0 : 0.0;
        double py = (corner & 2) ? img.h - 1.0 : 0.0;
        double p = px * cx + py * cy;
        if (corner == 0) pmin = pmax = p;
        pmin = std::min(pmin, p);
        pmax = std::max(pmax, p);
    }
    double span = std::max(1e-9, pmax - pmin);
    for (int y = 0; y < img.h; ++y)
        for (int x = 0; x < img.w; ++x) {
            double t = (x * cx + y * cy - pmin) / span;
            for (int c = 0; c < img.c; ++c) img(c, y, x) = static_cast<float>(lo + t * (hi - lo));
        }
}

inline std::vector<std::pair<double, double>> random_convex_polygon(Rng& rng, double w, double h) {
    int verts = 3 + static_cast<int>(rng.uniform_int(4));
    double cx = rng.uniform(0.2, 0.8) * w;
    double cy = rng.uniform(0.2, 0.8) * h;
    double rad = rng.uniform(0.12, 0.35) * std::min(w, h);
    std::vector<double> angles(verts);
    for (auto& a : angles) a = rng.uniform(0.0, 2.0 * 3.14159265358979323846);
    std::sort(angles.begin(), angles.end());
    std::vector<std::pair<double, double>> pts;
    for (double a : angles) pts.emplace_back(cx + rad * std::cos(a), cy + rad * std::sin(a));
    return pts;
}

}  // namespace detail

/// Deterministic scene generation: identical (seed, kind, size) give identical
/// images. Checkerboard and RandomLines carry at least four straight edges.
inline Tensor3<float> gen_scene(uint64_t seed, SceneKind kind, int size, int channels = 1) {
    Rng rng = named_stream(seed, "scene", static_cast<uint64_t>(kind));
    Tensor3<float> img(channels, size, size, -1.0f);
    switch (kind) {
        case SceneKind::Checkerboard: {
            int cells = 2 + 2 * static_cast<int>(rng.uniform_int(4));  // 2,4,6,8
            float lo = static_cast<float>(rng.uniform(-1.0, -0.2));
            float hi = static_cast<float>(rng.uniform(0.2, 1.0));
            detail::draw_checkerboard(img, cells, lo, hi);
            break;
        }
        case SceneKind::RandomLines: {
            float bg = static_cast<float>(rng.uniform(-1.0, -0.4));
            for (auto& v : img.v) v = bg;
            int n = 4 + static_cast<int>(rng.uniform_int(5));
            for (int i = 0; i < n; ++i) {
                double x0 = rng.uniform(0.0, size - 1.0), y0 = rng.uniform(0.0, size - 1.0);
                double x1 = rng.uniform(0.0, size - 1.0), y1 = rng.uniform(0.0, size - 1.0);
                double thick = rng.uniform(0.7, 1.6);
                float val = static_cast<float>(rng.uniform(0.1, 1.0));
                detail::draw_line(img, x0, y0, x1, y1, thick, val);
            }
            break;
        }
        case SceneKind::Polygons: {
            float bg = static_cast<float>(rng.uniform(-0.9, -0.1));
            for (auto& v : img.v) v = bg;
            int n = 2 + static_cast<int>(rng.uniform_int(3));
            for (int i = 0; i < n; ++i) {
                auto pts = detail::random_convex_polygon(rng, size, size);
                float val = static_cast<float>(rng.uniform(-0.2, 1.0));
                detail::draw_polygon(img, pts, val);
            }
            break;
        }
        case SceneKind::Gradient: {
            double angle = rng.uniform(0.0, 2.0 * 3.14159265358979323846);
            detail::draw_gradient(img, angle, -0.95f, 0.95f);
            break;
        }
        case SceneKind::Mixed: {
            double angle = rng.uniform(0.0, 2.0 * 3.14159265358979323846);
            detail::draw_gradient(img, angle, -0.9f, 0.4f);
            auto pts = detail::random_convex_polygon(rng, size, size);
            detail::draw_polygon(img, pts, static_cast<float>(rng.uniform(0.3, 1.0)));
            int n = 2 + static_cast<int>(rng.uniform_int(3));
            for (int i = 0; i < n; ++i) {
                double x0 = rng.uniform(0.0, size - 1.0), y0 = rng.uniform(0.0, size - 1.0);
                double x1 = rng.uniform(0.0, size - 1.0), y1 = rng.uniform(0.0, size - 1.0);
                detail::draw_line(img, x0, y0, x1, y1, rng.uniform(0.7, 1.3),
                                  static_cast<float>(rng.uniform(0.5, 1.0)));
            }
            break;
        }
        default:
            throw std::invalid_argument("gen_scene: unknown scene kind");
    }
    return img;
}

// ---------------------------------------------------------------------------
// Dataset configuration and sample construction.
// ---------------------------------------------------------------------------

using LambdaRange = std::array<std::array<double, 2>, 4>;

struct PhotometricParams {
    double gain = 1.0;
    double bias = 0.0;
    double vignette = 0.0;
};

struct DatasetConfig {
    int image_size = 32;
    int channels = 1;
    int train_count = 2000;  // per domain
    int test_count = 200;    // per domain
    LambdaRange synthetic_lambda = {{{0.12, 0.35}, {0.0, 0.08}, {0.0, 0.02}, {0.0, 0.01}}};
    LambdaRange simreal_lambda = {{{-0.30, -0.12}, {-0.02, 0.0}, {0.0, 0.0}, {0.0, 0.0}}};
    double gain_lo = 0.7, gain_hi = 1.0;
    double bias_lo = -0.1, bias_hi = 0.1;
    double vignette_lo = 0.1, vignette_hi = 0.3;
    double center_x = 0.0, center_y = 0.0;  // distortion center; defaults to the image center
    uint64_t master_seed = 1;

    void validate() const {
        if (image_size < 16) throw std::invalid_argument("DatasetConfig: image_size must be >= 16");
        if (channels != 1 && channels != 3) throw std::invalid_argument("DatasetConfig: channels must be 1 or 3");
        if (train_count < 0 || test_count < 0) throw std::invalid_argument("DatasetConfig: negative counts");
        for (const auto& r : synthetic_lambda)
            if (!(r[0] <= r[1])) throw std::invalid_argument("DatasetConfig: bad synthetic lambda range");
        for (const auto& r : simreal_lambda)
            if (!(r[0] <= r[1])) throw std::invalid_argument("DatasetConfig: bad simreal lambda range");
    }
};

inline void to_json(nlohmann::json& j, const DatasetConfig& c) {
    j = nlohmann::json{{"image_size", c.image_size},
                       {"channels", c.channels},
                       {"train_count", c.train_count},
                       {"test_count", c.test_count},
                       {"synthetic_lambda", c.synthetic_lambda},
                       {"simreal_lambda", c.simreal_lambda},
                       {"gain", {c.gain_lo, c.gain_hi}},
                       {"bias", {c.bias_lo, c.bias_hi}},
                       {"vignette", {c.vignette_lo, c.vignette_hi}},
                       {"center", {c.center_x, c.center_y}},
                       {"master_seed", c.master_seed}};
}

inline void from_json(const nlohmann::json& j, DatasetConfig& c) {
    c = DatasetConfig{};
    if (j.contains("image_size")) j.at("image_size").get_to(c.image_size);
    if (j.contains("channels")) j.at("channels").get_to(c.channels);
    if (j.contains("train_count")) j.at("train_count").get_to(c.train_count);
    if (j.contains("test_count")) j.at("test_count").get_to(c.test_count);
    if (j.contains("synthetic_lambda")) j.at("synthetic_lambda").get_to(c.synthetic_lambda);
    if (j.contains("simreal_lambda")) j.at("simreal_lambda").get_to(c.simreal_lambda);
    if (j.contains("gain")) {
        c.gain_lo = j.at("gain")[0];
        c.gain_hi = j.at("gain")[1];
    }
    if (j.contains("bias")) {
        c.bias_lo = j.at("bias")[0];
        c.bias_hi = j.at("bias")[1];
    }
    if (j.contains("vignette")) {
        c.vignette_lo = j.at("vignette")[0];
        c.vignette_hi = j.at("vignette")[1];
    }
    if (j.contains("center")) {
        c.center_x = j.at("center")[0];
        c.center_y = j.at("center")[1];
    }
    if (j.contains("master_seed")) j.at("master_seed").get_to(c.master_seed);
}

/// Full generation-side record. SimReal ground truth and parameters live only
/// in the `sealed` member; the training loader type below cannot carry them.
struct SamplePair {
    Tensor3<float> fisheye;
    std::optional<Tensor3<float>> target;                  // Synthetic only
    Domain domain = Domain::Synthetic;
    std::optional<camera::DistortionParams> params;        // Synthetic: open label
    uint64_t seed = 0;
    struct Sealed {
        Tensor3<float> target;
        camera::DistortionParams params;
        PhotometricParams photometric;
    };
    std::optional<Sealed> sealed;  // SimReal only, read via the eval_only namespace
};

inline camera::DistortionParams sample_params(Rng& rng, const LambdaRange& range,
                                              camera::DistortionModel model, double cx, double cy) {
    for (int attempt = 0; attempt < 100; ++attempt) {
        camera::DistortionParams p;
        p.model = model;
        p.center_x = cx;
        p.center_y = cy;
        for (int i = 0; i < 4; ++i) p.lambda[i] = rng.uniform(range[i][0], range[i][1]);
        if (camera::is_monotone(p)) return p;
    }
    throw std::runtime_error("sample_params: 100 consecutive non-monotone draws; range misconfigured");
}

inline SceneKind random_kind(Rng& rng) { return static_cast<SceneKind>(rng.uniform_int(5)); }

inline SamplePair build_synthetic_pair(uint64_t seed, const DatasetConfig& cfg) {
    cfg.validate();
    Rng rng = named_stream(seed, "synthetic-pair");
    SceneKind kind = random_kind(rng);
    Tensor3<float> scene = gen_scene(rng.next_u64(), kind, cfg.image_size, cfg.channels);
    camera::DistortionParams p =
        sample_params(rng, cfg.synthetic_lambda, camera::DistortionModel::Polynomial, cfg.center_x, cfg.center_y);
    auto syn = camera::synthesize_fisheye(scene, p, -1.0f);
    SamplePair out;
    out.fisheye = std::move(syn.image);
    out.target = std::move(scene);
    out.domain = Domain::Synthetic;
    out.params = p;
    out.seed = seed;
    return out;
}

/// Photometric shift applied in [0,1] space: gain, bias, then radial vignetting.
inline void apply_photometric(Tensor3<float>& img, const PhotometricParams& ph) {
    for (int y = 0; y < img.h; ++y)
        for (int x = 0; x < img.w; ++x) {
            double ux = camera::px_to_norm(x, img.w);
            double uy = camera::px_to_norm(y, img.h);
            double r2 = ux * ux + uy * uy;
            double vig = 1.0 - ph.vignette * r2;
            for (int c = 0; c < img.c; ++c) {
                double v01 = (static_cast<double>(img(c, y, x)) + 1.0) * 0.5;
                v01 = (ph.gain * v01 + ph.bias) * vig;
                img(c, y, x) = static_cast<float>(std::clamp(v01, 0.0, 1.0) * 2.0 - 1.0);
            }
        }
}

inline SamplePair build_simreal_image(uint64_t seed, const DatasetConfig& cfg) {
    cfg.validate();
    Rng rng = named_stream(seed, "simreal-image");
    SceneKind kind = random_kind(rng);
    Tensor3<float> scene = gen_scene(rng.next_u64(), kind, cfg.image_size, cfg.channels);
    camera::DistortionParams p =
        sample_params(rng, cfg.simreal_lambda, camera::DistortionModel::Division, cfg.center_x, cfg.center_y);
    PhotometricParams ph;
    ph.gain = rng.uniform(cfg.gain_lo, cfg.gain_hi);
    ph.bias = rng.uniform(cfg.bias_lo, cfg.bias_hi);
    ph.vignette = rng.uniform(cfg.vignette_lo, cfg.vignette_hi);
    auto syn = camera::synthesize_fisheye(scene, p, -1.0f);
    apply_photometric(syn.image, ph);
    SamplePair out;
    out.fisheye = std::move(syn.image);
    out.domain = Domain::SimReal;
    out.seed = seed;
    out.sealed = SamplePair::Sealed{std::move(scene), p, ph};
    return out;
}

// ---------------------------------------------------------------------------
// On-disk dataset: data/<split>/<domain>/<index>.png plus manifests. SimReal
// labels go to manifest.sealed.json and sealed/<index>.png, which the training
// loader never opens.
// ---------------------------------------------------------------------------

inline uint64_t sample_seed(uint64_t master, const std::string& split, Domain domain, int index) {
    uint64_t h = fnv1a64(split);
    h = fnv1a64(domain_name(domain), h);
    h ^= master * 0x9e3779b97f4a7c15ULL;
    h ^= (static_cast<uint64_t>(index) + 1) * 0xbf58476d1ce4e5b9ULL;
    return h;
}

inline void write_dataset(const DatasetConfig& cfg, const std::string& out_dir) {
    namespace fs = std::filesystem;
    cfg.validate();
    for (const std::string split : {"train", "test"}) {
        int count = split == "train" ? cfg.train_count : cfg.test_count;
        for (Domain domain : {Domain::Synthetic, Domain::SimReal}) {
            fs::path dir = fs::path(out_dir) / split / domain_name(domain);
            fs::create_directories(dir);
            nlohmann::json manifest;
            manifest["generator_version"] = kGeneratorVersion;
            manifest["domain"] = domain_name(domain);
            manifest["image_size"] = cfg.image_size;
            manifest["channels"] = cfg.channels;
            manifest["count"] = count;
            nlohmann::json items = nlohmann::json::array();
            nlohmann::json sealed_items = nlohmann::json::array();
            if (domain == Domain::SimReal) fs::create_directories(dir / "sealed");
            for (int i = 0; i < count; ++i) {
                uint64_t seed = sample_seed(cfg.master_seed, split, domain, i);
                std::string img_name = std::to_string(i) + ".png";
                if (domain == Domain::Synthetic) {
                    SamplePair pair = build_synthetic_pair(seed, cfg);
                    std::string tgt_name = std::to_string(i) + ".target.png";
                    write_png((dir / img_name).string(), pair.fisheye);
                    write_png((dir / tgt_name).string(), *pair.target);
                    items.push_back({{"index", i},
                                     {"file", img_name},
                                     {"target_file", tgt_name},
                                     {"seed", seed},
                                     {"model", "polynomial"},
                                     {"lambda", pair.params->lambda},
                                     {"center", {pair.params->center_x, pair.params->center_y}}});
                } else {
                    SamplePair pair = build_simreal_image(seed, cfg);
                    write_png((dir / img_name).string(), pair.fisheye);
                    std::string tgt_name = std::string("sealed/") + std::to_string(i) + ".png";
                    write_png((dir / tgt_name).string(), pair.sealed->target);
                    items.push_back({{"index", i}, {"file", img_name}, {"seed", seed}});
                    sealed_items.push_back({{"index", i},
                                            {"target_file", tgt_name},
                                            {"model", "division"},
                                            {"lambda", pair.sealed->params.lambda},
                                            {"center", {pair.sealed->params.center_x, pair.sealed->params.center_y}},
                                            {"gain", pair.sealed->photometric.gain},
                                            {"bias", pair.sealed->photometric.bias},
                                            {"vignette", pair.sealed->photometric.vignette}});
                }
            }
            manifest["items"] = items;
            std::ofstream mf(dir / "manifest.json");
            mf << manifest.dump(2) << "\n";
            if (domain == Domain::SimReal) {
                nlohmann::json sealed;
                sealed["generator_version"] = kGeneratorVersion;
                sealed["items"] = sealed_items;
                std::ofstream sf(dir / "manifest.sealed.json");
                sf << sealed.dump(2) << "\n";
            }
        }
    }
}

/// What training is allowed to see: fisheye always, target only for Synthetic.
/// There is deliberately no field that could hold SimReal labels.
struct TrainSample {
    Tensor3<float> fisheye;
    std::optional<Tensor3<float>> target;
    Domain domain = Domain::Synthetic;
    int index = 0;
};

/// Reads a split through the public manifests only.
inline std::vector<TrainSample> load_training_split(const std::string& data_dir, const std::string& split,
                                                    Domain domain) {
    namespace fs = std::filesystem;
    fs::path dir = fs::path(data_dir) / split / domain_name(domain);
    std::ifstream mf(dir / "manifest.json");
    if (!mf) throw std::runtime_error("load_training_split: missing manifest in " + dir.string());
    nlohmann::json manifest = nlohmann::json::parse(mf);
    std::vector<TrainSample> out;
    for (const auto& item : manifest.at("items")) {
        TrainSample s;
        s.index = item.at("index").get<int>();
        s.domain = domain;
        s.fisheye = read_png<float>((dir / item.at("file").get<std::string>()).string());
        if (domain == Domain::Synthetic)
            s.target = read_png<float>((dir / item.at("target_file").get<std::string>()).string());
        out.push_back(std::move(s));
    }
    return out;
}

/// Evaluation-only access to SimReal ground truth. Nothing in the training
/// path includes this namespace.
namespace eval_only {

struct SealedRecord {
    int index = 0;
    Tensor3<float> target;
    camera::DistortionParams params;
    PhotometricParams photometric;
};

inline std::vector<SealedRecord> load_sealed(const std::string& data_dir, const std::string& split) {
    namespace fs = std::filesystem;
    fs::path dir = fs::path(data_dir) / split / domain_name(Domain::SimReal);
    std::ifstream sf(dir / "manifest.sealed.json");
    if (!sf) throw std::runtime_error("load_sealed: missing sealed manifest in " + dir.string());
    nlohmann::json sealed = nlohmann::json::parse(sf);
    std::vector<SealedRecord> out;
    for (const auto& item : sealed.at("items")) {
        SealedRecord r;
        r.index = item.at("index").get<int>();
        r.target = read_png<float>((dir / item.at("target_file").get<std::string>()).string());
        r.params.model = camera::DistortionModel::Division;
        item.at("lambda").get_to(r.params.lambda);
        r.params.center_x = item.at("center")[0];
        r.params.center_y = item.at("center")[1];
        r.photometric.gain = item.at("gain");
        r.photometric.bias = item.at("bias");
        r.photometric.vignette = item.at("vignette");
        out.push_back(std::move(r));
    }
    return out;
}

}  // namespace eval_only

}  // namespace dda::scenes
