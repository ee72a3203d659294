#include "atlas_istn/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>

#include "atlas_istn/error.hpp"
#include "atlas_istn/image_io.hpp"
#include "atlas_istn/rng.hpp"

namespace atlas_istn::phantom {

namespace fs = std::filesystem;
using nlohmann::json;

std::string to_string(Split s) {
    switch (s) {
        case Split::Train: return "train";
        case Split::Val: return "val";
        case Split::Test: return "test";
    }
    return "train";
}

Split split_from_string(const std::string& s) {
    if (s == "train") return Split::Train;
    if (s == "val") return Split::Val;
    if (s == "test") return Split::Test;
    throw InvalidArgument("unknown split '" + s + "'");
}

void PhantomConfig::validate() const {
    if (image_height < 32 || image_width < 32) throw InvalidArgument("phantom: image dimensions must be >= 32");
    if (n_samples < 1) throw InvalidArgument("phantom: n_samples must be >= 1");
    if (!(hlhs_fraction >= 0.0 && hlhs_fraction <= 1.0)) throw InvalidArgument("phantom: hlhs_fraction must lie in [0,1]");
    if (!(lv_shrink_min > 0.0 && lv_shrink_max < 1.0 && lv_shrink_min <= lv_shrink_max)) {
        throw InvalidArgument("phantom: lv_shrink_range must be a sub-interval of (0,1)");
    }
    if (rotation_jitter < 0 || translation_jitter < 0 || scale_jitter < 0 || scale_jitter >= 0.5) {
        throw InvalidArgument("phantom: jitter magnitudes must be non-negative (scale < 0.5)");
    }
    if (speckle_strength < 0) throw InvalidArgument("phantom: speckle_strength must be >= 0");
    if (val_fraction < 0 || test_fraction < 0 || val_fraction + test_fraction >= 1.0) {
        throw InvalidArgument("phantom: split fractions must be non-negative and leave a training split");
    }
}

void to_json(json& j, const PhantomConfig& c) {
    j = json{{"image_height", c.image_height},
             {"image_width", c.image_width},
             {"n_samples", c.n_samples},
             {"hlhs_fraction", c.hlhs_fraction},
             {"lv_shrink_range", {c.lv_shrink_min, c.lv_shrink_max}},
             {"rotation_jitter", c.rotation_jitter},
             {"translation_jitter", c.translation_jitter},
             {"scale_jitter", c.scale_jitter},
             {"speckle_strength", c.speckle_strength},
             {"shadowing", c.shadowing},
             {"wh_excludes_chambers", c.wh_excludes_chambers},
             {"val_fraction", c.val_fraction},
             {"test_fraction", c.test_fraction},
             {"seed", c.seed}};
}

void from_json(const json& j, PhantomConfig& c) {
    c.image_height = j.at("image_height").get<int>();
    c.image_width = j.at("image_width").get<int>();
    c.n_samples = j.at("n_samples").get<int>();
    c.hlhs_fraction = j.at("hlhs_fraction").get<double>();
    c.lv_shrink_min = j.at("lv_shrink_range").at(0).get<double>();
    c.lv_shrink_max = j.at("lv_shrink_range").at(1).get<double>();
    c.rotation_jitter = j.at("rotation_jitter").get<double>();
    c.translation_jitter = j.at("translation_jitter").get<double>();
    c.scale_jitter = j.at("scale_jitter").get<double>();
    c.speckle_strength = j.at("speckle_strength").get<double>();
    c.shadowing = j.at("shadowing").get<bool>();
    c.wh_excludes_chambers = j.at("wh_excludes_chambers").get<bool>();
    c.val_fraction = j.at("val_fraction").get<double>();
    c.test_fraction = j.at("test_fraction").get<double>();
    c.seed = j.at("seed").get<std::uint64_t>();
}

std::vector<const ManifestEntry*> DatasetManifest::split(Split s) const {
    std::vector<const ManifestEntry*> out;
    for (const auto& e : samples) {
        if (e.split == s) out.push_back(&e);
    }
    return out;
}

void to_json(json& j, const DatasetManifest& m) {
    json samples = json::array();
    for (const auto& e : m.samples) {
        samples.push_back({{"id", e.id},
                           {"split", to_string(e.split)},
                           {"hlhs", e.hlhs ? 1 : 0},
                           {"image", e.image.generic_string()},
                           {"label", e.label.generic_string()},
                           {"image_crc32", e.image_crc32},
                           {"label_crc32", e.label_crc32},
                           {"true_areas", e.true_areas}});
    }
    json splits = json::object();
    for (Split s : {Split::Train, Split::Val, Split::Test}) {
        int n = 0, h = 0;
        for (const auto& e : m.samples) {
            if (e.split == s) {
                ++n;
                h += e.hlhs ? 1 : 0;
            }
        }
        splits[to_string(s)] = {{"n", n}, {"hlhs", h}};
    }
    j = json{{"format_version", m.format_version},
             {"generator", m.config},
             {"class_palette", {"0 BG", "1 LA", "2 RA", "3 LV", "4 RV", "5 WH"}},
             {"splits", splits},
             {"samples", samples}};
}

void from_json(const json& j, DatasetManifest& m) {
    m.format_version = j.at("format_version").get<int>();
    if (m.format_version != kManifestFormatVersion) {
        throw IoError("manifest format_version " + std::to_string(m.format_version) + " is not supported");
    }
    m.config = j.at("generator").get<PhantomConfig>();
    m.samples.clear();
    for (const auto& s : j.at("samples")) {
        ManifestEntry e;
        e.id = s.at("id").get<std::string>();
        e.split = split_from_string(s.at("split").get<std::string>());
        e.hlhs = s.at("hlhs").get<int>() != 0;
        e.image = s.at("image").get<std::string>();
        e.label = s.at("label").get<std::string>();
        e.image_crc32 = s.at("image_crc32").get<std::uint32_t>();
        e.label_crc32 = s.at("label_crc32").get<std::uint32_t>();
        e.true_areas = s.at("true_areas").get<std::array<std::int64_t, kNumClasses>>();
        m.samples.push_back(std::move(e));
    }
}

SplitPlan plan_splits(const PhantomConfig& c) {
    SplitPlan p;
    p.n_val = static_cast<int>(std::lround(c.n_samples * c.val_fraction));
    p.n_test = static_cast<int>(std::lround(c.n_samples * c.test_fraction));
    p.n_train = c.n_samples - p.n_val - p.n_test;
    if (p.n_train < 1) throw InvalidArgument("phantom: split fractions leave no training samples");
    const int n_hlhs = static_cast<int>(std::lround(c.n_samples * c.hlhs_fraction));
    p.hlhs_val = std::min(p.n_val, static_cast<int>(std::lround(p.n_val * c.hlhs_fraction)));
    p.hlhs_test = std::min(p.n_test, static_cast<int>(std::lround(p.n_test * c.hlhs_fraction)));
    p.hlhs_train = n_hlhs - p.hlhs_val - p.hlhs_test;
    // Rounding can push the remainder out of range; move the excess into the
    // evaluation splits so the global count stays exact.
    while (p.hlhs_train > p.n_train) {
        --p.hlhs_train;
        if (p.hlhs_test < p.n_test) ++p.hlhs_test;
        else ++p.hlhs_val;
    }
    while (p.hlhs_train < 0) {
        ++p.hlhs_train;
        if (p.hlhs_test > 0) --p.hlhs_test;
        else --p.hlhs_val;
    }
    return p;
}

std::array<std::int64_t, kNumClasses> count_classes(const LabelMap& labels) {
    std::array<std::int64_t, kNumClasses> counts{};
    for (auto v : labels.values()) {
        if (v >= kNumClasses) throw InvalidArgument("unknown class id " + std::to_string(v));
        ++counts[v];
    }
    return counts;
}

namespace {

struct Ellipse {
    double cx, cy;  // canonical pixel coordinates
    double ax, ay;  // semi-axes
    double metric(double x, double y) const {
        const double dx = (x - cx) / ax, dy = (y - cy) / ay;
        return dx * dx + dy * dy;
    }
};

// Class-dependent base intensities; chambers are dark (blood pool), the
// myocardium bright, background mid-grey.
constexpr std::array<double, kNumClasses> kBaseIntensity = {0.22, 0.10, 0.13, 0.07, 0.16, 0.78};
constexpr double kEchogenicFill = 0.55;

// Canonical chamber layout for a 112-pixel short side, scaled with the canvas.
struct ChamberTemplate {
    CardiacClass cls;
    double dx, dy, ax, ay;
};
constexpr std::array<ChamberTemplate, 4> kChambers = {{
    {CardiacClass::LeftAtrium, 19.0, -17.0, 15.0, 12.0},
    {CardiacClass::RightAtrium, -19.0, -17.0, 15.0, 12.0},
    {CardiacClass::LeftVentricle, 19.0, 15.0, 15.0, 17.0},
    {CardiacClass::RightVentricle, -19.0, 15.0, 15.0, 17.0},
}};
constexpr double kHullAx = 50.0, kHullAy = 40.0;

// Healthy LV/RV area ratio never falls below this, HLHS never exceeds the
// second bound; samples violating the margin are regenerated.
constexpr double kHealthyMinLvRv = 0.70;
constexpr double kHlhsMaxLvRv = 0.65;

std::vector<double> gaussian_blur(const std::vector<double>& src, int h, int w, double sigma) {
    const int radius = std::max(1, static_cast<int>(std::ceil(3 * sigma)));
    std::vector<double> kernel(2 * radius + 1);
    double norm = 0;
    for (int i = -radius; i <= radius; ++i) {
        kernel[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
        norm += kernel[i + radius];
    }
    for (auto& k : kernel) k /= norm;
    std::vector<double> tmp(src.size()), out(src.size());
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            double acc = 0;
            for (int i = -radius; i <= radius; ++i) {
                const int xx = std::clamp(x + i, 0, w - 1);
                acc += kernel[i + radius] * src[y * w + xx];
            }
            tmp[y * w + x] = acc;
        }
    }
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            double acc = 0;
            for (int i = -radius; i <= radius; ++i) {
                const int yy = std::clamp(y + i, 0, h - 1);
                acc += kernel[i + radius] * tmp[yy * w + x];
            }
            out[y * w + x] = acc;
        }
    }
    return out;
}

// One generation attempt; returns false when the geometry is degenerate.
bool try_generate(const PhantomConfig& cfg, Rng& rng, bool hlhs, SampleRecord& out) {
    const int h = cfg.image_height, w = cfg.image_width;
    const double unit = std::min(h, w) / 112.0;
    const double cx = (w - 1) / 2.0, cy = (h - 1) / 2.0;

    const Ellipse hull{cx, cy, kHullAx * unit, kHullAy * unit};
    std::array<Ellipse, 4> chambers{};
    Ellipse healthy_lv{};
    const double shrink = uniform(rng, cfg.lv_shrink_min, cfg.lv_shrink_max);
    for (std::size_t i = 0; i < kChambers.size(); ++i) {
        const auto& t = kChambers[i];
        const double sx = 1.0 + uniform(rng, -0.07, 0.07);
        const double sy = 1.0 + uniform(rng, -0.07, 0.07);
        Ellipse e{cx + t.dx * unit, cy + t.dy * unit, t.ax * unit * sx, t.ay * unit * sy};
        if (t.cls == CardiacClass::LeftVentricle) {
            healthy_lv = e;
            if (hlhs) {
                const double k = std::sqrt(shrink);
                e.ax *= k;
                e.ay *= k;
            }
        }
        if (t.cls == CardiacClass::LeftAtrium && hlhs) {
            const double k = std::sqrt(0.5 + 0.5 * shrink);
            e.ax *= k;
            e.ay *= k;
        }
        chambers[i] = e;
    }
    // Every chamber must sit strictly inside the hull.
    for (const auto& e : chambers) {
        for (int k = 0; k < 64; ++k) {
            const double a = 2 * std::numbers::pi * k / 64;
            if (hull.metric(e.cx + e.ax * std::cos(a), e.cy + e.ay * std::sin(a)) >= 0.97) return false;
        }
    }

    const double theta = uniform(rng, -cfg.rotation_jitter, cfg.rotation_jitter) * std::numbers::pi / 180.0;
    const double scale = 1.0 + uniform(rng, -cfg.scale_jitter, cfg.scale_jitter);
    const double tx = uniform(rng, -cfg.translation_jitter, cfg.translation_jitter);
    const double ty = uniform(rng, -cfg.translation_jitter, cfg.translation_jitter);
    const double ct = std::cos(theta), st = std::sin(theta);

    LabelMap labels(h, w, 0);
    std::vector<double> base(static_cast<std::size_t>(h) * w);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            // image -> canonical: inverse of p = c + t + s R (q - c)
            const double px = (x - cx - tx) / scale, py = (y - cy - ty) / scale;
            const double qx = cx + ct * px + st * py;
            const double qy = cy - st * px + ct * py;
            std::uint8_t cls = 0;
            double intensity = kBaseIntensity[0];
            if (hull.metric(qx, qy) < 1.0) {
                cls = static_cast<std::uint8_t>(CardiacClass::WholeHeart);
                intensity = kBaseIntensity[cls];
                if (hlhs && healthy_lv.metric(qx, qy) < 1.0) intensity = kEchogenicFill;
                // Chambers override the hull; the lowest class id wins ties.
                std::uint8_t best = kNumClasses;
                for (std::size_t i = 0; i < chambers.size(); ++i) {
                    if (chambers[i].metric(qx, qy) < 1.0) {
                        best = std::min(best, static_cast<std::uint8_t>(kChambers[i].cls));
                    }
                }
                if (best < kNumClasses) {
                    cls = best;
                    intensity = kBaseIntensity[cls];
                }
            }
            labels(y, x) = cls;
            base[static_cast<std::size_t>(y) * w + x] = intensity;
        }
    }

    // The heart must not touch the canvas border.
    for (int x = 0; x < w; ++x) {
        if (labels(0, x) != 0 || labels(h - 1, x) != 0) return false;
    }
    for (int y = 0; y < h; ++y) {
        if (labels(y, 0) != 0 || labels(y, w - 1) != 0) return false;
    }
    const auto counts = count_classes(labels);
    for (auto c : counts) {
        if (c == 0) return false;
    }
    const double lv_rv = static_cast<double>(counts[3]) / static_cast<double>(counts[4]);
    if (hlhs ? lv_rv > kHlhsMaxLvRv : lv_rv < kHealthyMinLvRv) return false;

    // Multiplicative speckle from a blurred Gaussian field, normalised to unit std.
    std::vector<double> noise(base.size());
    for (auto& n : noise) n = standard_normal(rng);
    noise = gaussian_blur(noise, h, w, 1.0);
    double var = 0;
    for (double n : noise) var += n * n;
    const double inv_std = 1.0 / std::sqrt(var / noise.size() + 1e-12);

    const double g_angle = uniform(rng, 0, 2 * std::numbers::pi);
    const double g_mag = uniform(rng, 0.0, 0.3);
    const double gx = g_mag * std::cos(g_angle), gy = g_mag * std::sin(g_angle);

    double shadow_angle = 0, shadow_width = 0;
    if (cfg.shadowing) {
        shadow_angle = uniform(rng, -0.5, 0.5);
        shadow_width = uniform(rng, 0.04, 0.08);
    }

    out.image = FloatImage(h, w);
    out.labelmap = std::move(labels);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const std::size_t i = static_cast<std::size_t>(y) * w + x;
            double v = base[i] * (1.0 + cfg.speckle_strength * noise[i] * inv_std);
            v *= 1.0 + gx * (x / double(w) - 0.5) + gy * (y / double(h) - 0.5);
            if (cfg.shadowing) {
                const double a = std::atan2(x - cx, y + 0.25 * h);
                if (std::abs(a - shadow_angle) < shadow_width) v *= 0.4;
            }
            v = std::clamp(v, 0.0, 1.0);
            // Quantise now so the in-memory record equals what a PNG round trip yields.
            const auto q = static_cast<std::uint8_t>(std::lround(v * 255.0));
            out.image(y, x) = static_cast<float>(q) / 255.0f;
        }
    }
    out.true_areas = counts;
    out.hlhs = hlhs;
    return true;
}

GrayImage quantise(const FloatImage& img) {
    GrayImage g(img.height(), img.width());
    for (std::size_t i = 0; i < img.size(); ++i) {
        g.values()[i] = static_cast<std::uint8_t>(std::lround(std::clamp(img.values()[i], 0.0f, 1.0f) * 255.0f));
    }
    return g;
}

FloatImage dequantise(const GrayImage& g) {
    FloatImage img(g.height(), g.width());
    for (std::size_t i = 0; i < g.size(); ++i) img.values()[i] = static_cast<float>(g.values()[i]) / 255.0f;
    return img;
}

struct Slot {
    Split split;
    bool hlhs;
};

std::vector<Slot> assign_slots(const PhantomConfig& cfg) {
    const SplitPlan plan = plan_splits(cfg);
    std::vector<Slot> slots;
    auto add = [&](Split s, int n, int n_hlhs) {
        for (int i = 0; i < n; ++i) slots.push_back({s, i < n_hlhs});
    };
    add(Split::Train, plan.n_train, plan.hlhs_train);
    add(Split::Val, plan.n_val, plan.hlhs_val);
    add(Split::Test, plan.n_test, plan.hlhs_test);
    Rng rng(child_seed(cfg.seed, "phantom.assign"));
    atlas_istn::shuffle(slots.begin(), slots.end(), rng);
    return slots;
}

std::string sample_id(int index) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "s%05d", index);
    return buf;
}

}  // namespace

SampleRecord generate_sample(const PhantomConfig& config, std::uint64_t sample_seed, bool hlhs, std::string id) {
    config.validate();
    constexpr int kMaxAttempts = 100;
    SampleRecord rec;
    for (int attempt = 0; attempt < kMaxAttempts; ++attempt) {
        Rng rng(child_seed(sample_seed, "attempt", static_cast<std::uint64_t>(attempt)));
        if (try_generate(config, rng, hlhs, rec)) {
            rec.id = std::move(id);
            return rec;
        }
    }
    throw NumericalError("phantom: sample '" + id + "' has degenerate geometry after 100 attempts");
}

std::vector<SampleRecord> generate_samples(const PhantomConfig& config) {
    config.validate();
    const auto slots = assign_slots(config);
    std::vector<SampleRecord> out;
    out.reserve(slots.size());
    for (std::size_t i = 0; i < slots.size(); ++i) {
        auto rec = generate_sample(config, child_seed(config.seed, "phantom.sample", i), slots[i].hlhs,
                                   sample_id(static_cast<int>(i)));
        rec.split = slots[i].split;
        out.push_back(std::move(rec));
    }
    return out;
}

DatasetManifest generate_dataset(const PhantomConfig& config, const fs::path& root) {
    config.validate();
    std::error_code ec;
    fs::create_directories(root / "images", ec);
    fs::create_directories(root / "labels", ec);
    if (ec || !fs::is_directory(root / "images") || !fs::is_directory(root / "labels")) {
        throw IoError("cannot create dataset directories under '" + root.string() + "'");
    }
    DatasetManifest manifest;
    manifest.config = config;
    for (auto& rec : generate_samples(config)) {
        ManifestEntry e;
        e.id = rec.id;
        e.split = rec.split;
        e.hlhs = rec.hlhs;
        e.image = fs::path("images") / (rec.id + ".png");
        e.label = fs::path("labels") / (rec.id + ".png");
        io::write_gray_png(root / e.image, quantise(rec.image));
        io::write_label_png(root / e.label, rec.labelmap);
        e.image_crc32 = io::crc32_file(root / e.image);
        e.label_crc32 = io::crc32_file(root / e.label);
        e.true_areas = rec.true_areas;
        manifest.samples.push_back(std::move(e));
    }
    std::ofstream out(root / "manifest.json");
    if (!out) throw IoError("cannot write '" + (root / "manifest.json").string() + "'");
    out << json(manifest).dump(2) << '\n';
    if (!out) throw IoError("short write to '" + (root / "manifest.json").string() + "'");
    return manifest;
}

DatasetManifest read_manifest(const fs::path& manifest_path) {
    std::ifstream in(manifest_path);
    if (!in) throw IoError("cannot open manifest '" + manifest_path.string() + "'");
    json j;
    try {
        in >> j;
        return j.get<DatasetManifest>();
    } catch (const json::exception& e) {
        throw IoError("invalid manifest '" + manifest_path.string() + "': " + e.what());
    }
}

std::vector<SampleRecord> load_dataset(const fs::path& manifest_path) {
    const auto manifest = read_manifest(manifest_path);
    const fs::path root = manifest_path.parent_path();
    std::vector<SampleRecord> out;
    out.reserve(manifest.samples.size());
    for (const auto& e : manifest.samples) {
        for (const auto& [rel, crc] : {std::pair{e.image, e.image_crc32}, std::pair{e.label, e.label_crc32}}) {
            const fs::path p = root / rel;
            if (!fs::exists(p)) throw IoError("missing file '" + p.string() + "'");
            if (io::crc32_file(p) != crc) throw IoError("checksum mismatch for '" + p.string() + "'");
        }
        SampleRecord rec;
        rec.id = e.id;
        rec.split = e.split;
        rec.hlhs = e.hlhs;
        rec.image = dequantise(io::read_gray_png(root / e.image));
        rec.labelmap = io::read_label_png(root / e.label);
        for (auto v : rec.labelmap.values()) {
            if (v >= kNumClasses) {
                throw IoError("unknown class id " + std::to_string(v) + " in '" + (root / e.label).string() + "'");
            }
        }
        if (rec.image.height() != manifest.config.image_height || rec.image.width() != manifest.config.image_width ||
            rec.labelmap.height() != rec.image.height() || rec.labelmap.width() != rec.image.width()) {
            throw IoError("sample '" + e.id + "' does not match the manifest image size");
        }
        rec.true_areas = e.true_areas;
        out.push_back(std::move(rec));
    }
    return out;
}

}  // namespace atlas_istn::phantom
