#include <gtest/gtest.h>

#include <fstream>
#include <set>
#include <sstream>

#include "atlas_istn/error.hpp"
#include "atlas_istn/image_io.hpp"
#include "atlas_istn/phantom.hpp"
#include "test_util.hpp"

using namespace atlas_istn;
using namespace atlas_istn::phantom;
namespace fs = std::filesystem;

namespace {

PhantomConfig small_config(int n, double fraction, std::uint64_t seed) {
    PhantomConfig c;
    c.n_samples = n;
    c.hlhs_fraction = fraction;
    c.seed = seed;
    return c;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace

TEST(Phantom, ZeroFractionGivesOnlyHealthy) {
    auto samples = generate_samples(small_config(10, 0.0, 7));
    ASSERT_EQ(samples.size(), 10u);
    for (const auto& s : samples) EXPECT_FALSE(s.hlhs);
}

TEST(Phantom, StratifiedCountIsExact) {
    auto samples = generate_samples(small_config(200, 0.10, 1));
    int n = 0;
    for (const auto& s : samples) n += s.hlhs;
    EXPECT_EQ(n, 20);
}

TEST(Phantom, TrueAreasMatchPixelScan) {
    for (const auto& s : generate_samples(small_config(30, 0.3, 11))) {
        std::array<std::int64_t, kNumClasses> counts{};
        for (int y = 0; y < s.labelmap.height(); ++y)
            for (int x = 0; x < s.labelmap.width(); ++x) ++counts[s.labelmap(y, x)];
        EXPECT_EQ(counts, s.true_areas) << s.id;
        for (int c = 0; c < kNumClasses; ++c) EXPECT_GT(counts[c], 0) << s.id << " class " << c;
    }
}

TEST(Phantom, ChambersSitInsideTheHeart) {
    for (const auto& s : generate_samples(small_config(20, 0.5, 5))) {
        const auto& l = s.labelmap;
        for (int y = 1; y + 1 < l.height(); ++y) {
            for (int x = 1; x + 1 < l.width(); ++x) {
                const int c = l(y, x);
                if (c < 1 || c > 4) continue;
                EXPECT_NE(l(y - 1, x), 0);
                EXPECT_NE(l(y + 1, x), 0);
                EXPECT_NE(l(y, x - 1), 0);
                EXPECT_NE(l(y, x + 1), 0);
            }
        }
    }
}

TEST(Phantom, ImagesAreQuantisedUnitRange) {
    auto s = generate_samples(small_config(3, 0.0, 2)).front();
    for (float v : s.image.values()) {
        ASSERT_GE(v, 0.0f);
        ASSERT_LE(v, 1.0f);
        EXPECT_FLOAT_EQ(v * 255.0f, std::round(v * 255.0f));
    }
}

TEST(Phantom, SameSeedSameSamples) {
    auto a = generate_samples(small_config(12, 0.25, 9));
    auto b = generate_samples(small_config(12, 0.25, 9));
    ASSERT_EQ(a.size(), b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        EXPECT_EQ(a[i].id, b[i].id);
        EXPECT_TRUE(a[i].image == b[i].image);
        EXPECT_TRUE(a[i].labelmap == b[i].labelmap);
        EXPECT_EQ(a[i].hlhs, b[i].hlhs);
    }
    auto c = generate_samples(small_config(12, 0.25, 10));
    EXPECT_FALSE(a[0].image == c[0].image);
}

TEST(Phantom, LvRvRatioSeparatesClasses) {
    auto samples = generate_samples(small_config(100, 0.5, 21));
    double max_hlhs = 0, min_healthy = 1e9;
    for (const auto& s : samples) {
        const double r = double(s.true_areas[3]) / double(s.true_areas[4]);
        if (s.hlhs) max_hlhs = std::max(max_hlhs, r);
        else min_healthy = std::min(min_healthy, r);
    }
    EXPECT_LT(max_hlhs, min_healthy);
}

TEST(Phantom, SplitsAreDisjointAndStratified) {
    auto cfg = small_config(150, 0.2, 4);
    auto samples = generate_samples(cfg);
    std::set<std::string> seen;
    std::array<int, 3> total{}, hlhs{};
    for (const auto& s : samples) {
        EXPECT_TRUE(seen.insert(s.id).second);
        ++total[static_cast<int>(s.split)];
        hlhs[static_cast<int>(s.split)] += s.hlhs;
    }
    const auto plan = plan_splits(cfg);
    EXPECT_EQ(total[0], plan.n_train);
    EXPECT_EQ(total[1], plan.n_val);
    EXPECT_EQ(total[2], plan.n_test);
    for (int k = 0; k < 3; ++k) EXPECT_LE(std::abs(hlhs[k] - cfg.hlhs_fraction * total[k]), 2.0) << k;
}

TEST(Phantom, InvalidConfigRejected) {
    auto c = small_config(10, 1.5, 0);
    EXPECT_THROW(c.validate(), InvalidArgument);
    c.hlhs_fraction = 0.1;
    c.image_height = 16;
    EXPECT_THROW(c.validate(), InvalidArgument);
    c.image_height = 112;
    c.lv_shrink_min = 0.0;
    EXPECT_THROW(c.validate(), InvalidArgument);
}

TEST(Phantom, SaveLoadRoundTrip) {
    auto root = atlas_istn::testing::temp_dir("phantom_roundtrip");
    auto cfg = small_config(16, 0.25, 3);
    auto manifest = generate_dataset(cfg, root);
    EXPECT_EQ(manifest.format_version, kManifestFormatVersion);
    EXPECT_EQ(manifest.samples.size(), 16u);
    auto expected = generate_samples(cfg);
    auto loaded = load_dataset(root / "manifest.json");
    ASSERT_EQ(loaded.size(), expected.size());
    for (std::size_t i = 0; i < loaded.size(); ++i) {
        EXPECT_EQ(loaded[i].id, expected[i].id);
        EXPECT_TRUE(loaded[i].image == expected[i].image);
        EXPECT_TRUE(loaded[i].labelmap == expected[i].labelmap);
        EXPECT_EQ(loaded[i].hlhs, expected[i].hlhs);
        EXPECT_EQ(loaded[i].split, expected[i].split);
        EXPECT_EQ(loaded[i].true_areas, expected[i].true_areas);
    }
    auto back = read_manifest(root / "manifest.json");
    EXPECT_EQ(back.samples.size(), manifest.samples.size());
    EXPECT_EQ(back.config.seed, cfg.seed);
}

TEST(Phantom, PersistedBytesAreDeterministic) {
    auto a = atlas_istn::testing::temp_dir("phantom_det_a");
    auto b = atlas_istn::testing::temp_dir("phantom_det_b");
    auto cfg = small_config(6, 0.5, 8);
    generate_dataset(cfg, a);
    generate_dataset(cfg, b);
    EXPECT_EQ(slurp(a / "manifest.json"), slurp(b / "manifest.json"));
    for (const auto& entry : fs::directory_iterator(a / "images")) {
        EXPECT_EQ(slurp(entry.path()), slurp(b / "images" / entry.path().filename()));
        EXPECT_EQ(slurp(a / "labels" / entry.path().filename()), slurp(b / "labels" / entry.path().filename()));
    }
}

TEST(Phantom, MissingFileIsNamed) {
    auto root = atlas_istn::testing::temp_dir("phantom_missing");
    auto m = generate_dataset(small_config(4, 0.0, 1), root);
    const auto victim = root / m.samples[2].image;
    fs::remove(victim);
    try {
        load_dataset(root / "manifest.json");
        FAIL() << "expected IoError";
    } catch (const IoError& e) {
        EXPECT_NE(std::string(e.what()).find(victim.filename().string()), std::string::npos) << e.what();
    }
}

TEST(Phantom, ChecksumMismatchDetected) {
    auto root = atlas_istn::testing::temp_dir("phantom_crc");
    auto m = generate_dataset(small_config(4, 0.0, 1), root);
    auto s = generate_samples(small_config(4, 0.0, 1));
    auto img = s[1].image;
    GrayImage g(img.height(), img.width());
    for (std::size_t i = 0; i < g.size(); ++i) g.values()[i] = 255 - static_cast<std::uint8_t>(std::lround(img.values()[i] * 255));
    io::write_gray_png(root / m.samples[0].image, g);
    EXPECT_THROW(load_dataset(root / "manifest.json"), IoError);
}

TEST(Phantom, UnknownClassIdRejected) {
    auto root = atlas_istn::testing::temp_dir("phantom_class6");
    auto m = generate_dataset(small_config(4, 0.0, 1), root);
    auto labels = generate_samples(small_config(4, 0.0, 1))[0].labelmap;
    labels(0, 0) = 6;
    const auto label_path = root / m.samples[0].label;
    io::write_indexed_png_unchecked(label_path, labels);

    // Keep the checksum consistent so the class-id check is what fires.
    std::ifstream in(root / "manifest.json");
    auto j = nlohmann::json::parse(in);
    in.close();
    for (auto& e : j.at("samples")) {
        if (e.at("id") == m.samples[0].id) e["label_crc32"] = io::crc32_file(label_path);
    }
    std::ofstream(root / "manifest.json") << j.dump(2);
    try {
        load_dataset(root / "manifest.json");
        FAIL() << "expected IoError";
    } catch (const IoError& e) {
        EXPECT_NE(std::string(e.what()).find("unknown class id"), std::string::npos) << e.what();
    }
}

TEST(Phantom, LabelPngRejectsOutOfRangeIds) {
    auto root = atlas_istn::testing::temp_dir("phantom_labelpng");
    LabelMap l(4, 4);
    l(1, 1) = 7;
    EXPECT_THROW(io::write_label_png(root / "x.png", l), InvalidArgument);
}
