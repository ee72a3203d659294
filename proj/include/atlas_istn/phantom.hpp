#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "atlas_istn/image.hpp"

namespace atlas_istn::phantom {

inline constexpr int kManifestFormatVersion = 1;

enum class Split { Train, Val, Test };
std::string to_string(Split s);
Split split_from_string(const std::string& s);

// Controls the synthetic 4-chamber phantom generator. Angles in degrees,
// offsets in pixels, scale jitter relative.
struct PhantomConfig {
    int image_height = 112;
    int image_width = 144;
    int n_samples = 100;
    double hlhs_fraction = 0.10;
    double lv_shrink_min = 0.15;
    double lv_shrink_max = 0.45;
    double rotation_jitter = 8.0;
    double translation_jitter = 6.0;
    double scale_jitter = 0.10;
    double speckle_strength = 0.25;
    bool shadowing = false;
    // When true the WH label marks only the myocardial tissue around the
    // chambers (as annotated); when false, area features treat WH as the
    // filled heart (WH plus all chambers). Label maps are identical either way.
    bool wh_excludes_chambers = true;
    double val_fraction = 0.16;
    double test_fraction = 0.20;
    std::uint64_t seed = 0;

    // Throws InvalidArgument on violated invariants.
    void validate() const;
};

void to_json(nlohmann::json& j, const PhantomConfig& c);
void from_json(const nlohmann::json& j, PhantomConfig& c);

struct SampleRecord {
    std::string id;
    FloatImage image;   // intensities in [0,1], quantised to 1/255 steps
    LabelMap labelmap;  // class ids 0..5
    bool hlhs = false;
    std::array<std::int64_t, kNumClasses> true_areas{};
    Split split = Split::Train;
};

struct ManifestEntry {
    std::string id;
    Split split = Split::Train;
    bool hlhs = false;
    std::filesystem::path image;  // relative to the dataset root
    std::filesystem::path label;
    std::uint32_t image_crc32 = 0;
    std::uint32_t label_crc32 = 0;
    std::array<std::int64_t, kNumClasses> true_areas{};
};

struct DatasetManifest {
    int format_version = kManifestFormatVersion;
    PhantomConfig config;
    std::vector<ManifestEntry> samples;

    std::vector<const ManifestEntry*> split(Split s) const;
};

void to_json(nlohmann::json& j, const DatasetManifest& m);
void from_json(const nlohmann::json& j, DatasetManifest& m);

// Number of HLHS samples per split under stratified assignment.
struct SplitPlan {
    int n_train = 0, n_val = 0, n_test = 0;
    int hlhs_train = 0, hlhs_val = 0, hlhs_test = 0;
};
SplitPlan plan_splits(const PhantomConfig& config);

// Builds one sample in memory. Deterministic in (config, sample_seed, hlhs).
SampleRecord generate_sample(const PhantomConfig& config, std::uint64_t sample_seed, bool hlhs, std::string id);

// Generates the whole dataset in memory (no files touched).
std::vector<SampleRecord> generate_samples(const PhantomConfig& config);

// Generates and persists the dataset under `root`:
//   root/manifest.json, root/images/<id>.png, root/labels/<id>.png
DatasetManifest generate_dataset(const PhantomConfig& config, const std::filesystem::path& root);

DatasetManifest read_manifest(const std::filesystem::path& manifest_path);

// Loads every sample referenced by the manifest, verifying checksums and
// class ids. Throws IoError naming the offending file.
std::vector<SampleRecord> load_dataset(const std::filesystem::path& manifest_path);

std::array<std::int64_t, kNumClasses> count_classes(const LabelMap& labels);

}  // namespace atlas_istn::phantom
