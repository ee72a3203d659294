#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "atlas_istn/classifiers.hpp"
#include "atlas_istn/features.hpp"
#include "atlas_istn/metrics.hpp"
#include "atlas_istn/phantom.hpp"
#include "atlas_istn/trainer.hpp"

namespace atlas_istn::experiment {

// One row of the results table: a segmentation variant with its loss weights.
struct Cell {
    std::string name;
    train::Variant variant = train::Variant::AtlasIstn;
    double lambda = 1.0;
    double gamma = 0.0;
};

// unet, ssn, atlas_g0_l1, atlas_g1_l1000, atlas_g1_l1.
const std::vector<Cell>& table_cells();

// Comma-separated list of cell names; "atlas" expands to the three atlas
// cells and "all" to every cell. Throws InvalidArgument on unknown names.
std::vector<Cell> select_cells(const std::string& list);

train::TrainConfig cell_config(const train::TrainConfig& base, const Cell& cell);

std::vector<features::FeatureRow> feature_rows(const std::vector<std::string>& ids, const std::vector<LabelMap>& labels,
                                               const std::vector<int>& hlhs, features::Source source,
                                               bool wh_excludes_chambers);

// Ground-truth features for one split of a loaded dataset.
std::vector<features::FeatureRow> expert_rows(const std::vector<phantom::SampleRecord>& samples, phantom::Split split,
                                              bool wh_excludes_chambers);

struct SplitPredictions {
    std::vector<std::string> ids;
    std::vector<int> hlhs;
    std::vector<LabelMap> gt, seg, atlas;
    std::vector<double> head_prob;  // empty unless the disease branch was queried
};

SplitPredictions predict_split(train::TrainState& state, const std::vector<phantom::SampleRecord>& samples,
                               phantom::Split split, bool with_atlas, bool with_head);

// Writes <variant>_<classifier>.json and <variant>_<classifier>_confusion.png.
void write_report(const std::filesystem::path& dir, const eval::MetricsReport& report);

// Fits LR and GP on the train rows and scores the test rows.
std::vector<eval::MetricsReport> classify(const std::string& variant, const std::vector<features::FeatureRow>& train,
                                          const std::vector<features::FeatureRow>& test, const Cell* cell,
                                          const std::optional<eval::DiceSummary>& dice,
                                          const clf::ClassifierOptions& options, double threshold);

// Reports for a trained model on the manifest's test split: LR and GP on the
// predicted-segmentation features, plus H when the model was trained with
// gamma > 0.
std::vector<eval::MetricsReport> evaluate_model(train::TrainState& state, const std::vector<phantom::SampleRecord>& samples,
                                                const std::string& variant, bool wh_excludes_chambers,
                                                const clf::ClassifierOptions& options, double threshold);

struct GridOptions {
    std::filesystem::path manifest;
    std::filesystem::path out_dir;
    std::vector<Cell> cells;
    bool include_expert = true;
    train::TrainConfig base;
    clf::ClassifierOptions classifiers;
    double threshold = 0.5;
    // When set, cells load <dir>/<cell>/checkpoint_best.ckpt instead of training.
    std::optional<std::filesystem::path> checkpoints_dir;
    std::function<void(const std::string&)> on_progress;
    train::EpochCallback on_epoch;
};

struct GridResult {
    std::vector<eval::MetricsReport> reports;
    nlohmann::json summary;
};

GridResult run_grid(const GridOptions& options);

// Table-1 style markdown: Dice per class then AUC/F1 per classifier.
std::string markdown_table(const std::vector<eval::MetricsReport>& reports);

// Reads every report JSON in `dir` (sorted by file name).
std::vector<eval::MetricsReport> read_reports(const std::filesystem::path& dir);

// Re-renders confusion PNGs and the markdown table from report JSONs.
void render_reports(const std::filesystem::path& report_dir, const std::filesystem::path& out_dir);

}  // namespace atlas_istn::experiment
