#include "atlas_istn/experiment.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "atlas_istn/error.hpp"
#include "atlas_istn/plots.hpp"

namespace atlas_istn::experiment {

namespace fs = std::filesystem;
using train::Variant;

const std::vector<Cell>& table_cells() {
    static const std::vector<Cell> cells = {
        {"unet", Variant::UNet, 1.0, 0.0},
        {"ssn", Variant::SSN, 1.0, 0.0},
        {"atlas_g0_l1", Variant::AtlasIstn, 1.0, 0.0},
        {"atlas_g1_l1000", Variant::AtlasIstn, 1000.0, 1.0},
        {"atlas_g1_l1", Variant::AtlasIstn, 1.0, 1.0},
    };
    return cells;
}

std::vector<Cell> select_cells(const std::string& list) {
    std::vector<Cell> out;
    auto add = [&](const Cell& c) {
        if (std::none_of(out.begin(), out.end(), [&](const Cell& o) { return o.name == c.name; })) out.push_back(c);
    };
    std::stringstream ss(list);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item.erase(0, item.find_first_not_of(" \t"));
        item.erase(item.find_last_not_of(" \t") + 1);
        if (item.empty()) continue;
        bool found = false;
        for (const auto& c : table_cells()) {
            const bool group = (item == "all") || (item == "atlas" && c.variant == Variant::AtlasIstn) ||
                               (item == "atlas_istn" && c.variant == Variant::AtlasIstn);
            if (group || c.name == item) {
                add(c);
                found = true;
            }
        }
        if (!found) throw InvalidArgument("unknown variant '" + item + "'");
    }
    if (out.empty()) throw InvalidArgument("no variants selected");
    return out;
}

train::TrainConfig cell_config(const train::TrainConfig& base, const Cell& cell) {
    train::TrainConfig c = base;
    c.variant = cell.variant;
    c.weights.lambda = cell.lambda;
    c.weights.gamma = cell.gamma;
    return c.normalized();
}

std::vector<features::FeatureRow> feature_rows(const std::vector<std::string>& ids, const std::vector<LabelMap>& labels,
                                               const std::vector<int>& hlhs, features::Source source,
                                               bool wh_excludes_chambers) {
    if (ids.size() != labels.size() || ids.size() != hlhs.size())
        throw InvalidArgument("feature_rows: length mismatch");
    std::vector<features::FeatureRow> rows;
    rows.reserve(ids.size());
    for (std::size_t i = 0; i < ids.size(); ++i)
        rows.push_back({ids[i],
                        features::ratio_features(features::area_counts(labels[i]), source, wh_excludes_chambers),
                        hlhs[i]});
    return rows;
}

std::vector<features::FeatureRow> expert_rows(const std::vector<phantom::SampleRecord>& samples, phantom::Split split,
                                              bool wh_excludes_chambers) {
    std::vector<features::FeatureRow> rows;
    for (const auto& s : samples)
        if (s.split == split)
            rows.push_back({s.id,
                            features::ratio_features(features::area_counts(s.labelmap), features::Source::ExpertGt,
                                                     wh_excludes_chambers),
                            s.hlhs ? 1 : 0});
    return rows;
}

SplitPredictions predict_split(train::TrainState& state, const std::vector<phantom::SampleRecord>& samples,
                               phantom::Split split, bool with_atlas, bool with_head) {
    const auto tensors = train::make_split(samples, split);
    SplitPredictions out;
    out.ids = tensors.ids;
    for (const auto& s : samples)
        if (s.split == split) {
            out.gt.push_back(s.labelmap);
            out.hlhs.push_back(s.hlhs ? 1 : 0);
        }
    if (tensors.size() == 0) return out;
    const auto preds = train::predict(state.model, tensors.images, with_atlas, with_head, state.config.exp_steps);
    for (const auto& p : preds) {
        out.seg.push_back(p.seg);
        if (with_atlas) out.atlas.push_back(p.atlas_in_image);
        if (with_head) out.head_prob.push_back(p.hlhs_prob);
    }
    return out;
}

void write_report(const fs::path& dir, const eval::MetricsReport& report) {
    fs::create_directories(dir);
    const std::string stem = report.variant + "_" + report.classifier;
    std::ofstream out(dir / (stem + ".json"));
    if (!out) throw IoError("cannot write report in " + dir.string());
    out << eval::to_json(report).dump(2) << "\n";
    if (!out) throw IoError("failed writing " + stem + ".json");
    out.close();
    plots::write_confusion_png(dir / (stem + "_confusion.png"), report.classification.confusion,
                               report.variant + " " + report.classifier);
}

std::vector<eval::MetricsReport> classify(const std::string& variant, const std::vector<features::FeatureRow>& train,
                                          const std::vector<features::FeatureRow>& test, const Cell* cell,
                                          const std::optional<eval::DiceSummary>& dice,
                                          const clf::ClassifierOptions& options, double threshold) {
    const Eigen::MatrixXd xtr = features::to_matrix(train), xte = features::to_matrix(test);
    const std::vector<int> ytr = features::to_labels(train), yte = features::to_labels(test);
    const std::string source = test.empty() ? "" : features::to_string(test.front().features.source);
    std::vector<eval::MetricsReport> out;
    for (clf::Kind kind : {clf::Kind::Logistic, clf::Kind::GP}) {
        const auto model = clf::fit_classifier(kind, xtr, ytr, options);
        const Eigen::VectorXd p = model.predict_proba(xte);
        eval::MetricsReport r;
        r.variant = variant;
        r.classifier = clf::to_string(kind);
        r.seg_source = source;
        r.lambda = cell ? cell->lambda : 0.0;
        r.gamma = cell ? cell->gamma : 0.0;
        r.has_dice = dice.has_value();
        if (dice) r.dice = *dice;
        eval::fill_classification(r, yte, std::vector<double>(p.data(), p.data() + p.size()), threshold);
        out.push_back(r);
    }
    return out;
}

std::vector<eval::MetricsReport> evaluate_model(train::TrainState& state, const std::vector<phantom::SampleRecord>& samples,
                                                const std::string& variant, bool wh_excludes_chambers,
                                                const clf::ClassifierOptions& options, double threshold) {
    const bool head = state.config.uses_atlas() && state.config.weights.gamma > 0;
    const auto tr = predict_split(state, samples, phantom::Split::Train, false, false);
    const auto te = predict_split(state, samples, phantom::Split::Test, false, head);
    if (tr.ids.empty() || te.ids.empty()) throw InvalidArgument("manifest needs non-empty train and test splits");

    const auto dice = eval::summarize_dice(te.seg, te.gt);
    const auto src = features::Source::SegPrediction;
    const auto train_rows = feature_rows(tr.ids, tr.seg, tr.hlhs, src, wh_excludes_chambers);
    const auto test_rows = feature_rows(te.ids, te.seg, te.hlhs, src, wh_excludes_chambers);

    Cell cell{variant, state.config.variant, state.config.weights.lambda, state.config.weights.gamma};
    auto reports = classify(variant, train_rows, test_rows, &cell, dice, options, threshold);
    if (head) {
        eval::MetricsReport r;
        r.variant = variant;
        r.classifier = "h";
        r.seg_source = "disease_branch";
        r.lambda = cell.lambda;
        r.gamma = cell.gamma;
        r.has_dice = true;
        r.dice = dice;
        eval::fill_classification(r, te.hlhs, te.head_prob, threshold);
        reports.push_back(r);
    }
    return reports;
}

GridResult run_grid(const GridOptions& opt) {
    const auto manifest = phantom::read_manifest(opt.manifest);
    const auto samples = phantom::load_dataset(opt.manifest);
    const bool wh_excl = manifest.config.wh_excludes_chambers;
    auto progress = [&](const std::string& msg) {
        if (opt.on_progress) opt.on_progress(msg);
    };
    fs::create_directories(opt.out_dir);

    GridResult result;
    nlohmann::json cells = nlohmann::json::array();

    if (opt.include_expert) {
        progress("expert");
        eval::DiceSummary perfect;
        perfect.mean.fill(1.0);
        perfect.std.fill(0.0);
        auto reports = classify("expert", expert_rows(samples, phantom::Split::Train, wh_excl),
                                expert_rows(samples, phantom::Split::Test, wh_excl), nullptr, perfect,
                                opt.classifiers, opt.threshold);
        result.reports.insert(result.reports.end(), reports.begin(), reports.end());
        cells.push_back({{"name", "expert"}, {"source", "expert_gt"}});
    }

    for (const auto& cell : opt.cells) {
        train::TrainConfig cfg = cell_config(opt.base, cell);
        cfg.manifest = opt.manifest;
        cfg.model.height = manifest.config.image_height;
        cfg.model.width = manifest.config.image_width;
        fs::path ckpt;
        if (opt.checkpoints_dir) {
            ckpt = *opt.checkpoints_dir / cell.name / "checkpoint_best.ckpt";
            if (!fs::exists(ckpt)) throw IoError("missing checkpoint " + ckpt.string());
            progress(cell.name + ": loading " + ckpt.string());
        } else {
            const fs::path run_dir = opt.out_dir / cell.name;
            const fs::path last = run_dir / "checkpoint_last.ckpt";
            std::optional<fs::path> resume;
            if (fs::exists(last)) resume = last;
            progress(cell.name + (resume ? ": resuming" : ": training"));
            ckpt = train::train(cfg, run_dir, resume, opt.on_epoch).best_checkpoint;
        }
        auto state = train::load_checkpoint(ckpt);
        progress(cell.name + ": evaluating");
        auto reports = evaluate_model(state, samples, cell.name, wh_excl, opt.classifiers, opt.threshold);
        cells.push_back({{"name", cell.name},
                         {"variant", train::to_string(cell.variant)},
                         {"lambda", cell.lambda},
                         {"gamma", cell.gamma},
                         {"best_epoch", state.best_epoch},
                         {"best_val_mean_fg_dice", state.best_val}});
        result.reports.insert(result.reports.end(), reports.begin(), reports.end());
    }

    for (const auto& r : result.reports) write_report(opt.out_dir, r);

    auto auc_of = [&](const std::string& variant, const std::string& classifier) -> std::optional<double> {
        for (const auto& r : result.reports)
            if (r.variant == variant && r.classifier == classifier) return r.auc;
        return std::nullopt;
    };
    nlohmann::json observations = nlohmann::json::object();
    const auto g1 = auc_of("atlas_g1_l1", "gp"), g0 = auc_of("atlas_g0_l1", "lr");
    if (g1 && g0)
        observations["atlas_g1_l1_gp_auc_ge_atlas_g0_l1_lr_auc"] = {
            {"atlas_g1_l1_gp", *g1}, {"atlas_g0_l1_lr", *g0}, {"holds", *g1 >= *g0}};

    nlohmann::json files = nlohmann::json::array();
    for (const auto& r : result.reports) files.push_back(r.variant + "_" + r.classifier + ".json");
    result.summary = {{"format_version", eval::kMetricsFormatVersion},
                      {"manifest_test_size", static_cast<std::int64_t>(manifest.split(phantom::Split::Test).size())},
                      {"cells", cells},
                      {"reports", files},
                      {"observations", observations}};
    {
        std::ofstream out(opt.out_dir / "grid_summary.json");
        out << result.summary.dump(2) << "\n";
        if (!out) throw IoError("failed writing grid_summary.json");
    }
    {
        std::ofstream out(opt.out_dir / "results_table.md");
        out << markdown_table(result.reports);
        if (!out) throw IoError("failed writing results_table.md");
    }
    return result;
}

namespace {

std::string fmt(double v, int digits = 3) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.*f", digits, v);
    return buf;
}

}  // namespace

std::string markdown_table(const std::vector<eval::MetricsReport>& reports) {
    // Expert first, then the table cells in their fixed order, then anything else.
    auto rank = [](const std::string& v) {
        if (v == "expert") return 0;
        const auto& cells = table_cells();
        for (std::size_t i = 0; i < cells.size(); ++i)
            if (cells[i].name == v) return static_cast<int>(i) + 1;
        return 1000;
    };
    std::vector<std::string> order;
    for (const auto& r : reports)
        if (std::find(order.begin(), order.end(), r.variant) == order.end()) order.push_back(r.variant);
    std::stable_sort(order.begin(), order.end(), [&](const std::string& a, const std::string& b) {
        return rank(a) != rank(b) ? rank(a) < rank(b) : a < b;
    });

    std::ostringstream os;
    os << "| Method |";
    for (int c = 1; c < kNumClasses; ++c) os << " " << kClassNames[c] << " Dice |";
    for (const char* k : {"LR", "GP", "H"}) os << " " << k << " AUC | " << k << " F1 NC | " << k << " F1 HLHS |";
    os << "\n|---|";
    for (int c = 1; c < kNumClasses; ++c) os << "---|";
    os << "---|---|---|---|---|---|---|---|---|\n";
    for (const auto& v : order) {
        os << "| " << v << " |";
        const eval::MetricsReport* any = nullptr;
        for (const auto& r : reports)
            if (r.variant == v && r.has_dice) any = &r;
        for (int c = 1; c < kNumClasses; ++c)
            os << " " << (any ? fmt(any->dice.mean[c]) + " ± " + fmt(any->dice.std[c]) : std::string("-")) << " |";
        for (const char* k : {"lr", "gp", "h"}) {
            const eval::MetricsReport* hit = nullptr;
            for (const auto& r : reports)
                if (r.variant == v && r.classifier == k) hit = &r;
            if (hit)
                os << " " << fmt(hit->auc) << " | " << fmt(hit->classification.f1_nc) << " | "
                   << fmt(hit->classification.f1_hlhs) << " |";
            else
                os << " - | - | - |";
        }
        os << "\n";
    }
    return os.str();
}

std::vector<eval::MetricsReport> read_reports(const fs::path& dir) {
    if (!fs::is_directory(dir)) throw IoError("not a directory: " + dir.string());
    std::vector<fs::path> paths;
    for (const auto& e : fs::directory_iterator(dir))
        if (e.is_regular_file() && e.path().extension() == ".json") paths.push_back(e.path());
    std::sort(paths.begin(), paths.end());
    std::vector<eval::MetricsReport> out;
    for (const auto& p : paths) {
        std::ifstream in(p);
        nlohmann::json j = nlohmann::json::parse(in, nullptr, false);
        if (j.is_discarded() || !j.is_object() || !j.contains("provenance") || !j.contains("confusion")) continue;
        try {
            out.push_back(eval::report_from_json(j));
        } catch (const std::exception& e) {
            throw IoError("malformed report " + p.string() + ": " + e.what());
        }
    }
    if (out.empty()) throw IoError("no report JSON files in " + dir.string());
    return out;
}

void render_reports(const fs::path& report_dir, const fs::path& out_dir) {
    const auto reports = read_reports(report_dir);
    fs::create_directories(out_dir);
    for (const auto& r : reports)
        plots::write_confusion_png(out_dir / (r.variant + "_" + r.classifier + "_confusion.png"),
                                   r.classification.confusion, r.variant + " " + r.classifier);
    std::ofstream out(out_dir / "results_table.md");
    out << markdown_table(reports);
    if (!out) throw IoError("failed writing results_table.md");
}

}  // namespace atlas_istn::experiment
