#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "atlas_istn/classifiers.hpp"
#include "atlas_istn/error.hpp"
#include "atlas_istn/experiment.hpp"
#include "atlas_istn/features.hpp"
#include "atlas_istn/phantom.hpp"
#include "atlas_istn/rng.hpp"
#include "atlas_istn/run_manifest.hpp"
#include "atlas_istn/trainer.hpp"

namespace fs = std::filesystem;
using namespace atlas_istn;
using nlohmann::json;

namespace {

constexpr int kExitUsage = 1;
constexpr int kExitRuntime = 2;

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct Globals {
    std::uint64_t seed = 0;
    bool deterministic = false;
    std::string out_dir;
    std::string config;
};

void error_record(const std::string& command, const std::string& kind, const std::string& message, int code) {
    json j = {{"status", "error"}, {"command", command}, {"kind", kind}, {"message", message}, {"exit_code", code}};
    std::cerr << j.dump() << std::endl;
}

// key = value lines; '#' starts a comment. Keys use the long flag names with
// '-' or '_' interchangeably.
std::vector<std::pair<std::string, std::string>> read_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw UsageError("cannot read config file '" + path + "'");
    std::vector<std::pair<std::string, std::string>> out;
    std::string line;
    int n = 0;
    auto trim = [](std::string s) {
        s.erase(0, s.find_first_not_of(" \t\r"));
        s.erase(s.find_last_not_of(" \t\r") + 1);
        return s;
    };
    while (std::getline(in, line)) {
        ++n;
        if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw UsageError(path + ":" + std::to_string(n) + ": expected key = value");
        std::string key = trim(line.substr(0, eq));
        std::replace(key.begin(), key.end(), '_', '-');
        if (key.empty()) throw UsageError(path + ":" + std::to_string(n) + ": empty key");
        out.emplace_back(key, trim(line.substr(eq + 1)));
    }
    return out;
}

std::optional<std::string> find_config_arg(int argc, char** argv) {
    for (int i = 1; i < argc; ++i) {
        const std::string a = argv[i];
        if (a == "--config" && i + 1 < argc) return std::string(argv[i + 1]);
        if (a.rfind("--config=", 0) == 0) return a.substr(9);
    }
    return std::nullopt;
}

// ------------------------------------------------------------ option sets

struct TrainFlags {
    std::string manifest;
    std::string variant = "atlas_istn";
    double lambda = 1.0, gamma = 1.0, omega = 1.0;
    int epochs = 50, batch_size = 8, warmup_epochs = 2, checkpoint_interval = 1;
    double learning_rate = 1e-3;
    int base_channels = 16, depth = 4, ssn_rank = 5, bottleneck = 256, exp_steps = 6;
    double intensity_momentum = 0.95;
    bool augment = false, ssn_mc_loss = false;
    int ssn_mc_samples = 10;
    std::string resume;
};

void add_model_options(CLI::App* sub, TrainFlags& f) {
    sub->add_option("--epochs", f.epochs, "training epochs")->check(CLI::PositiveNumber);
    sub->add_option("--batch-size", f.batch_size)->check(CLI::PositiveNumber);
    sub->add_option("--lr", f.learning_rate, "Adam learning rate")->check(CLI::PositiveNumber);
    sub->add_option("--omega", f.omega, "weight of the registration terms")->check(CLI::NonNegativeNumber);
    sub->add_option("--warmup-epochs", f.warmup_epochs)->check(CLI::NonNegativeNumber);
    sub->add_option("--checkpoint-interval", f.checkpoint_interval)->check(CLI::PositiveNumber);
    sub->add_option("--base-channels", f.base_channels)->check(CLI::PositiveNumber);
    sub->add_option("--depth", f.depth)->check(CLI::PositiveNumber);
    sub->add_option("--ssn-rank", f.ssn_rank)->check(CLI::NonNegativeNumber);
    sub->add_option("--bottleneck", f.bottleneck)->check(CLI::PositiveNumber);
    sub->add_option("--exp-steps", f.exp_steps, "scaling-and-squaring steps")->check(CLI::NonNegativeNumber);
    sub->add_option("--intensity-momentum", f.intensity_momentum)->check(CLI::Range(0.0, 1.0));
    sub->add_flag("--augment", f.augment, "random shifts of image and label");
    sub->add_flag("--ssn-mc-loss", f.ssn_mc_loss);
    sub->add_option("--ssn-mc-samples", f.ssn_mc_samples)->check(CLI::PositiveNumber);
}

train::TrainConfig make_train_config(const TrainFlags& f, const Globals& g, const phantom::DatasetManifest& m) {
    train::TrainConfig c;
    try {
        c.variant = train::variant_from_string(f.variant);
    } catch (const InvalidArgument& e) {
        throw UsageError(e.what());
    }
    c.weights.lambda = f.lambda;
    c.weights.gamma = f.gamma;
    c.weights.omega = f.omega;
    c.epochs = f.epochs;
    c.batch_size = f.batch_size;
    c.learning_rate = f.learning_rate;
    c.seed = g.seed;
    c.checkpoint_interval = f.checkpoint_interval;
    c.manifest = fs::path(f.manifest).lexically_normal();
    c.model.height = m.config.image_height;
    c.model.width = m.config.image_width;
    c.model.seg.base_channels = f.base_channels;
    c.model.seg.depth = f.depth;
    c.model.seg.ssn_rank = f.ssn_rank;
    c.model.mapper.bottleneck_dim = f.bottleneck;
    c.warmup_epochs = f.warmup_epochs;
    c.exp_steps = f.exp_steps;
    c.intensity_momentum = f.intensity_momentum;
    c.augment = f.augment;
    c.ssn_mc_loss = f.ssn_mc_loss;
    c.ssn_mc_samples = f.ssn_mc_samples;
    c = c.normalized();
    try {
        c.validate();
    } catch (const InvalidArgument& e) {
        throw UsageError(e.what());
    }
    return c;
}

struct ClassifierFlags {
    double l2 = 1e-3;
    bool unbalanced = false;
    bool fixed_hyperparameters = false;
    double signal_variance = 1.0;
    double length_scale = -1.0;
    int restarts = 3;
};

void add_classifier_options(CLI::App* sub, ClassifierFlags& f) {
    sub->add_option("--l2", f.l2, "logistic L2 strength")->check(CLI::NonNegativeNumber);
    sub->add_flag("--unbalanced", f.unbalanced, "disable balanced class weights (logistic)");
    sub->add_flag("--fixed-hyperparameters", f.fixed_hyperparameters, "skip GP marginal likelihood search");
    sub->add_option("--signal-variance", f.signal_variance)->check(CLI::PositiveNumber);
    sub->add_option("--length-scale", f.length_scale, "<= 0 means sqrt(dim)");
    sub->add_option("--restarts", f.restarts)->check(CLI::PositiveNumber);
}

clf::ClassifierOptions make_classifier_options(const ClassifierFlags& f, const Globals& g) {
    clf::ClassifierOptions o;
    o.logistic.l2 = f.l2;
    o.logistic.balanced = !f.unbalanced;
    o.gp.optimize_hyperparameters = !f.fixed_hyperparameters;
    o.gp.signal_variance = f.signal_variance;
    o.gp.length_scale = f.length_scale;
    o.gp.restarts = f.restarts;
    o.gp.seed = child_seed(g.seed, "gp");
    return o;
}

json classifier_options_json(const clf::ClassifierOptions& o) {
    return {{"l2", o.logistic.l2},
            {"balanced", o.logistic.balanced},
            {"optimize_hyperparameters", o.gp.optimize_hyperparameters},
            {"signal_variance", o.gp.signal_variance},
            {"length_scale", o.gp.length_scale},
            {"restarts", o.gp.restarts}};
}

void print_epoch(const train::EpochLog& e) {
    std::cout << "epoch " << e.epoch << " total=" << e.total << " L_S=" << e.seg << " L_a2s=" << e.a2s
              << " L_s2a=" << e.s2a << " L_reg=" << e.reg << " L_HLHS=" << e.hlhs
              << " val_fg_dice=" << e.val_mean_fg_dice << std::endl;
}

std::vector<phantom::Split> parse_splits(const std::string& s) {
    if (s == "all") return {phantom::Split::Train, phantom::Split::Val, phantom::Split::Test};
    try {
        return {phantom::split_from_string(s)};
    } catch (const InvalidArgument& e) {
        throw UsageError(e.what());
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Disease-conditioned atlas registration and segmentation pipeline on synthetic cardiac phantoms.",
                 "atlas-istn"};
    app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
    app.require_subcommand(1);
    app.fallthrough();

    Globals g;
    app.add_option("--seed", g.seed, "root seed for every random stream");
    app.add_flag("--deterministic", g.deterministic, "single-threaded, reproducible execution; no timestamps");
    app.add_option("--out-dir", g.out_dir, "output directory (default: $ATLAS_ISTN_OUT, else ./atlas_istn_out)");
    app.add_option("--config", g.config, "key = value file; explicit flags take precedence");

    // gen-data
    auto* gen = app.add_subcommand("gen-data", "generate a synthetic phantom dataset");
    phantom::PhantomConfig pc;
    std::vector<double> lv_range;
    gen->add_option("-n,--n,--n-samples", pc.n_samples, "number of samples")->check(CLI::PositiveNumber);
    gen->add_option("--height", pc.image_height)->check(CLI::PositiveNumber);
    gen->add_option("--width", pc.image_width)->check(CLI::PositiveNumber);
    gen->add_option("--hlhs-fraction", pc.hlhs_fraction)->check(CLI::Range(0.0, 1.0));
    gen->add_option("--lv-shrink-min", pc.lv_shrink_min);
    gen->add_option("--lv-shrink-max", pc.lv_shrink_max);
    gen->add_option("--rotation-jitter", pc.rotation_jitter, "degrees");
    gen->add_option("--translation-jitter", pc.translation_jitter, "pixels");
    gen->add_option("--scale-jitter", pc.scale_jitter, "relative");
    gen->add_option("--speckle", pc.speckle_strength);
    gen->add_flag("--shadowing", pc.shadowing, "acoustic shadowing artefact");
    gen->add_option("--wh-excludes-chambers", pc.wh_excludes_chambers,
                    "true: WH area is the myocardial band; false: the filled heart");
    gen->add_option("--val-fraction", pc.val_fraction);
    gen->add_option("--test-fraction", pc.test_fraction);

    // train
    auto* trn = app.add_subcommand("train", "train one segmentation/registration variant");
    TrainFlags tf;
    trn->add_option("--manifest", tf.manifest, "dataset manifest.json")->required()->check(CLI::ExistingFile);
    trn->add_option("--variant", tf.variant, "unet | ssn | atlas_istn");
    trn->add_option("--lambda", tf.lambda, "smoothness weight")->check(CLI::NonNegativeNumber);
    trn->add_option("--gamma", tf.gamma, "disease-branch weight")->check(CLI::NonNegativeNumber);
    trn->add_option("--resume", tf.resume, "checkpoint to continue from")->check(CLI::ExistingFile);
    add_model_options(trn, tf);

    // export-atlas
    auto* exa = app.add_subcommand("export-atlas", "write the learned atlas as PNG and NPY");
    std::string checkpoint;
    exa->add_option("--checkpoint", checkpoint)->required()->check(CLI::ExistingFile);

    // extract-features
    auto* exf = app.add_subcommand("extract-features", "area-ratio features to CSV");
    std::string manifest_path, source = "expert_gt", split = "all";
    exf->add_option("--manifest", manifest_path)->required()->check(CLI::ExistingFile);
    exf->add_option("--source", source, "expert_gt | seg_prediction | atlas_warped");
    exf->add_option("--checkpoint", checkpoint, "required unless --source expert_gt")->check(CLI::ExistingFile);
    exf->add_option("--split", split, "train | val | test | all");

    // fit-classifier
    auto* fit = app.add_subcommand("fit-classifier", "fit LR or GP on a feature CSV");
    std::string features_path, classifier = "gp";
    ClassifierFlags cf;
    fit->add_option("--features", features_path, "training feature CSV")->required()->check(CLI::ExistingFile);
    fit->add_option("--classifier", classifier, "lr | gp");
    add_classifier_options(fit, cf);

    // evaluate
    auto* evl = app.add_subcommand("evaluate", "metric reports for a model or a trained checkpoint");
    std::string model_path, variant_name;
    double threshold = 0.5;
    bool expert = false;
    evl->add_option("--checkpoint", checkpoint, "trained checkpoint (with --manifest)")->check(CLI::ExistingFile);
    evl->add_option("--manifest", manifest_path)->check(CLI::ExistingFile);
    evl->add_flag("--expert", expert, "ground-truth features of the manifest (with --manifest)");
    evl->add_option("--model", model_path, "fitted classifier JSON (with --features)")->check(CLI::ExistingFile);
    evl->add_option("--features", features_path, "test feature CSV")->check(CLI::ExistingFile);
    evl->add_option("--variant", variant_name, "name used in report files");
    evl->add_option("--threshold", threshold, "probability threshold for hard labels")->check(CLI::Range(0.0, 1.0));
    add_classifier_options(evl, cf);

    // grid
    auto* grd = app.add_subcommand("grid", "train and evaluate the full results table");
    std::string variants = "unet,ssn,atlas", checkpoints_dir;
    bool no_expert = false;
    grd->add_option("--manifest", tf.manifest)->required()->check(CLI::ExistingFile);
    grd->add_option("--variants", variants, "comma list of unet, ssn, atlas, atlas_g0_l1, atlas_g1_l1000, atlas_g1_l1");
    grd->add_flag("--no-expert", no_expert, "skip the ground-truth feature row");
    grd->add_option("--checkpoints-dir", checkpoints_dir, "load <dir>/<cell>/checkpoint_best.ckpt instead of training")
        ->check(CLI::ExistingDirectory);
    grd->add_option("--threshold", threshold)->check(CLI::Range(0.0, 1.0));
    add_model_options(grd, tf);
    add_classifier_options(grd, cf);

    // report
    auto* rep = app.add_subcommand("report", "render confusion plots and the table from report JSONs");
    std::string reports_dir;
    rep->add_option("--reports", reports_dir, "directory of report JSONs (default: --out-dir)");

    // Config file values are injected right after the subcommand name so that
    // any explicit flag later on the command line wins.
    std::vector<std::string> args(argv, argv + argc);
    std::string command = "atlas-istn";
    for (int i = 1; i < argc && command == "atlas-istn"; ++i)
        for (auto* s : app.get_subcommands([](const CLI::App*) { return true; }))
            if (s->get_name() == argv[i]) command = argv[i];
    try {
        if (auto cfg_path = find_config_arg(argc, argv)) {
            const auto entries = read_config(*cfg_path);
            std::size_t sub_pos = 0;
            CLI::App* sub = nullptr;
            for (std::size_t i = 1; i < args.size() && !sub; ++i)
                for (auto* s : app.get_subcommands([](const CLI::App*) { return true; }))
                    if (s->get_name() == args[i]) {
                        sub = s;
                        sub_pos = i;
                    }
            std::vector<std::string> injected;
            for (const auto& [key, value] : entries) {
                const std::string flag = "--" + key;
                if (key == "config") throw UsageError("config files cannot nest");
                const bool global = app.get_option_no_throw(flag) != nullptr;
                const bool here = sub && sub->get_option_no_throw(flag) != nullptr;
                bool elsewhere = false;
                for (auto* s : app.get_subcommands([](const CLI::App*) { return true; }))
                    elsewhere = elsewhere || s->get_option_no_throw(flag) != nullptr;
                if (!global && !elsewhere) throw UsageError("unknown config key '" + key + "'");
                if (global || here) injected.push_back(flag + "=" + value);
            }
            if (sub) args.insert(args.begin() + static_cast<std::ptrdiff_t>(sub_pos) + 1, injected.begin(),
                                 injected.end());
        }
        std::vector<const char*> cargs;
        for (const auto& a : args) cargs.push_back(a.c_str());
        app.parse(static_cast<int>(cargs.size()), cargs.data());
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << e.what() << "\n" << app.help() << std::flush;
        error_record(command, "usage", e.what(), kExitUsage);
        return kExitUsage;
    } catch (const UsageError& e) {
        std::cerr << e.what() << "\n" << app.help() << std::flush;
        error_record(command, "usage", e.what(), kExitUsage);
        return kExitUsage;
    }

    for (auto* s : app.get_subcommands()) command = s->get_name();
    if (g.out_dir.empty()) {
        const char* env = std::getenv("ATLAS_ISTN_OUT");
        g.out_dir = (env && *env) ? env : "atlas_istn_out";
    }
    const fs::path out = g.out_dir;

    run::RunManifest rm;
    rm.command = command;
    rm.seed = g.seed;
    rm.deterministic = g.deterministic;
    if (!g.deterministic) rm.started_utc = run::utc_now();
    auto add_input = [&](const fs::path& p) { rm.inputs.push_back({p.generic_string(), run::git_blob_hash(p)}); };
    if (!g.config.empty()) add_input(g.config);

    bool running = false;
    auto finish = [&](const std::string& status, const std::string& error) {
        rm.status = status;
        rm.error = error;
        std::error_code ec;
        if (fs::is_directory(out, ec)) rm.outputs = run::digest_tree(out);
        if (!g.deterministic) rm.finished_utc = run::utc_now();
        rm.write(out);
    };

    try {
        train::set_deterministic(g.deterministic);
        fs::create_directories(out);

        if (command == "gen-data") {
            pc.seed = g.seed;
            try {
                pc.validate();
            } catch (const InvalidArgument& e) {
                throw UsageError(e.what());
            }
            rm.config = pc;
            running = true;
            const auto m = phantom::generate_dataset(pc, out);
            std::cout << "wrote " << m.samples.size() << " samples to " << (out / "manifest.json").string()
                      << std::endl;

        } else if (command == "train") {
            const auto m = phantom::read_manifest(tf.manifest);
            add_input(tf.manifest);
            std::optional<fs::path> resume;
            if (!tf.resume.empty()) {
                resume = tf.resume;
                add_input(tf.resume);
            }
            const auto cfg = make_train_config(tf, g, m);
            rm.config = cfg;
            rm.config["manifest"] = tf.manifest;
            running = true;
            const auto r = train::train(cfg, out, resume, print_epoch);
            std::cout << "best checkpoint " << r.best_checkpoint.string() << std::endl;

        } else if (command == "export-atlas") {
            add_input(checkpoint);
            running = true;
            auto state = train::load_checkpoint(checkpoint);
            rm.config = {{"checkpoint", checkpoint}};
            const auto e = train::export_atlas(state, out);
            std::cout << "wrote " << e.label_png.string() << ", " << e.probs_npy.string() << ", "
                      << e.intensity_png.string() << std::endl;

        } else if (command == "extract-features") {
            const auto src = [&] {
                try {
                    return features::source_from_string(source);
                } catch (const InvalidArgument& e) {
                    throw UsageError(e.what());
                }
            }();
            const auto splits = parse_splits(split);
            if (src != features::Source::ExpertGt && checkpoint.empty())
                throw UsageError("--checkpoint is required for source " + source);
            add_input(manifest_path);
            if (!checkpoint.empty()) add_input(checkpoint);
            rm.config = {{"manifest", manifest_path}, {"source", source}, {"split", split}, {"checkpoint", checkpoint}};
            running = true;
            const auto m = phantom::read_manifest(manifest_path);
            const auto samples = phantom::load_dataset(manifest_path);
            const bool wh = m.config.wh_excludes_chambers;
            std::optional<train::TrainState> state;
            if (src != features::Source::ExpertGt) state = train::load_checkpoint(checkpoint);
            for (auto sp : splits) {
                std::vector<features::FeatureRow> rows;
                if (src == features::Source::ExpertGt) {
                    rows = experiment::expert_rows(samples, sp, wh);
                } else {
                    const bool atlas = src == features::Source::AtlasWarped;
                    if (atlas && !state->config.uses_atlas())
                        throw InvalidArgument("checkpoint variant has no atlas");
                    const auto p = experiment::predict_split(*state, samples, sp, atlas, false);
                    rows = experiment::feature_rows(p.ids, atlas ? p.atlas : p.seg, p.hlhs, src, wh);
                }
                const fs::path path = out / ("features_" + phantom::to_string(sp) + ".csv");
                features::write_feature_csv(path, rows);
                std::cout << "wrote " << rows.size() << " rows to " << path.string() << std::endl;
            }

        } else if (command == "fit-classifier") {
            const auto kind = [&] {
                try {
                    return clf::kind_from_string(classifier);
                } catch (const InvalidArgument& e) {
                    throw UsageError(e.what());
                }
            }();
            const auto opts = make_classifier_options(cf, g);
            add_input(features_path);
            rm.config = classifier_options_json(opts);
            rm.config["features"] = features_path;
            rm.config["classifier"] = classifier;
            running = true;
            const auto rows = features::read_feature_csv(features_path);
            const auto model = clf::fit_classifier(kind, features::to_matrix(rows), features::to_labels(rows), opts);
            const fs::path path = out / ("classifier_" + clf::to_string(kind) + ".json");
            clf::save_classifier(path, model);
            std::cout << "wrote " << path.string() << std::endl;

        } else if (command == "evaluate") {
            const auto opts = make_classifier_options(cf, g);
            const bool by_checkpoint = !checkpoint.empty();
            const bool by_model = !model_path.empty();
            if (static_cast<int>(by_checkpoint) + static_cast<int>(by_model) + static_cast<int>(expert) != 1)
                throw UsageError("evaluate needs exactly one of --checkpoint, --model or --expert");
            if ((by_checkpoint || expert) && manifest_path.empty()) throw UsageError("--manifest is required");
            if (by_model && features_path.empty()) throw UsageError("--features is required with --model");
            rm.config = classifier_options_json(opts);
            rm.config["threshold"] = threshold;
            std::vector<eval::MetricsReport> reports;
            if (by_model) {
                add_input(model_path);
                add_input(features_path);
                running = true;
                const auto model = clf::load_classifier(model_path);
                const auto rows = features::read_feature_csv(features_path);
                const Eigen::VectorXd p = model.predict_proba(features::to_matrix(rows));
                eval::MetricsReport r;
                r.variant = variant_name.empty() ? "custom" : variant_name;
                r.classifier = clf::to_string(model.kind);
                r.seg_source = rows.empty() ? "" : features::to_string(rows.front().features.source);
                eval::fill_classification(r, features::to_labels(rows),
                                          std::vector<double>(p.data(), p.data() + p.size()), threshold);
                reports.push_back(r);
                std::vector<std::string> ids;
                for (const auto& row : rows) ids.push_back(row.id);
                clf::write_predictions_csv(out / (r.variant + "_" + r.classifier + "_predictions.csv"), ids, p,
                                           threshold);
            } else {
                add_input(manifest_path);
                const auto m = phantom::read_manifest(manifest_path);
                const auto samples = phantom::load_dataset(manifest_path);
                const bool wh = m.config.wh_excludes_chambers;
                if (expert) {
                    running = true;
                    eval::DiceSummary perfect;
                    perfect.mean.fill(1.0);
                    reports = experiment::classify(variant_name.empty() ? "expert" : variant_name,
                                                   experiment::expert_rows(samples, phantom::Split::Train, wh),
                                                   experiment::expert_rows(samples, phantom::Split::Test, wh), nullptr,
                                                   perfect, opts, threshold);
                } else {
                    add_input(checkpoint);
                    running = true;
                    auto state = train::load_checkpoint(checkpoint);
                    const std::string name =
                        variant_name.empty() ? train::to_string(state.config.variant) : variant_name;
                    reports = experiment::evaluate_model(state, samples, name, wh, opts, threshold);
                }
            }
            for (const auto& r : reports) {
                experiment::write_report(out, r);
                std::cout << r.variant << "_" << r.classifier << " auc=" << r.auc
                          << " f1_nc=" << r.classification.f1_nc << " f1_hlhs=" << r.classification.f1_hlhs
                          << std::endl;
            }

        } else if (command == "grid") {
            experiment::GridOptions go;
            try {
                go.cells = experiment::select_cells(variants);
            } catch (const InvalidArgument& e) {
                throw UsageError(e.what());
            }
            const auto m = phantom::read_manifest(tf.manifest);
            add_input(tf.manifest);
            go.manifest = fs::path(tf.manifest).lexically_normal();
            go.out_dir = out;
            go.include_expert = !no_expert;
            go.base = make_train_config(tf, g, m);
            go.classifiers = make_classifier_options(cf, g);
            go.threshold = threshold;
            if (!checkpoints_dir.empty()) {
                go.checkpoints_dir = checkpoints_dir;
                for (const auto& c : go.cells) {
                    const fs::path p = fs::path(checkpoints_dir) / c.name / "checkpoint_best.ckpt";
                    if (fs::exists(p)) add_input(p);
                }
            }
            go.on_progress = [](const std::string& s) { std::cout << "[grid] " << s << std::endl; };
            go.on_epoch = print_epoch;
            rm.config = {{"variants", variants},
                         {"include_expert", go.include_expert},
                         {"threshold", threshold},
                         {"train", go.base},
                         {"classifiers", classifier_options_json(go.classifiers)}};
            rm.config["train"]["manifest"] = tf.manifest;
            running = true;
            const auto res = experiment::run_grid(go);
            std::cout << experiment::markdown_table(res.reports);

        } else if (command == "report") {
            const fs::path dir = reports_dir.empty() ? out : fs::path(reports_dir);
            rm.config = {{"reports", dir.generic_string()}};
            running = true;
            experiment::render_reports(dir, out);
            std::ifstream table(out / "results_table.md");
            std::cout << table.rdbuf();
        }
        finish("ok", "");
        return 0;
    } catch (const UsageError& e) {
        std::cerr << e.what() << "\n";
        error_record(command, "usage", e.what(), kExitUsage);
        try {
            finish("usage_error", e.what());
        } catch (...) {
        }
        return kExitUsage;
    } catch (const std::exception& e) {
        std::string kind = "runtime";
        if (dynamic_cast<const InvalidArgument*>(&e)) kind = running ? "invalid_data" : "invalid_argument";
        else if (dynamic_cast<const IoError*>(&e)) kind = "io";
        else if (dynamic_cast<const NumericalError*>(&e)) kind = "numerical";
        else if (dynamic_cast<const train::TrainingDiverged*>(&e)) kind = "diverged";
        const int code = (kind == "invalid_argument") ? kExitUsage : kExitRuntime;
        error_record(command, kind, e.what(), code);
        try {
            finish("error", e.what());
        } catch (...) {
        }
        return code;
    }
}
