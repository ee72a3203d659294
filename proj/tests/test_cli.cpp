#include <gtest/gtest.h>

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "atlas_istn/metrics.hpp"
#include "atlas_istn/phantom.hpp"
#include "atlas_istn/run_manifest.hpp"
#include "test_util.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

#ifndef ATLAS_ISTN_CLI
#error "ATLAS_ISTN_CLI must point at the CLI binary"
#endif

namespace {

struct Result {
    int code = -1;
    std::string out, err;
};

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

Result run(const std::string& args, const fs::path& work, const std::string& env = "") {
    const fs::path o = work / "stdout.txt", e = work / "stderr.txt";
    const std::string cmd = "cd '" + work.string() + "' && " + env + " '" + std::string(ATLAS_ISTN_CLI) + "' " + args +
                            " > '" + o.string() + "' 2> '" + e.string() + "'";
    const int status = std::system(cmd.c_str());
    Result r;
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    r.out = slurp(o);
    r.err = slurp(e);
    return r;
}

json last_line_json(const std::string& text) {
    std::string s = text;
    while (!s.empty() && s.back() == '\n') s.pop_back();
    const auto nl = s.rfind('\n');
    return json::parse(nl == std::string::npos ? s : s.substr(nl + 1));
}

int count_run_manifests(const fs::path& dir) {
    int n = 0;
    for (const auto& e : fs::directory_iterator(dir))
        if (e.path().filename().string().rfind("run_manifest_", 0) == 0) ++n;
    return n;
}

const char* kTinyModel = "--base-channels 4 --depth 3 --bottleneck 16 --warmup-epochs 0";

}  // namespace

TEST(RunManifest, GitBlobHashMatchesGit) {
    auto dir = atlas_istn::testing::temp_dir("cli_hash");
    std::ofstream(dir / "hello.txt") << "hello\n";
    EXPECT_EQ(atlas_istn::run::git_blob_hash(dir / "hello.txt"), "ce013625030ba8dba906f756967f9e9ca394464a");
    std::ofstream(dir / "empty.txt");
    EXPECT_EQ(atlas_istn::run::git_blob_hash(dir / "empty.txt"), "e69de29bb2d1d6434b8b29ae775ad8c2e48c5391");
    using atlas_istn::run::FileDigest;
    std::vector<FileDigest> a = {{"x", "1"}, {"y", "2"}}, b = {{"y", "2"}, {"x", "1"}};
    EXPECT_EQ(atlas_istn::run::combined_hash(a), atlas_istn::run::combined_hash(b));
}

TEST(Cli, GenDataIsByteIdentical) {
    auto dir = atlas_istn::testing::temp_dir("cli_gen");
    auto a = run("gen-data --n 20 --seed 7 --deterministic --out-dir d1", dir);
    auto b = run("gen-data --n 20 --seed 7 --deterministic --out-dir d2", dir);
    ASSERT_EQ(a.code, 0) << a.err;
    ASSERT_EQ(b.code, 0) << b.err;
    const auto ta = atlas_istn::run::digest_tree(dir / "d1", ""), tb = atlas_istn::run::digest_tree(dir / "d2", "");
    EXPECT_EQ(ta.size(), 20u * 2 + 2);  // images, labels, manifest, run manifest
    EXPECT_EQ(ta, tb);
    EXPECT_EQ(count_run_manifests(dir / "d1"), 1);
    const auto m = json::parse(slurp(dir / "d1" / "run_manifest_gen-data.json"));
    EXPECT_EQ(m.at("command"), "gen-data");
    EXPECT_EQ(m.at("seed"), 7);
    EXPECT_FALSE(m.contains("timestamps"));

    auto c = run("gen-data --n 20 --seed 8 --out-dir d3", dir);
    ASSERT_EQ(c.code, 0);
    EXPECT_NE(slurp(dir / "d1" / "manifest.json"), slurp(dir / "d3" / "manifest.json"));
    EXPECT_TRUE(json::parse(slurp(dir / "d3" / "run_manifest_gen-data.json")).contains("timestamps"));
}

TEST(Cli, TrainSmokeAndDownstreamCommands) {
    auto dir = atlas_istn::testing::temp_dir("cli_train");
    ASSERT_EQ(run("gen-data --n 10 --hlhs-fraction 0.4 --height 48 --width 64 --seed 2 --out-dir data", dir).code, 0);
    auto t = run("train --manifest data/manifest.json --variant atlas_istn --gamma 1 --lambda 1 --epochs 1 " +
                     std::string(kTinyModel) + " --deterministic --out-dir run",
                 dir);
    ASSERT_EQ(t.code, 0) << t.err;
    EXPECT_TRUE(fs::exists(dir / "run" / "checkpoint_best.ckpt"));
    EXPECT_TRUE(fs::exists(dir / "run" / "checkpoint_last.ckpt"));
    EXPECT_TRUE(fs::exists(dir / "run" / "train_log.jsonl"));
    EXPECT_EQ(count_run_manifests(dir / "run"), 1);

    auto x = run("export-atlas --checkpoint run/checkpoint_best.ckpt --out-dir atlas", dir);
    ASSERT_EQ(x.code, 0) << x.err;
    EXPECT_TRUE(fs::exists(dir / "atlas" / "atlas_probs.npy"));

    auto f = run("extract-features --manifest data/manifest.json --source expert_gt --split train --out-dir feats", dir);
    ASSERT_EQ(f.code, 0) << f.err;
    auto ft = run("extract-features --manifest data/manifest.json --split test --out-dir feats", dir);
    ASSERT_EQ(ft.code, 0) << ft.err;
    auto fit = run("fit-classifier --features feats/features_train.csv --classifier lr --out-dir models", dir);
    ASSERT_EQ(fit.code, 0) << fit.err;
    auto ev = run("evaluate --model models/classifier_lr.json --features feats/features_test.csv --variant expert "
                  "--out-dir eval",
                  dir);
    ASSERT_EQ(ev.code, 0) << ev.err;
    EXPECT_TRUE(fs::exists(dir / "eval" / "expert_lr.json"));
    EXPECT_TRUE(fs::exists(dir / "eval" / "expert_lr_confusion.png"));

    // Resume with a larger epoch budget continues from the last checkpoint.
    auto r = run("train --manifest data/manifest.json --resume run/checkpoint_last.ckpt --epochs 2 " +
                     std::string(kTinyModel) + " --deterministic --out-dir run",
                 dir);
    ASSERT_EQ(r.code, 0) << r.err;
    std::ifstream log(dir / "run" / "train_log.jsonl");
    int lines = 0;
    for (std::string l; std::getline(log, l);) ++lines;
    EXPECT_EQ(lines, 2);
}

TEST(Cli, GridWritesOneReportPerCell) {
    auto dir = atlas_istn::testing::temp_dir("cli_grid");
    ASSERT_EQ(run("gen-data --n 24 --hlhs-fraction 0.5 --height 48 --width 64 --seed 4 --out-dir data", dir).code, 0);
    auto g = run("grid --manifest data/manifest.json --variants unet,ssn,atlas --epochs 1 " + std::string(kTinyModel) +
                     " --deterministic --out-dir grid",
                 dir);
    ASSERT_EQ(g.code, 0) << g.err;
    const auto manifest = atlas_istn::phantom::read_manifest(dir / "data" / "manifest.json");
    const auto n_test = static_cast<std::int64_t>(manifest.split(atlas_istn::phantom::Split::Test).size());
    const std::vector<std::string> expected = {
        "expert_lr",         "expert_gp",         "unet_lr",           "unet_gp",
        "ssn_lr",            "ssn_gp",            "atlas_g0_l1_lr",    "atlas_g0_l1_gp",
        "atlas_g1_l1000_lr", "atlas_g1_l1000_gp", "atlas_g1_l1000_h",  "atlas_g1_l1_lr",
        "atlas_g1_l1_gp",    "atlas_g1_l1_h"};
    for (const auto& stem : expected) {
        ASSERT_TRUE(fs::exists(dir / "grid" / (stem + ".json"))) << stem;
        EXPECT_TRUE(fs::exists(dir / "grid" / (stem + "_confusion.png"))) << stem;
        const auto r = atlas_istn::eval::report_from_json(json::parse(slurp(dir / "grid" / (stem + ".json"))));
        EXPECT_EQ(r.classification.confusion.total(), n_test) << stem;
    }
    EXPECT_FALSE(fs::exists(dir / "grid" / "atlas_g0_l1_h.json"));
    const auto expert = atlas_istn::eval::report_from_json(json::parse(slurp(dir / "grid" / "expert_gp.json")));
    for (int c = 0; c < atlas_istn::kNumClasses; ++c) EXPECT_EQ(expert.dice.mean[c], 1.0);
    EXPECT_EQ(count_run_manifests(dir / "grid"), 1);

    // report re-renders the plots and table from the JSONs alone.
    auto rep = run("report --reports grid --out-dir rendered", dir);
    ASSERT_EQ(rep.code, 0) << rep.err;
    EXPECT_TRUE(fs::exists(dir / "rendered" / "atlas_g1_l1_h_confusion.png"));
    EXPECT_EQ(slurp(dir / "rendered" / "results_table.md"), slurp(dir / "grid" / "results_table.md"));

    // Re-evaluating from the saved checkpoints reproduces the reports.
    auto again = run("grid --manifest data/manifest.json --variants atlas_g1_l1 --no-expert --checkpoints-dir grid " +
                         std::string(kTinyModel) + " --deterministic --out-dir regrid",
                     dir);
    ASSERT_EQ(again.code, 0) << again.err;
    EXPECT_EQ(slurp(dir / "regrid" / "atlas_g1_l1_gp.json"), slurp(dir / "grid" / "atlas_g1_l1_gp.json"));
    auto missing = run("grid --manifest data/manifest.json --variants unet --no-expert --checkpoints-dir data "
                       "--out-dir regrid2",
                       dir);
    EXPECT_EQ(missing.code, 2);
    EXPECT_EQ(last_line_json(missing.err).at("kind"), "io");
}

TEST(Cli, UsageAndRuntimeErrors) {
    auto dir = atlas_istn::testing::temp_dir("cli_errors");
    auto none = run("", dir);
    EXPECT_EQ(none.code, 1);
    EXPECT_EQ(last_line_json(none.err).at("exit_code"), 1);

    auto unknown = run("frobnicate", dir);
    EXPECT_EQ(unknown.code, 1);
    EXPECT_NE(unknown.err.find("Usage"), std::string::npos);
    EXPECT_EQ(last_line_json(unknown.err).at("kind"), "usage");

    auto flag = run("gen-data --no-such-flag --out-dir x", dir);
    EXPECT_EQ(flag.code, 1);
    EXPECT_EQ(last_line_json(flag.err).at("command"), "gen-data");

    auto variant = run("grid --manifest /dev/null --variants resnet --out-dir x", dir);
    EXPECT_EQ(variant.code, 1);

    // Corrupted dataset file: checksum failure at load time is a runtime error.
    ASSERT_EQ(run("gen-data --n 10 --height 48 --width 64 --out-dir data", dir).code, 0);
    std::ofstream(dir / "data" / "images" / "s00000.png", std::ios::app) << "junk";
    auto bad = run("train --manifest data/manifest.json --epochs 1 " + std::string(kTinyModel) + " --out-dir run", dir);
    EXPECT_EQ(bad.code, 2);
    const auto rec = last_line_json(bad.err);
    EXPECT_EQ(rec.at("status"), "error");
    EXPECT_EQ(rec.at("exit_code"), 2);
    EXPECT_EQ(count_run_manifests(dir / "run"), 1);
    EXPECT_EQ(json::parse(slurp(dir / "run" / "run_manifest_train.json")).at("status"), "error");
}

TEST(Cli, ConfigFileAndEnvironmentFallback) {
    auto dir = atlas_istn::testing::temp_dir("cli_config");
    std::ofstream(dir / "gen.cfg") << "# phantom settings\nn_samples = 6\nheight=40\nwidth = 56\nseed = 11\n";
    auto a = run("--config gen.cfg gen-data --out-dir a", dir);
    ASSERT_EQ(a.code, 0) << a.err;
    auto m = atlas_istn::phantom::read_manifest(dir / "a" / "manifest.json");
    EXPECT_EQ(m.samples.size(), 6u);
    EXPECT_EQ(m.config.image_height, 40);
    EXPECT_EQ(m.config.seed, 11u);

    // Flags override the file.
    auto b = run("gen-data --config gen.cfg --n 4 --out-dir b", dir);
    ASSERT_EQ(b.code, 0) << b.err;
    EXPECT_EQ(atlas_istn::phantom::read_manifest(dir / "b" / "manifest.json").samples.size(), 4u);

    std::ofstream(dir / "bad.cfg") << "n_sampels = 6\n";
    auto c = run("gen-data --config bad.cfg --out-dir c", dir);
    EXPECT_EQ(c.code, 1);

    auto d = run("gen-data --n 3 --height 40 --width 56", dir, "ATLAS_ISTN_OUT=envout");
    ASSERT_EQ(d.code, 0) << d.err;
    EXPECT_TRUE(fs::exists(dir / "envout" / "manifest.json"));
}
