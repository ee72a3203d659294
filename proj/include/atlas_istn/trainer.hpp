#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include "atlas_istn/losses.hpp"
#include "atlas_istn/networks.hpp"
#include "atlas_istn/phantom.hpp"
#include "atlas_istn/transform.hpp"

namespace atlas_istn::train {

enum class Variant { UNet, SSN, AtlasIstn };
std::string to_string(Variant v);
Variant variant_from_string(const std::string& s);

struct TrainConfig {
    Variant variant = Variant::AtlasIstn;
    loss::LossWeights weights;
    int epochs = 50;
    int batch_size = 8;
    double learning_rate = 1e-3;
    std::uint64_t seed = 0;
    int checkpoint_interval = 1;  // epochs between rolling checkpoint writes
    std::filesystem::path manifest;
    nn::ModelConfig model;
    // Epochs at the start during which only L_S is optimised (omega, gamma
    // treated as 0) so the atlas fits a stabilised segmenter.
    int warmup_epochs = 2;
    int exp_steps = 6;
    double intensity_momentum = 0.95;
    bool augment = false;       // random integer shifts (up to 4 px) of image+label
    bool ssn_mc_loss = false;   // SSN Monte-Carlo categorical likelihood instead of L_S
    int ssn_mc_samples = 10;

    // Applies the variant constraints: unet => ssn_rank = 0 and omega = gamma = 0;
    // ssn => omega = gamma = 0.
    TrainConfig normalized() const;
    void validate() const;
    bool uses_atlas() const { return variant == Variant::AtlasIstn; }
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

struct EpochLog {
    int epoch = 0;
    double seg = 0, a2s = 0, s2a = 0, reg = 0, hlhs = 0, total = 0;
    std::array<double, kNumClasses> val_dice{};
    double val_mean_fg_dice = 0;
};

nlohmann::json to_json(const EpochLog& e);
EpochLog epoch_log_from_json(const nlohmann::json& j);

// One split held as tensors: images [N,1,H,W] float32, labels [N,H,W] uint8,
// hlhs [N] float32.
struct TensorSplit {
    std::vector<std::string> ids;
    torch::Tensor images, labels, hlhs;
    std::int64_t size() const { return static_cast<std::int64_t>(ids.size()); }
};

TensorSplit make_split(const std::vector<phantom::SampleRecord>& samples, std::optional<phantom::Split> which);

// Forward pass and loss evaluation for one batch. Branches not needed by the
// weights are skipped entirely: with omega = gamma = 0 the mapper is not run,
// with gamma = 0 the disease head receives no graph edges.
struct StepResult {
    nn::SegOutput seg;
    torch::Tensor seg_probs;
    nn::MapperOutput mapping;
    transform::TransformPair phi;
    torch::Tensor hlhs_prob;
    loss::LossParts parts;
    torch::Tensor total;
};

StepResult compute_losses(nn::AtlasIstn& model, const torch::Tensor& images, const torch::Tensor& gt_onehot,
                          const torch::Tensor& hlhs_labels, const loss::LossWeights& weights, int exp_steps,
                          bool ssn_mc_loss = false, int ssn_mc_samples = 10, std::uint64_t mc_seed = 0);

// Everything needed to continue or reproduce a run.
struct TrainState {
    TrainConfig config;
    nn::AtlasIstn model{nullptr};
    std::unique_ptr<torch::optim::Adam> optimizer;
    int epochs_done = 0;
    double best_val = -1.0;
    int best_epoch = -1;
    std::vector<EpochLog> history;
};

// Fresh model and optimiser initialised from the config seed.
TrainState init_state(const TrainConfig& config);

// Versioned binary container: magic, format version, JSON header (config,
// progress, tensor directory), then raw little-endian tensor payloads.
// save -> load -> save reproduces identical bytes.
inline constexpr std::uint32_t kCheckpointFormatVersion = 1;
void save_checkpoint(const std::filesystem::path& path, const TrainState& state);
TrainState load_checkpoint(const std::filesystem::path& path);

class TrainingDiverged : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct TrainOutputs {
    std::filesystem::path best_checkpoint;
    std::filesystem::path last_checkpoint;
    std::filesystem::path log;
};

// Single-threaded, bitwise-reproducible execution mode.
void set_deterministic(bool on);

using EpochCallback = std::function<void(const EpochLog&)>;

// Trains until config.epochs epochs are done. Writes out_dir/checkpoint_best.ckpt,
// out_dir/checkpoint_last.ckpt and out_dir/train_log.jsonl. Continues from
// `state` as given (fresh or resumed).
TrainOutputs run_training(TrainState& state, const TensorSplit& train, const TensorSplit& val,
                          const std::filesystem::path& out_dir, const EpochCallback& on_epoch = {});

// Convenience wrapper: loads the manifest in config, initialises (or resumes
// from `resume_from`) and trains.
TrainOutputs train(const TrainConfig& config, const std::filesystem::path& out_dir,
                   const std::optional<std::filesystem::path>& resume_from = std::nullopt,
                   const EpochCallback& on_epoch = {});

struct Prediction {
    LabelMap seg;            // argmax of the mean logits
    LabelMap atlas_in_image; // argmax of atlas o Phi^-1 (only when requested)
    double hlhs_prob = -1;   // disease branch output (only when requested)
};

std::vector<Prediction> predict(nn::AtlasIstn& model, const torch::Tensor& images, bool with_atlas, bool with_head,
                                int exp_steps = 6, int batch_size = 16);

LabelMap argmax_labels(const torch::Tensor& scores_chw);

// Mean per-class Dice of argmax(mean logits) over a split.
std::array<double, kNumClasses> evaluate_dice(nn::AtlasIstn& model, const TensorSplit& split, int batch_size = 16);

struct AtlasExport {
    std::filesystem::path label_png, probs_npy, intensity_png;
};

// Writes atlas_labels.png (argmax, lowest class wins ties), atlas_probs.npy
// ([C,H,W] float32) and atlas_intensity.png. Throws InvalidArgument for
// variants without an atlas.
AtlasExport export_atlas(const TrainState& state, const std::filesystem::path& out_dir);

// Mean absolute difference between the atlas probability maps of two runs.
double atlas_difference(const TrainState& a, const TrainState& b);

}  // namespace atlas_istn::train
