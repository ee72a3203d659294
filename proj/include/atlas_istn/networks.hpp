#pragma once

#include <cstdint>
#include <vector>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include "atlas_istn/image.hpp"

namespace atlas_istn::nn {

struct SegNetConfig {
    int depth = 4;           // resolution levels; channels double per level
    int base_channels = 16;
    int ssn_rank = 5;        // 0 disables the stochastic head
    int n_classes = kNumClasses;
};

struct MapperConfig {
    int bottleneck_dim = 256;
    double velocity_gain_init = 1e-3;
};

struct DiseaseHeadConfig {
    int hidden1 = 64;
    int hidden2 = 16;
};

struct ModelConfig {
    int height = 112;
    int width = 144;
    SegNetConfig seg;
    MapperConfig mapper;
    DiseaseHeadConfig head;

    void validate() const;
};

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

// Output of the segmentation network. `cov_factor` ([N, rank*C, H, W]) and
// `diag_log_scale` ([N, C, H, W]) are defined only when ssn_rank > 0; with
// rank 0 the network is a plain UNet and sampling returns the mean.
struct SegOutput {
    torch::Tensor mean_logits;  // [N, C, H, W]
    torch::Tensor cov_factor;
    torch::Tensor diag_log_scale;
    int rank = 0;
};

class SegNetImpl : public torch::nn::Module {
public:
    explicit SegNetImpl(const SegNetConfig& config);
    // x: [N, 1, H, W] with H, W divisible by 2^(depth-1).
    SegOutput forward(const torch::Tensor& x);
    const SegNetConfig& config() const { return config_; }

private:
    SegNetConfig config_;
    std::vector<torch::nn::Sequential> down_;
    std::vector<torch::nn::ConvTranspose2d> up_;
    std::vector<torch::nn::Sequential> up_conv_;
    torch::nn::Conv2d mean_head_{nullptr}, factor_head_{nullptr}, diag_head_{nullptr};
};
TORCH_MODULE(SegNet);

// Draws n logit samples: mean + factor . eps1 + exp(diag_log_scale) * eps2 with
// eps1 ~ N(0, I_rank) shared across pixels of one sample and eps2 ~ N(0, I)
// per logit. Returns [n, N, C, H, W]. Seeded and deterministic.
torch::Tensor sample_seg(const SegOutput& out, int n, std::uint64_t seed);

struct MapperOutput {
    torch::Tensor bottleneck;  // d_b, [N, bottleneck_dim]
    torch::Tensor velocity;    // [N, 2, H, W], pixels
    torch::Tensor affine;      // [N, 2, 3], normalised coordinates
};

// Atlas-to-image mapper: the encoder consumes the 2C-channel concatenation of
// segmentation and atlas probabilities; d_b is the global average of the
// deepest feature map. The velocity decoder predicts at 1/4 resolution from
// the deepest map (upsampled) plus the 1/4-level encoder features, scales by a
// learnable gain and upsamples bilinearly to the full grid. The affine head
// starts at the identity.
class AtlasMapperImpl : public torch::nn::Module {
public:
    AtlasMapperImpl(const MapperConfig& config, int n_classes);
    // Both inputs [N, C, H, W] (atlas may be [1, C, H, W]); each must sum to 1
    // over channels within 1e-3.
    MapperOutput forward(const torch::Tensor& seg_probs, const torch::Tensor& atlas_probs);
    const MapperConfig& config() const { return config_; }

private:
    MapperConfig config_;
    torch::nn::Sequential enc1_{nullptr}, enc2_{nullptr}, enc3_{nullptr}, enc4_{nullptr};
    torch::nn::Sequential vel_dec_{nullptr};
    torch::Tensor velocity_gain_;
    torch::nn::Linear affine_fc1_{nullptr}, affine_fc2_{nullptr};
};
TORCH_MODULE(AtlasMapper);

// Disease branch: FC(D->h1) ReLU FC(h1->h2) ReLU FC(h2->1), sigmoid on top.
class DiseaseHeadImpl : public torch::nn::Module {
public:
    DiseaseHeadImpl(const DiseaseHeadConfig& config, int input_dim);
    torch::Tensor logits(const torch::Tensor& bottleneck);  // [N]
    torch::Tensor forward(const torch::Tensor& bottleneck) { return torch::sigmoid(logits(bottleneck)); }

private:
    torch::nn::Linear fc1_{nullptr}, fc2_{nullptr}, fc3_{nullptr};
};
TORCH_MODULE(DiseaseHead);

// Learnable atlas label logits plus a visualisation-only intensity atlas.
class AtlasImpl : public torch::nn::Module {
public:
    AtlasImpl(int n_classes, int height, int width);
    torch::Tensor probs() const { return torch::softmax(logits, 1); }  // [1, C, H, W]
    // Running average of images resampled into atlas space; no gradients.
    void update_intensity(const torch::Tensor& images_in_atlas_space, double momentum);

    torch::Tensor logits;     // [1, C, H, W]
    torch::Tensor intensity;  // [1, 1, H, W] buffer, values in [0, 1]
};
TORCH_MODULE(Atlas);

class AtlasIstnImpl : public torch::nn::Module {
public:
    explicit AtlasIstnImpl(const ModelConfig& config);
    const ModelConfig& config() const { return config_; }

    SegNet seg{nullptr};
    AtlasMapper mapper{nullptr};
    DiseaseHead head{nullptr};
    Atlas atlas{nullptr};

private:
    ModelConfig config_;
};
TORCH_MODULE(AtlasIstn);

std::int64_t parameter_count(torch::nn::Module& module);

// Softmax over the channel dimension of the mean logits.
inline torch::Tensor seg_probabilities(const SegOutput& out) { return torch::softmax(out.mean_logits, 1); }

}  // namespace atlas_istn::nn
