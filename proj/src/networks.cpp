#include "atlas_istn/networks.hpp"

#include <string>

#include "atlas_istn/error.hpp"

namespace atlas_istn::nn {

namespace tnn = torch::nn;
using nlohmann::json;

void ModelConfig::validate() const {
    if (seg.depth < 1 || seg.base_channels < 1 || seg.ssn_rank < 0 || seg.n_classes < 2) {
        throw InvalidArgument("model: invalid segmentation network configuration");
    }
    const int div = 1 << (seg.depth - 1);
    if (height % div != 0 || width % div != 0) {
        throw InvalidArgument("model: image size must be divisible by 2^(depth-1) = " + std::to_string(div));
    }
    if (mapper.bottleneck_dim < 1 || head.hidden1 < 1 || head.hidden2 < 1) {
        throw InvalidArgument("model: layer widths must be positive");
    }
}

void to_json(json& j, const ModelConfig& c) {
    j = json{{"height", c.height},
             {"width", c.width},
             {"seg", {{"depth", c.seg.depth},
                      {"base_channels", c.seg.base_channels},
                      {"ssn_rank", c.seg.ssn_rank},
                      {"n_classes", c.seg.n_classes}}},
             {"mapper", {{"bottleneck_dim", c.mapper.bottleneck_dim},
                         {"velocity_gain_init", c.mapper.velocity_gain_init}}},
             {"head", {{"hidden1", c.head.hidden1}, {"hidden2", c.head.hidden2}}}};
}

void from_json(const json& j, ModelConfig& c) {
    c.height = j.at("height").get<int>();
    c.width = j.at("width").get<int>();
    const auto& s = j.at("seg");
    c.seg.depth = s.at("depth").get<int>();
    c.seg.base_channels = s.at("base_channels").get<int>();
    c.seg.ssn_rank = s.at("ssn_rank").get<int>();
    c.seg.n_classes = s.at("n_classes").get<int>();
    const auto& m = j.at("mapper");
    c.mapper.bottleneck_dim = m.at("bottleneck_dim").get<int>();
    c.mapper.velocity_gain_init = m.at("velocity_gain_init").get<double>();
    const auto& h = j.at("head");
    c.head.hidden1 = h.at("hidden1").get<int>();
    c.head.hidden2 = h.at("hidden2").get<int>();
}

namespace {

tnn::Conv2d conv3x3(int in, int out, int stride = 1) {
    tnn::Conv2d conv(tnn::Conv2dOptions(in, out, 3).stride(stride).padding(1));
    tnn::init::kaiming_normal_(conv->weight, 0.0, torch::kFanIn, torch::kReLU);
    tnn::init::zeros_(conv->bias);
    return conv;
}

tnn::Sequential double_conv(int in, int out) {
    return tnn::Sequential(conv3x3(in, out), tnn::ReLU(), conv3x3(out, out), tnn::ReLU());
}

void check_distribution(const torch::Tensor& p, const char* what) {
    if (p.dim() != 4) throw InvalidArgument(std::string(what) + ": expected [N,C,H,W]");
    auto dev = (p.detach().sum(1) - 1.0).abs().max().item<double>();
    if (!(dev <= 1e-3)) {
        throw InvalidArgument(std::string(what) + ": channels must sum to 1 per pixel (max deviation " +
                              std::to_string(dev) + ")");
    }
}

}  // namespace

SegNetImpl::SegNetImpl(const SegNetConfig& config) : config_(config) {
    int in = 1;
    for (int level = 0; level < config.depth; ++level) {
        const int out = config.base_channels << level;
        down_.push_back(register_module("down" + std::to_string(level), double_conv(in, out)));
        in = out;
    }
    for (int level = config.depth - 2; level >= 0; --level) {
        const int out = config.base_channels << level;
        auto up = tnn::ConvTranspose2d(tnn::ConvTranspose2dOptions(out * 2, out, 2).stride(2));
        up_.push_back(register_module("up" + std::to_string(level), up));
        up_conv_.push_back(register_module("upconv" + std::to_string(level), double_conv(out * 2, out)));
    }
    const int c = config.n_classes, f = config.base_channels;
    mean_head_ = register_module("mean_head", tnn::Conv2d(tnn::Conv2dOptions(f, c, 1)));
    if (config.ssn_rank > 0) {
        factor_head_ = register_module("factor_head", tnn::Conv2d(tnn::Conv2dOptions(f, c * config.ssn_rank, 1)));
        diag_head_ = register_module("diag_head", tnn::Conv2d(tnn::Conv2dOptions(f, c, 1)));
    }
}

SegOutput SegNetImpl::forward(const torch::Tensor& x) {
    if (x.dim() != 4 || x.size(1) != 1) throw InvalidArgument("segment: expected [N,1,H,W] input");
    const int64_t div = int64_t{1} << (config_.depth - 1);
    if (x.size(2) % div != 0 || x.size(3) % div != 0) {
        throw InvalidArgument("segment: image size must be divisible by " + std::to_string(div));
    }
    std::vector<torch::Tensor> skips;
    auto h = x;
    for (int level = 0; level < config_.depth; ++level) {
        if (level > 0) h = torch::max_pool2d(h, 2);
        h = down_[level]->forward(h);
        skips.push_back(h);
    }
    for (std::size_t i = 0; i < up_.size(); ++i) {
        const auto& skip = skips[skips.size() - 2 - i];
        h = up_[i]->forward(h);
        h = up_conv_[i]->forward(torch::cat({h, skip}, 1));
    }
    SegOutput out;
    out.rank = config_.ssn_rank;
    out.mean_logits = mean_head_->forward(h);
    if (config_.ssn_rank > 0) {
        out.cov_factor = factor_head_->forward(h);
        out.diag_log_scale = diag_head_->forward(h);
    }
    return out;
}

torch::Tensor sample_seg(const SegOutput& out, int n, std::uint64_t seed) {
    if (n < 1) throw InvalidArgument("sample_seg: n must be >= 1");
    const auto& mean = out.mean_logits;
    auto samples = mean.unsqueeze(0).repeat({n, 1, 1, 1, 1});
    if (out.rank == 0) return samples;
    auto gen = at::make_generator<at::CPUGeneratorImpl>(seed);
    const int64_t batch = mean.size(0), c = mean.size(1), h = mean.size(2), w = mean.size(3);
    auto opts = mean.options();
    auto eps1 = torch::randn({n, batch, out.rank, 1, 1, 1}, gen, opts);
    auto eps2 = torch::randn({n, batch, c, h, w}, gen, opts);
    auto factor = out.cov_factor.view({1, batch, out.rank, c, h, w});
    return samples + (factor * eps1).sum(2) + torch::exp(out.diag_log_scale).unsqueeze(0) * eps2;
}

AtlasMapperImpl::AtlasMapperImpl(const MapperConfig& config, int n_classes) : config_(config) {
    const int d = config.bottleneck_dim;
    enc1_ = register_module("enc1", tnn::Sequential(conv3x3(2 * n_classes, 32, 2), tnn::ReLU(), conv3x3(32, 32),
                                                    tnn::ReLU()));
    enc2_ = register_module("enc2", tnn::Sequential(conv3x3(32, 64, 2), tnn::ReLU()));
    enc3_ = register_module("enc3", tnn::Sequential(conv3x3(64, 128, 2), tnn::ReLU()));
    enc4_ = register_module("enc4", tnn::Sequential(conv3x3(128, d, 2), tnn::ReLU()));
    vel_dec_ = register_module("vel_dec", tnn::Sequential(conv3x3(d + 64, 64), tnn::ReLU(),
                                                          tnn::Conv2d(tnn::Conv2dOptions(64, 2, 3).padding(1))));
    velocity_gain_ = register_parameter("velocity_gain", torch::full({1}, config.velocity_gain_init));
    affine_fc1_ = register_module("affine_fc1", tnn::Linear(d, 64));
    affine_fc2_ = register_module("affine_fc2", tnn::Linear(64, 6));
    {
        torch::NoGradGuard guard;
        affine_fc2_->weight.zero_();
        affine_fc2_->bias.copy_(torch::tensor({1.0, 0.0, 0.0, 0.0, 1.0, 0.0}));
    }
}

MapperOutput AtlasMapperImpl::forward(const torch::Tensor& seg_probs, const torch::Tensor& atlas_probs) {
    check_distribution(seg_probs, "map_atlas(seg_probs)");
    check_distribution(atlas_probs, "map_atlas(atlas_probs)");
    const int64_t n = seg_probs.size(0), h = seg_probs.size(2), w = seg_probs.size(3);
    if (atlas_probs.size(2) != h || atlas_probs.size(3) != w || atlas_probs.size(1) != seg_probs.size(1)) {
        throw InvalidArgument("map_atlas: segmentation and atlas shapes differ");
    }
    auto atlas = atlas_probs.size(0) == n ? atlas_probs : atlas_probs.expand({n, -1, -1, -1});
    auto f1 = enc1_->forward(torch::cat({seg_probs, atlas}, 1));
    auto f2 = enc2_->forward(f1);  // 1/4 resolution
    auto f3 = enc3_->forward(f2);
    auto f4 = enc4_->forward(f3);

    MapperOutput out;
    out.bottleneck = f4.mean({2, 3});
    auto up = torch::nn::functional::interpolate(
        f4, torch::nn::functional::InterpolateFuncOptions()
                .size(std::vector<int64_t>{f2.size(2), f2.size(3)})
                .mode(torch::kBilinear)
                .align_corners(true));
    auto v_coarse = vel_dec_->forward(torch::cat({up, f2}, 1)) * velocity_gain_;
    out.velocity = torch::nn::functional::interpolate(
        v_coarse, torch::nn::functional::InterpolateFuncOptions()
                      .size(std::vector<int64_t>{h, w})
                      .mode(torch::kBilinear)
                      .align_corners(true));
    out.affine = affine_fc2_->forward(torch::relu(affine_fc1_->forward(out.bottleneck))).view({n, 2, 3});
    return out;
}

DiseaseHeadImpl::DiseaseHeadImpl(const DiseaseHeadConfig& config, int input_dim) {
    fc1_ = register_module("fc1", tnn::Linear(input_dim, config.hidden1));
    fc2_ = register_module("fc2", tnn::Linear(config.hidden1, config.hidden2));
    fc3_ = register_module("fc3", tnn::Linear(config.hidden2, 1));
    torch::NoGradGuard guard;
    fc1_->bias.zero_();
    fc2_->bias.zero_();
    fc3_->bias.zero_();
}

torch::Tensor DiseaseHeadImpl::logits(const torch::Tensor& bottleneck) {
    auto h = torch::relu(fc1_->forward(bottleneck));
    h = torch::relu(fc2_->forward(h));
    return fc3_->forward(h).squeeze(1);
}

AtlasImpl::AtlasImpl(int n_classes, int height, int width) {
    logits = register_parameter("logits", torch::zeros({1, n_classes, height, width}));
    intensity = register_buffer("intensity", torch::zeros({1, 1, height, width}));
}

void AtlasImpl::update_intensity(const torch::Tensor& images_in_atlas_space, double momentum) {
    torch::NoGradGuard guard;
    auto mean = images_in_atlas_space.detach().to(intensity.dtype()).mean(0, true).clamp(0.0, 1.0);
    intensity.mul_(momentum).add_(mean, 1.0 - momentum);
}

AtlasIstnImpl::AtlasIstnImpl(const ModelConfig& config) : config_(config) {
    config.validate();
    seg = register_module("seg", SegNet(config.seg));
    mapper = register_module("mapper", AtlasMapper(config.mapper, config.seg.n_classes));
    head = register_module("head", DiseaseHead(config.head, config.mapper.bottleneck_dim));
    atlas = register_module("atlas", Atlas(config.seg.n_classes, config.height, config.width));
}

std::int64_t parameter_count(torch::nn::Module& module) {
    std::int64_t n = 0;
    for (const auto& p : module.parameters()) n += p.numel();
    return n;
}

}  // namespace atlas_istn::nn
