#include "atlas_istn/losses.hpp"

#include <cmath>
#include <string>

#include "atlas_istn/error.hpp"
#include "atlas_istn/transform.hpp"

namespace atlas_istn::loss {

void LossWeights::validate() const {
    if (!(omega >= 0 && lambda >= 0 && gamma >= 0)) throw InvalidArgument("loss weights must be non-negative");
}

void to_json(nlohmann::json& j, const LossWeights& w) {
    j = nlohmann::json{{"omega", w.omega}, {"lambda", w.lambda}, {"gamma", w.gamma}};
}

void from_json(const nlohmann::json& j, LossWeights& w) {
    w.omega = j.at("omega").get<double>();
    w.lambda = j.at("lambda").get<double>();
    w.gamma = j.at("gamma").get<double>();
}

namespace {

void require_same_shape(const torch::Tensor& a, const torch::Tensor& b, const char* what) {
    if (a.sizes() != b.sizes()) throw InvalidArgument(std::string(what) + ": shape mismatch");
}

torch::Tensor sq_error(const torch::Tensor& a, const torch::Tensor& b) { return (a - b).pow(2).sum(1).mean(); }

}  // namespace

torch::Tensor seg(const torch::Tensor& gt_onehot, const torch::Tensor& seg_probs) {
    require_same_shape(gt_onehot, seg_probs, "loss_seg");
    return sq_error(gt_onehot, seg_probs);
}

torch::Tensor atlas_to_seg(const torch::Tensor& gt_onehot, const torch::Tensor& atlas_probs,
                           const torch::Tensor& phi_inv) {
    if (gt_onehot.dim() != 4 || atlas_probs.dim() != 4 || atlas_probs.size(1) != gt_onehot.size(1) ||
        phi_inv.size(0) != gt_onehot.size(0)) {
        throw InvalidArgument("loss_a2s: shape mismatch");
    }
    auto warped = transform::warp(atlas_probs, phi_inv, transform::Padding::Border);
    require_same_shape(gt_onehot, warped, "loss_a2s");
    return sq_error(gt_onehot, warped);
}

torch::Tensor seg_to_atlas(const torch::Tensor& gt_onehot, const torch::Tensor& phi,
                           const torch::Tensor& atlas_probs) {
    if (gt_onehot.dim() != 4 || atlas_probs.dim() != 4 || atlas_probs.size(1) != gt_onehot.size(1) ||
        phi.size(0) != gt_onehot.size(0)) {
        throw InvalidArgument("loss_s2a: shape mismatch");
    }
    auto warped = transform::warp(gt_onehot, phi, transform::Padding::Border);
    auto atlas = atlas_probs.size(0) == warped.size(0) ? atlas_probs : atlas_probs.expand_as(warped);
    require_same_shape(warped, atlas, "loss_s2a");
    return sq_error(warped, atlas);
}

torch::Tensor hlhs(const torch::Tensor& y_true, const torch::Tensor& prob) {
    if (y_true.sizes() != prob.sizes()) throw InvalidArgument("loss_hlhs: shape mismatch");
    constexpr double eps = 1e-7;
    auto p = prob.clamp(eps, 1.0 - eps);
    auto y = y_true.to(p.scalar_type());
    return -(y * torch::log(p) + (1 - y) * torch::log(1 - p)).mean();
}

torch::Tensor total(const LossParts& parts, const LossWeights& w) {
    w.validate();
    torch::Tensor ref;
    for (const auto* t : {&parts.seg, &parts.a2s, &parts.s2a, &parts.reg, &parts.hlhs}) {
        if (t->defined()) {
            ref = *t;
            break;
        }
    }
    if (!ref.defined()) throw InvalidArgument("loss_total: no loss terms given");
    auto check = [&](const torch::Tensor& t, const char* name) -> torch::Tensor {
        if (!t.defined()) return torch::zeros({}, ref.options());
        const double v = t.detach().item<double>();
        if (!std::isfinite(v)) throw NumericalError(std::string("loss_total: non-finite term ") + name);
        return t;
    };
    auto ls = check(parts.seg, "L_S");
    auto la = check(parts.a2s, "L_a2s");
    auto lb = check(parts.s2a, "L_s2a");
    auto lr = check(parts.reg, "L_reg");
    auto lh = check(parts.hlhs, "L_HLHS");
    return ls + w.omega * (la + lb + w.lambda * lr) + w.gamma * lh;
}

torch::Tensor one_hot(const torch::Tensor& labels, int n_classes, torch::ScalarType dtype) {
    // labels [N, H, W] integer -> [N, C, H, W]
    auto oh = torch::one_hot(labels.to(torch::kLong), n_classes);
    return oh.permute({0, 3, 1, 2}).to(dtype).contiguous();
}

}  // namespace atlas_istn::loss
