#pragma once

#include <torch/torch.h>

#include <nlohmann/json.hpp>

namespace atlas_istn::loss {

// Combination weights of the objective
//   L = L_S + omega (L_a2s + L_s2a + lambda L_reg) + gamma L_HLHS.
struct LossWeights {
    double omega = 1.0;
    double lambda = 1.0;
    double gamma = 1.0;

    void validate() const;
};

void to_json(nlohmann::json& j, const LossWeights& w);
void from_json(const nlohmann::json& j, LossWeights& w);

// Squared-error terms below sum over channels and average over pixels and the
// batch, so the weights carry over between resolutions. Predictions enter as
// probabilities, targets as one-hot maps, all [N, C, H, W].

// Segmentation loss between one-hot ground truth and softmax probabilities.
torch::Tensor seg(const torch::Tensor& gt_onehot, const torch::Tensor& seg_probs);

// Atlas-to-segmentation: atlas probabilities resampled into image space by
// phi_inv (border padding) against the ground truth.
torch::Tensor atlas_to_seg(const torch::Tensor& gt_onehot, const torch::Tensor& atlas_probs,
                           const torch::Tensor& phi_inv);

// Segmentation-to-atlas: ground truth resampled into atlas space by phi.
torch::Tensor seg_to_atlas(const torch::Tensor& gt_onehot, const torch::Tensor& phi,
                           const torch::Tensor& atlas_probs);

// Batch-mean binary cross-entropy; probabilities are clamped to
// [1e-7, 1 - 1e-7].
torch::Tensor hlhs(const torch::Tensor& y_true, const torch::Tensor& prob);

struct LossParts {
    torch::Tensor seg, a2s, s2a, reg, hlhs;
};

// Exact weighted sum. Undefined parts count as zero; a non-finite part throws
// NumericalError naming the term.
torch::Tensor total(const LossParts& parts, const LossWeights& weights);

torch::Tensor one_hot(const torch::Tensor& labels, int n_classes, torch::ScalarType dtype = torch::kFloat32);

}  // namespace atlas_istn::loss
