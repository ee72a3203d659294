#pragma once

#include <torch/torch.h>

namespace atlas_istn::transform {

// Tensor conventions used throughout this module:
//   velocity / displacement: [N, 2, H, W], channel 0 = x (column), channel 1 = y
//     (row), both in pixels. A displacement u represents the map p -> p + u(p).
//   affine: [N, 2, 3] acting on normalised coordinates in [-1, 1] where pixel
//     centres 0 and (size-1) map to -1 and +1.
// Every function is differentiable through autograd and dtype-generic, so the
// same code runs in float32 for training and float64 for gradient checks.

enum class Padding { Border, Zeros };

// Pixel coordinates of the grid, shape [1, 2, H, W].
torch::Tensor identity_grid(int64_t height, int64_t width, const torch::TensorOptions& options);

// Centralised pixel <-> normalised coordinate conversion on [N, 2, H, W]
// coordinate tensors.
torch::Tensor pixel_to_normalized(const torch::Tensor& coords, int64_t height, int64_t width);
torch::Tensor normalized_to_pixel(const torch::Tensor& coords, int64_t height, int64_t width);

// Bilinear resampling of `field` [N or 1, C, H, W] at p + disp(p). Channels are
// resampled independently. A batch-1 field is broadcast over the batch of disp.
torch::Tensor warp(const torch::Tensor& field, const torch::Tensor& disp, Padding padding = Padding::Border);

// Scaling and squaring: exp(v) as a displacement. steps >= 1.
torch::Tensor exp_velocity(const torch::Tensor& velocity, int steps = 6);

// Displacement of (outer o inner), i.e. p -> outer(inner(p)).
torch::Tensor compose(const torch::Tensor& outer, const torch::Tensor& inner);

torch::Tensor identity_affine(int64_t batch, const torch::TensorOptions& options);

// Maps pixel coordinates [N, 2, H, W] through the affine [N, 2, 3].
torch::Tensor apply_affine(const torch::Tensor& affine, const torch::Tensor& pixel_coords);

// Displacement field of the affine map on an H x W grid.
torch::Tensor affine_displacement(const torch::Tensor& affine, int64_t height, int64_t width);

// Inverse affine; throws NumericalError when any |det| <= 1e-6.
torch::Tensor invert_affine(const torch::Tensor& affine);

struct TransformPair {
    torch::Tensor forward;   // Phi   = T o exp(v): atlas space -> image space
    torch::Tensor inverse;   // Phi^-1 = exp(-v) o T^-1: image space -> atlas space
    torch::Tensor nonrigid;  // exp(v), the non-rigid part penalised for smoothness
};

TransformPair invert(const torch::Tensor& velocity, const torch::Tensor& affine, int steps = 6);

// Sum over both displacement channels of the mean squared forward difference
// along x plus the same along y; a linear field u = (a x, 0) scores exactly a^2
// and any constant field scores 0. Averaged over the batch.
torch::Tensor smoothness_penalty(const torch::Tensor& disp);

}  // namespace atlas_istn::transform
