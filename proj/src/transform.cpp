#include "atlas_istn/transform.hpp"

#include <string>

#include "atlas_istn/error.hpp"

namespace atlas_istn::transform {
namespace {

using torch::indexing::None;
using torch::indexing::Slice;

void require_finite(const torch::Tensor& t, const char* what) {
    if (!torch::isfinite(t).all().item<bool>()) throw NumericalError(std::string(what) + ": non-finite input");
}

void require_field(const torch::Tensor& t, int64_t channels, const char* what) {
    if (t.dim() != 4 || (channels > 0 && t.size(1) != channels)) {
        throw InvalidArgument(std::string(what) + ": expected [N," + (channels > 0 ? std::to_string(channels) : "C") +
                              ",H,W] tensor, got " + std::to_string(t.dim()) + "-d");
    }
}

}  // namespace

torch::Tensor identity_grid(int64_t height, int64_t width, const torch::TensorOptions& options) {
    auto ys = torch::arange(height, options);
    auto xs = torch::arange(width, options);
    auto mesh = torch::meshgrid({ys, xs}, "ij");
    return torch::stack({mesh[1], mesh[0]}, 0).unsqueeze(0);
}

torch::Tensor pixel_to_normalized(const torch::Tensor& coords, int64_t height, int64_t width) {
    auto scale = torch::tensor({2.0 / double(width - 1), 2.0 / double(height - 1)}, coords.options()).view({1, 2, 1, 1});
    return coords * scale - 1.0;
}

torch::Tensor normalized_to_pixel(const torch::Tensor& coords, int64_t height, int64_t width) {
    auto scale = torch::tensor({double(width - 1) / 2.0, double(height - 1) / 2.0}, coords.options()).view({1, 2, 1, 1});
    return (coords + 1.0) * scale;
}

torch::Tensor warp(const torch::Tensor& field, const torch::Tensor& disp, Padding padding) {
    require_field(field, 0, "warp(field)");
    require_field(disp, 2, "warp(disp)");
    const int64_t n = disp.size(0), c = field.size(1), h = disp.size(2), w = disp.size(3);
    if (field.size(2) != h || field.size(3) != w || (field.size(0) != n && field.size(0) != 1)) {
        throw InvalidArgument("warp: field and displacement shapes are inconsistent");
    }
    auto grid = identity_grid(h, w, disp.options());
    auto x = grid.select(1, 0) + disp.select(1, 0);  // [N,H,W]
    auto y = grid.select(1, 1) + disp.select(1, 1);
    if (padding == Padding::Border) {
        x = x.clamp(0.0, double(w - 1));
        y = y.clamp(0.0, double(h - 1));
    }
    auto x0 = x.floor().detach();
    auto y0 = y.floor().detach();
    auto wx = x - x0;
    auto wy = y - y0;
    auto x0i = x0.to(torch::kLong), y0i = y0.to(torch::kLong);
    auto x1i = x0i + 1, y1i = y0i + 1;

    auto flat = field.reshape({field.size(0), c, h * w}).expand({n, c, h * w});
    auto corner = [&](const torch::Tensor& xi, const torch::Tensor& yi, const torch::Tensor& weight) {
        torch::Tensor wgt = weight;
        if (padding == Padding::Zeros) {
            auto valid = (xi >= 0) & (xi < w) & (yi >= 0) & (yi < h);
            wgt = wgt * valid.to(weight.scalar_type());
        }
        auto idx = (yi.clamp(0, h - 1) * w + xi.clamp(0, w - 1)).reshape({n, 1, h * w}).expand({n, c, h * w});
        auto vals = flat.gather(2, idx).reshape({n, c, h, w});
        return vals * wgt.unsqueeze(1);
    };
    return corner(x0i, y0i, (1 - wx) * (1 - wy)) + corner(x1i, y0i, wx * (1 - wy)) + corner(x0i, y1i, (1 - wx) * wy) +
           corner(x1i, y1i, wx * wy);
}

torch::Tensor exp_velocity(const torch::Tensor& velocity, int steps) {
    require_field(velocity, 2, "exp_velocity");
    if (steps < 1) throw InvalidArgument("exp_velocity: steps must be >= 1");
    require_finite(velocity, "exp_velocity");
    auto u = velocity / double(int64_t{1} << steps);
    for (int i = 0; i < steps; ++i) u = u + warp(u, u, Padding::Border);
    return u;
}

torch::Tensor compose(const torch::Tensor& outer, const torch::Tensor& inner) {
    return inner + warp(outer, inner, Padding::Border);
}

torch::Tensor identity_affine(int64_t batch, const torch::TensorOptions& options) {
    auto eye = torch::zeros({2, 3}, options);
    eye.index_put_({0, 0}, 1.0);
    eye.index_put_({1, 1}, 1.0);
    return eye.unsqueeze(0).repeat({batch, 1, 1});
}

torch::Tensor apply_affine(const torch::Tensor& affine, const torch::Tensor& pixel_coords) {
    const int64_t h = pixel_coords.size(2), w = pixel_coords.size(3);
    auto pn = pixel_to_normalized(pixel_coords, h, w);
    auto linear = affine.index({Slice(), Slice(), Slice(0, 2)});         // [N,2,2]
    auto shift = affine.index({Slice(), Slice(), 2}).view({-1, 2, 1, 1});  // [N,2,1,1]
    auto mapped = torch::einsum("nij,njhw->nihw", {linear, pn}) + shift;
    return normalized_to_pixel(mapped, h, w);
}

torch::Tensor affine_displacement(const torch::Tensor& affine, int64_t height, int64_t width) {
    auto grid = identity_grid(height, width, affine.options());
    return apply_affine(affine, grid.expand({affine.size(0), 2, height, width})) - grid;
}

torch::Tensor invert_affine(const torch::Tensor& affine) {
    if (affine.dim() != 3 || affine.size(1) != 2 || affine.size(2) != 3) {
        throw InvalidArgument("invert_affine: expected [N,2,3]");
    }
    require_finite(affine, "invert_affine");
    auto linear = affine.index({Slice(), Slice(), Slice(0, 2)});
    auto det = torch::linalg_det(linear);
    if ((det.abs() <= 1e-6).any().item<bool>()) throw NumericalError("invert_affine: singular affine (|det| <= 1e-6)");
    auto inv = torch::linalg_inv(linear);
    auto shift = affine.index({Slice(), Slice(), Slice(2, 3)});
    return torch::cat({inv, -torch::matmul(inv, shift)}, 2);
}

TransformPair invert(const torch::Tensor& velocity, const torch::Tensor& affine, int steps) {
    require_field(velocity, 2, "invert(velocity)");
    if (affine.size(0) != velocity.size(0)) throw InvalidArgument("invert: batch size mismatch");
    const int64_t h = velocity.size(2), w = velocity.size(3);
    auto affine_inv = invert_affine(affine);
    auto grid = identity_grid(h, w, velocity.options());

    TransformPair out;
    out.nonrigid = exp_velocity(velocity, steps);
    // The affine is evaluated analytically rather than interpolated.
    out.forward = apply_affine(affine, grid + out.nonrigid) - grid;
    auto back_nonrigid = exp_velocity(-velocity, steps);
    auto affine_part = apply_affine(affine_inv, grid.expand({velocity.size(0), 2, h, w})) - grid;
    out.inverse = compose(back_nonrigid, affine_part);
    return out;
}

torch::Tensor smoothness_penalty(const torch::Tensor& disp) {
    require_field(disp, 2, "smoothness_penalty");
    require_finite(disp, "smoothness_penalty");
    auto dx = disp.index({Slice(), Slice(), Slice(), Slice(1, None)}) -
              disp.index({Slice(), Slice(), Slice(), Slice(None, -1)});
    auto dy = disp.index({Slice(), Slice(), Slice(1, None), Slice()}) -
              disp.index({Slice(), Slice(), Slice(None, -1), Slice()});
    return dx.pow(2).sum(1).mean() + dy.pow(2).sum(1).mean();
}

}  // namespace atlas_istn::transform
