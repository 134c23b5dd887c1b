#pragma once

#include <cstdint>
#include <vector>

#include "uvga/camera.hpp"
#include "uvga/uv_gaussians.hpp"

namespace uvga {

struct Splat2D {
    Vec2 mean2d;          // pixels
    float cov_xx = 0.f;   // 2D covariance incl. the 0.3 EWA dilation
    float cov_xy = 0.f;
    float cov_yy = 0.f;
    float depth = 0.f;    // camera-space z
    Vec3 color;
    float opacity = 0.f;
    int source = -1;      // index into the projected GaussianSet
};

struct RenderedImage {
    int width = 0, height = 0;
    std::vector<float> rgb;    // planar (3, height, width), values in [0,1]
    std::vector<float> alpha;  // (height, width)

    RenderedImage() = default;
    RenderedImage(int w, int h)
        : width(w), height(h), rgb(size_t(3) * w * h, 0.f), alpha(size_t(w) * h, 0.f) {}

    float& rgb_at(int c, int y, int x) { return rgb[(size_t(c) * height + y) * width + x]; }
    float rgb_at(int c, int y, int x) const { return rgb[(size_t(c) * height + y) * width + x]; }
    float& alpha_at(int y, int x) { return alpha[size_t(y) * width + x]; }
};

struct RenderStats {
    int64_t culled_behind = 0;
    int64_t skipped_nonpd = 0;
    int64_t tiles_touched = 0;
    double splats_per_pixel = 0.0;
};

// Gradients flowing out of rasterize_backward, both at the 2D splat level
// and chained through projection to the source Gaussians.
struct RenderGrads {
    std::vector<Vec2> d_mean2d;
    std::vector<std::array<float, 3>> d_cov2d;  // d/d(xx, xy, yy); xy counts both entries
    std::vector<Vec3> d_color2d;
    std::vector<float> d_opacity2d;
    std::vector<GaussianGrad> d_gaussians;  // indexed like the source set
};

// Projects to 2D splats: Sigma = R S S^T R^T pushed through the camera
// rotation and projection Jacobian. Gaussians with camera z <= 0.01 are
// dropped.
std::vector<Splat2D> project(const GaussianSet& set, const Camera& cam);

// Tile-based front-to-back alpha compositing (16x16 tiles, 3-sigma splat
// radius, 0.999 opacity clamp, early out below 1e-4 transmittance).
// Deterministic for any thread count.
RenderedImage rasterize(const std::vector<Splat2D>& splats, const Camera& cam,
                        RenderStats* stats = nullptr);

// Exact reverse of rasterize + project. grad_rgb is planar (3, H, W).
// `set` must be the set the splats were projected from.
RenderGrads rasterize_backward(const GaussianSet& set, const std::vector<Splat2D>& splats,
                               const Camera& cam, const std::vector<float>& grad_rgb);

}  // namespace uvga
