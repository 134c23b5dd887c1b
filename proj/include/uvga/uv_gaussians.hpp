#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "uvga/body_model.hpp"
#include "uvga/vecmath.hpp"

namespace uvga {

// UV-space map of pre-activation Gaussian attributes.
// Channel layout: [delta_pos 0-2, delta_rot 3-6, delta_scale 7-9,
// color 10-12, opacity 13]. Planar storage (channel, row, col).
struct AttributeMap {
    static constexpr int kChannels = 14;
    static constexpr int kDeltaPos = 0;
    static constexpr int kDeltaRot = 3;
    static constexpr int kDeltaScale = 7;
    static constexpr int kColor = 10;
    static constexpr int kOpacity = 13;

    int width = 0;
    int height = 0;
    std::vector<float> values;

    AttributeMap() = default;
    AttributeMap(int w, int h) : width(w), height(h), values(size_t(kChannels) * w * h, 0.f) {}

    float& at(int c, int y, int x) { return values[(size_t(c) * height + y) * width + x]; }
    float at(int c, int y, int x) const { return values[(size_t(c) * height + y) * width + x]; }
};

// Offset activation constants. Chosen so any finite map yields a valid
// GaussianSet: bounded position offsets, clamped log-scale, small-angle
// rotation offsets, sigmoid color/opacity.
struct OffsetActivations {
    static constexpr float kMaxPosOffset = 0.05f;  // meters
    static constexpr float kLogScaleClamp = 4.f;
    static constexpr float kRotKappa = 0.5f;
};

struct BaseGaussians {
    std::vector<Vec3> positions;
    std::vector<Vec3> scales;
    std::vector<Quat> rotations;
    std::vector<Vec2> uvs;

    size_t size() const { return positions.size(); }
};

struct Gaussian {
    Vec3 mu;
    Quat rot;
    Vec3 scale;
    Vec3 color;
    float alpha = 0.f;
};

using GaussianSet = std::vector<Gaussian>;

// Gradient of some scalar loss with respect to one Gaussian's attributes.
struct GaussianGrad {
    Vec3 d_mu;
    float d_rot[4] = {0, 0, 0, 0};
    Vec3 d_scale;
    Vec3 d_color;
    float d_alpha = 0.f;
};

// Face ownership of UV texels: owner[y*res+x] is the face index whose UV
// triangle contains the texel center, or -1.
std::vector<int32_t> rasterize_face_owners(const BodyTemplate& t, int resolution);

// One Gaussian per face-covered UV texel: position by barycentric surface
// interpolation, isotropic scale from the mean distance to the 4 nearest
// base Gaussians, rotation from the face tangent frame.
BaseGaussians build_base_gaussians(const PosedMesh& mesh, const BodyTemplate& t, int resolution);

GaussianSet apply_offsets(const BaseGaussians& base, const AttributeMap& attrs);

// Reverse of apply_offsets for the attribute map: scatters per-Gaussian
// attribute gradients back through the activations and the bilinear fetch.
AttributeMap apply_offsets_backward(const BaseGaussians& base, const AttributeMap& attrs,
                                    const std::vector<GaussianGrad>& grad_set);

// Binary mask (res x res, row-major) of texel centers inside the region's
// UV chart. Throws std::invalid_argument for unknown regions.
std::vector<uint8_t> region_mask(const BodyTemplate& t, const std::string& region, int resolution);

void save_attribute_map(const AttributeMap& m, const std::string& path);
AttributeMap load_attribute_map(const std::string& path);

}  // namespace uvga
