#pragma once

#include <array>
#include <string>
#include <vector>

#include "uvga/vecmath.hpp"

namespace uvga {

struct Joint {
    std::string name;
    int parent = -1;  // -1 for the root
    Vec3 rest_offset;
};

// Up to four (joint, weight) pairs per vertex; unused slots have weight 0.
struct VertexWeights {
    std::array<int, 4> joint{0, 0, 0, 0};
    std::array<float, 4> weight{0.f, 0.f, 0.f, 0.f};
};

// Rectangular UV chart owned by one body region, [u0,u1) x [v0,v1).
struct RegionChart {
    std::string name;
    float u0 = 0, v0 = 0, u1 = 0, v1 = 0;

    bool contains(float u, float v) const { return u >= u0 && u < u1 && v >= v0 && v < v1; }
};

struct BodyTemplate {
    std::vector<Vec3> vertices_canonical;
    std::vector<std::array<uint32_t, 3>> faces;
    std::vector<Vec2> uv_coords;  // per vertex, in [0,1]^2
    std::vector<Joint> skeleton;
    std::vector<VertexWeights> skinning_weights;

    int shape_dim = 0;
    int expr_dim = 0;
    int pose_dim = 0;  // 9 * (joint count - 1)

    // Basis layout: basis[coeff * vertex_count + vertex].
    std::vector<Vec3> shape_basis;
    std::vector<Vec3> expr_basis;
    std::vector<Vec3> pose_basis;

    std::vector<RegionChart> charts;

    size_t vertex_count() const { return vertices_canonical.size(); }
    size_t joint_count() const { return skeleton.size(); }
    const RegionChart* find_chart(const std::string& region) const;
};

struct BodyParams {
    std::vector<float> beta;
    std::vector<Quat> theta;  // one per joint
    std::vector<float> psi;

    static BodyParams rest(const BodyTemplate& t);
};

struct PosedMesh {
    std::vector<Vec3> vertices;
    std::vector<Rigid> joints_world;
};

// Throws std::invalid_argument if any template invariant fails: weight
// non-negativity and per-vertex sum 1 (1e-6), UVs inside [0,1]^2, UV faces
// not overlapping (face-id rasterization at 256^2), skeleton a tree rooted
// at joint 0.
void validate_template(const BodyTemplate& t);

// T_c + B_s(beta) + B_e(psi) + B_p(theta); pose features are flattened
// (R - I) of non-root joints.
std::vector<Vec3> canonical_mesh(const BodyTemplate& t, const BodyParams& params);

// Rest joint positions by parent-chain accumulation, shifted by the mean
// shape displacement of each joint's dominant-weight vertex group.
std::vector<Vec3> joint_positions(const BodyTemplate& t, const std::vector<float>& beta);

PosedMesh lbs_deform(const BodyTemplate& t, const BodyParams& params);

// Deterministic toy capsule-person template: ~500 vertices, 11 joints,
// six rectangular UV charts. The seed only perturbs the pose-correction
// basis values.
BodyTemplate make_capsule_template(uint64_t seed);

void save_template(const BodyTemplate& t, const std::string& path);
BodyTemplate load_template(const std::string& path);

}  // namespace uvga
