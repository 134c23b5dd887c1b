#include "uvga/body_model.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "uvga/rng.hpp"
#include "uvga/serialize.hpp"

namespace uvga {

const RegionChart* BodyTemplate::find_chart(const std::string& region) const {
    for (const auto& c : charts)
        if (c.name == region) return &c;
    return nullptr;
}

BodyParams BodyParams::rest(const BodyTemplate& t) {
    BodyParams p;
    p.beta.assign(size_t(t.shape_dim), 0.f);
    p.psi.assign(size_t(t.expr_dim), 0.f);
    p.theta.assign(t.joint_count(), Quat::identity());
    return p;
}

namespace {

// Barycentric coordinates of p in UV triangle (a, b, c); returns false for
// degenerate triangles.
bool uv_barycentric(const Vec2& p, const Vec2& a, const Vec2& b, const Vec2& c, float out[3]) {
    float d = (b.x - a.x) * (c.y - a.y) - (c.x - a.x) * (b.y - a.y);
    if (std::fabs(d) < 1e-12f) return false;
    float inv = 1.f / d;
    float w1 = ((p.x - a.x) * (c.y - a.y) - (c.x - a.x) * (p.y - a.y)) * inv;
    float w2 = ((b.x - a.x) * (p.y - a.y) - (p.x - a.x) * (b.y - a.y)) * inv;
    out[0] = 1.f - w1 - w2;
    out[1] = w1;
    out[2] = w2;
    return true;
}

void check_params(const BodyTemplate& t, const BodyParams& p) {
    if (int(p.beta.size()) != t.shape_dim)
        throw std::invalid_argument("beta length " + std::to_string(p.beta.size()) +
                                    " != shape basis dim " + std::to_string(t.shape_dim));
    if (int(p.psi.size()) != t.expr_dim)
        throw std::invalid_argument("psi length " + std::to_string(p.psi.size()) +
                                    " != expression basis dim " + std::to_string(t.expr_dim));
    if (p.theta.size() != t.joint_count())
        throw std::invalid_argument("theta count " + std::to_string(p.theta.size()) +
                                    " != joint count " + std::to_string(t.joint_count()));
    for (const auto& q : p.theta)
        if (std::fabs(q.norm() - 1.f) > 1e-6f)
            throw std::invalid_argument("pose quaternion is not unit-norm");
}

}  // namespace

void validate_template(const BodyTemplate& t) {
    const size_t nv = t.vertex_count();
    if (nv == 0) throw std::invalid_argument("template has no vertices");
    if (t.uv_coords.size() != nv || t.skinning_weights.size() != nv)
        throw std::invalid_argument("per-vertex array sizes disagree");
    if (t.shape_basis.size() != size_t(t.shape_dim) * nv ||
        t.expr_basis.size() != size_t(t.expr_dim) * nv ||
        t.pose_basis.size() != size_t(t.pose_dim) * nv)
        throw std::invalid_argument("basis array sizes disagree");
    if (t.pose_dim != 9 * (int(t.joint_count()) - 1))
        throw std::invalid_argument("pose basis dim must be 9*(J-1)");

    for (size_t v = 0; v < nv; ++v) {
        float sum = 0.f;
        for (int k = 0; k < 4; ++k) {
            float w = t.skinning_weights[v].weight[k];
            if (w < 0.f) throw std::invalid_argument("negative skinning weight");
            int j = t.skinning_weights[v].joint[k];
            if (j < 0 || size_t(j) >= t.joint_count())
                throw std::invalid_argument("skinning weight joint index out of range");
            sum += w;
        }
        if (std::fabs(sum - 1.f) > 1e-6f)
            throw std::invalid_argument("skinning weights do not sum to 1");

        const Vec2& uv = t.uv_coords[v];
        if (!(uv.x >= 0.f && uv.x <= 1.f && uv.y >= 0.f && uv.y <= 1.f))
            throw std::invalid_argument("uv coordinate outside [0,1]^2");
    }

    // Skeleton must be a tree rooted at joint 0.
    if (t.skeleton.empty() || t.skeleton[0].parent != -1)
        throw std::invalid_argument("joint 0 must be the root");
    for (size_t j = 1; j < t.joint_count(); ++j) {
        int p = t.skeleton[j].parent;
        if (p < 0 || size_t(p) >= j)
            throw std::invalid_argument("skeleton parents must precede children");
    }

    // Face-id rasterization at 256^2: no texel may be strictly interior to
    // two different faces.
    const int res = 256;
    for (int ty = 0; ty < res; ++ty) {
        for (int tx = 0; tx < res; ++tx) {
            Vec2 p{(tx + 0.5f) / res, (ty + 0.5f) / res};
            int owner = -1;
            for (size_t f = 0; f < t.faces.size(); ++f) {
                const auto& tri = t.faces[f];
                float bc[3];
                if (!uv_barycentric(p, t.uv_coords[tri[0]], t.uv_coords[tri[1]], t.uv_coords[tri[2]], bc))
                    continue;
                if (bc[0] > 1e-7f && bc[1] > 1e-7f && bc[2] > 1e-7f) {
                    if (owner >= 0)
                        throw std::invalid_argument("UV faces overlap at texel (" +
                                                    std::to_string(tx) + "," + std::to_string(ty) + ")");
                    owner = int(f);
                }
            }
        }
    }
}

std::vector<Vec3> canonical_mesh(const BodyTemplate& t, const BodyParams& params) {
    check_params(t, params);
    const size_t nv = t.vertex_count();
    std::vector<Vec3> out = t.vertices_canonical;

    for (int s = 0; s < t.shape_dim; ++s) {
        float b = params.beta[size_t(s)];
        if (b == 0.f) continue;
        const Vec3* basis = &t.shape_basis[size_t(s) * nv];
        for (size_t v = 0; v < nv; ++v) out[v] += basis[v] * b;
    }
    for (int e = 0; e < t.expr_dim; ++e) {
        float c = params.psi[size_t(e)];
        if (c == 0.f) continue;
        const Vec3* basis = &t.expr_basis[size_t(e) * nv];
        for (size_t v = 0; v < nv; ++v) out[v] += basis[v] * c;
    }

    // Pose features: flattened (R - I) of non-root joints, row-major.
    for (size_t j = 1; j < t.joint_count(); ++j) {
        Mat3 r = to_mat3(params.theta[j]);
        for (int row = 0; row < 3; ++row) {
            for (int col = 0; col < 3; ++col) {
                float f = r.at(row, col) - (row == col ? 1.f : 0.f);
                if (f == 0.f) continue;
                size_t feat = (j - 1) * 9 + size_t(row) * 3 + size_t(col);
                const Vec3* basis = &t.pose_basis[feat * nv];
                for (size_t v = 0; v < nv; ++v) out[v] += basis[v] * f;
            }
        }
    }
    return out;
}

std::vector<Vec3> joint_positions(const BodyTemplate& t, const std::vector<float>& beta) {
    if (int(beta.size()) != t.shape_dim)
        throw std::invalid_argument("beta length does not match shape basis dim");
    const size_t nv = t.vertex_count();
    const size_t nj = t.joint_count();

    // Dominant-weight vertex group per joint.
    std::vector<Vec3> disp_sum(nj, Vec3{});
    std::vector<int> disp_count(nj, 0);
    for (size_t v = 0; v < nv; ++v) {
        const auto& w = t.skinning_weights[v];
        int best = 0;
        for (int k = 1; k < 4; ++k)
            if (w.weight[k] > w.weight[best]) best = k;
        int j = w.joint[size_t(best)];

        Vec3 d{};
        for (int s = 0; s < t.shape_dim; ++s)
            d += t.shape_basis[size_t(s) * nv + v] * beta[size_t(s)];
        disp_sum[size_t(j)] += d;
        disp_count[size_t(j)] += 1;
    }

    std::vector<Vec3> joints(nj);
    for (size_t j = 0; j < nj; ++j) {
        Vec3 base = t.skeleton[j].rest_offset;
        if (t.skeleton[j].parent >= 0) base += joints[size_t(t.skeleton[j].parent)];
        Vec3 mean = disp_count[j] > 0 ? disp_sum[j] * (1.f / float(disp_count[j])) : Vec3{};
        joints[j] = base + mean;
    }
    return joints;
}

PosedMesh lbs_deform(const BodyTemplate& t, const BodyParams& params) {
    check_params(t, params);
    std::vector<Vec3> canon = canonical_mesh(t, params);
    std::vector<Vec3> joints = joint_positions(t, params.beta);
    const size_t nj = t.joint_count();

    // Rest and posed chains share identical arithmetic, so the rest pose
    // yields exact-identity joint deltas.
    std::vector<Rigid> world(nj), rest(nj);
    for (size_t j = 0; j < nj; ++j) {
        Vec3 offset = joints[j];
        if (t.skeleton[j].parent >= 0) offset = joints[j] - joints[size_t(t.skeleton[j].parent)];
        Rigid local_posed{to_mat3(params.theta[j]), offset};
        Rigid local_rest{Mat3::identity(), offset};
        if (t.skeleton[j].parent >= 0) {
            world[j] = world[size_t(t.skeleton[j].parent)] * local_posed;
            rest[j] = rest[size_t(t.skeleton[j].parent)] * local_rest;
        } else {
            world[j] = local_posed;
            rest[j] = local_rest;
        }
    }

    std::vector<Rigid> delta(nj);
    for (size_t j = 0; j < nj; ++j) delta[j] = world[j] * rest[j].inverse();

    PosedMesh out;
    out.joints_world = world;
    out.vertices.resize(canon.size());
    for (size_t v = 0; v < canon.size(); ++v) {
        const Vec3 x = canon[v];
        Vec3 p = x;
        const auto& w = t.skinning_weights[v];
        for (int k = 0; k < 4; ++k) {
            if (w.weight[k] == 0.f) continue;
            p += (delta[size_t(w.joint[k])] * x - x) * w.weight[k];
        }
        out.vertices[v] = p;
    }
    return out;
}

namespace {

struct PartBuilder {
    BodyTemplate& t;
    // Appends a grid of (nu+1) x (nv+1) vertices filling a chart rectangle.
    // pos(iu, iv) gives the 3D position; weights(iu, iv) the skin weights.
    template <typename PosFn, typename WeightFn>
    void grid(const RegionChart& chart, int nu, int nv, PosFn pos, WeightFn weights) {
        uint32_t base = uint32_t(t.vertices_canonical.size());
        for (int iv = 0; iv <= nv; ++iv) {
            for (int iu = 0; iu <= nu; ++iu) {
                t.vertices_canonical.push_back(pos(iu, iv));
                float u = chart.u0 + (chart.u1 - chart.u0) * float(iu) / float(nu);
                float v = chart.v0 + (chart.v1 - chart.v0) * float(iv) / float(nv);
                t.uv_coords.push_back({u, v});
                t.skinning_weights.push_back(weights(iu, iv));
            }
        }
        for (int iv = 0; iv < nv; ++iv) {
            for (int iu = 0; iu < nu; ++iu) {
                uint32_t a = base + uint32_t(iv * (nu + 1) + iu);
                uint32_t b = a + 1;
                uint32_t c = a + uint32_t(nu + 1);
                uint32_t d = c + 1;
                t.faces.push_back({a, b, d});
                t.faces.push_back({a, d, c});
            }
        }
    }
};

VertexWeights one_joint(int j) {
    VertexWeights w;
    w.joint[0] = j;
    w.weight[0] = 1.f;
    return w;
}

VertexWeights two_joints(int j0, float w0, int j1) {
    if (w0 >= 1.f) return one_joint(j0);
    if (w0 <= 0.f) return one_joint(j1);
    VertexWeights w;
    w.joint[0] = j0;
    w.weight[0] = w0;
    w.joint[1] = j1;
    w.weight[1] = 1.f - w0;
    return w;
}

}  // namespace

BodyTemplate make_capsule_template(uint64_t seed) {
    BodyTemplate t;

    enum JointId {
        kRoot = 0, kSpine, kHead,
        kLShoulder, kLElbow, kRShoulder, kRElbow,
        kLHip, kLKnee, kRHip, kRKnee,
        kJointCount
    };
    t.skeleton = {
        {"root", -1, {0.f, 0.f, 0.f}},
        {"spine", kRoot, {0.f, 0.30f, 0.f}},
        {"head", kSpine, {0.f, 0.32f, 0.f}},
        {"l_shoulder", kSpine, {-0.17f, 0.18f, 0.f}},
        {"l_elbow", kLShoulder, {-0.23f, 0.f, 0.f}},
        {"r_shoulder", kSpine, {0.17f, 0.18f, 0.f}},
        {"r_elbow", kRShoulder, {0.23f, 0.f, 0.f}},
        {"l_hip", kRoot, {-0.09f, -0.04f, 0.f}},
        {"l_knee", kLHip, {0.f, -0.46f, 0.f}},
        {"r_hip", kRoot, {0.09f, -0.04f, 0.f}},
        {"r_knee", kRHip, {0.f, -0.46f, 0.f}},
    };

    t.charts = {
        {"torso", 0.00f, 0.00f, 0.50f, 0.50f},
        {"head", 0.50f, 0.00f, 1.00f, 0.25f},
        {"left_arm", 0.50f, 0.25f, 0.75f, 0.50f},
        {"right_arm", 0.75f, 0.25f, 1.00f, 0.50f},
        {"left_leg", 0.00f, 0.50f, 0.25f, 1.00f},
        {"right_leg", 0.25f, 0.50f, 0.50f, 1.00f},
    };

    PartBuilder build{t};
    const float kTau = 6.2831853f;

    // Torso: vertical tube, pelvis y=0 to neck y=0.55.
    build.grid(
        t.charts[0], 12, 8,
        [&](int iu, int iv) {
            float a = kTau * float(iu) / 12.f;
            float h = 0.55f * float(iv) / 8.f;
            float r = 0.16f - 0.03f * float(iv) / 8.f;  // slight taper to the neck
            return Vec3{r * std::cos(a), h, r * std::sin(a)};
        },
        [&](int, int iv) {
            float f = float(iv) / 8.f;
            float spine_w = clampf((f - 0.25f) / 0.5f, 0.f, 1.f);
            return two_joints(kSpine, spine_w, kRoot);
        });

    // Head: sphere around (0, 0.68, 0).
    build.grid(
        t.charts[1], 12, 6,
        [&](int iu, int iv) {
            float a = kTau * float(iu) / 12.f;
            float phi = 3.1415927f * float(iv) / 6.f;
            float r = 0.115f;
            return Vec3{r * std::sin(phi) * std::cos(a), 0.68f - r * std::cos(phi),
                        r * std::sin(phi) * std::sin(a)};
        },
        [&](int, int) { return one_joint(kHead); });

    // Arms: horizontal tubes along +-x, shoulder to wrist.
    for (int side = 0; side < 2; ++side) {
        float sx = side == 0 ? -1.f : 1.f;
        int shoulder = side == 0 ? kLShoulder : kRShoulder;
        int elbow = side == 0 ? kLElbow : kRElbow;
        build.grid(
            t.charts[side == 0 ? 2 : 3], 8, 6,
            [&](int iu, int iv) {
                float a = kTau * float(iu) / 8.f;
                float x = sx * (0.19f + 0.43f * float(iv) / 6.f);
                float r = 0.045f;
                return Vec3{x, 0.48f + r * std::cos(a), r * std::sin(a)};
            },
            [&](int, int iv) {
                float f = float(iv) / 6.f;  // 0 shoulder .. 1 wrist; elbow near f=0.53
                float elbow_w = clampf((f - 0.38f) / 0.3f, 0.f, 1.f);
                return two_joints(elbow, elbow_w, shoulder);
            });
    }

    // Legs: vertical tubes, hip to ankle.
    for (int side = 0; side < 2; ++side) {
        float sx = side == 0 ? -1.f : 1.f;
        int hip = side == 0 ? kLHip : kRHip;
        int knee = side == 0 ? kLKnee : kRKnee;
        build.grid(
            t.charts[side == 0 ? 4 : 5], 8, 8,
            [&](int iu, int iv) {
                float a = kTau * float(iu) / 8.f;
                float y = -0.06f - 0.89f * float(iv) / 8.f;
                float r = 0.06f;
                return Vec3{sx * 0.09f + r * std::cos(a), y, r * std::sin(a)};
            },
            [&](int, int iv) {
                float f = float(iv) / 8.f;
                float knee_w = clampf((f - 0.35f) / 0.3f, 0.f, 1.f);
                return two_joints(knee, knee_w, hip);
            });
    }

    const size_t nv = t.vertex_count();
    t.shape_dim = 2;
    t.shape_basis.resize(2 * nv);
    for (size_t v = 0; v < nv; ++v) {
        Vec3 p = t.vertices_canonical[v];
        t.shape_basis[v] = p * 0.1f;                       // overall size
        t.shape_basis[nv + v] = Vec3{p.x, 0.f, p.z} * 0.1f;  // width
    }

    t.expr_dim = 2;
    t.expr_basis.assign(2 * nv, Vec3{});
    const RegionChart& head_chart = t.charts[1];
    for (size_t v = 0; v < nv; ++v) {
        if (!head_chart.contains(t.uv_coords[v].x, t.uv_coords[v].y)) continue;
        Vec3 p = t.vertices_canonical[v];
        t.expr_basis[v] = Vec3{0.f, 0.05f * (p.y - 0.68f), 0.f};  // head stretch
        t.expr_basis[nv + v] = Vec3{0.03f * p.x, 0.f, 0.f};       // head widen
    }

    t.pose_dim = 9 * (kJointCount - 1);
    t.pose_basis.resize(size_t(t.pose_dim) * nv);
    for (size_t f = 0; f < size_t(t.pose_dim); ++f) {
        for (size_t v = 0; v < nv; ++v) {
            uint64_t h = CounterRng::mix(seed, rng_stream::init_weights, f * nv + v);
            // Small corrective bumps in [-0.004, 0.004] per axis.
            auto comp = [&](int axis) {
                uint64_t bits = (h >> (21 * axis)) & 0x1FFFFF;
                return (float(bits) / float(0x1FFFFF) - 0.5f) * 0.008f;
            };
            t.pose_basis[f * nv + v] = Vec3{comp(0), comp(1), comp(2)};
        }
    }

    return t;
}

void save_template(const BodyTemplate& t, const std::string& path) {
    atomic_write(path, [&](BinaryWriter& w) {
        w.magic("TBDY");
        w.u32(1);
        w.u32(uint32_t(t.vertex_count()));
        w.u32(uint32_t(t.faces.size()));
        w.u32(uint32_t(t.joint_count()));
        w.u32(uint32_t(t.shape_dim));
        w.u32(uint32_t(t.expr_dim));
        w.u32(uint32_t(t.pose_dim));
        w.u32(uint32_t(t.charts.size()));
        for (const auto& v : t.vertices_canonical) {
            w.f32(v.x);
            w.f32(v.y);
            w.f32(v.z);
        }
        for (const auto& f : t.faces)
            for (uint32_t idx : f) w.u32(idx);
        for (const auto& uv : t.uv_coords) {
            w.f32(uv.x);
            w.f32(uv.y);
        }
        for (const auto& j : t.skeleton) {
            w.str(j.name);
            w.u32(uint32_t(int32_t(j.parent)));
            w.f32(j.rest_offset.x);
            w.f32(j.rest_offset.y);
            w.f32(j.rest_offset.z);
        }
        for (const auto& sw : t.skinning_weights) {
            for (int k = 0; k < 4; ++k) {
                w.u32(uint32_t(sw.joint[k]));
                w.f32(sw.weight[k]);
            }
        }
        auto write_basis = [&](const std::vector<Vec3>& basis) {
            for (const auto& v : basis) {
                w.f32(v.x);
                w.f32(v.y);
                w.f32(v.z);
            }
        };
        write_basis(t.shape_basis);
        write_basis(t.expr_basis);
        write_basis(t.pose_basis);
        for (const auto& c : t.charts) {
            w.str(c.name);
            w.f32(c.u0);
            w.f32(c.v0);
            w.f32(c.u1);
            w.f32(c.v1);
        }
    });
}

BodyTemplate load_template(const std::string& path) {
    std::ifstream is = open_input(path);
    BinaryReader r(is, path);
    r.expect_magic("TBDY");
    uint32_t version = r.u32();
    if (version != 1) throw std::runtime_error(path + ": unsupported TBDY version");

    BodyTemplate t;
    uint32_t nv = r.u32(), nf = r.u32(), nj = r.u32();
    t.shape_dim = int(r.u32());
    t.expr_dim = int(r.u32());
    t.pose_dim = int(r.u32());
    uint32_t nc = r.u32();

    t.vertices_canonical.resize(nv);
    for (auto& v : t.vertices_canonical) {
        v.x = r.f32();
        v.y = r.f32();
        v.z = r.f32();
    }
    t.faces.resize(nf);
    for (auto& f : t.faces)
        for (auto& idx : f) idx = r.u32();
    t.uv_coords.resize(nv);
    for (auto& uv : t.uv_coords) {
        uv.x = r.f32();
        uv.y = r.f32();
    }
    t.skeleton.resize(nj);
    for (auto& j : t.skeleton) {
        j.name = r.str();
        j.parent = int(int32_t(r.u32()));
        j.rest_offset.x = r.f32();
        j.rest_offset.y = r.f32();
        j.rest_offset.z = r.f32();
    }
    t.skinning_weights.resize(nv);
    for (auto& sw : t.skinning_weights) {
        for (int k = 0; k < 4; ++k) {
            sw.joint[k] = int(r.u32());
            sw.weight[k] = r.f32();
        }
    }
    auto read_basis = [&](std::vector<Vec3>& basis, size_t n) {
        basis.resize(n);
        for (auto& v : basis) {
            v.x = r.f32();
            v.y = r.f32();
            v.z = r.f32();
        }
    };
    read_basis(t.shape_basis, size_t(t.shape_dim) * nv);
    read_basis(t.expr_basis, size_t(t.expr_dim) * nv);
    read_basis(t.pose_basis, size_t(t.pose_dim) * nv);
    t.charts.resize(nc);
    for (auto& c : t.charts) {
        c.name = r.str();
        c.u0 = r.f32();
        c.v0 = r.f32();
        c.u1 = r.f32();
        c.v1 = r.f32();
    }
    return t;
}

}  // namespace uvga
