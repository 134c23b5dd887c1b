#include "uvga/uv_gaussians.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "uvga/serialize.hpp"

namespace uvga {

namespace {

struct Bary {
    float w[3];
};

bool uv_barycentric(const Vec2& p, const Vec2& a, const Vec2& b, const Vec2& c, Bary& out) {
    float d = (b.x - a.x) * (c.y - a.y) - (c.x - a.x) * (b.y - a.y);
    if (std::fabs(d) < 1e-12f) return false;
    float inv = 1.f / d;
    float w1 = ((p.x - a.x) * (c.y - a.y) - (c.x - a.x) * (p.y - a.y)) * inv;
    float w2 = ((b.x - a.x) * (p.y - a.y) - (p.x - a.x) * (b.y - a.y)) * inv;
    out.w[0] = 1.f - w1 - w2;
    out.w[1] = w1;
    out.w[2] = w2;
    return out.w[0] >= -1e-6f && out.w[1] >= -1e-6f && out.w[2] >= -1e-6f;
}

// Bilinear fetch setup: texel centers at (i + 0.5) / size sample texel i
// exactly (clamp-to-edge at the borders).
struct BilinearTap {
    int x0, x1, y0, y1;
    float wx, wy;
};

BilinearTap bilinear_tap(const Vec2& uv, int width, int height) {
    float px = uv.x * float(width) - 0.5f;
    float py = uv.y * float(height) - 0.5f;
    float fx = std::floor(px);
    float fy = std::floor(py);
    BilinearTap t;
    t.wx = px - fx;
    t.wy = py - fy;
    int x0 = int(fx), y0 = int(fy);
    t.x0 = std::clamp(x0, 0, width - 1);
    t.x1 = std::clamp(x0 + 1, 0, width - 1);
    t.y0 = std::clamp(y0, 0, height - 1);
    t.y1 = std::clamp(y0 + 1, 0, height - 1);
    return t;
}

float sample_channel(const AttributeMap& m, const BilinearTap& t, int c) {
    float v00 = m.at(c, t.y0, t.x0);
    float v01 = m.at(c, t.y0, t.x1);
    float v10 = m.at(c, t.y1, t.x0);
    float v11 = m.at(c, t.y1, t.x1);
    float top = v00 + (v01 - v00) * t.wx;
    float bot = v10 + (v11 - v10) * t.wx;
    return top + (bot - top) * t.wy;
}

void scatter_channel(AttributeMap& m, const BilinearTap& t, int c, float g) {
    m.at(c, t.y0, t.x0) += g * (1.f - t.wx) * (1.f - t.wy);
    m.at(c, t.y0, t.x1) += g * t.wx * (1.f - t.wy);
    m.at(c, t.y1, t.x0) += g * (1.f - t.wx) * t.wy;
    m.at(c, t.y1, t.x1) += g * t.wx * t.wy;
}

// 4-nearest-neighbor mean distance via a uniform grid over the point set.
std::vector<float> mean_4nn_distance(const std::vector<Vec3>& pts) {
    const size_t n = pts.size();
    std::vector<float> out(n, 0.01f);
    if (n < 2) return out;
    const int k = int(std::min<size_t>(4, n - 1));

    Vec3 lo = pts[0], hi = pts[0];
    for (const auto& p : pts) {
        for (int a = 0; a < 3; ++a) {
            lo[a] = std::min(lo[a], p[a]);
            hi[a] = std::max(hi[a], p[a]);
        }
    }
    Vec3 span = hi - lo;
    float vol = std::max(span.x, 1e-4f) * std::max(span.y, 1e-4f) * std::max(span.z, 1e-4f);
    float cell = std::max(std::cbrt(vol / float(n)) * 2.f, 1e-4f);
    int dims[3];
    for (int a = 0; a < 3; ++a) dims[a] = std::max(1, std::min(128, int(span[a] / cell) + 1));

    auto cell_of = [&](const Vec3& p, int idx[3]) {
        for (int a = 0; a < 3; ++a) {
            int c = int((p[a] - lo[a]) / cell);
            idx[a] = std::clamp(c, 0, dims[a] - 1);
        }
    };

    std::vector<std::vector<uint32_t>> bins(size_t(dims[0]) * dims[1] * dims[2]);
    for (size_t i = 0; i < n; ++i) {
        int c[3];
        cell_of(pts[i], c);
        bins[(size_t(c[2]) * dims[1] + c[1]) * dims[0] + c[0]].push_back(uint32_t(i));
    }

    std::vector<float> best;
    for (size_t i = 0; i < n; ++i) {
        best.clear();
        int c[3];
        cell_of(pts[i], c);
        int max_ring = std::max({dims[0], dims[1], dims[2]});
        for (int ring = 0; ring <= max_ring; ++ring) {
            // Points in this ring are at least (ring-1)*cell away.
            if (int(best.size()) >= k && best.back() <= float(ring - 1) * cell) break;
            for (int dz = -ring; dz <= ring; ++dz) {
                for (int dy = -ring; dy <= ring; ++dy) {
                    for (int dx = -ring; dx <= ring; ++dx) {
                        if (std::max({std::abs(dx), std::abs(dy), std::abs(dz)}) != ring) continue;
                        int gx = c[0] + dx, gy = c[1] + dy, gz = c[2] + dz;
                        if (gx < 0 || gy < 0 || gz < 0 || gx >= dims[0] || gy >= dims[1] || gz >= dims[2])
                            continue;
                        for (uint32_t j : bins[(size_t(gz) * dims[1] + gy) * dims[0] + gx]) {
                            if (size_t(j) == i) continue;
                            float d = norm(pts[j] - pts[i]);
                            if (int(best.size()) < k) {
                                best.push_back(d);
                                std::sort(best.begin(), best.end());
                            } else if (d < best.back()) {
                                best.back() = d;
                                std::sort(best.begin(), best.end());
                            }
                        }
                    }
                }
            }
        }
        float sum = 0.f;
        for (float d : best) sum += d;  // ascending order, fixed summation order
        out[i] = sum / float(best.size());
    }
    return out;
}

}  // namespace

std::vector<int32_t> rasterize_face_owners(const BodyTemplate& t, int resolution) {
    std::vector<int32_t> owner(size_t(resolution) * resolution, -1);
    for (size_t f = 0; f < t.faces.size(); ++f) {
        const auto& tri = t.faces[f];
        const Vec2 a = t.uv_coords[tri[0]], b = t.uv_coords[tri[1]], c = t.uv_coords[tri[2]];
        float umin = std::min({a.x, b.x, c.x}), umax = std::max({a.x, b.x, c.x});
        float vmin = std::min({a.y, b.y, c.y}), vmax = std::max({a.y, b.y, c.y});
        int x0 = std::max(0, int(umin * resolution - 0.5f));
        int x1 = std::min(resolution - 1, int(umax * resolution + 0.5f));
        int y0 = std::max(0, int(vmin * resolution - 0.5f));
        int y1 = std::min(resolution - 1, int(vmax * resolution + 0.5f));
        for (int y = y0; y <= y1; ++y) {
            for (int x = x0; x <= x1; ++x) {
                size_t idx = size_t(y) * resolution + x;
                if (owner[idx] >= 0) continue;
                Vec2 p{(x + 0.5f) / resolution, (y + 0.5f) / resolution};
                Bary bc;
                if (uv_barycentric(p, a, b, c, bc)) owner[idx] = int32_t(f);
            }
        }
    }
    return owner;
}

BaseGaussians build_base_gaussians(const PosedMesh& mesh, const BodyTemplate& t, int resolution) {
    if (resolution < 8) throw std::invalid_argument("base gaussian resolution must be >= 8");
    if (mesh.vertices.size() != t.vertex_count())
        throw std::invalid_argument("posed mesh vertex count does not match template");

    std::vector<int32_t> owner = rasterize_face_owners(t, resolution);

    // Per-face tangent frames from posed geometry and UV edges.
    std::vector<Quat> face_frame(t.faces.size());
    for (size_t f = 0; f < t.faces.size(); ++f) {
        const auto& tri = t.faces[f];
        Vec3 e1 = mesh.vertices[tri[1]] - mesh.vertices[tri[0]];
        Vec3 e2 = mesh.vertices[tri[2]] - mesh.vertices[tri[0]];
        Vec2 duv1 = t.uv_coords[tri[1]] - t.uv_coords[tri[0]];
        Vec2 duv2 = t.uv_coords[tri[2]] - t.uv_coords[tri[0]];
        Vec3 normal = cross(e1, e2);
        float nn = norm(normal);
        if (nn < 1e-12f) {
            face_frame[f] = Quat::identity();
            continue;
        }
        normal = normal * (1.f / nn);
        float det = duv1.x * duv2.y - duv2.x * duv1.y;
        Vec3 tangent;
        if (std::fabs(det) > 1e-12f) {
            tangent = (e1 * duv2.y - e2 * duv1.y) * (1.f / det);
            tangent = tangent - normal * dot(normal, tangent);
        }
        if (norm(tangent) < 1e-8f)
            tangent = std::fabs(normal.x) < 0.9f ? cross(normal, Vec3{1, 0, 0}) : cross(normal, Vec3{0, 1, 0});
        tangent = normalized(tangent);
        Vec3 bitangent = cross(normal, tangent);
        face_frame[f] = mat3_to_quat(Mat3::from_cols(tangent, bitangent, normal));
    }

    BaseGaussians base;
    for (int y = 0; y < resolution; ++y) {
        for (int x = 0; x < resolution; ++x) {
            int32_t f = owner[size_t(y) * resolution + x];
            if (f < 0) continue;
            Vec2 uv{(x + 0.5f) / resolution, (y + 0.5f) / resolution};
            const auto& tri = t.faces[size_t(f)];
            Bary bc;
            uv_barycentric(uv, t.uv_coords[tri[0]], t.uv_coords[tri[1]], t.uv_coords[tri[2]], bc);
            Vec3 p = mesh.vertices[tri[0]] * bc.w[0] + mesh.vertices[tri[1]] * bc.w[1] +
                     mesh.vertices[tri[2]] * bc.w[2];
            base.positions.push_back(p);
            base.rotations.push_back(face_frame[size_t(f)]);
            base.uvs.push_back(uv);
        }
    }
    if (base.positions.empty()) throw std::invalid_argument("template has no UV coverage");

    std::vector<float> nn = mean_4nn_distance(base.positions);
    base.scales.resize(base.positions.size());
    for (size_t i = 0; i < nn.size(); ++i) base.scales[i] = Vec3{nn[i], nn[i], nn[i]};
    return base;
}

GaussianSet apply_offsets(const BaseGaussians& base, const AttributeMap& attrs) {
    if (attrs.width <= 0 || attrs.height <= 0)
        throw std::out_of_range("attribute map is empty");

    GaussianSet set(base.size());
    for (size_t k = 0; k < base.size(); ++k) {
        const Vec2& uv = base.uvs[k];
        if (uv.x < 0.f || uv.x > 1.f || uv.y < 0.f || uv.y > 1.f)
            throw std::out_of_range("base gaussian UV outside the attribute map");
        BilinearTap tap = bilinear_tap(uv, attrs.width, attrs.height);

        float a[AttributeMap::kChannels];
        for (int c = 0; c < AttributeMap::kChannels; ++c) a[c] = sample_channel(attrs, tap, c);

        Gaussian g;
        g.mu = base.positions[k] +
               Vec3{std::tanh(a[0]), std::tanh(a[1]), std::tanh(a[2])} * OffsetActivations::kMaxPosOffset;

        // delta_rot channel 0 is unused (redundant scalar part).
        const float kappa = OffsetActivations::kRotKappa;
        Quat dq{1.f, kappa * a[4], kappa * a[5], kappa * a[6]};
        g.rot = base.rotations[k] * dq.normalized();

        const float cl = OffsetActivations::kLogScaleClamp;
        g.scale = Vec3{base.scales[k].x * std::exp(clampf(a[7], -cl, cl)),
                       base.scales[k].y * std::exp(clampf(a[8], -cl, cl)),
                       base.scales[k].z * std::exp(clampf(a[9], -cl, cl))};

        g.color = Vec3{sigmoidf(a[10]), sigmoidf(a[11]), sigmoidf(a[12])};
        g.alpha = sigmoidf(a[13]);
        set[k] = g;
    }
    return set;
}

AttributeMap apply_offsets_backward(const BaseGaussians& base, const AttributeMap& attrs,
                                    const std::vector<GaussianGrad>& grad_set) {
    if (grad_set.size() != base.size())
        throw std::invalid_argument("gradient count does not match base gaussian count");

    AttributeMap grad(attrs.width, attrs.height);
    for (size_t k = 0; k < base.size(); ++k) {
        BilinearTap tap = bilinear_tap(base.uvs[k], attrs.width, attrs.height);
        float a[AttributeMap::kChannels];
        for (int c = 0; c < AttributeMap::kChannels; ++c) a[c] = sample_channel(attrs, tap, c);

        const GaussianGrad& gg = grad_set[k];
        float da[AttributeMap::kChannels] = {0};

        for (int i = 0; i < 3; ++i) {
            float th = std::tanh(a[i]);
            da[i] = gg.d_mu[i] * OffsetActivations::kMaxPosOffset * (1.f - th * th);
        }

        // r = r_hat * normalize(q), q = (1, kappa*a4, kappa*a5, kappa*a6).
        {
            const float kappa = OffsetActivations::kRotKappa;
            float q[4] = {1.f, kappa * a[4], kappa * a[5], kappa * a[6]};
            float qn = std::sqrt(q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]);
            float u[4] = {q[0] / qn, q[1] / qn, q[2] / qn, q[3] / qn};

            // d r / d u is left-multiplication by r_hat.
            const Quat& rh = base.rotations[k];
            float L[4][4] = {{rh.w, -rh.x, -rh.y, -rh.z},
                             {rh.x, rh.w, -rh.z, rh.y},
                             {rh.y, rh.z, rh.w, -rh.x},
                             {rh.z, -rh.y, rh.x, rh.w}};
            float du[4] = {0, 0, 0, 0};
            for (int j = 0; j < 4; ++j)
                for (int i = 0; i < 4; ++i) du[j] += gg.d_rot[i] * L[i][j];

            float udotdu = u[0] * du[0] + u[1] * du[1] + u[2] * du[2] + u[3] * du[3];
            for (int j = 1; j < 4; ++j) {
                float dq_j = (du[j] - u[j] * udotdu) / qn;
                da[3 + j] = kappa * dq_j;
            }
        }

        const float cl = OffsetActivations::kLogScaleClamp;
        for (int i = 0; i < 3; ++i) {
            float raw = a[7 + i];
            if (raw > -cl && raw < cl)
                da[7 + i] = gg.d_scale[i] * base.scales[k][i] * std::exp(raw);
        }

        for (int i = 0; i < 3; ++i) {
            float s = sigmoidf(a[10 + i]);
            da[10 + i] = gg.d_color[i] * s * (1.f - s);
        }
        float s = sigmoidf(a[13]);
        da[13] = gg.d_alpha * s * (1.f - s);

        for (int c = 0; c < AttributeMap::kChannels; ++c)
            if (da[c] != 0.f) scatter_channel(grad, tap, c, da[c]);
    }
    return grad;
}

std::vector<uint8_t> region_mask(const BodyTemplate& t, const std::string& region, int resolution) {
    const RegionChart* chart = t.find_chart(region);
    if (!chart) throw std::invalid_argument("unknown region: " + region);
    std::vector<uint8_t> mask(size_t(resolution) * resolution, 0);
    for (int y = 0; y < resolution; ++y) {
        for (int x = 0; x < resolution; ++x) {
            float u = (x + 0.5f) / resolution;
            float v = (y + 0.5f) / resolution;
            if (chart->contains(u, v)) mask[size_t(y) * resolution + x] = 1;
        }
    }
    return mask;
}

void save_attribute_map(const AttributeMap& m, const std::string& path) {
    atomic_write(path, [&](BinaryWriter& w) {
        w.magic("TATT");
        w.u32(1);
        w.u32(uint32_t(m.width));
        w.u32(uint32_t(m.height));
        w.u32(uint32_t(AttributeMap::kChannels));
        w.f32_array(m.values);
    });
}

AttributeMap load_attribute_map(const std::string& path) {
    std::ifstream is = open_input(path);
    BinaryReader r(is, path);
    r.expect_magic("TATT");
    if (r.u32() != 1) throw std::runtime_error(path + ": unsupported TATT version");
    uint32_t w = r.u32(), h = r.u32(), c = r.u32();
    if (c != AttributeMap::kChannels) throw std::runtime_error(path + ": unexpected channel count");
    AttributeMap m{int(w), int(h)};
    r.f32_array(m.values.data(), m.values.size());
    return m;
}

}  // namespace uvga
