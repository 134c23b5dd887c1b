#include "uvga/renderer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "uvga/parallel.hpp"

namespace uvga {

namespace {

constexpr int kTile = 16;
constexpr float kNearPlane = 0.01f;
constexpr float kCovDilation = 0.3f;
constexpr float kMaxSigma = 0.999f;
constexpr float kMinTransmittance = 1e-4f;

Vec3 rot_row(const Mat3& m, int r) { return {m.at(r, 0), m.at(r, 1), m.at(r, 2)}; }

// Projection rows: mean2d = (a0 . p_cam? no) -- a0/a1 are the rows of
// A = J * W mapping world-space covariance to image space.
void projection_rows(const Camera& cam, const Vec3& p_cam, Vec3& a0, Vec3& a1) {
    const Mat3& w = cam.pose.rot;
    if (cam.mode == CameraMode::orthographic) {
        a0 = rot_row(w, 0) * cam.ortho_scale;
        a1 = rot_row(w, 1) * cam.ortho_scale;
    } else {
        float z = p_cam.z;
        float j00 = cam.focal / z;
        float j02 = -cam.focal * p_cam.x / (z * z);
        float j12 = -cam.focal * p_cam.y / (z * z);
        a0 = rot_row(w, 0) * j00 + rot_row(w, 2) * j02;
        a1 = rot_row(w, 1) * j00 + rot_row(w, 2) * j12;
    }
}

Mat3 covariance3d(const Gaussian& g) {
    Mat3 r = to_mat3(g.rot);
    Mat3 m = Mat3::from_cols(r.col[0] * g.scale.x, r.col[1] * g.scale.y, r.col[2] * g.scale.z);
    return m * m.transposed();
}

struct PreparedSplat {
    bool ok = false;
    float r2 = 0.f;             // squared 3-sigma bounding radius
    float ixx = 0.f, ixy = 0.f, iyy = 0.f;  // inverse covariance
};

struct RasterPlan {
    std::vector<int> order;                   // splat indices, front to back
    std::vector<PreparedSplat> prep;          // indexed like splats
    std::vector<std::vector<int>> tile_list;  // order positions per tile
    int tiles_x = 0, tiles_y = 0;
    int64_t skipped_nonpd = 0;
};

RasterPlan plan_raster(const std::vector<Splat2D>& splats, const Camera& cam) {
    RasterPlan plan;
    plan.order.resize(splats.size());
    std::iota(plan.order.begin(), plan.order.end(), 0);
    std::stable_sort(plan.order.begin(), plan.order.end(), [&](int a, int b) {
        if (splats[size_t(a)].depth != splats[size_t(b)].depth)
            return splats[size_t(a)].depth < splats[size_t(b)].depth;
        return splats[size_t(a)].source < splats[size_t(b)].source;
    });

    plan.prep.resize(splats.size());
    for (size_t i = 0; i < splats.size(); ++i) {
        const Splat2D& s = splats[i];
        float det = s.cov_xx * s.cov_yy - s.cov_xy * s.cov_xy;
        if (!(det > 0.f) || !(s.cov_xx > 0.f) || !(s.cov_yy > 0.f)) {
            plan.skipped_nonpd++;
            continue;
        }
        PreparedSplat& p = plan.prep[i];
        p.ok = true;
        float inv_det = 1.f / det;
        p.ixx = s.cov_yy * inv_det;
        p.ixy = -s.cov_xy * inv_det;
        p.iyy = s.cov_xx * inv_det;
        float mid = 0.5f * (s.cov_xx + s.cov_yy);
        float lam_max = mid + std::sqrt(std::max(0.f, mid * mid - det));
        float r = 3.f * std::sqrt(lam_max);
        p.r2 = r * r;
    }

    plan.tiles_x = (cam.width + kTile - 1) / kTile;
    plan.tiles_y = (cam.height + kTile - 1) / kTile;
    plan.tile_list.resize(size_t(plan.tiles_x) * plan.tiles_y);
    for (size_t pos = 0; pos < plan.order.size(); ++pos) {
        int i = plan.order[pos];
        if (!plan.prep[size_t(i)].ok) continue;
        const Splat2D& s = splats[size_t(i)];
        float r = std::sqrt(plan.prep[size_t(i)].r2);
        int x0 = std::max(0, int(std::floor((s.mean2d.x - r) / kTile)));
        int x1 = std::min(plan.tiles_x - 1, int(std::floor((s.mean2d.x + r) / kTile)));
        int y0 = std::max(0, int(std::floor((s.mean2d.y - r) / kTile)));
        int y1 = std::min(plan.tiles_y - 1, int(std::floor((s.mean2d.y + r) / kTile)));
        for (int ty = y0; ty <= y1; ++ty)
            for (int tx = x0; tx <= x1; ++tx)
                plan.tile_list[size_t(ty) * plan.tiles_x + tx].push_back(int(pos));
    }
    return plan;
}

}  // namespace

std::vector<Splat2D> project(const GaussianSet& set, const Camera& cam) {
    cam.validate();
    std::vector<Splat2D> out;
    out.reserve(set.size());
    for (size_t i = 0; i < set.size(); ++i) {
        const Gaussian& g = set[i];
        Vec3 p_cam = cam.pose * g.mu;
        if (p_cam.z <= kNearPlane) continue;

        Splat2D s;
        s.source = int(i);
        s.depth = p_cam.z;
        s.color = g.color;
        s.opacity = g.alpha;

        if (cam.mode == CameraMode::orthographic) {
            s.mean2d = {cam.ortho_scale * p_cam.x + 0.5f * float(cam.width),
                        cam.ortho_scale * p_cam.y + 0.5f * float(cam.height)};
        } else {
            s.mean2d = {cam.focal * p_cam.x / p_cam.z + cam.cx,
                        cam.focal * p_cam.y / p_cam.z + cam.cy};
        }

        Mat3 sigma = covariance3d(g);
        Vec3 a0, a1;
        projection_rows(cam, p_cam, a0, a1);
        s.cov_xx = dot(a0, sigma * a0) + kCovDilation;
        s.cov_xy = dot(a0, sigma * a1);
        s.cov_yy = dot(a1, sigma * a1) + kCovDilation;
        out.push_back(s);
    }
    return out;
}

RenderedImage rasterize(const std::vector<Splat2D>& splats, const Camera& cam, RenderStats* stats) {
    cam.validate();
    RasterPlan plan = plan_raster(splats, cam);
    RenderedImage img(cam.width, cam.height);
    // Pixels untouched by any splat keep the background.
    for (int c = 0; c < 3; ++c) {
        float bg = (&cam.background.x)[c];
        float* p = img.rgb.data() + size_t(c) * cam.height * cam.width;
        for (int i = 0; i < cam.height * cam.width; ++i) p[i] = bg;
    }

    std::vector<int64_t> tile_evals(plan.tile_list.size(), 0);
    int n_tiles = int(plan.tile_list.size());
    parallel_for(n_tiles, [&](int tile) {
        const auto& list = plan.tile_list[size_t(tile)];
        if (list.empty()) return;
        int tx = tile % plan.tiles_x, ty = tile / plan.tiles_x;
        int px0 = tx * kTile, py0 = ty * kTile;
        int px1 = std::min(cam.width, px0 + kTile), py1 = std::min(cam.height, py0 + kTile);
        int64_t evals = 0;

        for (int y = py0; y < py1; ++y) {
            for (int x = px0; x < px1; ++x) {
                float pxc = float(x) + 0.5f, pyc = float(y) + 0.5f;
                float T = 1.f;
                Vec3 c{};
                for (int pos : list) {
                    const Splat2D& s = splats[size_t(plan.order[size_t(pos)])];
                    const PreparedSplat& p = plan.prep[size_t(plan.order[size_t(pos)])];
                    float dx = pxc - s.mean2d.x, dy = pyc - s.mean2d.y;
                    if (dx * dx + dy * dy > p.r2) continue;
                    float m = p.ixx * dx * dx + 2.f * p.ixy * dx * dy + p.iyy * dy * dy;
                    float sigma = std::min(s.opacity * std::exp(-0.5f * m), kMaxSigma);
                    ++evals;
                    c += s.color * (sigma * T);
                    T *= 1.f - sigma;
                    if (T < kMinTransmittance) break;
                }
                img.rgb_at(0, y, x) = c.x + cam.background.x * T;
                img.rgb_at(1, y, x) = c.y + cam.background.y * T;
                img.rgb_at(2, y, x) = c.z + cam.background.z * T;
                img.alpha_at(y, x) = 1.f - T;
            }
        }
        tile_evals[size_t(tile)] = evals;
    });

    if (stats) {
        stats->skipped_nonpd = plan.skipped_nonpd;
        stats->culled_behind = 0;  // culling happens in project
        stats->tiles_touched = 0;
        int64_t evals = 0;
        for (size_t t = 0; t < plan.tile_list.size(); ++t) {
            if (!plan.tile_list[t].empty()) stats->tiles_touched++;
            evals += tile_evals[t];
        }
        stats->splats_per_pixel = double(evals) / double(cam.width * cam.height);
    }
    return img;
}

namespace {

struct Contribution {
    int pos;       // position in the tile list
    float sigma;
    float gauss;   // pre-opacity Gaussian falloff
    float t_before;
    bool clamped;
};

struct SplatGrad {
    Vec2 d_mean;
    float d_cov[3] = {0, 0, 0};  // full-matrix entries (xx, xy-per-entry, yy)
    Vec3 d_color;
    float d_opacity = 0.f;
};

}  // namespace

RenderGrads rasterize_backward(const GaussianSet& set, const std::vector<Splat2D>& splats,
                               const Camera& cam, const std::vector<float>& grad_rgb) {
    cam.validate();
    if (grad_rgb.size() != size_t(3) * cam.width * cam.height)
        throw std::invalid_argument("grad_rgb size does not match camera image");

    RasterPlan plan = plan_raster(splats, cam);
    const size_t n = splats.size();

    // Per-tile partial gradients, merged in tile order afterwards so the
    // result is independent of the thread count.
    std::vector<std::vector<SplatGrad>> tile_grads(plan.tile_list.size());
    int n_tiles = int(plan.tile_list.size());
    parallel_for(n_tiles, [&](int tile) {
        const auto& list = plan.tile_list[size_t(tile)];
        if (list.empty()) return;
        auto& local = tile_grads[size_t(tile)];
        local.resize(list.size());

        int tx = tile % plan.tiles_x, ty = tile / plan.tiles_x;
        int px0 = tx * kTile, py0 = ty * kTile;
        int px1 = std::min(cam.width, px0 + kTile), py1 = std::min(cam.height, py0 + kTile);

        std::vector<Contribution> contribs;
        for (int y = py0; y < py1; ++y) {
            for (int x = px0; x < px1; ++x) {
                float pxc = float(x) + 0.5f, pyc = float(y) + 0.5f;
                contribs.clear();
                float T = 1.f;
                for (size_t li = 0; li < list.size(); ++li) {
                    const Splat2D& s = splats[size_t(plan.order[size_t(list[li])])];
                    const PreparedSplat& p = plan.prep[size_t(plan.order[size_t(list[li])])];
                    float dx = pxc - s.mean2d.x, dy = pyc - s.mean2d.y;
                    if (dx * dx + dy * dy > p.r2) continue;
                    float m = p.ixx * dx * dx + 2.f * p.ixy * dx * dy + p.iyy * dy * dy;
                    float gauss = std::exp(-0.5f * m);
                    float raw = s.opacity * gauss;
                    float sigma = std::min(raw, kMaxSigma);
                    contribs.push_back({int(li), sigma, gauss, T, raw > kMaxSigma});
                    T *= 1.f - sigma;
                    if (T < kMinTransmittance) break;
                }

                size_t pix = size_t(y) * cam.width + x;
                Vec3 g{grad_rgb[pix], grad_rgb[size_t(cam.height) * cam.width + pix],
                       grad_rgb[2 * size_t(cam.height) * cam.width + pix]};

                // Suffix color: contributions rendered after splat i, incl. background.
                Vec3 suffix = cam.background * T;
                for (size_t ci = contribs.size(); ci-- > 0;) {
                    const Contribution& cb = contribs[ci];
                    const Splat2D& s = splats[size_t(plan.order[size_t(list[size_t(cb.pos)])])];
                    const PreparedSplat& p = plan.prep[size_t(plan.order[size_t(list[size_t(cb.pos)])])];
                    SplatGrad& sg = local[size_t(cb.pos)];

                    float w_ct = cb.sigma * cb.t_before;
                    sg.d_color += g * w_ct;

                    float one_minus = 1.f - cb.sigma;
                    float d_sigma = g.x * (s.color.x * cb.t_before - suffix.x / one_minus) +
                                    g.y * (s.color.y * cb.t_before - suffix.y / one_minus) +
                                    g.z * (s.color.z * cb.t_before - suffix.z / one_minus);

                    suffix += s.color * w_ct;
                    if (cb.clamped) continue;  // opacity clamp kills the gradient

                    sg.d_opacity += cb.gauss * d_sigma;
                    float d_gauss = s.opacity * d_sigma;
                    float d_m = -0.5f * cb.gauss * d_gauss;

                    float dx = pxc - s.mean2d.x, dy = pyc - s.mean2d.y;
                    float wx = p.ixx * dx + p.ixy * dy;
                    float wy = p.ixy * dx + p.iyy * dy;
                    sg.d_mean.x += -2.f * d_m * wx;
                    sg.d_mean.y += -2.f * d_m * wy;
                    sg.d_cov[0] += -d_m * wx * wx;
                    sg.d_cov[1] += -d_m * wx * wy;
                    sg.d_cov[2] += -d_m * wy * wy;
                }
            }
        }
    });

    RenderGrads out;
    out.d_mean2d.assign(n, Vec2{});
    out.d_cov2d.assign(n, {0.f, 0.f, 0.f});
    out.d_color2d.assign(n, Vec3{});
    out.d_opacity2d.assign(n, 0.f);
    out.d_gaussians.assign(set.size(), GaussianGrad{});

    std::vector<SplatGrad> total(n);
    for (size_t tile = 0; tile < plan.tile_list.size(); ++tile) {
        const auto& list = plan.tile_list[tile];
        const auto& local = tile_grads[tile];
        for (size_t li = 0; li < local.size(); ++li) {
            size_t splat_idx = size_t(plan.order[size_t(list[li])]);
            SplatGrad& t = total[splat_idx];
            const SplatGrad& l = local[li];
            t.d_mean = t.d_mean + l.d_mean;
            for (int k = 0; k < 3; ++k) t.d_cov[k] += l.d_cov[k];
            t.d_color += l.d_color;
            t.d_opacity += l.d_opacity;
        }
    }

    for (size_t i = 0; i < n; ++i) {
        const Splat2D& s = splats[i];
        const SplatGrad& sg = total[i];
        out.d_mean2d[i] = sg.d_mean;
        out.d_cov2d[i] = {sg.d_cov[0], 2.f * sg.d_cov[1], sg.d_cov[2]};
        out.d_color2d[i] = sg.d_color;
        out.d_opacity2d[i] = sg.d_opacity;

        const Gaussian& g = set[size_t(s.source)];
        GaussianGrad& gg = out.d_gaussians[size_t(s.source)];
        gg.d_color += sg.d_color;
        gg.d_alpha += sg.d_opacity;

        Vec3 p_cam = cam.pose * g.mu;
        Vec3 a0, a1;
        projection_rows(cam, p_cam, a0, a1);

        // dSigma = A^T Ghat A with Ghat the full-matrix cov2d gradient.
        Mat3 d_sigma = Mat3::zero();
        for (int r = 0; r < 3; ++r) {
            for (int c = 0; c < 3; ++c) {
                d_sigma.at(r, c) = sg.d_cov[0] * a0[r] * a0[c] + sg.d_cov[2] * a1[r] * a1[c] +
                                   sg.d_cov[1] * (a0[r] * a1[c] + a1[r] * a0[c]);
            }
        }

        Mat3 rot = to_mat3(g.rot);
        Mat3 m = Mat3::from_cols(rot.col[0] * g.scale.x, rot.col[1] * g.scale.y,
                                 rot.col[2] * g.scale.z);
        Mat3 d_m = (d_sigma * m) * 2.f;

        for (int k = 0; k < 3; ++k) gg.d_scale[k] += dot(d_m.col[size_t(k)], rot.col[size_t(k)]);
        Mat3 d_rot = Mat3::from_cols(d_m.col[0] * g.scale.x, d_m.col[1] * g.scale.y,
                                     d_m.col[2] * g.scale.z);
        auto jac = to_mat3_jacobian(g.rot);
        for (int qi = 0; qi < 4; ++qi) {
            float acc = 0.f;
            for (int r = 0; r < 3; ++r)
                for (int c = 0; c < 3; ++c) acc += jac[size_t(qi)].at(r, c) * d_rot.at(r, c);
            gg.d_rot[qi] += acc;
        }

        Vec3 d_pcam{};
        if (cam.mode == CameraMode::orthographic) {
            d_pcam = Vec3{cam.ortho_scale * sg.d_mean.x, cam.ortho_scale * sg.d_mean.y, 0.f};
        } else {
            float z = p_cam.z, f = cam.focal;
            d_pcam.x = sg.d_mean.x * f / z;
            d_pcam.y = sg.d_mean.y * f / z;
            d_pcam.z = -(f * (p_cam.x * sg.d_mean.x + p_cam.y * sg.d_mean.y)) / (z * z);

            // A = J(p_cam) W also moves with the mean for pinhole cameras.
            Mat3 sigma = covariance3d(g);
            Vec3 da0 = (sigma * a0) * (2.f * sg.d_cov[0]) + (sigma * a1) * (2.f * sg.d_cov[1]);
            Vec3 da1 = (sigma * a1) * (2.f * sg.d_cov[2]) + (sigma * a0) * (2.f * sg.d_cov[1]);
            const Mat3& w = cam.pose.rot;
            float d_j00 = dot(da0, rot_row(w, 0));
            float d_j02 = dot(da0, rot_row(w, 2));
            float d_j11 = dot(da1, rot_row(w, 1));
            float d_j12 = dot(da1, rot_row(w, 2));
            float z2 = z * z, z3 = z2 * z;
            d_pcam.x += d_j02 * (-f / z2);
            d_pcam.y += d_j12 * (-f / z2);
            d_pcam.z += d_j00 * (-f / z2) + d_j11 * (-f / z2) + d_j02 * (2.f * f * p_cam.x / z3) +
                        d_j12 * (2.f * f * p_cam.y / z3);
        }
        gg.d_mu += cam.pose.rot.transposed() * d_pcam;
    }
    return out;
}

}  // namespace uvga
