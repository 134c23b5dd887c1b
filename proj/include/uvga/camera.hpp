#pragma once

#include "uvga/vecmath.hpp"

namespace uvga {

enum class CameraMode { orthographic, pinhole };

// Camera space: +x right, +y down (image rows), +z forward. Pixel (x, y)
// is sampled at (x + 0.5, y + 0.5).
struct Camera {
    CameraMode mode = CameraMode::orthographic;
    Rigid pose;  // world-to-camera

    float focal = 100.f;  // pinhole, pixels
    float cx = 0.f, cy = 0.f;

    float ortho_scale = 100.f;  // pixels per meter; principal point at image center

    int width = 0, height = 0;
    Vec3 background;

    void validate() const;
};

Camera make_ortho_camera(int width, int height, float pixels_per_meter, const Rigid& pose,
                         const Vec3& background = {});

Camera make_pinhole_camera(int width, int height, float focal_px, const Rigid& pose,
                           const Vec3& background = {});

// World-to-camera transform looking from eye toward target; `up` is the
// world direction that maps to image-up (camera -y).
Rigid look_at(const Vec3& eye, const Vec3& target, const Vec3& up);

// Orbit around `center` in the world xz-plane at the given distance and
// azimuth (radians), looking inward with +y as world up.
Rigid orbit_pose(const Vec3& center, float distance, float azimuth_rad);

}  // namespace uvga
