#include "uvga/camera.hpp"

#include <cmath>
#include <stdexcept>

namespace uvga {

void Camera::validate() const {
    if (width <= 0 || height <= 0) throw std::invalid_argument("camera image size must be positive");
    if (mode == CameraMode::pinhole && focal <= 0.f)
        throw std::invalid_argument("pinhole focal length must be positive");
    if (mode == CameraMode::orthographic && ortho_scale <= 0.f)
        throw std::invalid_argument("orthographic scale must be positive");

    const Mat3& r = pose.rot;
    Mat3 rrt = r * r.transposed();
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) {
            float want = i == j ? 1.f : 0.f;
            if (std::fabs(rrt.at(i, j) - want) > 1e-6f)
                throw std::invalid_argument("camera rotation is not orthonormal");
        }
}

Camera make_ortho_camera(int width, int height, float pixels_per_meter, const Rigid& pose,
                         const Vec3& background) {
    Camera c;
    c.mode = CameraMode::orthographic;
    c.width = width;
    c.height = height;
    c.ortho_scale = pixels_per_meter;
    c.pose = pose;
    c.background = background;
    c.validate();
    return c;
}

Camera make_pinhole_camera(int width, int height, float focal_px, const Rigid& pose,
                           const Vec3& background) {
    Camera c;
    c.mode = CameraMode::pinhole;
    c.width = width;
    c.height = height;
    c.focal = focal_px;
    c.cx = 0.5f * float(width);
    c.cy = 0.5f * float(height);
    c.pose = pose;
    c.background = background;
    c.validate();
    return c;
}

Rigid look_at(const Vec3& eye, const Vec3& target, const Vec3& up) {
    Vec3 fwd = normalized(target - eye);
    Vec3 right = normalized(cross(fwd, up));
    Vec3 down = cross(fwd, right);  // camera +y is image-down
    Mat3 r = Mat3::from_cols(right, down, fwd).transposed();
    return Rigid{r, -(r * eye)};
}

Rigid orbit_pose(const Vec3& center, float distance, float azimuth_rad) {
    Vec3 eye = center + Vec3{distance * std::sin(azimuth_rad), 0.f, distance * std::cos(azimuth_rad)};
    return look_at(eye, center, Vec3{0.f, 1.f, 0.f});
}

}  // namespace uvga
