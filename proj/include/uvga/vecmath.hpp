#pragma once

#include <array>
#include <cmath>
#include <cstdint>

namespace uvga {

struct Vec2 {
    float x = 0.f, y = 0.f;

    Vec2() = default;
    Vec2(float x_, float y_) : x(x_), y(y_) {}

    Vec2 operator+(const Vec2& o) const { return {x + o.x, y + o.y}; }
    Vec2 operator-(const Vec2& o) const { return {x - o.x, y - o.y}; }
    Vec2 operator*(float s) const { return {x * s, y * s}; }
};

struct Vec3 {
    float x = 0.f, y = 0.f, z = 0.f;

    Vec3() = default;
    Vec3(float x_, float y_, float z_) : x(x_), y(y_), z(z_) {}

    Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
    Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
    Vec3 operator*(float s) const { return {x * s, y * s, z * s}; }
    Vec3 operator-() const { return {-x, -y, -z}; }
    Vec3& operator+=(const Vec3& o) {
        x += o.x;
        y += o.y;
        z += o.z;
        return *this;
    }
    Vec3& operator*=(float s) {
        x *= s;
        y *= s;
        z *= s;
        return *this;
    }
    float& operator[](int i) { return (&x)[i]; }
    float operator[](int i) const { return (&x)[i]; }
};

inline Vec3 operator*(float s, const Vec3& v) { return v * s; }

inline float dot(const Vec3& a, const Vec3& b) { return a.x * b.x + a.y * b.y + a.z * b.z; }

inline Vec3 cross(const Vec3& a, const Vec3& b) {
    return {a.y * b.z - a.z * b.y, a.z * b.x - a.x * b.z, a.x * b.y - a.y * b.x};
}

inline float norm(const Vec3& v) { return std::sqrt(dot(v, v)); }

inline Vec3 normalized(const Vec3& v) {
    float n = norm(v);
    return n > 0.f ? v * (1.f / n) : v;
}

// Column-major free 3x3; m[c] is column c.
struct Mat3 {
    std::array<Vec3, 3> col{Vec3{1, 0, 0}, Vec3{0, 1, 0}, Vec3{0, 0, 1}};

    static Mat3 identity() { return Mat3{}; }
    static Mat3 zero() { return Mat3{{Vec3{}, Vec3{}, Vec3{}}}; }
    static Mat3 from_cols(const Vec3& a, const Vec3& b, const Vec3& c) { return Mat3{{a, b, c}}; }

    float at(int r, int c) const { return col[size_t(c)][r]; }
    float& at(int r, int c) { return col[size_t(c)][r]; }

    Vec3 operator*(const Vec3& v) const { return col[0] * v.x + col[1] * v.y + col[2] * v.z; }

    Mat3 operator*(const Mat3& o) const {
        return from_cols(*this * o.col[0], *this * o.col[1], *this * o.col[2]);
    }

    Mat3 operator+(const Mat3& o) const {
        return from_cols(col[0] + o.col[0], col[1] + o.col[1], col[2] + o.col[2]);
    }

    Mat3 operator*(float s) const { return from_cols(col[0] * s, col[1] * s, col[2] * s); }

    Mat3 transposed() const {
        Mat3 t;
        for (int r = 0; r < 3; ++r)
            for (int c = 0; c < 3; ++c) t.at(r, c) = at(c, r);
        return t;
    }
};

// Unit quaternion, scalar-first (w, x, y, z).
struct Quat {
    float w = 1.f, x = 0.f, y = 0.f, z = 0.f;

    Quat() = default;
    Quat(float w_, float x_, float y_, float z_) : w(w_), x(x_), y(y_), z(z_) {}

    static Quat identity() { return {}; }

    static Quat from_axis_angle(const Vec3& axis, float angle_rad) {
        float n = std::sqrt(dot(axis, axis));
        Vec3 a = n > 0.f ? axis * (1.f / n) : axis;
        float h = 0.5f * angle_rad;
        float s = std::sin(h);
        return {std::cos(h), a.x * s, a.y * s, a.z * s};
    }

    Quat operator*(const Quat& o) const {
        return {w * o.w - x * o.x - y * o.y - z * o.z, w * o.x + x * o.w + y * o.z - z * o.y,
                w * o.y - x * o.z + y * o.w + z * o.x, w * o.z + x * o.y - y * o.x + z * o.w};
    }

    float norm() const { return std::sqrt(w * w + x * x + y * y + z * z); }

    Quat normalized() const {
        float n = norm();
        if (n <= 0.f) return identity();
        float inv = 1.f / n;
        return {w * inv, x * inv, y * inv, z * inv};
    }
};

// Rotation matrix from a quaternion assumed unit-norm (plain polynomial form,
// no renormalization; exact identity for the identity quaternion).
inline Mat3 to_mat3(const Quat& q) {
    const float w = q.w, x = q.x, y = q.y, z = q.z;
    Mat3 m;
    m.at(0, 0) = 1.f - 2.f * (y * y + z * z);
    m.at(0, 1) = 2.f * (x * y - w * z);
    m.at(0, 2) = 2.f * (x * z + w * y);
    m.at(1, 0) = 2.f * (x * y + w * z);
    m.at(1, 1) = 1.f - 2.f * (x * x + z * z);
    m.at(1, 2) = 2.f * (y * z - w * x);
    m.at(2, 0) = 2.f * (x * z - w * y);
    m.at(2, 1) = 2.f * (y * z + w * x);
    m.at(2, 2) = 1.f - 2.f * (x * x + y * y);
    return m;
}

// Partial derivatives of to_mat3 with respect to (w, x, y, z).
inline std::array<Mat3, 4> to_mat3_jacobian(const Quat& q) {
    const float w = q.w, x = q.x, y = q.y, z = q.z;
    Mat3 dw = Mat3::zero(), dx = Mat3::zero(), dy = Mat3::zero(), dz = Mat3::zero();

    dw.at(0, 1) = -2 * z; dw.at(0, 2) = 2 * y;
    dw.at(1, 0) = 2 * z;  dw.at(1, 2) = -2 * x;
    dw.at(2, 0) = -2 * y; dw.at(2, 1) = 2 * x;

    dx.at(0, 1) = 2 * y;  dx.at(0, 2) = 2 * z;
    dx.at(1, 0) = 2 * y;  dx.at(1, 1) = -4 * x; dx.at(1, 2) = -2 * w;
    dx.at(2, 0) = 2 * z;  dx.at(2, 1) = 2 * w;  dx.at(2, 2) = -4 * x;

    dy.at(0, 0) = -4 * y; dy.at(0, 1) = 2 * x;  dy.at(0, 2) = 2 * w;
    dy.at(1, 0) = 2 * x;  dy.at(1, 2) = 2 * z;
    dy.at(2, 0) = -2 * w; dy.at(2, 1) = 2 * z;  dy.at(2, 2) = -4 * y;

    dz.at(0, 0) = -4 * z; dz.at(0, 1) = -2 * w; dz.at(0, 2) = 2 * x;
    dz.at(1, 0) = 2 * w;  dz.at(1, 1) = -4 * z; dz.at(1, 2) = 2 * y;
    dz.at(2, 0) = 2 * x;  dz.at(2, 1) = 2 * y;

    return {dw, dx, dy, dz};
}

// Quaternion from a rotation matrix (Shepperd's method).
inline Quat mat3_to_quat(const Mat3& m) {
    float tr = m.at(0, 0) + m.at(1, 1) + m.at(2, 2);
    Quat q;
    if (tr > 0.f) {
        float s = std::sqrt(tr + 1.f) * 2.f;
        q = {0.25f * s, (m.at(2, 1) - m.at(1, 2)) / s, (m.at(0, 2) - m.at(2, 0)) / s,
             (m.at(1, 0) - m.at(0, 1)) / s};
    } else if (m.at(0, 0) > m.at(1, 1) && m.at(0, 0) > m.at(2, 2)) {
        float s = std::sqrt(1.f + m.at(0, 0) - m.at(1, 1) - m.at(2, 2)) * 2.f;
        q = {(m.at(2, 1) - m.at(1, 2)) / s, 0.25f * s, (m.at(0, 1) + m.at(1, 0)) / s,
             (m.at(0, 2) + m.at(2, 0)) / s};
    } else if (m.at(1, 1) > m.at(2, 2)) {
        float s = std::sqrt(1.f + m.at(1, 1) - m.at(0, 0) - m.at(2, 2)) * 2.f;
        q = {(m.at(0, 2) - m.at(2, 0)) / s, (m.at(0, 1) + m.at(1, 0)) / s, 0.25f * s,
             (m.at(1, 2) + m.at(2, 1)) / s};
    } else {
        float s = std::sqrt(1.f + m.at(2, 2) - m.at(0, 0) - m.at(1, 1)) * 2.f;
        q = {(m.at(1, 0) - m.at(0, 1)) / s, (m.at(0, 2) + m.at(2, 0)) / s,
             (m.at(1, 2) + m.at(2, 1)) / s, 0.25f * s};
    }
    return q.normalized();
}

// Rigid transform p -> R*p + t.
struct Rigid {
    Mat3 rot;
    Vec3 trans;

    static Rigid identity() { return {Mat3::identity(), Vec3{}}; }
    static Rigid translate(const Vec3& t) { return {Mat3::identity(), t}; }

    Vec3 operator*(const Vec3& p) const { return rot * p + trans; }

    Rigid operator*(const Rigid& o) const { return {rot * o.rot, rot * o.trans + trans}; }

    Rigid inverse() const {
        Mat3 rt = rot.transposed();
        return {rt, -(rt * trans)};
    }
};

inline float clampf(float v, float lo, float hi) { return v < lo ? lo : (v > hi ? hi : v); }

inline float sigmoidf(float x) { return 1.f / (1.f + std::exp(-x)); }

}  // namespace uvga
