#pragma once

#include <cmath>

namespace sewgen {

struct Vec2 {
    double x = 0.0;
    double y = 0.0;

    Vec2 operator+(const Vec2& o) const { return {x + o.x, y + o.y}; }
    Vec2 operator-(const Vec2& o) const { return {x - o.x, y - o.y}; }
    Vec2 operator*(double s) const { return {x * s, y * s}; }
    bool operator==(const Vec2& o) const = default;
};

struct Vec3 {
    double x = 0.0;
    double y = 0.0;
    double z = 0.0;

    Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
    Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
    Vec3 operator*(double s) const { return {x * s, y * s, z * s}; }
    bool operator==(const Vec3& o) const = default;

    double norm() const { return std::sqrt(x * x + y * y + z * z); }
};

inline double dot(const Vec3& a, const Vec3& b) { return a.x * b.x + a.y * b.y + a.z * b.z; }
inline Vec3 cross(const Vec3& a, const Vec3& b) {
    return {a.y * b.z - a.z * b.y, a.z * b.x - a.x * b.z, a.x * b.y - a.y * b.x};
}
inline double distance(const Vec3& a, const Vec3& b) { return (a - b).norm(); }

// Hamilton convention, q = w + xi + yj + zk.
struct Quat {
    double w = 1.0;
    double x = 0.0;
    double y = 0.0;
    double z = 0.0;

    static Quat identity() { return {1.0, 0.0, 0.0, 0.0}; }

    double norm() const { return std::sqrt(w * w + x * x + y * y + z * z); }

    Quat operator*(const Quat& o) const {
        return {w * o.w - x * o.x - y * o.y - z * o.z,
                w * o.x + x * o.w + y * o.z - z * o.y,
                w * o.y - x * o.z + y * o.w + z * o.x,
                w * o.z + x * o.y - y * o.x + z * o.w};
    }

    bool operator==(const Quat& o) const = default;
};

// Renormalizes to unit length; a near-zero quaternion falls back to identity.
Quat normalized_or_identity(const Quat& q);

// Quadratic Bezier point: (1-t)^2 p0 + 2t(1-t) c + t^2 p1. t must lie in [0,1].
Vec2 bezier_point(const Vec2& p0, const Vec2& control, const Vec2& p1, double t);

// Rotates v by the unit quaternion q (q * v * q^-1). |q| must be 1 within 1e-6.
Vec3 rotate_by_quaternion(const Quat& q, const Vec3& v);

} // namespace sewgen
