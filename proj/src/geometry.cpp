#include "sewgen/geometry.hpp"

#include <stdexcept>

namespace sewgen {

Quat normalized_or_identity(const Quat& q) {
    const double n = q.norm();
    if (n < 1e-12) {
        return Quat::identity();
    }
    return {q.w / n, q.x / n, q.y / n, q.z / n};
}

Vec2 bezier_point(const Vec2& p0, const Vec2& control, const Vec2& p1, double t) {
    if (!(t >= 0.0 && t <= 1.0)) {
        throw std::domain_error("bezier_point: t must lie in [0,1]");
    }
    const double u = 1.0 - t;
    const double a = u * u;
    const double b = 2.0 * t * u;
    const double c = t * t;
    return {a * p0.x + b * control.x + c * p1.x, a * p0.y + b * control.y + c * p1.y};
}

Vec3 rotate_by_quaternion(const Quat& q, const Vec3& v) {
    if (std::fabs(q.norm() - 1.0) > 1e-6) {
        throw std::domain_error("rotate_by_quaternion: quaternion is not unit length");
    }
    // v' = v + 2w (u x v) + 2 u x (u x v), u = (x,y,z)
    const Vec3 u{q.x, q.y, q.z};
    const Vec3 t = cross(u, v) * 2.0;
    return v + t * q.w + cross(u, t);
}

} // namespace sewgen
