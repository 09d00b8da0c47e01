#include <array>
#include <cmath>
#include <stdexcept>

#include "doctest.h"

#include "sewgen/geometry.hpp"
#include "sewgen/rng.hpp"

using namespace sewgen;

namespace {

// Independent oracle: rotation matrix built straight from the quaternion
// components, applied as a plain 3x3 product.
std::array<std::array<double, 3>, 3> quat_to_matrix(const Quat& q) {
    const double w = q.w, x = q.x, y = q.y, z = q.z;
    return {{{1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)},
             {2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)},
             {2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)}}};
}

Vec3 apply_matrix(const std::array<std::array<double, 3>, 3>& m, const Vec3& v) {
    return {m[0][0] * v.x + m[0][1] * v.y + m[0][2] * v.z,
            m[1][0] * v.x + m[1][1] * v.y + m[1][2] * v.z,
            m[2][0] * v.x + m[2][1] * v.y + m[2][2] * v.z};
}

Quat random_unit_quat(Rng& rng) {
    Quat q{rng.normal(), rng.normal(), rng.normal(), rng.normal()};
    return normalized_or_identity(q);
}

} // namespace

TEST_SUITE("geometry") {

TEST_CASE("bezier endpoints and midpoint") {
    const Vec2 p0{0, 0}, c{1, 1}, p1{2, 0};
    CHECK(bezier_point(p0, c, p1, 0.0) == p0);
    CHECK(bezier_point(p0, c, p1, 1.0) == p1);
    const Vec2 mid = bezier_point(p0, c, p1, 0.5);
    CHECK(mid.x == doctest::Approx(1.0));
    CHECK(mid.y == doctest::Approx(0.5));
}

TEST_CASE("bezier endpoint property over random points") {
    Rng rng(7);
    for (int i = 0; i < 200; ++i) {
        const Vec2 p0{rng.uniform(-50, 50), rng.uniform(-50, 50)};
        const Vec2 c{rng.uniform(-50, 50), rng.uniform(-50, 50)};
        const Vec2 p1{rng.uniform(-50, 50), rng.uniform(-50, 50)};
        CHECK(bezier_point(p0, c, p1, 0.0) == p0);
        CHECK(bezier_point(p0, c, p1, 1.0) == p1);
    }
}

TEST_CASE("bezier rejects t outside [0,1]") {
    CHECK_THROWS_AS(bezier_point({0, 0}, {1, 1}, {2, 0}, -0.01), std::domain_error);
    CHECK_THROWS_AS(bezier_point({0, 0}, {1, 1}, {2, 0}, 1.01), std::domain_error);
}

TEST_CASE("quaternion rotation basics") {
    const Vec3 v{3, -1, 2};
    const Vec3 r = rotate_by_quaternion(Quat::identity(), v);
    CHECK(r == v);

    // 90 degrees about z sends x to y.
    const double h = std::sqrt(0.5);
    const Vec3 e = rotate_by_quaternion({h, 0, 0, h}, {1, 0, 0});
    CHECK(e.x == doctest::Approx(0.0).epsilon(1e-9));
    CHECK(e.y == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(e.z == doctest::Approx(0.0).epsilon(1e-9));
}

TEST_CASE("quaternion rotation rejects non-unit input") {
    CHECK_THROWS_AS(rotate_by_quaternion({2, 0, 0, 0}, {1, 0, 0}), std::domain_error);
}

TEST_CASE("composed rotation matches 3x3 matrix oracle") {
    Rng rng(11);
    for (int i = 0; i < 100; ++i) {
        const Quat q1 = random_unit_quat(rng);
        const Quat q2 = random_unit_quat(rng);
        const Vec3 v{rng.uniform(-10, 10), rng.uniform(-10, 10), rng.uniform(-10, 10)};

        const Vec3 composed = rotate_by_quaternion(normalized_or_identity(q1 * q2), v);
        const Vec3 sequential = rotate_by_quaternion(q1, rotate_by_quaternion(q2, v));
        const Vec3 by_matrix = apply_matrix(quat_to_matrix(q1), apply_matrix(quat_to_matrix(q2), v));

        CHECK(distance(composed, sequential) < 1e-9);
        CHECK(distance(composed, by_matrix) < 1e-9);
    }
}

TEST_CASE("rotation preserves norms and inner products") {
    Rng rng(23);
    for (int i = 0; i < 100; ++i) {
        const Quat q = random_unit_quat(rng);
        const Vec3 a{rng.uniform(-5, 5), rng.uniform(-5, 5), rng.uniform(-5, 5)};
        const Vec3 b{rng.uniform(-5, 5), rng.uniform(-5, 5), rng.uniform(-5, 5)};
        const Vec3 ra = rotate_by_quaternion(q, a);
        const Vec3 rb = rotate_by_quaternion(q, b);
        CHECK(std::fabs(ra.norm() - a.norm()) < 1e-9);
        CHECK(std::fabs(dot(ra, rb) - dot(a, b)) < 1e-9);
    }
}

} // TEST_SUITE
