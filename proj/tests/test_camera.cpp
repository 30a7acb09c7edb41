#include <doctest.h>

#include "oracles.hpp"
#include "splatlab/camera.hpp"

using namespace splatlab;

namespace {

Camera identity_camera() {
    Camera c;
    c.fx = c.fy = 100.0;
    c.cx = c.cy = 50.0;
    c.width = c.height = 100;
    c.near = 0.01;
    c.far = 100.0;
    return c;
}

} // namespace

TEST_CASE("project_point pinhole arithmetic") {
    Camera c = identity_camera();
    auto p1 = project_point(c, Vec3(0, 0, 2));
    CHECK(p1.u == doctest::Approx(50.0));
    CHECK(p1.v == doctest::Approx(50.0));
    CHECK(p1.z == doctest::Approx(2.0));

    auto p2 = project_point(c, Vec3(0.5, 0, 2));
    CHECK(p2.u == doctest::Approx(75.0));
    CHECK(p2.v == doctest::Approx(50.0));

    CHECK_THROWS_AS(project_point(c, Vec3(0, 0, -1)), Error);
    try {
        project_point(c, Vec3(0, 0, -1));
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::BehindCamera);
    }
}

TEST_CASE("ray_for_pixel principal point is the optical axis") {
    Camera c = identity_camera();
    Ray r = ray_for_pixel(c, c.cx, c.cy);
    CHECK(r.direction.x() == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(r.direction.y() == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(r.direction.z() == doctest::Approx(1.0));

    CHECK_THROWS_AS(ray_for_pixel(c, -1.0, 50.0), Error);
    CHECK_THROWS_AS(ray_for_pixel(c, 50.0, 100.0), Error);
}

TEST_CASE("project/ray round trip on the identity camera") {
    Camera c = identity_camera();
    Ray r = ray_for_pixel(c, 30.25, 81.5);
    auto p = project_point(c, r.at(3.0));
    CHECK(p.u == doctest::Approx(30.25).epsilon(1e-9));
    CHECK(p.v == doctest::Approx(81.5).epsilon(1e-9));
}

TEST_CASE("round trip under random poses stays below 1e-6 px") {
    Rng rng(7);
    for (int trial = 0; trial < 100; ++trial) {
        Camera c = test::random_camera(rng, 128, 95.0, 3.0 + rng.uniform());
        double u = rng.uniform(0.0, c.width - 1e-9);
        double v = rng.uniform(0.0, c.height - 1e-9);
        Ray r = ray_for_pixel(c, u, v);
        double t = rng.uniform(0.5, 8.0);
        auto p = project_point(c, r.at(t));
        CHECK(std::abs(p.u - u) < 1e-6);
        CHECK(std::abs(p.v - v) < 1e-6);
    }
}

TEST_CASE("rigid transforms preserve distances") {
    Rng rng(11);
    for (int trial = 0; trial < 50; ++trial) {
        Camera c = test::random_camera(rng);
        Vec3 a(rng.normal(), rng.normal(), rng.normal());
        Vec3 b(rng.normal(), rng.normal(), rng.normal());
        double before = (a - b).norm();
        double after = (c.to_camera(a) - c.to_camera(b)).norm();
        CHECK(std::abs(before - after) < 1e-9);
    }
}

TEST_CASE("camera validation rejects bad inputs") {
    Camera c = identity_camera();
    c.rotation = Quat{1.0, 0.1, 0.0, 0.0}; // norm > 1 + 1e-9
    CHECK_THROWS_AS(c.validate(), Error);

    Camera c2 = identity_camera();
    c2.near = 2.0;
    c2.far = 1.0;
    CHECK_THROWS_AS(c2.validate(), Error);

    Camera c3 = identity_camera();
    c3.fx = -1.0;
    CHECK_THROWS_AS(c3.validate(), Error);
}
