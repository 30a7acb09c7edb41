#include <doctest.h>

#include "oracles.hpp"
#include "splatlab/convex_splat.hpp"

using namespace splatlab;
using test::make_camera;
using test::random_camera;
using test::random_convex_scene;

namespace {

// Axis-aligned square of side `s` facing the camera at depth z.
ConvexPrimitive frontal_square(double s, double z, double opacity_logit = 5.0) {
    ConvexPrimitive c;
    c.points = {Vec3(-s / 2, -s / 2, z), Vec3(s / 2, -s / 2, z), Vec3(s / 2, s / 2, z),
                Vec3(-s / 2, s / 2, z)};
    c.smoothness_delta = 1.0;
    c.sharpness_sigma = 1.0;
    c.opacity_logit = opacity_logit;
    c.base_color = Vec3(0.2, 0.6, 0.9);
    return c;
}

} // namespace

TEST_CASE("projecting a frontal square yields its four corners") {
    Camera cam = make_camera(100, 100.0);
    auto proj = project_convex(cam, frontal_square(1.0, 2.0));
    REQUIRE(proj.status == ConvexProjectStatus::Ok);
    CHECK(proj.hull.vertices.size() == 4);
    CHECK(proj.hull.depth == doctest::Approx(2.0));
    // Corners at +-0.5 m project to 50 +- 25 px.
    for (const auto& v : proj.hull.vertices) {
        CHECK((std::abs(v.x() - 25.0) < 1e-9 || std::abs(v.x() - 75.0) < 1e-9));
        CHECK((std::abs(v.y() - 25.0) < 1e-9 || std::abs(v.y() - 75.0) < 1e-9));
    }
}

TEST_CASE("hull contains every projected point") {
    Rng rng(5);
    Camera cam = make_camera(64, 80.0);
    for (int trial = 0; trial < 50; ++trial) {
        ConvexPrimitive c = random_convex_scene(rng, 1).primitives[0];
        auto proj = project_convex(cam, c);
        if (proj.status != ConvexProjectStatus::Ok) continue;
        CHECK(proj.hull.vertices.size() <= c.points.size());
        for (const auto& p : c.points) {
            auto px = project_point(cam, p);
            // Inside-or-on test with a small tolerance for the hull boundary.
            std::size_t n = proj.hull.vertices.size();
            for (std::size_t i = 0; i < n; ++i) {
                Vec2 a = proj.hull.vertices[i], b = proj.hull.vertices[(i + 1) % n];
                double cross = (b.x() - a.x()) * (px.v - a.y()) - (b.y() - a.y()) * (px.u - a.x());
                CHECK(cross > -1e-7);
            }
        }
    }
}

TEST_CASE("collinear projections are degenerate") {
    Camera cam = make_camera(100, 100.0);
    ConvexPrimitive c;
    // All points on a vertical world line through the optical axis.
    c.points = {Vec3(0, -0.4, 2), Vec3(0, -0.1, 2), Vec3(0, 0.2, 2), Vec3(0, 0.5, 2)};
    auto proj = project_convex(cam, c);
    CHECK(proj.status == ConvexProjectStatus::Degenerate);
}

TEST_CASE("depth-bound violations cull the whole primitive") {
    Camera cam = make_camera(100, 100.0);
    ConvexPrimitive c = frontal_square(1.0, 2.0);
    c.points[2].z() = 0.001; // in front of the near plane
    CHECK(project_convex(cam, c).status == ConvexProjectStatus::Culled);
}

TEST_CASE("convex_alpha_at limits") {
    Camera cam = make_camera(100, 100.0);
    auto proj = project_convex(cam, frontal_square(1.0, 2.0));
    REQUIRE(proj.status == ConvexProjectStatus::Ok);
    const Hull2D& hull = proj.hull;
    Vec2 centroid(50.0, 50.0);

    SUBCASE("deep inside, sharp sigma: alpha approaches opacity") {
        double alpha = convex_alpha_at(hull, centroid, 0.5, 1000.0, 0.7);
        CHECK(std::abs(alpha - 0.7) < 1e-6);
    }
    SUBCASE("on an edge with tiny delta: alpha = opacity / 2") {
        Vec2 edge_mid(50.0, 25.0); // far from the corners
        double alpha = convex_alpha_at(hull, edge_mid, 1e-4, 1.0, 0.8);
        CHECK(alpha == doctest::Approx(0.4).epsilon(1e-3));
    }
    SUBCASE("far outside: sigmoid tail bound") {
        double sigma = 2.0;
        Vec2 outside(50.0, 25.0 - 10.0 / sigma * sigma); // 10/sigma px beyond the edge
        outside.y() = 25.0 - 10.0 / sigma;
        double alpha = convex_alpha_at(hull, outside, 1e-3, sigma, 0.9);
        CHECK(alpha < 0.9 * 5e-5);
    }
}

TEST_CASE("hull membership sign of the smoothed distance") {
    // Against the exact point-in-polygon oracle, for delta <= 0.1 and pixels
    // at least half a pixel away from the boundary.
    Rng rng(9);
    Camera cam = make_camera(64, 80.0);
    int checked = 0;
    for (int trial = 0; trial < 20 && checked < 500; ++trial) {
        ConvexPrimitive c = random_convex_scene(rng, 1).primitives[0];
        auto proj = project_convex(cam, c);
        if (proj.status != ConvexProjectStatus::Ok) continue;
        const Hull2D& hull = proj.hull;
        for (int y = 0; y < 64; ++y) {
            for (int x = 0; x < 64; ++x) {
                Vec2 p(x + 0.5, y + 0.5);
                // Distance margin via the exact polygon edge distances.
                double min_edge_dist = 1e300;
                std::size_t n = hull.vertices.size();
                for (std::size_t i = 0; i < n; ++i) {
                    Vec2 a = hull.vertices[i], b = hull.vertices[(i + 1) % n];
                    Vec2 ab = b - a;
                    double t = std::clamp((p - a).dot(ab) / ab.squaredNorm(), 0.0, 1.0);
                    min_edge_dist = std::min(min_edge_dist, (p - (a + t * ab)).norm());
                }
                if (min_edge_dist < 0.5) continue;
                bool inside = test::inside_polygon(hull.vertices, p);
                double d = -std::log(1.0 / convex_alpha_at(hull, p, 0.1, 1.0, 1.0) - 1.0);
                // alpha = sigmoid(-d) -> recover the sign of d.
                if (inside)
                    CHECK(d > 0.0); // sigmoid(-d) > 0.5 -> recovered d > 0 means distance < 0
                else
                    CHECK(d < 0.0);
                ++checked;
            }
        }
    }
    CHECK(checked >= 500);
}

TEST_CASE("alpha is monotone along a ray leaving through an edge") {
    Camera cam = make_camera(100, 100.0);
    auto proj = project_convex(cam, frontal_square(1.0, 2.0));
    REQUIRE(proj.status == ConvexProjectStatus::Ok);
    double prev = 1e300;
    for (double step = 0.0; step < 30.0; step += 0.5) {
        double alpha = convex_alpha_at(proj.hull, Vec2(50.0, 50.0 + step), 0.8, 1.3, 0.9);
        CHECK(alpha <= prev + 1e-12);
        prev = alpha;
    }
}

TEST_CASE("sharpness limits: soft edge at sigma->0+, indicator at sigma->inf") {
    Camera cam = make_camera(100, 100.0);
    auto proj = project_convex(cam, frontal_square(1.0, 2.0));
    const Hull2D& hull = proj.hull;
    // 10-sigma-margin pixels converge to the hard indicator.
    Vec2 inside(50, 50), outside(50, 3.0);
    CHECK(convex_alpha_at(hull, inside, 0.5, 50.0, 0.8) == doctest::Approx(0.8).epsilon(1e-9));
    CHECK(convex_alpha_at(hull, outside, 0.5, 50.0, 0.8) < 1e-12);
    // Vanishing sigma smears everything toward opacity/2.
    CHECK(convex_alpha_at(hull, inside, 0.5, 1e-6, 0.8) == doctest::Approx(0.4).epsilon(1e-4));
    CHECK(convex_alpha_at(hull, outside, 0.5, 1e-6, 0.8) == doctest::Approx(0.4).epsilon(1e-4));
}

TEST_CASE("empty scene and oracle equivalence") {
    ConvexScene empty;
    Camera cam = make_camera(64, 80.0);
    RenderOutput out = rasterize_convexes(empty, cam);
    for (double v : out.alpha.values) CHECK(v == 0.0);
    for (double v : out.depth.values) CHECK(v == cam.far);

    Rng rng(13);
    for (int trial = 0; trial < 3; ++trial) {
        ConvexScene scene = random_convex_scene(rng, 32);
        Camera c = random_camera(rng, 64, 80.0);
        RasterizeConfig cfg;
        cfg.background = Vec3(0.03, 0.02, 0.1);
        RenderOutput tiled = rasterize_convexes(scene, c, nullptr, cfg);
        RenderOutput ref = test::brute_force_convexes(scene, c, nullptr, cfg);
        double worst = 0.0;
        for (std::size_t i = 0; i < tiled.color.values.size(); ++i)
            worst = std::max(worst, std::abs(tiled.color.values[i] - ref.color.values[i]));
        for (std::size_t i = 0; i < tiled.alpha.values.size(); ++i) {
            worst = std::max(worst, std::abs(tiled.alpha.values[i] - ref.alpha.values[i]));
            worst = std::max(worst, std::abs(tiled.depth.values[i] - ref.depth.values[i]));
        }
        CHECK(worst < 1e-6);
    }
}

TEST_CASE("near-opaque convex covers the image center") {
    Camera cam = make_camera(64, 80.0);
    ConvexScene scene;
    ConvexPrimitive c = frontal_square(1.2, 2.0, 8.0);
    c.sharpness_sigma = 5.0;
    scene.primitives.push_back(c);
    RenderOutput out = rasterize_convexes(scene, cam);
    double opacity = scene.primitives[0].opacity();
    // Interior pixels (away from the smoothed boundary) reach 0.9 * opacity.
    RenderOutput ref = test::brute_force_convexes(scene, cam, nullptr, {});
    for (int y = 20; y < 44; ++y)
        for (int x = 20; x < 44; ++x) {
            CHECK(out.alpha.at(x, y) >= 0.9 * opacity);
            CHECK(out.alpha.at(x, y) == doctest::Approx(ref.alpha.at(x, y)).epsilon(1e-9));
        }
}

TEST_CASE("analytic gradients match finite differences") {
    Rng rng(19);
    const double rel_tol = 1e-3, abs_floor = 1e-6;
    test::FdReport report;
    for (int trial = 0; trial < 3; ++trial) {
        ConvexScene scene = random_convex_scene(rng, 3);
        Camera cam = random_camera(rng, 32, 40.0, 3.5);
        ImageBuffer target(32, 32, 3);
        for (auto& v : target.values) v = rng.uniform();

        auto mse = [&](const RenderOutput& out, ImageBuffer* grad) {
            double n = static_cast<double>(out.color.values.size());
            double loss = 0.0;
            if (grad) *grad = ImageBuffer(32, 32, 3);
            for (std::size_t i = 0; i < out.color.values.size(); ++i) {
                double d = out.color.values[i] - target.values[i];
                loss += d * d / n;
                if (grad) grad->values[i] = 2.0 * d / n;
            }
            return loss;
        };
        auto loss_fn = [&]() {
            RenderOutput out = rasterize_convexes(scene, cam);
            return mse(out, nullptr);
        };

        ConvexForwardContext ctx;
        RenderOutput out = rasterize_convexes(scene, cam, nullptr, {}, &ctx);
        ImageBuffer grad_image;
        mse(out, &grad_image);
        auto grads = convex_backward(scene, cam, nullptr, ctx, grad_image);

        for (std::size_t i = 0; i < scene.primitives.size(); ++i) {
            auto& c = scene.primitives[i];
            const auto& ag = grads.primitives[i];
            auto check = [&](double* p, double analytic, double h) {
                test::fd_check_scalar([&] { return *p; }, [&](double v) { *p = v; }, loss_fn,
                                      analytic, h, rel_tol, abs_floor, report);
            };
            for (std::size_t j = 0; j < c.points.size(); ++j)
                for (int a = 0; a < 3; ++a) check(&c.points[j][a], ag.points[j][a], 1e-4);
            check(&c.smoothness_delta, ag.smoothness_delta, 1e-4);
            check(&c.sharpness_sigma, ag.sharpness_sigma, 1e-4);
            check(&c.opacity_logit, ag.opacity_logit, 1e-4);
            for (int a = 0; a < 3; ++a) check(&c.base_color[a], ag.base_color[a], 1e-4);
        }
    }
    INFO("worst rel ", report.worst_rel, " analytic ", report.worst_analytic, " numeric ",
         report.worst_numeric);
    CHECK(report.n_failed == 0);
}

TEST_CASE("occlusion and upstream linearity") {
    Camera cam = make_camera(64, 80.0);
    ConvexScene scene;
    for (double z : {2.0, 2.1, 2.2}) {
        ConvexPrimitive front = frontal_square(1.5, z, 14.0);
        front.sharpness_sigma = 50.0;
        scene.primitives.push_back(front);
    }
    ConvexPrimitive back = frontal_square(0.2, 3.0, 0.0);
    scene.primitives.push_back(back);

    ConvexForwardContext ctx;
    rasterize_convexes(scene, cam, nullptr, {}, &ctx);
    ImageBuffer g1(64, 64, 3);
    Rng rng(21);
    for (auto& v : g1.values) v = rng.uniform(-1, 1);
    auto r1 = convex_backward(scene, cam, nullptr, ctx, g1);

    const auto& bg = r1.primitives.back();
    for (const auto& p : bg.points) CHECK(p.norm() < 1e-9);
    CHECK(std::abs(bg.opacity_logit) < 1e-9);

    ImageBuffer g2 = g1;
    for (auto& v : g2.values) v *= 2.0;
    auto r2 = convex_backward(scene, cam, nullptr, ctx, g2);
    for (std::size_t i = 0; i < scene.primitives.size(); ++i)
        for (std::size_t j = 0; j < scene.primitives[i].points.size(); ++j)
            CHECK((r2.primitives[i].points[j] - 2.0 * r1.primitives[i].points[j]).norm() < 1e-12);
}

TEST_CASE("prune_convexes rules") {
    Rng rng(25);
    ConvexScene scene = random_convex_scene(rng, 5);
    GradStats stats;
    stats.resize(scene.size());
    stats.intervals = 4;
    for (auto& m : stats.max_contribution) m = 0.5; // all healthy
    ConvexPruneConfig cfg;

    SUBCASE("all above thresholds: unchanged") {
        auto r = prune_convexes(scene, stats, cfg);
        CHECK(r.scene.size() == scene.size());
    }
    SUBCASE("low opacity is removed") {
        scene.primitives[1].opacity_logit = std::log(1e-4 / (1 - 1e-4));
        auto r = prune_convexes(scene, stats, cfg);
        CHECK(r.scene.size() == scene.size() - 1);
    }
    SUBCASE("degenerate in every view is removed") {
        stats.degenerate_count[3] = stats.intervals;
        auto r = prune_convexes(scene, stats, cfg);
        CHECK(r.scene.size() == scene.size() - 1);
        for (int p : r.parent) CHECK(p != 3);
    }
    SUBCASE("vanishing contribution is removed") {
        stats.max_contribution[0] = 1e-6;
        auto r = prune_convexes(scene, stats, cfg);
        CHECK(r.scene.size() == scene.size() - 1);
    }
    SUBCASE("removing everything throws") {
        for (auto& c : scene.primitives) c.opacity_logit = -14.0;
        CHECK_THROWS_AS(prune_convexes(scene, stats, cfg), Error);
    }
}
