// Test-only reference implementations, kept independent of the library's
// tiled/optimized code paths so they can serve as oracles.
#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "splatlab/convex_splat.hpp"
#include "splatlab/gaussian_splat.hpp"
#include "splatlab/kplanes.hpp"
#include "splatlab/rng.hpp"

namespace splatlab::test {

// Per-pixel loop over every projected splat, no tiles, no bounding boxes.
inline RenderOutput brute_force_gaussians(const GaussianScene& scene, const Camera& camera,
                                          const AppearanceContext* appearance,
                                          const RasterizeConfig& cfg) {
    struct Entry {
        Splat2D splat;
        Mat2 inv;
        int index;
    };
    std::vector<Entry> entries;
    for (std::size_t i = 0; i < scene.primitives.size(); ++i) {
        auto s = project_gaussian(camera, scene.primitives[i], cfg.cov_floor);
        if (!s) continue;
        if (appearance)
            s->color = apply_appearance(*appearance->head, scene.primitives[i].base_color,
                                        scene.primitives[i].appearance_code.empty()
                                            ? nullptr
                                            : scene.primitives[i].appearance_code.data(),
                                        appearance->embedding);
        double det = s->cov2(0, 0) * s->cov2(1, 1) - s->cov2(0, 1) * s->cov2(1, 0);
        Mat2 inv;
        inv << s->cov2(1, 1), -s->cov2(0, 1), -s->cov2(1, 0), s->cov2(0, 0);
        inv /= det;
        entries.push_back({*s, inv, static_cast<int>(i)});
    }
    std::sort(entries.begin(), entries.end(), [](const Entry& a, const Entry& b) {
        if (a.splat.depth != b.splat.depth) return a.splat.depth < b.splat.depth;
        return a.index < b.index;
    });

    RenderOutput out;
    out.color = ImageBuffer(camera.width, camera.height, 3);
    out.depth = ImageBuffer(camera.width, camera.height, 1, camera.far);
    out.alpha = ImageBuffer(camera.width, camera.height, 1);
    for (int y = 0; y < camera.height; ++y)
        for (int x = 0; x < camera.width; ++x) {
            double t = 1.0;
            Vec3 color = Vec3::Zero();
            double depth_num = 0.0;
            Vec2 pix(x + 0.5, y + 0.5);
            for (const auto& e : entries) {
                if (t < cfg.transmittance_min) break;
                Vec2 d = pix - e.splat.mean2;
                double m = d.dot(e.inv * d);
                double alpha = std::min(e.splat.opacity * std::exp(-0.5 * m), cfg.alpha_clamp);
                color += alpha * t * e.splat.color;
                depth_num += alpha * t * e.splat.depth;
                t *= 1.0 - alpha;
            }
            double a = 1.0 - t;
            color += t * cfg.background;
            for (int c = 0; c < 3; ++c) out.color.at(x, y, c) = color[c];
            out.alpha.at(x, y) = a;
            out.depth.at(x, y) = a >= cfg.alpha_bg_eps ? depth_num / a : camera.far;
        }
    return out;
}

inline RenderOutput brute_force_convexes(const ConvexScene& scene, const Camera& camera,
                                         const AppearanceContext* appearance,
                                         const RasterizeConfig& cfg) {
    struct Entry {
        Hull2D hull;
        double delta, sigma, opacity;
        Vec3 color;
        int index;
    };
    std::vector<Entry> entries;
    for (std::size_t i = 0; i < scene.primitives.size(); ++i) {
        auto proj = project_convex(camera, scene.primitives[i]);
        if (proj.status != ConvexProjectStatus::Ok) continue;
        Vec3 color = scene.primitives[i].base_color;
        if (appearance)
            color = apply_appearance(*appearance->head, scene.primitives[i].base_color,
                                     scene.primitives[i].appearance_code.empty()
                                         ? nullptr
                                         : scene.primitives[i].appearance_code.data(),
                                     appearance->embedding);
        entries.push_back({proj.hull, scene.primitives[i].smoothness_delta,
                           scene.primitives[i].sharpness_sigma, scene.primitives[i].opacity(),
                           color, static_cast<int>(i)});
    }
    std::sort(entries.begin(), entries.end(), [](const Entry& a, const Entry& b) {
        if (a.hull.depth != b.hull.depth) return a.hull.depth < b.hull.depth;
        return a.index < b.index;
    });

    RenderOutput out;
    out.color = ImageBuffer(camera.width, camera.height, 3);
    out.depth = ImageBuffer(camera.width, camera.height, 1, camera.far);
    out.alpha = ImageBuffer(camera.width, camera.height, 1);
    for (int y = 0; y < camera.height; ++y)
        for (int x = 0; x < camera.width; ++x) {
            double t = 1.0;
            Vec3 color = Vec3::Zero();
            double depth_num = 0.0;
            Vec2 pix(x + 0.5, y + 0.5);
            for (const auto& e : entries) {
                if (t < cfg.transmittance_min) break;
                double alpha = std::min(convex_alpha_at(e.hull, pix, e.delta, e.sigma, e.opacity),
                                        cfg.alpha_clamp);
                color += alpha * t * e.color;
                depth_num += alpha * t * e.hull.depth;
                t *= 1.0 - alpha;
            }
            double a = 1.0 - t;
            color += t * cfg.background;
            for (int c = 0; c < 3; ++c) out.color.at(x, y, c) = color[c];
            out.alpha.at(x, y) = a;
            out.depth.at(x, y) = a >= cfg.alpha_bg_eps ? depth_num / a : camera.far;
        }
    return out;
}

// Central finite differences against an analytic gradient.
struct FdReport {
    double worst_rel = 0.0;
    double worst_analytic = 0.0, worst_numeric = 0.0;
    int n_checked = 0;
    int n_failed = 0;
};

// get/set address one scalar parameter; loss() re-evaluates the objective.
inline void fd_check_scalar(const std::function<double()>& get,
                            const std::function<void(double)>& set,
                            const std::function<double()>& loss, double analytic, double h,
                            double rel_tol, double abs_floor, FdReport& report) {
    double x0 = get();
    set(x0 + h);
    double up = loss();
    set(x0 - h);
    double down = loss();
    set(x0);
    double numeric = (up - down) / (2.0 * h);
    double err = std::abs(numeric - analytic);
    double denom = std::max(std::abs(numeric), std::abs(analytic));
    double rel = denom > 0.0 ? err / denom : 0.0;
    report.n_checked += 1;
    if (err > abs_floor && rel > rel_tol) {
        report.n_failed += 1;
        if (rel > report.worst_rel) {
            report.worst_rel = rel;
            report.worst_analytic = analytic;
            report.worst_numeric = numeric;
        }
    }
}

// Independent direct-formula tri-plane interpolation (second implementation).
inline std::vector<double> reference_sample_features(const KPlanesField& field, const Vec3& p) {
    int fdim = field.cfg.features;
    std::vector<double> out(fdim * field.cfg.resolutions.size(), 0.0);
    auto clamp01 = [](double v) { return std::min(1.0, std::max(0.0, v)); };
    Vec3 u((p.x() - field.aabb_min.x()) / (field.aabb_max.x() - field.aabb_min.x()),
           (p.y() - field.aabb_min.y()) / (field.aabb_max.y() - field.aabb_min.y()),
           (p.z() - field.aabb_min.z()) / (field.aabb_max.z() - field.aabb_min.z()));
    for (int a = 0; a < 3; ++a) u[a] = clamp01(u[a]);
    const int axes[3][2] = {{0, 1}, {0, 2}, {1, 2}};
    for (std::size_t r = 0; r < field.cfg.resolutions.size(); ++r) {
        int res = field.cfg.resolutions[r];
        for (int pl = 0; pl < 3; ++pl) {
            double ga = u[axes[pl][0]] * (res - 1);
            double gb = u[axes[pl][1]] * (res - 1);
            int i0 = std::min(std::max(0, static_cast<int>(std::floor(ga))), res - 2);
            int j0 = std::min(std::max(0, static_cast<int>(std::floor(gb))), res - 2);
            double fa = ga - i0, fb = gb - j0;
            for (int f = 0; f < fdim; ++f) {
                auto at = [&](int i, int j) {
                    return field.planes[r][pl][(static_cast<std::size_t>(j) * res + i) * fdim + f];
                };
                double v = at(i0, j0) * (1 - fa) * (1 - fb) + at(i0 + 1, j0) * fa * (1 - fb) +
                           at(i0, j0 + 1) * (1 - fa) * fb + at(i0 + 1, j0 + 1) * fa * fb;
                out[r * fdim + f] += v / 3.0;
            }
        }
    }
    return out;
}

// Exact point-in-convex-polygon test (all cross products one sign).
inline bool inside_polygon(const std::vector<Vec2>& poly, const Vec2& p) {
    std::size_t n = poly.size();
    for (std::size_t i = 0; i < n; ++i) {
        Vec2 a = poly[i], b = poly[(i + 1) % n];
        double cross = (b.x() - a.x()) * (p.y() - a.y()) - (b.y() - a.y()) * (p.x() - a.x());
        if (cross < 0.0) return false; // vertices are wound with positive cross products
    }
    return true;
}

inline Camera make_camera(int size = 64, double focal = 80.0) {
    Camera c;
    c.fx = c.fy = focal;
    c.cx = c.cy = size / 2.0;
    c.width = c.height = size;
    c.near = 0.01;
    c.far = 100.0;
    return c;
}

// Random look-at-origin pose at the given distance.
inline Camera random_camera(Rng& rng, int size = 64, double focal = 80.0, double dist = 4.0) {
    Camera c = make_camera(size, focal);
    Vec3 dir(rng.normal(), rng.normal(), rng.normal());
    dir.normalize();
    Vec3 eye = dir * dist;
    Vec3 forward = (-eye).normalized();
    Vec3 up(0, 0, 1);
    if (std::abs(forward.dot(up)) > 0.99) up = Vec3(0, 1, 0);
    Vec3 right = forward.cross(up).normalized();
    Vec3 down = forward.cross(right).normalized();
    Mat3 r;
    r.row(0) = right;
    r.row(1) = down;
    r.row(2) = forward;
    // Matrix-to-quaternion for test poses.
    double tr = r.trace();
    Quat q;
    if (tr > 0) {
        double s = std::sqrt(tr + 1.0) * 2.0;
        q = {0.25 * s, (r(2, 1) - r(1, 2)) / s, (r(0, 2) - r(2, 0)) / s, (r(1, 0) - r(0, 1)) / s};
    } else if (r(0, 0) > r(1, 1) && r(0, 0) > r(2, 2)) {
        double s = std::sqrt(1.0 + r(0, 0) - r(1, 1) - r(2, 2)) * 2.0;
        q = {(r(2, 1) - r(1, 2)) / s, 0.25 * s, (r(0, 1) + r(1, 0)) / s, (r(0, 2) + r(2, 0)) / s};
    } else if (r(1, 1) > r(2, 2)) {
        double s = std::sqrt(1.0 + r(1, 1) - r(0, 0) - r(2, 2)) * 2.0;
        q = {(r(0, 2) - r(2, 0)) / s, (r(0, 1) + r(1, 0)) / s, 0.25 * s, (r(1, 2) + r(2, 1)) / s};
    } else {
        double s = std::sqrt(1.0 + r(2, 2) - r(0, 0) - r(1, 1)) * 2.0;
        q = {(r(1, 0) - r(0, 1)) / s, (r(0, 2) + r(2, 0)) / s, (r(1, 2) + r(2, 1)) / s, 0.25 * s};
    }
    c.rotation = q.normalized();
    c.translation = -(c.rotation.to_rotation() * eye);
    return c;
}

// Small random scenes for gradient checks: moderate opacities keep the
// compositing away from the alpha clamp and the early-out threshold.
inline GaussianScene random_gaussian_scene(Rng& rng, int n, int d_code = 0) {
    GaussianScene scene;
    scene.scene_extent = 2.0;
    for (int i = 0; i < n; ++i) {
        GaussianPrimitive g;
        g.position = Vec3(rng.uniform(-0.8, 0.8), rng.uniform(-0.8, 0.8), rng.uniform(-0.8, 0.8));
        Quat q{rng.normal(), rng.normal(), rng.normal(), rng.normal()};
        g.rotation = q.normalized();
        g.log_scale = Vec3(rng.uniform(-2.5, -1.2), rng.uniform(-2.5, -1.2), rng.uniform(-2.5, -1.2));
        g.opacity_logit = rng.uniform(-1.5, 0.8);
        g.base_color = Vec3(rng.uniform(0.1, 0.9), rng.uniform(0.1, 0.9), rng.uniform(0.1, 0.9));
        if (d_code > 0) {
            g.appearance_code.resize(d_code);
            for (auto& c : g.appearance_code) c = rng.uniform(-0.5, 0.5);
        }
        scene.primitives.push_back(std::move(g));
    }
    return scene;
}

inline ConvexScene random_convex_scene(Rng& rng, int n, int k = 6, int d_code = 0) {
    ConvexScene scene;
    scene.scene_extent = 2.0;
    scene.k = k;
    for (int i = 0; i < n; ++i) {
        ConvexPrimitive c;
        Vec3 centroid(rng.uniform(-0.6, 0.6), rng.uniform(-0.6, 0.6), rng.uniform(-0.6, 0.6));
        c.points.resize(k);
        for (auto& p : c.points) {
            Vec3 d(rng.normal(), rng.normal(), rng.normal());
            d.normalize();
            p = centroid + d * rng.uniform(0.15, 0.4);
        }
        c.smoothness_delta = rng.uniform(0.5, 1.5);
        c.sharpness_sigma = rng.uniform(0.5, 1.5);
        c.opacity_logit = rng.uniform(-1.5, 0.8);
        c.base_color = Vec3(rng.uniform(0.1, 0.9), rng.uniform(0.1, 0.9), rng.uniform(0.1, 0.9));
        if (d_code > 0) {
            c.appearance_code.resize(d_code);
            for (auto& cc : c.appearance_code) cc = rng.uniform(-0.5, 0.5);
        }
        scene.primitives.push_back(std::move(c));
    }
    return scene;
}

} // namespace splatlab::test
