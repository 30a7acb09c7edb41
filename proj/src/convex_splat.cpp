#include "splatlab/convex_splat.hpp"

#include <algorithm>
#include <cmath>

#include "splatlab/threading.hpp"

namespace splatlab {

namespace {

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

inline Vec2 perp(const Vec2& e) { return Vec2(e.y(), -e.x()); }

inline Eigen::Matrix<double, 2, 3> projection_jacobian(const Camera& cam, const Vec3& p) {
    double inv_z = 1.0 / p.z();
    Eigen::Matrix<double, 2, 3> j;
    j << cam.fx * inv_z, 0.0, -cam.fx * p.x() * inv_z * inv_z,
         0.0, cam.fy * inv_z, -cam.fy * p.y() * inv_z * inv_z;
    return j;
}

constexpr double kCollinearEps = 1e-12;

// Andrew monotone chain on (position, source index) pairs; collinear points
// dropped. Output edges satisfy cross(e_i, e_{i+1}) > 0.
void convex_hull(std::vector<std::pair<Vec2, int>>& pts, Hull2D& hull) {
    std::sort(pts.begin(), pts.end(), [](const auto& a, const auto& b) {
        if (a.first.x() != b.first.x()) return a.first.x() < b.first.x();
        if (a.first.y() != b.first.y()) return a.first.y() < b.first.y();
        return a.second < b.second;
    });
    auto cross = [](const Vec2& o, const Vec2& a, const Vec2& b) {
        return (a.x() - o.x()) * (b.y() - o.y()) - (a.y() - o.y()) * (b.x() - o.x());
    };
    std::size_t n = pts.size();
    std::vector<int> idx; // indices into pts
    idx.reserve(2 * n);
    for (std::size_t i = 0; i < n; ++i) {
        while (idx.size() >= 2 &&
               cross(pts[idx[idx.size() - 2]].first, pts[idx.back()].first, pts[i].first) <=
                   kCollinearEps)
            idx.pop_back();
        idx.push_back(static_cast<int>(i));
    }
    std::size_t lower = idx.size() + 1;
    for (std::size_t i = n - 1; i-- > 0;) {
        while (idx.size() >= lower &&
               cross(pts[idx[idx.size() - 2]].first, pts[idx.back()].first, pts[i].first) <=
                   kCollinearEps)
            idx.pop_back();
        idx.push_back(static_cast<int>(i));
    }
    idx.pop_back(); // last point repeats the first
    hull.vertices.clear();
    hull.point_index.clear();
    for (int i : idx) {
        hull.vertices.push_back(pts[i].first);
        hull.point_index.push_back(pts[i].second);
    }
}

struct EdgeGeom {
    Vec2 normal;   // unit outward
    double offset; // n . v_a
    Vec2 a;        // edge start
    Vec2 dir;      // unit edge vector
    double len;
};

void edge_geometry(const Hull2D& hull, std::vector<EdgeGeom>& edges) {
    std::size_t n = hull.vertices.size();
    edges.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        const Vec2& a = hull.vertices[i];
        const Vec2& b = hull.vertices[(i + 1) % n];
        Vec2 e = b - a;
        double len = e.norm();
        Vec2 nrm = perp(e) / len;
        edges[i] = {nrm, nrm.dot(a), a, e / len, len};
    }
}

// Signed distance (log-sum-exp smooth max over edges) plus softmax weights.
double smooth_distance(const std::vector<EdgeGeom>& edges, const Vec2& p, double delta,
                       std::vector<double>* weights) {
    double mx = -1e300;
    for (const auto& e : edges) mx = std::max(mx, e.normal.dot(p) - e.offset);
    double sum = 0.0;
    if (weights) weights->resize(edges.size());
    for (std::size_t i = 0; i < edges.size(); ++i) {
        double w = std::exp((edges[i].normal.dot(p) - edges[i].offset - mx) / delta);
        sum += w;
        if (weights) (*weights)[i] = w;
    }
    if (weights)
        for (auto& w : *weights) w /= sum;
    return mx + delta * std::log(sum);
}

// Axis-aligned bounds of the polygon with every edge pushed outward by
// `margin`; beyond it the smoothed alpha is below 1e-12.
bool offset_bbox(const Hull2D& hull, double margin, Vec2& lo, Vec2& hi) {
    std::vector<EdgeGeom> edges;
    edge_geometry(hull, edges);
    std::size_t n = edges.size();
    lo = Vec2(1e300, 1e300);
    hi = Vec2(-1e300, -1e300);
    for (std::size_t i = 0; i < n; ++i) {
        const EdgeGeom& e0 = edges[(i + n - 1) % n];
        const EdgeGeom& e1 = edges[i];
        // Intersect the two offset edge lines n.x = offset + margin.
        double det = e0.normal.x() * e1.normal.y() - e0.normal.y() * e1.normal.x();
        if (std::abs(det) < 1e-12) return false;
        double c0 = e0.offset + margin, c1 = e1.offset + margin;
        Vec2 v((c0 * e1.normal.y() - c1 * e0.normal.y()) / det,
               (e0.normal.x() * c1 - e1.normal.x() * c0) / det);
        lo = lo.cwiseMin(v);
        hi = hi.cwiseMax(v);
    }
    return true;
}

} // namespace

ConvexScene init_convex_scene(int n, int k, const Vec3& aabb_min, const Vec3& aabb_max,
                              int d_code, Rng& rng) {
    ConvexScene scene;
    scene.k = k;
    Vec3 extent = aabb_max - aabb_min;
    scene.scene_extent = 0.5 * extent.norm();
    double radius = scene.scene_extent / std::sqrt(static_cast<double>(n));
    scene.primitives.resize(n);
    for (auto& c : scene.primitives) {
        Vec3 centroid;
        for (int a = 0; a < 3; ++a) centroid[a] = aabb_min[a] + extent[a] * rng.uniform();
        c.points.resize(k);
        for (auto& p : c.points) {
            Vec3 dir(rng.normal(), rng.normal(), rng.normal());
            dir.normalize();
            p = centroid + dir * radius * std::cbrt(rng.uniform());
        }
        c.smoothness_delta = 1.0;
        c.sharpness_sigma = 1.0;
        c.opacity_logit = std::log(0.1 / 0.9);
        c.base_color = Vec3(rng.uniform(), rng.uniform(), rng.uniform());
        if (d_code > 0) c.appearance_code.assign(d_code, 0.0);
    }
    return scene;
}

ConvexProjection project_convex(const Camera& camera, const ConvexPrimitive& c) {
    ConvexProjection out;
    std::vector<std::pair<Vec2, int>> pts;
    pts.reserve(c.points.size());
    double depth_sum = 0.0;
    for (std::size_t i = 0; i < c.points.size(); ++i) {
        Vec3 p = camera.to_camera(c.points[i]);
        if (p.z() <= camera.near || p.z() >= camera.far) {
            out.status = ConvexProjectStatus::Culled;
            return out;
        }
        depth_sum += p.z();
        pts.emplace_back(Vec2(camera.fx * p.x() / p.z() + camera.cx,
                              camera.fy * p.y() / p.z() + camera.cy),
                         static_cast<int>(i));
    }
    convex_hull(pts, out.hull);
    if (out.hull.vertices.size() < 3) {
        out.status = ConvexProjectStatus::Degenerate;
        return out;
    }
    out.hull.depth = depth_sum / static_cast<double>(c.points.size());

    Vec2 lo, hi;
    if (!offset_bbox(out.hull, 0.0, lo, hi)) {
        out.status = ConvexProjectStatus::Degenerate;
        return out;
    }
    if (hi.x() < 0.0 || lo.x() > camera.width || hi.y() < 0.0 || lo.y() > camera.height) {
        out.status = ConvexProjectStatus::Culled;
        return out;
    }
    out.status = ConvexProjectStatus::Ok;
    return out;
}

double convex_alpha_at(const Hull2D& hull, const Vec2& pixel, double delta, double sigma,
                       double opacity) {
    std::vector<EdgeGeom> edges;
    edge_geometry(hull, edges);
    double d = smooth_distance(edges, pixel, delta, nullptr);
    return opacity * sigmoid(-sigma * d);
}

RenderOutput rasterize_convexes(const ConvexScene& scene, const Camera& camera,
                                const AppearanceContext* appearance,
                                const RasterizeConfig& cfg, ConvexForwardContext* ctx) {
    camera.validate();
    const int w = camera.width, h = camera.height;

    ConvexForwardContext local;
    ConvexForwardContext& c = ctx ? *ctx : local;
    c = ConvexForwardContext{};
    c.width = w;
    c.height = h;
    c.tile_size = cfg.tile_size;
    c.cfg = cfg;
    c.wild = appearance != nullptr;
    c.degenerate.assign(scene.size(), 0);
    c.max_contribution.assign(scene.size(), 0.0);

    for (std::size_t i = 0; i < scene.primitives.size(); ++i) {
        const auto& prim = scene.primitives[i];
        auto proj = project_convex(camera, prim);
        if (proj.status == ConvexProjectStatus::Degenerate) {
            c.degenerate[i] = 1;
            continue;
        }
        if (proj.status != ConvexProjectStatus::Ok) continue;

        ConvexForwardContext::Prepared p;
        p.prim_index = static_cast<int>(i);
        p.hull = std::move(proj.hull);
        p.opacity = prim.opacity();
        p.color = prim.base_color;
        if (appearance)
            p.color = apply_appearance(*appearance->head, prim.base_color,
                                       prim.appearance_code.empty() ? nullptr
                                                                    : prim.appearance_code.data(),
                                       appearance->embedding);
        Vec2 lo, hi;
        double margin = 28.0 / prim.sharpness_sigma;
        if (!offset_bbox(p.hull, margin, lo, hi)) {
            c.degenerate[i] = 1;
            continue;
        }
        p.x0 = std::max(0, static_cast<int>(std::floor(lo.x())));
        p.x1 = std::min(w, static_cast<int>(std::ceil(hi.x())));
        p.y0 = std::max(0, static_cast<int>(std::floor(lo.y())));
        p.y1 = std::min(h, static_cast<int>(std::ceil(hi.y())));
        if (p.x0 >= p.x1 || p.y0 >= p.y1) continue;
        c.visible.push_back(std::move(p));
    }

    std::sort(c.visible.begin(), c.visible.end(), [](const auto& a, const auto& b) {
        if (a.hull.depth != b.hull.depth) return a.hull.depth < b.hull.depth;
        return a.prim_index < b.prim_index;
    });

    const int ts = cfg.tile_size;
    c.tiles_x = (w + ts - 1) / ts;
    c.tiles_y = (h + ts - 1) / ts;
    c.tile_splats.assign(static_cast<std::size_t>(c.tiles_x) * c.tiles_y, {});
    for (std::size_t s = 0; s < c.visible.size(); ++s) {
        const auto& p = c.visible[s];
        int tx0 = p.x0 / ts, tx1 = (p.x1 - 1) / ts;
        int ty0 = p.y0 / ts, ty1 = (p.y1 - 1) / ts;
        for (int ty = ty0; ty <= ty1; ++ty)
            for (int tx = tx0; tx <= tx1; ++tx)
                c.tile_splats[static_cast<std::size_t>(ty) * c.tiles_x + tx].push_back(
                    static_cast<int>(s));
    }

    RenderOutput out;
    out.color = ImageBuffer(w, h, 3);
    out.depth = ImageBuffer(w, h, 1, camera.far);
    out.alpha = ImageBuffer(w, h, 1);
    c.out_alpha = ImageBuffer(w, h, 1);
    c.out_depth_num = ImageBuffer(w, h, 1);

    // Per-splat edge geometry and primitive params, shared by all tiles.
    std::vector<std::vector<EdgeGeom>> edges(c.visible.size());
    std::vector<double> deltas(c.visible.size()), sigmas(c.visible.size());
    for (std::size_t s = 0; s < c.visible.size(); ++s) {
        edge_geometry(c.visible[s].hull, edges[s]);
        deltas[s] = scene.primitives[c.visible[s].prim_index].smoothness_delta;
        sigmas[s] = scene.primitives[c.visible[s].prim_index].sharpness_sigma;
    }

    std::vector<std::vector<double>> tile_max_contrib(c.tile_splats.size());
    const double tmin = cfg.transmittance_min;
    const double far = camera.far;
    parallel_for(c.tile_splats.size(), [&](std::size_t tile) {
        const auto& list = c.tile_splats[tile];
        auto& maxc = tile_max_contrib[tile];
        maxc.assign(list.size(), 0.0);
        int tx = static_cast<int>(tile) % c.tiles_x;
        int ty = static_cast<int>(tile) / c.tiles_x;
        int px0 = tx * ts, px1 = std::min(w, px0 + ts);
        int py0 = ty * ts, py1 = std::min(h, py0 + ts);
        for (int y = py0; y < py1; ++y) {
            for (int x = px0; x < px1; ++x) {
                double t = 1.0;
                Vec3 color = Vec3::Zero();
                double depth_num = 0.0;
                Vec2 pix(x + 0.5, y + 0.5);
                for (std::size_t k = 0; k < list.size(); ++k) {
                    if (t < tmin) break;
                    int s = list[k];
                    const auto& e = c.visible[s];
                    if (x < e.x0 || x >= e.x1 || y < e.y0 || y >= e.y1) continue;
                    double d = smooth_distance(edges[s], pix, deltas[s], nullptr);
                    double alpha =
                        std::min(e.opacity * sigmoid(-sigmas[s] * d), cfg.alpha_clamp);
                    double wgt = alpha * t;
                    color += wgt * e.color;
                    depth_num += wgt * e.hull.depth;
                    t *= 1.0 - alpha;
                    maxc[k] = std::max(maxc[k], wgt);
                }
                double a = 1.0 - t;
                color += t * cfg.background;
                out.color.at(x, y, 0) = color.x();
                out.color.at(x, y, 1) = color.y();
                out.color.at(x, y, 2) = color.z();
                out.alpha.at(x, y) = a;
                out.depth.at(x, y) = a >= cfg.alpha_bg_eps ? depth_num / a : far;
                c.out_alpha.at(x, y) = a;
                c.out_depth_num.at(x, y) = depth_num;
            }
        }
    }, cfg.threads);

    for (std::size_t tile = 0; tile < c.tile_splats.size(); ++tile) {
        const auto& list = c.tile_splats[tile];
        for (std::size_t k = 0; k < list.size(); ++k) {
            int prim = c.visible[list[k]].prim_index;
            c.max_contribution[prim] = std::max(c.max_contribution[prim], tile_max_contrib[tile][k]);
        }
    }

    c.valid = true;
    return out;
}

namespace {

struct ConvexAccum {
    std::vector<Vec2> g_vert;
    double g_delta = 0.0, g_sigma = 0.0, g_alpha_pre = 0.0, g_depth = 0.0;
    Vec3 g_color = Vec3::Zero();

    void init(std::size_t n_vertices) { g_vert.assign(n_vertices, Vec2::Zero()); }
    void add(const ConvexAccum& o) {
        if (g_vert.size() < o.g_vert.size()) g_vert.resize(o.g_vert.size(), Vec2::Zero());
        for (std::size_t i = 0; i < o.g_vert.size(); ++i) g_vert[i] += o.g_vert[i];
        g_delta += o.g_delta;
        g_sigma += o.g_sigma;
        g_alpha_pre += o.g_alpha_pre;
        g_depth += o.g_depth;
        g_color += o.g_color;
    }
};

} // namespace

ConvexBackwardResult convex_backward(const ConvexScene& scene, const Camera& camera,
                                     const AppearanceContext* appearance,
                                     const ConvexForwardContext& ctx,
                                     const ImageBuffer& grad_color,
                                     const ImageBuffer* grad_depth,
                                     const ImageBuffer* grad_alpha) {
    if (!ctx.valid)
        throw Error(ErrorKind::MissingForwardState,
                    "convex_backward requires a matching forward pass");
    if (ctx.width != camera.width || ctx.height != camera.height ||
        grad_color.width != ctx.width || grad_color.height != ctx.height ||
        grad_color.channels != 3)
        throw Error(ErrorKind::DimensionMismatch, "gradient image does not match forward render");
    if ((appearance != nullptr) != ctx.wild)
        throw Error(ErrorKind::MissingForwardState,
                    "appearance context differs between forward and backward");

    const auto& cfg = ctx.cfg;
    const int ts = ctx.tile_size;
    const int w = ctx.width, h = ctx.height;
    const double tmin = cfg.transmittance_min;
    const double far = camera.far;

    std::vector<std::vector<EdgeGeom>> edges(ctx.visible.size());
    std::vector<double> deltas(ctx.visible.size()), sigmas(ctx.visible.size());
    for (std::size_t s = 0; s < ctx.visible.size(); ++s) {
        edge_geometry(ctx.visible[s].hull, edges[s]);
        deltas[s] = scene.primitives[ctx.visible[s].prim_index].smoothness_delta;
        sigmas[s] = scene.primitives[ctx.visible[s].prim_index].sharpness_sigma;
    }

    std::vector<std::vector<ConvexAccum>> tile_accum(ctx.tile_splats.size());
    parallel_for(ctx.tile_splats.size(), [&](std::size_t tile) {
        const auto& list = ctx.tile_splats[tile];
        if (list.empty()) return;
        auto& accum = tile_accum[tile];
        accum.resize(list.size());
        for (std::size_t k = 0; k < list.size(); ++k)
            accum[k].init(ctx.visible[list[k]].hull.vertices.size());

        std::vector<double> alphas(list.size()), weights(list.size()), dists(list.size()),
            sigs(list.size());
        std::vector<int> touched(list.size());
        std::vector<double> lse_w;

        int tx = static_cast<int>(tile) % ctx.tiles_x;
        int ty = static_cast<int>(tile) / ctx.tiles_x;
        int px0 = tx * ts, px1 = std::min(w, px0 + ts);
        int py0 = ty * ts, py1 = std::min(h, py0 + ts);
        for (int y = py0; y < py1; ++y) {
            for (int x = px0; x < px1; ++x) {
                Vec2 pix(x + 0.5, y + 0.5);
                Vec3 gc(grad_color.at(x, y, 0), grad_color.at(x, y, 1), grad_color.at(x, y, 2));
                double ga = grad_alpha ? grad_alpha->at(x, y) : 0.0;
                double a_px = ctx.out_alpha.at(x, y);
                bool fg = a_px >= cfg.alpha_bg_eps;
                double gd = (grad_depth && fg) ? grad_depth->at(x, y) : 0.0;
                if (gc.isZero(0.0) && ga == 0.0 && gd == 0.0) continue;

                double depth_px = fg ? ctx.out_depth_num.at(x, y) / a_px : far;

                int m = 0;
                double t = 1.0;
                for (std::size_t k = 0; k < list.size(); ++k) {
                    if (t < tmin) break;
                    int s = list[k];
                    const auto& e = ctx.visible[s];
                    if (x < e.x0 || x >= e.x1 || y < e.y0 || y >= e.y1) continue;
                    double d = smooth_distance(edges[s], pix, deltas[s], nullptr);
                    double sg = sigmoid(-sigmas[s] * d);
                    double alpha = std::min(e.opacity * sg, cfg.alpha_clamp);
                    alphas[m] = alpha;
                    dists[m] = d;
                    sigs[m] = sg;
                    weights[m] = alpha * t;
                    touched[m] = static_cast<int>(k);
                    t *= 1.0 - alpha;
                    ++m;
                }
                if (m == 0) continue;
                double t_final = t;

                double suffix = gc.dot(cfg.background) * t_final;
                double t_k = t_final;
                for (int k = m - 1; k >= 0; --k) {
                    int s = list[touched[k]];
                    const auto& e = ctx.visible[s];
                    double one_minus = 1.0 - alphas[k];
                    t_k /= one_minus;
                    double dl_dw = gc.dot(e.color) + ga;
                    if (gd != 0.0) dl_dw += gd * (e.hull.depth - depth_px) / a_px;
                    double dl_dalpha = t_k * dl_dw - suffix / one_minus;
                    suffix += weights[k] * dl_dw;

                    ConvexAccum& acc = accum[touched[k]];
                    acc.g_color += gc * weights[k];
                    if (gd != 0.0) acc.g_depth += gd * weights[k] / a_px;
                    bool clamped = e.opacity * sigs[k] > cfg.alpha_clamp;
                    if (clamped) continue;
                    acc.g_alpha_pre += dl_dalpha * sigs[k];

                    // alpha = opacity * sigmoid(-sigma * d)
                    double dl_ds = dl_dalpha * e.opacity * sigs[k] * (1.0 - sigs[k]);
                    acc.g_sigma += dl_ds * -dists[k];
                    double dl_dd = dl_ds * -sigmas[s];

                    double d_lse = smooth_distance(edges[s], pix, deltas[s], &lse_w);
                    double mean_de = 0.0;
                    for (std::size_t ei = 0; ei < edges[s].size(); ++ei)
                        mean_de += lse_w[ei] * (edges[s][ei].normal.dot(pix) - edges[s][ei].offset);
                    acc.g_delta += dl_dd * (d_lse - mean_de) / deltas[s];

                    std::size_t nv = edges[s].size();
                    for (std::size_t ei = 0; ei < nv; ++ei) {
                        double dl_de = dl_dd * lse_w[ei];
                        if (dl_de == 0.0) continue;
                        const EdgeGeom& eg = edges[s][ei];
                        Vec2 r = pix - eg.a;
                        double de = eg.normal.dot(r);
                        // d_e = perp(e).r / |e|; chain through both endpoints.
                        Vec2 dd_dvb = (-perp(r) - de * eg.dir) / eg.len;
                        acc.g_vert[(ei + 1) % nv] += dl_de * dd_dvb;
                        acc.g_vert[ei] += dl_de * (-dd_dvb - eg.normal);
                    }
                }
            }
        }
    }, cfg.threads);

    std::vector<ConvexAccum> merged(ctx.visible.size());
    for (std::size_t s = 0; s < ctx.visible.size(); ++s)
        merged[s].init(ctx.visible[s].hull.vertices.size());
    for (std::size_t tile = 0; tile < ctx.tile_splats.size(); ++tile) {
        const auto& list = ctx.tile_splats[tile];
        for (std::size_t k = 0; k < list.size(); ++k)
            merged[list[k]].add(tile_accum[tile][k]);
    }

    ConvexBackwardResult result;
    result.primitives.resize(scene.primitives.size());
    for (std::size_t i = 0; i < scene.primitives.size(); ++i) {
        result.primitives[i].points.assign(scene.primitives[i].points.size(), Vec3::Zero());
        if (!scene.primitives[i].appearance_code.empty())
            result.primitives[i].appearance_code.assign(scene.primitives[i].appearance_code.size(),
                                                        0.0);
    }
    if (appearance) {
        result.embedding_grad.assign(appearance->d_img, 0.0);
        result.head_grad.resize_like(*appearance->head);
    }

    Mat3 w_rot = camera.rotation_matrix();
    for (std::size_t s = 0; s < ctx.visible.size(); ++s) {
        const auto& e = ctx.visible[s];
        const auto& acc = merged[s];
        const auto& prim = scene.primitives[e.prim_index];
        auto& grad = result.primitives[e.prim_index];

        grad.smoothness_delta += acc.g_delta;
        grad.sharpness_sigma += acc.g_sigma;
        double op = e.opacity;
        grad.opacity_logit += acc.g_alpha_pre * op * (1.0 - op);

        std::size_t kpts = prim.points.size();
        std::vector<Vec3> g_cam(kpts, Vec3::Zero());
        // Depth path: hull depth is the mean camera z of all K points.
        double gdz = acc.g_depth / static_cast<double>(kpts);
        for (auto& gp : g_cam) gp.z() += gdz;
        // Alpha path: hull vertex screen gradients to their source points.
        for (std::size_t vi = 0; vi < e.hull.vertices.size(); ++vi) {
            const Vec2& gv = acc.g_vert[vi];
            if (gv.isZero(0.0)) continue;
            int pi = e.hull.point_index[vi];
            Vec3 p_cam = camera.to_camera(prim.points[pi]);
            g_cam[pi] += projection_jacobian(camera, p_cam).transpose() * gv;
            grad.mean2 += gv;
        }
        for (std::size_t pi = 0; pi < kpts; ++pi)
            grad.points[pi] += w_rot.transpose() * g_cam[pi];

        if (appearance) {
            apply_appearance_backward(*appearance->head, prim.base_color,
                                      prim.appearance_code.empty() ? nullptr
                                                                   : prim.appearance_code.data(),
                                      appearance->embedding, acc.g_color, grad.base_color,
                                      grad.appearance_code.empty() ? nullptr
                                                                   : grad.appearance_code.data(),
                                      result.embedding_grad.data(), result.head_grad);
        } else {
            grad.base_color += acc.g_color;
        }
    }
    return result;
}

ConvexPruneResult prune_convexes(const ConvexScene& scene, const GradStats& stats,
                                 const ConvexPruneConfig& cfg) {
    if (stats.intervals < 1)
        throw Error(ErrorKind::DataError, "prune_convexes requires accumulated statistics");
    ConvexPruneResult out;
    out.scene.scene_extent = scene.scene_extent;
    out.scene.k = scene.k;
    for (std::size_t i = 0; i < scene.primitives.size(); ++i) {
        const auto& c = scene.primitives[i];
        if (c.opacity() < cfg.prune_opacity) continue;
        if (i < stats.degenerate_count.size() && stats.degenerate_count[i] >= stats.intervals &&
            stats.degenerate_count[i] > 0)
            continue;
        if (i < stats.max_contribution.size() && stats.max_contribution[i] < cfg.prune_contribution)
            continue;
        out.scene.primitives.push_back(c);
        out.parent.push_back(static_cast<int>(i));
    }
    if (out.scene.primitives.empty())
        throw Error(ErrorKind::EmptySceneAfterPrune, "pruning removed every convex");
    return out;
}

} // namespace splatlab
