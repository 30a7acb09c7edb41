#include "splatlab/gaussian_splat.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "splatlab/threading.hpp"

namespace splatlab {

namespace {

constexpr double kCullMass = 9.2103403719761836;   // chi2(2) 0.99 quantile
constexpr double kBoundMass = 42.25;               // 6.5 sigma: tail < 7e-10

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Pinhole Jacobian d(u,v)/d(p_cam) at a camera-frame point.
inline Eigen::Matrix<double, 2, 3> projection_jacobian(const Camera& cam, const Vec3& p) {
    double inv_z = 1.0 / p.z();
    Eigen::Matrix<double, 2, 3> j;
    j << cam.fx * inv_z, 0.0, -cam.fx * p.x() * inv_z * inv_z,
         0.0, cam.fy * inv_z, -cam.fy * p.y() * inv_z * inv_z;
    return j;
}

inline Mat3 scale_matrix_sq(const Vec3& log_scale) {
    return Vec3(std::exp(2.0 * log_scale.x()), std::exp(2.0 * log_scale.y()),
                std::exp(2.0 * log_scale.z()))
        .asDiagonal();
}

struct ProjectionParts {
    Vec3 p_cam;
    Eigen::Matrix<double, 2, 3> jac;
    Mat3 cov_cam; // W Sigma W^T
    Splat2D splat;
};

// Shared by forward and backward; returns nullopt when culled.
std::optional<ProjectionParts> project_parts(const Camera& cam, const GaussianPrimitive& g,
                                             double cov_floor) {
    ProjectionParts parts;
    parts.p_cam = cam.to_camera(g.position);
    double z = parts.p_cam.z();
    if (z <= cam.near || z >= cam.far) return std::nullopt;

    parts.jac = projection_jacobian(cam, parts.p_cam);
    Mat3 rot = g.rotation.normalized().to_rotation();
    Mat3 sigma = rot * scale_matrix_sq(g.log_scale) * rot.transpose();
    Mat3 w = cam.rotation_matrix();
    parts.cov_cam = w * sigma * w.transpose();
    Mat2 cov2 = parts.jac * parts.cov_cam * parts.jac.transpose();
    cov2(0, 0) += cov_floor;
    cov2(1, 1) += cov_floor;

    Splat2D& s = parts.splat;
    s.mean2 = Vec2(cam.fx * parts.p_cam.x() / z + cam.cx, cam.fy * parts.p_cam.y() / z + cam.cy);
    s.cov2 = cov2;
    s.depth = z;
    s.color = g.base_color;
    s.opacity = sigmoid(g.opacity_logit);

    double hx = std::sqrt(kCullMass * cov2(0, 0));
    double hy = std::sqrt(kCullMass * cov2(1, 1));
    if (s.mean2.x() + hx < 0.0 || s.mean2.x() - hx > cam.width ||
        s.mean2.y() + hy < 0.0 || s.mean2.y() - hy > cam.height)
        return std::nullopt;
    return parts;
}

inline Mat2 invert_spd2(const Mat2& m) {
    double det = m(0, 0) * m(1, 1) - m(0, 1) * m(1, 0);
    Mat2 inv;
    inv << m(1, 1), -m(0, 1), -m(1, 0), m(0, 0);
    return inv / det;
}

} // namespace

GaussianScene init_gaussian_scene(int n, const Vec3& aabb_min, const Vec3& aabb_max,
                                  int d_code, Rng& rng) {
    GaussianScene scene;
    Vec3 extent = aabb_max - aabb_min;
    scene.scene_extent = 0.5 * extent.norm();
    double scale = std::log(scene.scene_extent / std::sqrt(static_cast<double>(n)) * 0.5);
    double opacity_logit = std::log(0.1 / 0.9);
    scene.primitives.resize(n);
    for (auto& g : scene.primitives) {
        for (int a = 0; a < 3; ++a)
            g.position[a] = aabb_min[a] + extent[a] * rng.uniform();
        Quat q{rng.normal(), rng.normal(), rng.normal(), rng.normal()};
        g.rotation = q.normalized();
        g.log_scale = Vec3::Constant(scale);
        g.opacity_logit = opacity_logit;
        g.base_color = Vec3(rng.uniform(), rng.uniform(), rng.uniform());
        if (d_code > 0) g.appearance_code.assign(d_code, 0.0);
    }
    return scene;
}

std::optional<Splat2D> project_gaussian(const Camera& camera, const GaussianPrimitive& g,
                                        double cov_floor) {
    auto parts = project_parts(camera, g, cov_floor);
    if (!parts) return std::nullopt;
    return parts->splat;
}

RenderOutput rasterize_gaussians(const GaussianScene& scene, const Camera& camera,
                                 const AppearanceContext* appearance,
                                 const RasterizeConfig& cfg, GaussianForwardContext* ctx) {
    camera.validate();
    const int w = camera.width, h = camera.height;

    GaussianForwardContext local;
    GaussianForwardContext& c = ctx ? *ctx : local;
    c = GaussianForwardContext{};
    c.width = w;
    c.height = h;
    c.tile_size = cfg.tile_size;
    c.cfg = cfg;
    c.wild = appearance != nullptr;

    // Project and prepare visible splats.
    for (std::size_t i = 0; i < scene.primitives.size(); ++i) {
        const auto& g = scene.primitives[i];
        auto parts = project_parts(camera, g, cfg.cov_floor);
        if (!parts) continue;
        GaussianForwardContext::Prepared p;
        p.prim_index = static_cast<int>(i);
        p.splat = parts->splat;
        p.cov_inv = invert_spd2(parts->splat.cov2);
        p.cam_point = parts->p_cam;
        if (appearance)
            p.splat.color = apply_appearance(*appearance->head, g.base_color,
                                             g.appearance_code.empty() ? nullptr
                                                                       : g.appearance_code.data(),
                                             appearance->embedding);
        double hx = std::sqrt(kBoundMass * parts->splat.cov2(0, 0));
        double hy = std::sqrt(kBoundMass * parts->splat.cov2(1, 1));
        p.x0 = std::max(0, static_cast<int>(std::floor(parts->splat.mean2.x() - hx)));
        p.x1 = std::min(w, static_cast<int>(std::ceil(parts->splat.mean2.x() + hx)));
        p.y0 = std::max(0, static_cast<int>(std::floor(parts->splat.mean2.y() - hy)));
        p.y1 = std::min(h, static_cast<int>(std::ceil(parts->splat.mean2.y() + hy)));
        if (p.x0 >= p.x1 || p.y0 >= p.y1) continue;
        c.visible.push_back(std::move(p));
    }

    // Front-to-back order, ties broken by primitive index for determinism.
    std::sort(c.visible.begin(), c.visible.end(), [](const auto& a, const auto& b) {
        if (a.splat.depth != b.splat.depth) return a.splat.depth < b.splat.depth;
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

    const double tmin = cfg.transmittance_min;
    const double far = camera.far;
    parallel_for(c.tile_splats.size(), [&](std::size_t tile) {
        const auto& list = c.tile_splats[tile];
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
                for (int s : list) {
                    if (t < tmin) break;
                    const auto& e = c.visible[s];
                    if (x < e.x0 || x >= e.x1 || y < e.y0 || y >= e.y1) continue;
                    Vec2 d = pix - e.splat.mean2;
                    double m = d.dot(e.cov_inv * d);
                    double alpha = std::min(e.splat.opacity * std::exp(-0.5 * m), cfg.alpha_clamp);
                    double wgt = alpha * t;
                    color += wgt * e.splat.color;
                    depth_num += wgt * e.splat.depth;
                    t *= 1.0 - alpha;
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

    c.valid = true;
    return out;
}

namespace {

// Per-splat accumulation from the pixel loop; finished into parameter
// gradients once per visible splat after the tile merge.
struct SplatAccum {
    Vec2 g_mean2 = Vec2::Zero();
    double g_mxx = 0.0, g_mxy = 0.0, g_myy = 0.0; // sum dL/dm * outer(dx,dx)
    Vec3 g_color = Vec3::Zero();
    double g_alpha_pre = 0.0; // sum dL/dalpha * G (opacity chain, pre-sigmoid)
    double g_depth = 0.0;

    void add(const SplatAccum& o) {
        g_mean2 += o.g_mean2;
        g_mxx += o.g_mxx;
        g_mxy += o.g_mxy;
        g_myy += o.g_myy;
        g_color += o.g_color;
        g_alpha_pre += o.g_alpha_pre;
        g_depth += o.g_depth;
    }
};

// dR/dq for q = (w,x,y,z); index order matches Vec4 storage below.
void rotation_quat_grads(const Quat& q, Mat3 dr[4]) {
    double w = q.w, x = q.x, y = q.y, z = q.z;
    dr[0] << 0, -2 * z, 2 * y,
             2 * z, 0, -2 * x,
             -2 * y, 2 * x, 0;
    dr[1] << 0, 2 * y, 2 * z,
             2 * y, -4 * x, -2 * w,
             2 * z, 2 * w, -4 * x;
    dr[2] << -4 * y, 2 * x, 2 * w,
             2 * x, 0, 2 * z,
             -2 * w, 2 * z, -4 * y;
    dr[3] << -4 * z, -2 * w, 2 * x,
             2 * w, -4 * z, 2 * y,
             2 * x, 2 * y, 0;
}

} // namespace

GaussianBackwardResult gaussian_backward(const GaussianScene& scene, const Camera& camera,
                                         const AppearanceContext* appearance,
                                         const GaussianForwardContext& ctx,
                                         const ImageBuffer& grad_color,
                                         const ImageBuffer* grad_depth,
                                         const ImageBuffer* grad_alpha) {
    if (!ctx.valid)
        throw Error(ErrorKind::MissingForwardState,
                    "gaussian_backward requires a matching forward pass");
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

    // Phase 1: per-tile pixel loops into per-tile accumulators.
    std::vector<std::vector<SplatAccum>> tile_accum(ctx.tile_splats.size());
    parallel_for(ctx.tile_splats.size(), [&](std::size_t tile) {
        const auto& list = ctx.tile_splats[tile];
        if (list.empty()) return;
        auto& accum = tile_accum[tile];
        accum.resize(list.size());
        std::vector<double> alphas(list.size()), weights(list.size()), gs(list.size());
        std::vector<int> touched(list.size());

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

                // Replay the forward compositing for this pixel.
                int m = 0;
                double t = 1.0;
                for (std::size_t k = 0; k < list.size(); ++k) {
                    if (t < tmin) break;
                    const auto& e = ctx.visible[list[k]];
                    if (x < e.x0 || x >= e.x1 || y < e.y0 || y >= e.y1) continue;
                    Vec2 d = pix - e.splat.mean2;
                    double maha = d.dot(e.cov_inv * d);
                    double g = std::exp(-0.5 * maha);
                    double alpha = std::min(e.splat.opacity * g, cfg.alpha_clamp);
                    alphas[m] = alpha;
                    gs[m] = g;
                    weights[m] = alpha * t;
                    touched[m] = static_cast<int>(k);
                    t *= 1.0 - alpha;
                    ++m;
                }
                if (m == 0) continue;
                double t_final = t;

                // Back-to-front: dL/dalpha_k = T_k * dL/dw_k - s_k / (1 - alpha_k),
                // s_k = sum_{i>k} w_i dL/dw_i + (gc . bg) T_final.
                double suffix = gc.dot(cfg.background) * t_final;
                double t_k = t_final;
                for (int k = m - 1; k >= 0; --k) {
                    const auto& e = ctx.visible[list[touched[k]]];
                    double one_minus = 1.0 - alphas[k];
                    t_k /= one_minus;
                    double dl_dw = gc.dot(e.splat.color) + ga;
                    if (gd != 0.0) dl_dw += gd * (e.splat.depth - depth_px) / a_px;
                    double dl_dalpha = t_k * dl_dw - suffix / one_minus;
                    suffix += weights[k] * dl_dw;

                    SplatAccum& acc = accum[touched[k]];
                    acc.g_color += gc * weights[k];
                    if (gd != 0.0) acc.g_depth += gd * weights[k] / a_px;
                    bool clamped = e.splat.opacity * gs[k] > cfg.alpha_clamp;
                    if (clamped) continue;
                    acc.g_alpha_pre += dl_dalpha * gs[k];
                    // dL/dm through alpha = opacity * exp(-m/2)
                    double dl_dm = dl_dalpha * e.splat.opacity * gs[k] * -0.5;
                    Vec2 d = pix - e.splat.mean2;
                    Vec2 pd = e.cov_inv * d;
                    acc.g_mean2 += -2.0 * dl_dm * pd;     // dm/dmean2 = -2 P d
                    acc.g_mxx += dl_dm * d.x() * d.x();
                    acc.g_mxy += dl_dm * d.x() * d.y();
                    acc.g_myy += dl_dm * d.y() * d.y();
                }
            }
        }
    }, cfg.threads);

    // Phase 2: deterministic merge in tile order.
    std::vector<SplatAccum> merged(ctx.visible.size());
    for (std::size_t tile = 0; tile < ctx.tile_splats.size(); ++tile) {
        const auto& list = ctx.tile_splats[tile];
        for (std::size_t k = 0; k < list.size(); ++k)
            merged[list[k]].add(tile_accum[tile][k]);
    }

    // Phase 3: finish per-splat parameter chains, sequential for determinism.
    GaussianBackwardResult result;
    result.primitives.resize(scene.primitives.size());
    for (auto& g : result.primitives)
        if (!scene.primitives.empty() && !scene.primitives[0].appearance_code.empty())
            g.appearance_code.assign(scene.primitives[0].appearance_code.size(), 0.0);
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

        grad.mean2 += acc.g_mean2;

        // dL/dcov2 = -P * Sm * P, Sm = sum dL/dm * d d^T (m = d^T P d, P = cov2^-1)
        Mat2 sm;
        sm << acc.g_mxx, acc.g_mxy, acc.g_mxy, acc.g_myy;
        Mat2 gcov2 = -e.cov_inv * sm * e.cov_inv;

        const Vec3& p_cam = e.cam_point;
        auto jac = projection_jacobian(camera, p_cam);
        Mat3 cov_cam;
        {
            Quat qn = prim.rotation.normalized();
            Mat3 rot = qn.to_rotation();
            Mat3 sigma = rot * scale_matrix_sq(prim.log_scale) * rot.transpose();
            cov_cam = w_rot * sigma * w_rot.transpose();

            // Sigma chain: world covariance -> rotation + log-scale.
            Mat3 gv = jac.transpose() * gcov2 * jac;
            Mat3 gsigma = w_rot.transpose() * gv * w_rot;
            Mat3 gr = 2.0 * gsigma * rot * scale_matrix_sq(prim.log_scale);
            Mat3 rtgr = rot.transpose() * gsigma * rot;
            for (int a = 0; a < 3; ++a)
                grad.log_scale[a] += rtgr(a, a) * 2.0 * std::exp(2.0 * prim.log_scale[a]);

            Mat3 dr[4];
            rotation_quat_grads(qn, dr);
            Vec4 gq;
            for (int cidx = 0; cidx < 4; ++cidx) gq[cidx] = (gr.array() * dr[cidx].array()).sum();
            // Through the normalization q / ||q||: project to the tangent space.
            Vec4 qv(qn.w, qn.x, qn.y, qn.z);
            double qnorm = prim.rotation.norm();
            grad.rotation += (gq - qv * gq.dot(qv)) / qnorm;
        }

        // Jacobian chain: cov2 depends on p_cam through J as well.
        Eigen::Matrix<double, 2, 3> gj = 2.0 * gcov2 * jac * cov_cam;
        double inv_z = 1.0 / p_cam.z();
        double inv_z2 = inv_z * inv_z;
        Vec3 g_pcam = Vec3::Zero();
        g_pcam.x() += gj(0, 2) * (-camera.fx * inv_z2);
        g_pcam.y() += gj(1, 2) * (-camera.fy * inv_z2);
        g_pcam.z() += gj(0, 0) * (-camera.fx * inv_z2) + gj(1, 1) * (-camera.fy * inv_z2) +
                      gj(0, 2) * (2.0 * camera.fx * p_cam.x() * inv_z2 * inv_z) +
                      gj(1, 2) * (2.0 * camera.fy * p_cam.y() * inv_z2 * inv_z);

        // Mean and depth chains.
        g_pcam += jac.transpose() * acc.g_mean2;
        g_pcam.z() += acc.g_depth;
        grad.position += w_rot.transpose() * g_pcam;

        double op = e.splat.opacity;
        grad.opacity_logit += acc.g_alpha_pre * op * (1.0 - op);

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

void GradStats::resize(std::size_t n) {
    grad_norm_sum.assign(n, 0.0);
    grad_count.assign(n, 0);
    max_screen_radius.assign(n, 0.0);
    max_contribution.assign(n, 0.0);
    degenerate_count.assign(n, 0);
    intervals = 0;
}

void GradStats::accumulate_view(const std::vector<GaussianGrad>& grads, int img_width,
                                int img_height) {
    for (std::size_t i = 0; i < grads.size(); ++i) {
        Vec2 ndc(grads[i].mean2.x() * 2.0 / img_width, grads[i].mean2.y() * 2.0 / img_height);
        double n = ndc.norm();
        if (n > 0.0) {
            grad_norm_sum[i] += n;
            grad_count[i] += 1;
        }
    }
    intervals += 1;
}

DensifyResult densify_and_prune(const GaussianScene& scene, const GradStats& stats,
                                const DensifyConfig& cfg, double image_diagonal, Rng& rng) {
    if (stats.intervals < 1)
        throw Error(ErrorKind::DataError, "densify_and_prune requires accumulated statistics");

    DensifyResult out;
    out.scene.scene_extent = scene.scene_extent;
    out.scene.sh_degree = scene.sh_degree;
    const double huge_px = cfg.huge_screen_frac * image_diagonal;
    bool may_grow = static_cast<int>(scene.size()) < cfg.max_primitives;

    for (std::size_t i = 0; i < scene.primitives.size(); ++i) {
        const auto& g = scene.primitives[i];
        if (g.opacity() < cfg.prune_opacity) continue;
        if (i < stats.max_screen_radius.size() && stats.max_screen_radius[i] > huge_px) continue;

        double mean_grad = 0.0;
        if (i < stats.grad_norm_sum.size() && stats.grad_count[i] > 0)
            mean_grad = stats.grad_norm_sum[i] / stats.grad_count[i];

        double max_scale = std::exp(g.log_scale.maxCoeff());
        bool densify = may_grow && mean_grad > cfg.grad_threshold;
        if (densify && max_scale >= cfg.clone_scale_frac * scene.scene_extent) {
            // Split: two children sampled from the parent's own distribution,
            // scales shrunk.
            Quat qn = g.rotation.normalized();
            Mat3 rot = qn.to_rotation();
            Vec3 scale(std::exp(g.log_scale.x()), std::exp(g.log_scale.y()),
                       std::exp(g.log_scale.z()));
            double shrink = std::log(cfg.split_scale_shrink);
            for (int child = 0; child < 2; ++child) {
                GaussianPrimitive n = g;
                Vec3 local(rng.normal() * scale.x(), rng.normal() * scale.y(),
                           rng.normal() * scale.z());
                n.position = g.position + rot * local;
                n.log_scale = g.log_scale - Vec3::Constant(shrink);
                out.scene.primitives.push_back(std::move(n));
                out.parent.push_back(static_cast<int>(i));
                out.fresh.push_back(1);
            }
        } else if (densify) {
            // Clone: keep the original and add a copy.
            out.scene.primitives.push_back(g);
            out.parent.push_back(static_cast<int>(i));
            out.fresh.push_back(0);
            out.scene.primitives.push_back(g);
            out.parent.push_back(static_cast<int>(i));
            out.fresh.push_back(1);
        } else {
            out.scene.primitives.push_back(g);
            out.parent.push_back(static_cast<int>(i));
            out.fresh.push_back(0);
        }
    }
    if (out.scene.primitives.empty())
        throw Error(ErrorKind::EmptySceneAfterPrune, "pruning removed every gaussian");
    return out;
}

} // namespace splatlab
