#include "splatlab/trainer.hpp"

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>

#include <json.hpp>

#include "splatlab/metrics.hpp"
#include "splatlab/rng.hpp"
#include "splatlab/threading.hpp"

namespace splatlab {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr double kCullMass = 9.2103403719761836;

struct Moments {
    std::vector<double> m, v;
    void ensure(std::size_t n) {
        if (m.size() != n) {
            m.assign(n, 0.0);
            v.assign(n, 0.0);
        }
    }
    void zero() {
        std::fill(m.begin(), m.end(), 0.0);
        std::fill(v.begin(), v.end(), 0.0);
    }
};

constexpr double kBeta1 = 0.9, kBeta2 = 0.999, kAdamEps = 1e-8;

inline void adam_scalar(double& p, double g, double& m, double& v, double lr, double bc1,
                        double bc2) {
    m = kBeta1 * m + (1.0 - kBeta1) * g;
    v = kBeta2 * v + (1.0 - kBeta2) * g * g;
    p -= lr * (m / bc1) / (std::sqrt(v / bc2) + kAdamEps);
}

void adam_block(std::vector<double>& p, const std::vector<double>& g, Moments& mom, double lr,
                double bc1, double bc2) {
    mom.ensure(p.size());
    for (std::size_t i = 0; i < p.size(); ++i)
        adam_scalar(p[i], g[i], mom.m[i], mom.v[i], lr, bc1, bc2);
}

inline double logit(double x) { return std::log(x / (1.0 - x)); }

} // namespace

void TrainConfig::validate() const {
    if (!(loss_lambda >= 0.0 && loss_lambda <= 1.0))
        throw Error(ErrorKind::ConfigError, "loss_lambda must be in [0,1]");
    if (total_iters < 1) throw Error(ErrorKind::ConfigError, "total_iters must be positive");
    if (mode == TrainMode::Hybrid) {
        int sw = resolved_switch_iter();
        if (!(sw > 0 && sw < total_iters))
            throw Error(ErrorKind::ConfigError, "hybrid switch_iter must be inside (0, total_iters)");
    }
}

struct Trainer::Impl {
    Backend backend;
    TrainConfig cfg;
    const Dataset* dataset;
    Model model;
    std::string run_dir;

    std::vector<const DatasetView*> train_views;
    std::vector<const DatasetView*> test_views;

    // Per-primitive flattened Adam moments (explicit back-ends).
    std::vector<double> prim_m, prim_v;
    int prim_stride = 0;
    std::vector<double> lr_per_scalar; // per flat index within one primitive

    // Appearance head + embedding moments.
    Moments head_w1, head_b1, head_w2, head_b2;
    std::map<std::string, Moments> emb_moments;

    // K-Planes moments.
    std::vector<std::array<Moments, 3>> plane_mom;
    Moments kw1, kb1, kw2, kb2, kws, kbs, kwc, kbc, kwe;

    GradStats stats;

    Rng root_rng{0};
    Rng view_rng{0}, densify_rng{0}, strat_base{0};
    std::vector<int> view_order;
    std::size_t view_cursor = 0;

    int64_t adam_t = 0;
    double last_psnr = 0.0;

    bool wild_active(int iter) const {
        if (cfg.mode == TrainMode::Wild) return true;
        if (cfg.mode == TrainMode::Hybrid) return iter >= cfg.resolved_switch_iter();
        return false;
    }

    const DatasetView& pick_view() {
        if (view_cursor >= view_order.size()) {
            view_order.resize(train_views.size());
            std::iota(view_order.begin(), view_order.end(), 0);
            for (std::size_t i = view_order.size(); i > 1; --i)
                std::swap(view_order[i - 1], view_order[view_rng.uniform_index(i)]);
            view_cursor = 0;
        }
        return *train_views[view_order[view_cursor++]];
    }

    void init(const Dataset& ds);
    void build_lr_table();
    StepMetrics step_gaussian(int iter);
    StepMetrics step_convex(int iter);
    StepMetrics step_kplanes(int iter);
    void update_appearance(const std::string& image_id, const AppearanceHeadGrad& hg,
                           const std::vector<double>& eg, double bc1, double bc2);
    void remap_prim_moments(const std::vector<int>& parent, const std::vector<uint8_t>& fresh);
    double eval_psnr();
    void diagnostic_checkpoint();
};

void Trainer::Impl::build_lr_table() {
    double pos_lr = cfg.lr.position * (backend == Backend::Gaussian
                                           ? model.gaussians.scene_extent
                                           : model.convexes.scene_extent);
    lr_per_scalar.clear();
    if (backend == Backend::Gaussian) {
        for (int i = 0; i < 3; ++i) lr_per_scalar.push_back(pos_lr);
        for (int i = 0; i < 4; ++i) lr_per_scalar.push_back(cfg.lr.primitive);
        for (int i = 0; i < 3; ++i) lr_per_scalar.push_back(cfg.lr.primitive);
        lr_per_scalar.push_back(cfg.lr.opacity);
        for (int i = 0; i < 3; ++i) lr_per_scalar.push_back(cfg.lr.primitive);
    } else {
        for (int i = 0; i < 3 * cfg.convex_k; ++i) lr_per_scalar.push_back(pos_lr);
        lr_per_scalar.push_back(cfg.lr.primitive); // delta
        lr_per_scalar.push_back(cfg.lr.primitive); // sigma
        lr_per_scalar.push_back(cfg.lr.opacity);
        for (int i = 0; i < 3; ++i) lr_per_scalar.push_back(cfg.lr.primitive);
    }
    int d_code = model.has_appearance() ? cfg.d_prim : 0;
    for (int i = 0; i < d_code; ++i) lr_per_scalar.push_back(cfg.lr.embedding);
    prim_stride = static_cast<int>(lr_per_scalar.size());
}

void Trainer::Impl::init(const Dataset& ds) {
    dataset = &ds;
    cfg.validate();
    if (ds.train_ids.empty()) throw Error(ErrorKind::DataError, "dataset has no training views");
    train_views = ds.train_views();
    test_views = ds.test_views();

    root_rng = Rng(cfg.seed);
    view_rng = root_rng.fork("views");
    densify_rng = root_rng.fork("densify");
    strat_base = root_rng.fork("stratified");
    Rng init_rng = root_rng.fork("init");

    model.backend = backend;
    model.mode = cfg.mode;
    model.wild_active = cfg.mode == TrainMode::Wild;
    model.raster.background = cfg.background;
    model.raster.threads = cfg.threads;

    const Camera& cam0 = ds.views.front().camera;
    model.sampling.n_samples = cfg.kplanes_samples;
    model.sampling.near = cam0.near;
    model.sampling.far = cam0.far;
    model.sampling.background = cfg.background;
    model.sampling.threads = cfg.threads;

    bool wild = model.has_appearance();
    int d_code = wild ? cfg.d_prim : 0;

    switch (backend) {
    case Backend::Gaussian:
        model.gaussians =
            init_gaussian_scene(cfg.gaussian_init, ds.aabb_min, ds.aabb_max, d_code, init_rng);
        break;
    case Backend::Convex:
        model.convexes = init_convex_scene(cfg.convex_init, cfg.convex_k, ds.aabb_min, ds.aabb_max,
                                           d_code, init_rng);
        break;
    case Backend::KPlanes: {
        KPlanesConfig kcfg = cfg.kplanes;
        kcfg.d_img = wild ? cfg.d_img : 0;
        model.field = KPlanesField::init(kcfg, ds.aabb_min, ds.aabb_max, init_rng);
        break;
    }
    }

    if (wild) {
        // K-Planes feeds the embedding straight into its decoder; the shared
        // head applies to per-primitive colors of the explicit back-ends.
        int head_code = backend == Backend::KPlanes ? 0 : cfg.d_prim;
        model.appearance.head = AppearanceHead::init(head_code, cfg.d_img, cfg.head_hidden, init_rng);
        for (const auto& id : ds.train_ids) {
            AppearanceEmbedding e;
            e.v.assign(cfg.d_img, 0.0);
            model.appearance.embeddings[id] = std::move(e);
        }
    }

    build_lr_table();
    std::size_t n_prims =
        backend == Backend::Gaussian ? model.gaussians.size() : model.convexes.size();
    if (backend != Backend::KPlanes) {
        prim_m.assign(n_prims * prim_stride, 0.0);
        prim_v.assign(n_prims * prim_stride, 0.0);
        stats.resize(n_prims);
    } else {
        plane_mom.resize(model.field.planes.size());
    }
}

namespace {

// Flatten order must match build_lr_table.
void flatten_gaussian_grad(const GaussianGrad& g, double* out, int d_code) {
    out[0] = g.position.x();
    out[1] = g.position.y();
    out[2] = g.position.z();
    out[3] = g.rotation[0];
    out[4] = g.rotation[1];
    out[5] = g.rotation[2];
    out[6] = g.rotation[3];
    out[7] = g.log_scale.x();
    out[8] = g.log_scale.y();
    out[9] = g.log_scale.z();
    out[10] = g.opacity_logit;
    out[11] = g.base_color.x();
    out[12] = g.base_color.y();
    out[13] = g.base_color.z();
    for (int i = 0; i < d_code; ++i)
        out[14 + i] = g.appearance_code.empty() ? 0.0 : g.appearance_code[i];
}

void flatten_convex_grad(const ConvexGrad& g, double* out, int k, int d_code) {
    for (int j = 0; j < k; ++j) {
        out[3 * j] = g.points[j].x();
        out[3 * j + 1] = g.points[j].y();
        out[3 * j + 2] = g.points[j].z();
    }
    double* p = out + 3 * k;
    p[0] = g.smoothness_delta;
    p[1] = g.sharpness_sigma;
    p[2] = g.opacity_logit;
    p[3] = g.base_color.x();
    p[4] = g.base_color.y();
    p[5] = g.base_color.z();
    for (int i = 0; i < d_code; ++i)
        p[6 + i] = g.appearance_code.empty() ? 0.0 : g.appearance_code[i];
}

} // namespace

void Trainer::Impl::update_appearance(const std::string& image_id, const AppearanceHeadGrad& hg,
                                      const std::vector<double>& eg, double bc1, double bc2) {
    AppearanceHead& head = model.appearance.head;
    adam_block(head.w1, hg.w1, head_w1, cfg.lr.mlp, bc1, bc2);
    adam_block(head.b1, hg.b1, head_b1, cfg.lr.mlp, bc1, bc2);
    adam_block(head.w2, hg.w2, head_w2, cfg.lr.mlp, bc1, bc2);
    adam_block(head.b2, hg.b2, head_b2, cfg.lr.mlp, bc1, bc2);
    if (!eg.empty()) {
        AppearanceEmbedding& e = model.appearance.at(image_id);
        Moments& mom = emb_moments[image_id];
        mom.ensure(e.v.size());
        for (std::size_t i = 0; i < e.v.size(); ++i)
            adam_scalar(e.v[i], eg[i], mom.m[i], mom.v[i], cfg.lr.embedding, bc1, bc2);
        e.clamp_norm();
    }
}

void Trainer::Impl::remap_prim_moments(const std::vector<int>& parent,
                                       const std::vector<uint8_t>& fresh) {
    std::size_t n = parent.size();
    std::vector<double> nm(n * prim_stride, 0.0), nv(n * prim_stride, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        if (fresh.empty() ? false : fresh[i]) continue; // new primitives: zeroed moments
        int src = parent[i];
        std::copy_n(&prim_m[static_cast<std::size_t>(src) * prim_stride], prim_stride,
                    &nm[i * prim_stride]);
        std::copy_n(&prim_v[static_cast<std::size_t>(src) * prim_stride], prim_stride,
                    &nv[i * prim_stride]);
    }
    prim_m = std::move(nm);
    prim_v = std::move(nv);
    stats.resize(n);
}

StepMetrics Trainer::Impl::step_gaussian(int iter) {
    const DatasetView& view = pick_view();
    bool active = wild_active(iter);
    if (active) model.wild_active = true;

    AppearanceContext actx;
    const AppearanceContext* pctx = nullptr;
    if (active) {
        actx.head = &model.appearance.head;
        actx.embedding = model.appearance.at(view.id).v.data();
        actx.d_img = cfg.d_img;
        pctx = &actx;
    }

    GaussianForwardContext ctx;
    RenderOutput out = rasterize_gaussians(model.gaussians, view.camera, pctx, model.raster, &ctx);
    LossResult loss = photometric_loss(out.color, view.image, cfg.loss_lambda);

    double sparsity = 0.0;
    if (cfg.opacity_sparsity > 0.0 && !model.gaussians.primitives.empty()) {
        for (const auto& g : model.gaussians.primitives) sparsity += g.opacity();
        sparsity *= cfg.opacity_sparsity / static_cast<double>(model.gaussians.size());
    }
    double total_loss = loss.loss + sparsity;
    if (!std::isfinite(total_loss)) {
        diagnostic_checkpoint();
        throw Error(ErrorKind::NonFiniteLoss, "non-finite loss at iteration " + std::to_string(iter));
    }

    auto grads = gaussian_backward(model.gaussians, view.camera, pctx, ctx, loss.grad);

    // Densification statistics.
    stats.accumulate_view(grads.primitives, view.camera.width, view.camera.height);
    for (const auto& e : ctx.visible) {
        double r = std::sqrt(kCullMass * std::max(e.splat.cov2(0, 0), e.splat.cov2(1, 1)));
        stats.max_screen_radius[e.prim_index] = std::max(stats.max_screen_radius[e.prim_index], r);
    }

    ++adam_t;
    double bc1 = 1.0 - std::pow(kBeta1, static_cast<double>(adam_t));
    double bc2 = 1.0 - std::pow(kBeta2, static_cast<double>(adam_t));
    int d_code = model.has_appearance() ? cfg.d_prim : 0;
    double sparsity_scale =
        cfg.opacity_sparsity / std::max<std::size_t>(1, model.gaussians.size());
    std::vector<double> flat(prim_stride);
    for (std::size_t i = 0; i < model.gaussians.size(); ++i) {
        auto& g = model.gaussians.primitives[i];
        flatten_gaussian_grad(grads.primitives[i], flat.data(), d_code);
        double op = g.opacity();
        flat[10] += sparsity_scale * op * (1.0 - op);

        double* m = &prim_m[i * prim_stride];
        double* v = &prim_v[i * prim_stride];
        double params[14] = {g.position.x(),  g.position.y(),  g.position.z(),  g.rotation.w,
                             g.rotation.x,    g.rotation.y,    g.rotation.z,    g.log_scale.x(),
                             g.log_scale.y(), g.log_scale.z(), g.opacity_logit, g.base_color.x(),
                             g.base_color.y(), g.base_color.z()};
        for (int j = 0; j < 14; ++j)
            adam_scalar(params[j], flat[j], m[j], v[j], lr_per_scalar[j], bc1, bc2);
        for (int j = 0; j < d_code; ++j)
            adam_scalar(g.appearance_code[j], flat[14 + j], m[14 + j], v[14 + j],
                        lr_per_scalar[14 + j], bc1, bc2);

        g.position = Vec3(params[0], params[1], params[2]);
        g.rotation = Quat{params[3], params[4], params[5], params[6]}.normalized();
        double max_log = std::log(model.gaussians.scene_extent);
        g.log_scale = Vec3(std::clamp(params[7], std::log(1e-6), max_log),
                           std::clamp(params[8], std::log(1e-6), max_log),
                           std::clamp(params[9], std::log(1e-6), max_log));
        g.opacity_logit = std::clamp(params[10], -14.0, 14.0);
        g.base_color = Vec3(std::clamp(params[11], 0.0, 1.0), std::clamp(params[12], 0.0, 1.0),
                            std::clamp(params[13], 0.0, 1.0));
    }

    if (active) update_appearance(view.id, grads.head_grad, grads.embedding_grad, bc1, bc2);

    // Adaptive density control.
    int step = iter + 1;
    bool densify_phase = iter >= cfg.densify_interval &&
                         iter < static_cast<int>(cfg.densify_until_frac * cfg.total_iters);
    if (densify_phase && step % cfg.densify_interval == 0 && stats.intervals > 0) {
        double diag = std::hypot(view.camera.width, view.camera.height);
        DensifyResult r =
            densify_and_prune(model.gaussians, stats, cfg.densify, diag, densify_rng);
        model.gaussians = std::move(r.scene);
        remap_prim_moments(r.parent, r.fresh);
    }
    if (cfg.opacity_reset_interval > 0 && step % cfg.opacity_reset_interval == 0) {
        double low = logit(0.01);
        for (std::size_t i = 0; i < model.gaussians.size(); ++i) {
            auto& g = model.gaussians.primitives[i];
            g.opacity_logit = std::min(g.opacity_logit, low);
            prim_m[i * prim_stride + 10] = 0.0;
            prim_v[i * prim_stride + 10] = 0.0;
        }
    }
    return {total_loss, static_cast<int64_t>(model.gaussians.size())};
}

StepMetrics Trainer::Impl::step_convex(int iter) {
    const DatasetView& view = pick_view();
    bool active = wild_active(iter);
    if (active) model.wild_active = true;

    AppearanceContext actx;
    const AppearanceContext* pctx = nullptr;
    if (active) {
        actx.head = &model.appearance.head;
        actx.embedding = model.appearance.at(view.id).v.data();
        actx.d_img = cfg.d_img;
        pctx = &actx;
    }

    ConvexForwardContext ctx;
    RenderOutput out = rasterize_convexes(model.convexes, view.camera, pctx, model.raster, &ctx);
    LossResult loss = photometric_loss(out.color, view.image, cfg.loss_lambda);

    double sparsity = 0.0;
    if (cfg.opacity_sparsity > 0.0 && !model.convexes.primitives.empty()) {
        for (const auto& c : model.convexes.primitives) sparsity += c.opacity();
        sparsity *= cfg.opacity_sparsity / static_cast<double>(model.convexes.size());
    }
    double total_loss = loss.loss + sparsity;
    if (!std::isfinite(total_loss)) {
        diagnostic_checkpoint();
        throw Error(ErrorKind::NonFiniteLoss, "non-finite loss at iteration " + std::to_string(iter));
    }

    auto grads = convex_backward(model.convexes, view.camera, pctx, ctx, loss.grad);

    for (std::size_t i = 0; i < model.convexes.size(); ++i) {
        stats.degenerate_count[i] += ctx.degenerate[i];
        stats.max_contribution[i] = std::max(stats.max_contribution[i], ctx.max_contribution[i]);
        double n = grads.primitives[i].mean2.norm();
        if (n > 0.0) {
            stats.grad_norm_sum[i] +=
                Vec2(grads.primitives[i].mean2.x() * 2.0 / view.camera.width,
                     grads.primitives[i].mean2.y() * 2.0 / view.camera.height)
                    .norm();
            stats.grad_count[i] += 1;
        }
    }
    stats.intervals += 1;

    ++adam_t;
    double bc1 = 1.0 - std::pow(kBeta1, static_cast<double>(adam_t));
    double bc2 = 1.0 - std::pow(kBeta2, static_cast<double>(adam_t));
    int k = model.convexes.k;
    int d_code = model.has_appearance() ? cfg.d_prim : 0;
    double sparsity_scale = cfg.opacity_sparsity / std::max<std::size_t>(1, model.convexes.size());
    std::vector<double> flat(prim_stride);
    for (std::size_t i = 0; i < model.convexes.size(); ++i) {
        auto& c = model.convexes.primitives[i];
        flatten_convex_grad(grads.primitives[i], flat.data(), k, d_code);
        double op = c.opacity();
        flat[3 * k + 2] += sparsity_scale * op * (1.0 - op);

        double* m = &prim_m[i * prim_stride];
        double* v = &prim_v[i * prim_stride];
        int idx = 0;
        for (int j = 0; j < k; ++j)
            for (int a = 0; a < 3; ++a, ++idx)
                adam_scalar(c.points[j][a], flat[idx], m[idx], v[idx], lr_per_scalar[idx], bc1, bc2);
        adam_scalar(c.smoothness_delta, flat[idx], m[idx], v[idx], lr_per_scalar[idx], bc1, bc2);
        ++idx;
        adam_scalar(c.sharpness_sigma, flat[idx], m[idx], v[idx], lr_per_scalar[idx], bc1, bc2);
        ++idx;
        adam_scalar(c.opacity_logit, flat[idx], m[idx], v[idx], lr_per_scalar[idx], bc1, bc2);
        ++idx;
        for (int a = 0; a < 3; ++a, ++idx)
            adam_scalar(c.base_color[a], flat[idx], m[idx], v[idx], lr_per_scalar[idx], bc1, bc2);
        for (int j = 0; j < d_code; ++j, ++idx)
            adam_scalar(c.appearance_code[j], flat[idx], m[idx], v[idx], lr_per_scalar[idx], bc1, bc2);

        c.smoothness_delta = std::clamp(c.smoothness_delta, 1e-4, 1e4);
        c.sharpness_sigma = std::clamp(c.sharpness_sigma, 1e-4, 1e4);
        c.opacity_logit = std::clamp(c.opacity_logit, -14.0, 14.0);
        c.base_color = c.base_color.cwiseMax(0.0).cwiseMin(1.0);
    }

    if (active) update_appearance(view.id, grads.head_grad, grads.embedding_grad, bc1, bc2);

    int step = iter + 1;
    if (iter >= cfg.prune_interval && step % cfg.prune_interval == 0 && stats.intervals > 0) {
        ConvexPruneResult r = prune_convexes(model.convexes, stats, cfg.convex_prune);
        model.convexes = std::move(r.scene);
        remap_prim_moments(r.parent, {});
        stats.intervals = 0; // fresh interval
    }
    return {total_loss, static_cast<int64_t>(model.convexes.size())};
}

StepMetrics Trainer::Impl::step_kplanes(int iter) {
    const DatasetView& view = pick_view();
    bool active = wild_active(iter);
    if (active) model.wild_active = true;

    std::vector<double> zero_emb(model.field.cfg.d_img, 0.0);
    const double* emb = zero_emb.empty() ? nullptr : zero_emb.data();
    if (active) emb = model.appearance.at(view.id).v.data();

    // Sampled pixel batch from one view.
    Rng ray_rng = strat_base.fork("rays");
    uint64_t iter_salt = static_cast<uint64_t>(iter) * 0x9e3779b97f4a7c15ull;
    int n_rays = cfg.kplanes_rays;
    std::vector<Ray> rays(n_rays);
    std::vector<Vec3> gt(n_rays);
    std::vector<std::pair<int, int>> pix(n_rays);
    {
        Rng r(ray_rng.next_u64() ^ iter_salt);
        for (int i = 0; i < n_rays; ++i) {
            int x = static_cast<int>(r.uniform_index(view.camera.width));
            int y = static_cast<int>(r.uniform_index(view.camera.height));
            pix[i] = {x, y};
            gt[i] = Vec3(view.image.at(x, y, 0), view.image.at(x, y, 1), view.image.at(x, y, 2));
        }
    }

    SamplingConfig scfg = model.sampling;
    scfg.stratified = true;
    std::vector<RaySampleBatch> samples(n_rays);
    std::vector<Vec3> pred(n_rays);
    parallel_for(static_cast<std::size_t>(n_rays), [&](std::size_t i) {
        rays[i] = ray_for_pixel(view.camera, pix[i].first + 0.5, pix[i].second + 0.5);
        Rng jitter(0x5851f42d4c957f2dull ^ iter_salt ^ (static_cast<uint64_t>(i) * 0x2545f4914f6cdd1dull) ^ cfg.seed);
        RayRender r = render_ray(model.field, rays[i], scfg, emb, &jitter, &samples[i]);
        pred[i] = r.rgb;
    }, cfg.threads);

    // L1 over the sampled pixels (the D-SSIM term needs full images and is
    // skipped for ray batches).
    double l1 = 0.0;
    std::vector<RayUpstream> upstream(n_rays);
    double inv_n = 1.0 / (3.0 * n_rays);
    for (int i = 0; i < n_rays; ++i) {
        for (int c = 0; c < 3; ++c) {
            double d = pred[i][c] - gt[i][c];
            l1 += std::abs(d);
            upstream[i].rgb[c] = (d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0)) * inv_n;
        }
    }
    l1 *= inv_n;

    KPlanesGrads grads;
    grads.resize_like(model.field);
    double tv = cfg.tv_weight > 0.0 ? kplanes_tv_loss(model.field, cfg.tv_weight, &grads) : 0.0;
    double total_loss = l1 + tv;
    if (!std::isfinite(total_loss)) {
        diagnostic_checkpoint();
        throw Error(ErrorKind::NonFiniteLoss, "non-finite loss at iteration " + std::to_string(iter));
    }

    render_rays_backward(model.field, rays, samples, scfg, emb, upstream, grads);

    ++adam_t;
    double bc1 = 1.0 - std::pow(kBeta1, static_cast<double>(adam_t));
    double bc2 = 1.0 - std::pow(kBeta2, static_cast<double>(adam_t));
    KPlanesField& f = model.field;
    for (std::size_t r = 0; r < f.planes.size(); ++r)
        for (int p = 0; p < 3; ++p)
            adam_block(f.planes[r][p], grads.planes[r][p], plane_mom[r][p], cfg.lr.planes, bc1, bc2);
    adam_block(f.w1, grads.w1, kw1, cfg.lr.mlp, bc1, bc2);
    adam_block(f.b1, grads.b1, kb1, cfg.lr.mlp, bc1, bc2);
    adam_block(f.w2, grads.w2, kw2, cfg.lr.mlp, bc1, bc2);
    adam_block(f.b2, grads.b2, kb2, cfg.lr.mlp, bc1, bc2);
    adam_block(f.w_sigma, grads.w_sigma, kws, cfg.lr.mlp, bc1, bc2);
    adam_block(f.b_sigma, grads.b_sigma, kbs, cfg.lr.mlp, bc1, bc2);
    adam_block(f.w_color, grads.w_color, kwc, cfg.lr.mlp, bc1, bc2);
    adam_block(f.b_color, grads.b_color, kbc, cfg.lr.mlp, bc1, bc2);
    if (active) {
        adam_block(f.w_emb, grads.w_emb, kwe, cfg.lr.mlp, bc1, bc2);
        AppearanceEmbedding& e = model.appearance.at(view.id);
        Moments& mom = emb_moments[view.id];
        mom.ensure(e.v.size());
        for (std::size_t i = 0; i < e.v.size(); ++i)
            adam_scalar(e.v[i], grads.embedding[i], mom.m[i], mom.v[i], cfg.lr.embedding, bc1, bc2);
        e.clamp_norm();
    }
    return {total_loss, 0};
}

double Trainer::Impl::eval_psnr() {
    if (test_views.empty()) return 0.0;
    double acc = 0.0;
    for (const auto* v : test_views) {
        RenderOutput out = model.render(v->camera, nullptr);
        acc += psnr(out.color, v->image);
    }
    return acc / static_cast<double>(test_views.size());
}

void Trainer::Impl::diagnostic_checkpoint() {
    if (run_dir.empty()) return;
    fs::create_directories(fs::path(run_dir) / "checkpoints");
    save_model(model, (fs::path(run_dir) / "checkpoints" / "diagnostic").string());
}

Trainer::Trainer(Backend backend, const Dataset& dataset, const TrainConfig& cfg)
    : impl_(std::make_unique<Impl>()) {
    impl_->backend = backend;
    impl_->cfg = cfg;
    impl_->init(dataset);
}

Trainer::~Trainer() = default;

StepMetrics Trainer::train_step(int iter) {
    switch (impl_->backend) {
    case Backend::Gaussian: return impl_->step_gaussian(iter);
    case Backend::Convex: return impl_->step_convex(iter);
    case Backend::KPlanes: return impl_->step_kplanes(iter);
    }
    throw Error(ErrorKind::ConfigError, "invalid backend");
}

Model& Trainer::model() { return impl_->model; }
const Model& Trainer::model() const { return impl_->model; }
const TrainConfig& Trainer::config() const { return impl_->cfg; }
double Trainer::held_out_psnr() const { return impl_->eval_psnr(); }

RunLog Trainer::run(const std::string& run_dir) {
    impl_->run_dir = run_dir;
    if (!run_dir.empty()) fs::create_directories(fs::path(run_dir) / "checkpoints");

    RunLog log;
    auto start = std::chrono::steady_clock::now();
    const int total = impl_->cfg.total_iters;
    const int half = total / 2;
    double last_loss = 0.0;
    for (int iter = 0; iter < total; ++iter) {
        StepMetrics sm = train_step(iter);
        last_loss = sm.loss;
        int step = iter + 1;
        bool log_now = step % impl_->cfg.eval_every == 0 || step == half || step == total;
        if (log_now) {
            RunLogRow row;
            row.iter = step;
            row.loss = sm.loss;
            row.psnr = impl_->eval_psnr();
            row.n_primitives = impl_->model.primitive_count().value_or(0);
            row.n_parameters = impl_->model.parameter_count();
            row.seconds =
                std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
            log.rows.push_back(row);
        }
        if (!run_dir.empty() &&
            (step % impl_->cfg.checkpoint_every == 0 || step == half || step == total)) {
            char name[32];
            std::snprintf(name, sizeof(name), "iter_%06d", step);
            save_model(impl_->model, (fs::path(run_dir) / "checkpoints" / name).string());
        }
    }
    (void)last_loss;
    if (!run_dir.empty()) {
        save_model(impl_->model, (fs::path(run_dir) / "checkpoints" / "final").string());
        log.save_csv((fs::path(run_dir) / "runlog.csv").string());
    }
    return log;
}

std::pair<Model, RunLog> run_schedule(Backend backend, const Dataset& dataset,
                                      const TrainConfig& cfg, const std::string& run_dir) {
    Trainer trainer(backend, dataset, cfg);
    RunLog log = trainer.run(run_dir);
    return {std::move(trainer.model()), std::move(log)};
}

void RunLog::save_csv(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw Error(ErrorKind::DataError, "cannot write " + path);
    out << "iter,loss,psnr,n_primitives,n_parameters,seconds\n";
    char buf[256];
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof(buf), "%lld,%.12g,%.12g,%lld,%lld,%.3f\n",
                      static_cast<long long>(r.iter), r.loss, r.psnr,
                      static_cast<long long>(r.n_primitives),
                      static_cast<long long>(r.n_parameters), r.seconds);
        out << buf;
    }
}

namespace {

json lr_to_json(const LearningRates& lr) {
    return {{"position", lr.position}, {"primitive", lr.primitive}, {"opacity", lr.opacity},
            {"planes", lr.planes},     {"mlp", lr.mlp},             {"embedding", lr.embedding}};
}

void lr_from_json(const json& j, LearningRates& lr) {
    lr.position = j.value("position", lr.position);
    lr.primitive = j.value("primitive", lr.primitive);
    lr.opacity = j.value("opacity", lr.opacity);
    lr.planes = j.value("planes", lr.planes);
    lr.mlp = j.value("mlp", lr.mlp);
    lr.embedding = j.value("embedding", lr.embedding);
}

} // namespace

std::string train_config_to_json(const TrainConfig& cfg) {
    json j;
    j["total_iters"] = cfg.total_iters;
    j["loss_lambda"] = cfg.loss_lambda;
    j["mode"] = to_string(cfg.mode);
    j["switch_iter"] = cfg.switch_iter;
    j["seed"] = cfg.seed;
    j["eval_every"] = cfg.eval_every;
    j["checkpoint_every"] = cfg.checkpoint_every;
    j["threads"] = cfg.threads;
    j["lr"] = lr_to_json(cfg.lr);
    j["densify"] = {{"interval", cfg.densify_interval},
                    {"until_frac", cfg.densify_until_frac},
                    {"opacity_reset_interval", cfg.opacity_reset_interval},
                    {"grad_threshold", cfg.densify.grad_threshold},
                    {"prune_opacity", cfg.densify.prune_opacity},
                    {"clone_scale_frac", cfg.densify.clone_scale_frac},
                    {"split_scale_shrink", cfg.densify.split_scale_shrink},
                    {"huge_screen_frac", cfg.densify.huge_screen_frac},
                    {"max_primitives", cfg.densify.max_primitives}};
    j["convex"] = {{"n_init", cfg.convex_init},
                   {"k", cfg.convex_k},
                   {"prune_interval", cfg.prune_interval},
                   {"prune_opacity", cfg.convex_prune.prune_opacity},
                   {"prune_contribution", cfg.convex_prune.prune_contribution}};
    j["gaussian"] = {{"n_init", cfg.gaussian_init}};
    j["kplanes"] = {{"resolutions", cfg.kplanes.resolutions},
                    {"features", cfg.kplanes.features},
                    {"hidden", cfg.kplanes.hidden},
                    {"multiply_planes", cfg.kplanes.multiply_planes},
                    {"samples_per_ray", cfg.kplanes_samples},
                    {"rays_per_batch", cfg.kplanes_rays}};
    j["appearance"] = {{"d_img", cfg.d_img}, {"d_prim", cfg.d_prim}, {"head_hidden", cfg.head_hidden}};
    j["regularizers"] = {{"tv_weight", cfg.tv_weight}, {"opacity_sparsity", cfg.opacity_sparsity}};
    j["background"] = {cfg.background.x(), cfg.background.y(), cfg.background.z()};
    return j.dump(2);
}

TrainConfig train_config_from_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorKind::ConfigError, "cannot open config " + path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw Error(ErrorKind::ConfigError, std::string("bad config JSON: ") + e.what());
    }
    TrainConfig cfg;
    cfg.total_iters = j.value("total_iters", cfg.total_iters);
    cfg.loss_lambda = j.value("loss_lambda", cfg.loss_lambda);
    if (j.contains("mode")) cfg.mode = mode_from_string(j["mode"]);
    cfg.switch_iter = j.value("switch_iter", cfg.switch_iter);
    cfg.seed = j.value("seed", cfg.seed);
    cfg.eval_every = j.value("eval_every", cfg.eval_every);
    cfg.checkpoint_every = j.value("checkpoint_every", cfg.checkpoint_every);
    cfg.threads = j.value("threads", cfg.threads);
    if (j.contains("lr")) lr_from_json(j["lr"], cfg.lr);
    if (j.contains("densify")) {
        const json& d = j["densify"];
        cfg.densify_interval = d.value("interval", cfg.densify_interval);
        cfg.densify_until_frac = d.value("until_frac", cfg.densify_until_frac);
        cfg.opacity_reset_interval = d.value("opacity_reset_interval", cfg.opacity_reset_interval);
        cfg.densify.grad_threshold = d.value("grad_threshold", cfg.densify.grad_threshold);
        cfg.densify.prune_opacity = d.value("prune_opacity", cfg.densify.prune_opacity);
        cfg.densify.clone_scale_frac = d.value("clone_scale_frac", cfg.densify.clone_scale_frac);
        cfg.densify.split_scale_shrink =
            d.value("split_scale_shrink", cfg.densify.split_scale_shrink);
        cfg.densify.huge_screen_frac = d.value("huge_screen_frac", cfg.densify.huge_screen_frac);
        cfg.densify.max_primitives = d.value("max_primitives", cfg.densify.max_primitives);
    }
    if (j.contains("convex")) {
        const json& c = j["convex"];
        cfg.convex_init = c.value("n_init", cfg.convex_init);
        cfg.convex_k = c.value("k", cfg.convex_k);
        cfg.prune_interval = c.value("prune_interval", cfg.prune_interval);
        cfg.convex_prune.prune_opacity = c.value("prune_opacity", cfg.convex_prune.prune_opacity);
        cfg.convex_prune.prune_contribution =
            c.value("prune_contribution", cfg.convex_prune.prune_contribution);
    }
    if (j.contains("gaussian")) cfg.gaussian_init = j["gaussian"].value("n_init", cfg.gaussian_init);
    if (j.contains("kplanes")) {
        const json& k = j["kplanes"];
        if (k.contains("resolutions"))
            cfg.kplanes.resolutions = k["resolutions"].get<std::vector<int>>();
        cfg.kplanes.features = k.value("features", cfg.kplanes.features);
        cfg.kplanes.hidden = k.value("hidden", cfg.kplanes.hidden);
        cfg.kplanes.multiply_planes = k.value("multiply_planes", cfg.kplanes.multiply_planes);
        cfg.kplanes_samples = k.value("samples_per_ray", cfg.kplanes_samples);
        cfg.kplanes_rays = k.value("rays_per_batch", cfg.kplanes_rays);
    }
    if (j.contains("appearance")) {
        const json& a = j["appearance"];
        cfg.d_img = a.value("d_img", cfg.d_img);
        cfg.d_prim = a.value("d_prim", cfg.d_prim);
        cfg.head_hidden = a.value("head_hidden", cfg.head_hidden);
    }
    if (j.contains("regularizers")) {
        cfg.tv_weight = j["regularizers"].value("tv_weight", cfg.tv_weight);
        cfg.opacity_sparsity = j["regularizers"].value("opacity_sparsity", cfg.opacity_sparsity);
    }
    if (j.contains("background")) {
        const json& b = j["background"];
        cfg.background = Vec3(b.at(0), b.at(1), b.at(2));
    }
    return cfg;
}

} // namespace splatlab
