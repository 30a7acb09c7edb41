#include <doctest.h>

#include "oracles.hpp"
#include "splatlab/kplanes.hpp"

using namespace splatlab;

namespace {

KPlanesField tiny_field(Rng& rng, int res = 4, int features = 2, int hidden = 8, int d_img = 0) {
    KPlanesConfig cfg;
    cfg.resolutions = {res};
    cfg.features = features;
    cfg.hidden = hidden;
    cfg.d_img = d_img;
    return KPlanesField::init(cfg, Vec3::Constant(-1.0), Vec3::Constant(1.0), rng);
}

} // namespace

TEST_CASE("sample_features at grid nodes averages the three stored features") {
    Rng rng(3);
    KPlanesField f = tiny_field(rng, 5, 3);
    // Node (1,2,3) in a 5^3 grid: normalized coords 0.25, 0.5, 0.75.
    Vec3 p(-0.5, 0.0, 0.5);
    std::vector<double> feat(f.feature_dim());
    sample_features(f, p, feat.data());
    int res = 5, fd = 3;
    for (int c = 0; c < fd; ++c) {
        double xy = f.planes[0][0][(2 * res + 1) * fd + c]; // (x=1, y=2)
        double xz = f.planes[0][1][(3 * res + 1) * fd + c]; // (x=1, z=3)
        double yz = f.planes[0][2][(3 * res + 2) * fd + c]; // (y=2, z=3)
        CHECK(feat[c] == doctest::Approx((xy + xz + yz) / 3.0).epsilon(1e-12));
    }
}

TEST_CASE("bilinear midpoint is the four-node average") {
    Rng rng(5);
    KPlanesField f = tiny_field(rng, 4, 1);
    // Midpoint between nodes (0,0),(1,0),(0,1),(1,1) of the XY plane; pick z
    // at a node so the other planes contribute exactly too.
    int res = 4;
    double cell = 2.0 / (res - 1); // world units per grid cell
    Vec3 p(-1.0 + 0.5 * cell, -1.0 + 0.5 * cell, -1.0);
    std::vector<double> feat(1 * 1);
    std::vector<double> expected = test::reference_sample_features(f, p);
    sample_features(f, p, feat.data());
    CHECK(feat[0] == doctest::Approx(expected[0]).epsilon(1e-12));
    double xy_avg = (f.planes[0][0][0] + f.planes[0][0][1] + f.planes[0][0][res] +
                     f.planes[0][0][res + 1]) /
                    4.0;
    // Reconstruct the XY contribution: total = (xy + xz + yz)/3.
    double gx = 0.5 * cell / cell; // frac = 0.5 on both axes
    (void)gx;
    double xz = f.planes[0][1][0] * 0.5 + f.planes[0][1][1] * 0.5;
    double yz = f.planes[0][2][0] * 0.5 + f.planes[0][2][1] * 0.5;
    CHECK(feat[0] == doctest::Approx((xy_avg + xz + yz) / 3.0).epsilon(1e-12));
}

TEST_CASE("interpolation matches an independent direct-formula oracle") {
    Rng rng(7);
    KPlanesField f = tiny_field(rng, 9, 4);
    KPlanesConfig multi_cfg;
    multi_cfg.resolutions = {4, 7};
    multi_cfg.features = 3;
    multi_cfg.hidden = 8;
    KPlanesField f2 = KPlanesField::init(multi_cfg, Vec3(-2, -1, 0), Vec3(1, 2, 3), rng);

    for (int trial = 0; trial < 1000; ++trial) {
        Vec3 p(rng.uniform(-2.5, 2.0), rng.uniform(-1.5, 2.5), rng.uniform(-0.5, 3.5));
        std::vector<double> a(f2.feature_dim());
        sample_features(f2, p, a.data());
        std::vector<double> b = test::reference_sample_features(f2, p);
        for (std::size_t i = 0; i < a.size(); ++i) CHECK(std::abs(a[i] - b[i]) < 1e-6);
    }
    for (int trial = 0; trial < 100; ++trial) {
        Vec3 p(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1));
        std::vector<double> a(f.feature_dim());
        sample_features(f, p, a.data());
        std::vector<double> b = test::reference_sample_features(f, p);
        for (std::size_t i = 0; i < a.size(); ++i) CHECK(std::abs(a[i] - b[i]) < 1e-6);
    }
}

TEST_CASE("decode at zero weights gives 0.5 rgb and softplus(0) density") {
    Rng rng(9);
    KPlanesField f = tiny_field(rng);
    std::fill(f.w1.begin(), f.w1.end(), 0.0);
    std::fill(f.w2.begin(), f.w2.end(), 0.0);
    std::fill(f.w_sigma.begin(), f.w_sigma.end(), 0.0);
    std::fill(f.w_color.begin(), f.w_color.end(), 0.0);
    std::vector<double> feat(f.feature_dim(), 0.3);
    Vec3 rgb;
    double sigma;
    decode(f, feat.data(), nullptr, rgb, sigma);
    CHECK(rgb.x() == doctest::Approx(0.5));
    CHECK(rgb.y() == doctest::Approx(0.5));
    CHECK(rgb.z() == doctest::Approx(0.5));
    CHECK(sigma == doctest::Approx(std::log(2.0)).epsilon(1e-9)); // softplus(0)
}

TEST_CASE("embedding feeds color only: density is exactly embedding-independent") {
    Rng rng(11);
    KPlanesField f = tiny_field(rng, 4, 2, 8, 6);
    // Force a non-trivial embedding branch.
    for (auto& w : f.w_emb) w = rng.uniform(-0.5, 0.5);
    std::vector<double> feat(f.feature_dim());
    sample_features(f, Vec3(0.1, -0.2, 0.4), feat.data());
    std::vector<double> e1(6, 0.0), e2(6);
    for (auto& v : e2) v = rng.uniform(-2, 2);
    Vec3 rgb1, rgb2;
    double s1, s2;
    decode(f, feat.data(), e1.data(), rgb1, s1);
    decode(f, feat.data(), e2.data(), rgb2, s2);
    CHECK(s1 == s2); // bitwise: sigma never sees the embedding
    CHECK((rgb1 - rgb2).norm() > 1e-6);

    // Zero-initialized branch: decode(f, e) == decode(f, 0) at init.
    KPlanesField f0 = tiny_field(rng, 4, 2, 8, 6);
    decode(f0, feat.data(), e1.data(), rgb1, s1);
    decode(f0, feat.data(), e2.data(), rgb2, s2);
    CHECK(rgb1 == rgb2);
}

TEST_CASE("constant density transmittance matches the closed form") {
    Rng rng(13);
    KPlanesField f = tiny_field(rng);
    // All-zero decoder weights except the sigma bias: softplus(b) = 1.
    std::fill(f.w1.begin(), f.w1.end(), 0.0);
    std::fill(f.w2.begin(), f.w2.end(), 0.0);
    std::fill(f.w_sigma.begin(), f.w_sigma.end(), 0.0);
    f.b_sigma[0] = std::log(std::exp(1.0) - 1.0);
    f.aabb_min = Vec3(0, 0, 0);
    f.aabb_max = Vec3(1, 1, 1);

    Ray ray;
    ray.origin = Vec3(0.5, 0.5, -1.0);
    ray.direction = Vec3(0, 0, 1);
    SamplingConfig cfg;
    cfg.n_samples = 256;
    cfg.near = 0.01;
    cfg.far = 50.0;
    RayRender out = render_ray(f, ray, cfg);
    CHECK(std::abs(out.transmittance - std::exp(-1.0)) < 1e-3);
}

TEST_CASE("zero density renders pure background") {
    Rng rng(15);
    KPlanesField f = tiny_field(rng);
    std::fill(f.w1.begin(), f.w1.end(), 0.0);
    std::fill(f.w2.begin(), f.w2.end(), 0.0);
    std::fill(f.w_sigma.begin(), f.w_sigma.end(), 0.0);
    f.b_sigma[0] = -40.0; // softplus(-40) ~ 0
    SamplingConfig cfg;
    cfg.background = Vec3(0.2, 0.4, 0.6);
    cfg.far = 50.0;
    Ray ray;
    ray.origin = Vec3(0, 0, -3);
    ray.direction = Vec3(0, 0, 1);
    RayRender out = render_ray(f, ray, cfg);
    CHECK(out.transmittance == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(out.rgb.x() == doctest::Approx(0.2).epsilon(1e-9));
    CHECK(out.depth == cfg.far);
}

TEST_CASE("an opaque thin slab pins the expected depth") {
    // Density is a hard slab at t in [1.9, 2.1] along the ray, injected via a
    // dense low-resolution plane on the z axis is impractical; instead build
    // it from the analytic quadrature with a custom field: use plane features
    // to gate sigma through w1 = identity-ish would be brittle. The slab is
    // emulated by a field whose density comes from the z coordinate plane at
    // high resolution.
    Rng rng(17);
    KPlanesConfig cfg;
    cfg.resolutions = {65};
    cfg.features = 1;
    cfg.hidden = 4;
    KPlanesField f = KPlanesField::init(cfg, Vec3(-4, -4, 0), Vec3(4, 4, 4), rng);
    // Feature = 3 * plane value on XZ/YZ planes is z-dependent; zero out the
    // XY plane and make XZ/YZ encode a z-window indicator.
    int res = 65;
    auto z_of = [&](int j) { return 4.0 * j / (res - 1); };
    for (int p = 0; p < 3; ++p)
        std::fill(f.planes[0][p].begin(), f.planes[0][p].end(), 0.0);
    for (int j = 0; j < res; ++j)
        for (int i = 0; i < res; ++i) {
            double z = z_of(j);
            double v = (z >= 1.85 && z <= 2.15) ? 1.0 : 0.0;
            f.planes[0][1][j * res + i] = v; // XZ plane, rows indexed by z
            f.planes[0][2][j * res + i] = v; // YZ plane
        }
    // Decoder: sigma = softplus(w1 path)? Simplest: single feature passes
    // through with large gain so the slab saturates.
    std::fill(f.w1.begin(), f.w1.end(), 0.0);
    std::fill(f.b1.begin(), f.b1.end(), 0.0);
    std::fill(f.w2.begin(), f.w2.end(), 0.0);
    std::fill(f.b2.begin(), f.b2.end(), 0.0);
    std::fill(f.w_sigma.begin(), f.w_sigma.end(), 0.0);
    // Plane fusion averages XY (zero) with the two z-planes, so the slab
    // feature is 2/3; the gain must overcome that.
    f.w1[0] = 150.0; // h1_0 = silu(150 * feature) = 100 inside the slab
    f.w2[0] = 1.0;   // h2_0 = silu(h1_0)
    f.w_sigma[0] = 1.0;
    f.b_sigma[0] = -20.0; // sigma ~ 0 outside the slab, ~80 inside

    Ray ray;
    ray.origin = Vec3(0, 0, 0);
    ray.direction = Vec3(0, 0, 1);
    SamplingConfig cfg2;
    cfg2.n_samples = 512;
    cfg2.near = 0.05;
    cfg2.far = 10.0;
    RayRender out = render_ray(f, ray, cfg2);
    double interval = 4.0 / 512;
    CHECK(std::abs(out.depth - 2.0) < 0.3 + interval);
    CHECK(out.transmittance < 1e-6);
}

TEST_CASE("quadrature weights and final transmittance sum to one") {
    Rng rng(19);
    KPlanesField f = tiny_field(rng, 6, 3, 8);
    SamplingConfig cfg;
    cfg.n_samples = 32;
    cfg.far = 20.0;
    for (int trial = 0; trial < 200; ++trial) {
        Ray ray;
        ray.origin = Vec3(rng.uniform(-3, 3), rng.uniform(-3, 3), rng.uniform(-3, 3));
        Vec3 d(rng.normal(), rng.normal(), rng.normal());
        ray.direction = d.normalized();
        // Weight sum is recovered from alpha = 1 - T with zero background.
        RayRender out = render_ray(f, ray, cfg);
        // Σw + T = 1 is algebraic; check through an explicit resampling pass.
        RaySampleBatch samples;
        render_ray(f, ray, cfg, nullptr, nullptr, &samples);
        if (!samples.hit) {
            CHECK(out.transmittance == 1.0);
            continue;
        }
        double t_acc = 1.0, wsum = 0.0;
        for (std::size_t i = 0; i < samples.ts.size(); ++i) {
            std::vector<double> feat(f.feature_dim());
            sample_features(f, ray.at(samples.ts[i]), feat.data());
            Vec3 rgb;
            double sigma;
            decode(f, feat.data(), nullptr, rgb, sigma);
            double a = 1.0 - std::exp(-sigma * samples.deltas[i]);
            wsum += t_acc * a;
            t_acc *= 1.0 - a;
        }
        CHECK(std::abs(wsum + t_acc - 1.0) < 1e-6);
        CHECK(std::abs(t_acc - out.transmittance) < 1e-12);
    }
}

TEST_CASE("field gradients match finite differences on a tiny field") {
    Rng rng(23);
    const double h = 1e-4, rel_tol = 1e-3, abs_floor = 1e-6;
    KPlanesField f = tiny_field(rng, 4, 2, 8, 3);
    for (auto& w : f.w_emb) w = rng.uniform(-0.3, 0.3); // exercise the branch
    std::vector<double> emb = {0.3, -0.2, 0.5};

    SamplingConfig cfg;
    cfg.n_samples = 16;
    cfg.near = 0.05;
    cfg.far = 12.0;
    cfg.background = Vec3(0.1, 0.1, 0.1);

    const int n_rays = 8;
    std::vector<Ray> rays(n_rays);
    Rng ray_rng(29);
    for (auto& ray : rays) {
        ray.origin = Vec3(ray_rng.uniform(-0.5, 0.5), ray_rng.uniform(-0.5, 0.5), -3.0);
        Vec3 target(ray_rng.uniform(-0.8, 0.8), ray_rng.uniform(-0.8, 0.8), 0.5);
        ray.direction = (target - ray.origin).normalized();
    }
    std::vector<Vec3> targets(n_rays);
    for (auto& t : targets) t = Vec3(ray_rng.uniform(), ray_rng.uniform(), ray_rng.uniform());

    std::vector<RaySampleBatch> samples(n_rays);
    auto forward_loss = [&](bool capture) {
        double loss = 0.0;
        for (int i = 0; i < n_rays; ++i) {
            RayRender out =
                render_ray(f, rays[i], cfg, emb.data(), nullptr, capture ? &samples[i] : nullptr);
            loss += (out.rgb - targets[i]).squaredNorm() + 0.1 * out.transmittance;
        }
        return loss;
    };

    double base = forward_loss(true);
    (void)base;
    std::vector<RayUpstream> upstream(n_rays);
    for (int i = 0; i < n_rays; ++i) {
        RayRender out = render_ray(f, rays[i], cfg, emb.data());
        upstream[i].rgb = 2.0 * (out.rgb - targets[i]);
        upstream[i].transmittance = 0.1;
    }
    KPlanesGrads grads;
    grads.resize_like(f);
    render_rays_backward(f, rays, samples, cfg, emb.data(), upstream, grads);

    test::FdReport report;
    auto loss_fn = [&]() { return forward_loss(false); };
    auto check_vec = [&](std::vector<double>& param, const std::vector<double>& g) {
        for (std::size_t i = 0; i < param.size(); ++i)
            test::fd_check_scalar([&] { return param[i]; }, [&](double v) { param[i] = v; },
                                  loss_fn, g[i], h, rel_tol, abs_floor, report);
    };
    for (int p = 0; p < 3; ++p) check_vec(f.planes[0][p], grads.planes[0][p]);
    check_vec(f.w1, grads.w1);
    check_vec(f.b1, grads.b1);
    check_vec(f.w2, grads.w2);
    check_vec(f.b2, grads.b2);
    check_vec(f.w_sigma, grads.w_sigma);
    check_vec(f.b_sigma, grads.b_sigma);
    check_vec(f.w_color, grads.w_color);
    check_vec(f.b_color, grads.b_color);
    check_vec(f.w_emb, grads.w_emb);
    check_vec(emb, grads.embedding);

    INFO("checked ", report.n_checked, " worst rel ", report.worst_rel);
    CHECK(report.n_failed == 0);
}

TEST_CASE("rays missing the aabb produce zero gradients") {
    Rng rng(31);
    KPlanesField f = tiny_field(rng);
    Ray miss;
    miss.origin = Vec3(10, 10, -5);
    miss.direction = Vec3(0, 0, 1);
    SamplingConfig cfg;
    RaySampleBatch samples;
    render_ray(f, miss, cfg, nullptr, nullptr, &samples);
    CHECK_FALSE(samples.hit);

    KPlanesGrads grads;
    grads.resize_like(f);
    RayUpstream up;
    up.rgb = Vec3(1, 1, 1);
    up.transmittance = 1.0;
    render_rays_backward(f, {miss}, {samples}, cfg, nullptr, {up}, grads);
    double total = 0.0;
    for (int p = 0; p < 3; ++p)
        for (double v : grads.planes[0][p]) total += std::abs(v);
    for (double v : grads.w1) total += std::abs(v);
    CHECK(total == 0.0);
}

TEST_CASE("upstream linearity of the ray backward") {
    Rng rng(37);
    KPlanesField f = tiny_field(rng, 4, 2, 8);
    Ray ray;
    ray.origin = Vec3(0.2, -0.1, -3);
    ray.direction = Vec3(0, 0, 1);
    SamplingConfig cfg;
    cfg.n_samples = 8;
    cfg.far = 10.0;
    RaySampleBatch samples;
    render_ray(f, ray, cfg, nullptr, nullptr, &samples);

    RayUpstream u1;
    u1.rgb = Vec3(0.3, -0.2, 0.7);
    u1.depth = 0.4;
    RayUpstream u2;
    u2.rgb = 2.0 * u1.rgb;
    u2.depth = 2.0 * u1.depth;

    KPlanesGrads g1, g2;
    g1.resize_like(f);
    g2.resize_like(f);
    render_rays_backward(f, {ray}, {samples}, cfg, nullptr, {u1}, g1);
    render_rays_backward(f, {ray}, {samples}, cfg, nullptr, {u2}, g2);
    for (std::size_t i = 0; i < g1.w1.size(); ++i)
        CHECK(g2.w1[i] == doctest::Approx(2.0 * g1.w1[i]).epsilon(1e-9));
    for (int p = 0; p < 3; ++p)
        for (std::size_t i = 0; i < g1.planes[0][p].size(); ++i)
            CHECK(g2.planes[0][p][i] == doctest::Approx(2.0 * g1.planes[0][p][i]).epsilon(1e-9));
}

TEST_CASE("total variation of a constant plane is zero, step plane closed form") {
    Rng rng(41);
    KPlanesField f = tiny_field(rng, 8, 1, 4);
    for (int p = 0; p < 3; ++p) std::fill(f.planes[0][p].begin(), f.planes[0][p].end(), 0.7);
    CHECK(kplanes_tv_loss(f, 1.0, nullptr) == 0.0);

    // Unit step along x on the XY plane only: one crossing per row.
    int res = 8;
    for (int j = 0; j < res; ++j)
        for (int i = 0; i < res; ++i) f.planes[0][0][j * res + i] = i < res / 2 ? 0.0 : 1.0;
    double crossings = res;                       // one per row
    double pairs = 2.0 * res * (res - 1);         // horizontal + vertical
    double expected_plane_tv = crossings / pairs; // mean squared difference
    // Three planes averaged; the other two are constant.
    CHECK(kplanes_tv_loss(f, 1.0, nullptr) == doctest::Approx(expected_plane_tv / 3.0));
}

TEST_CASE("doubling the sample count barely changes a smooth field") {
    Rng rng(43);
    KPlanesField f = tiny_field(rng, 6, 3, 8);
    Ray ray;
    ray.origin = Vec3(0.1, 0.2, -3);
    ray.direction = Vec3(0.05, -0.02, 1).normalized();
    SamplingConfig cfg;
    cfg.n_samples = 96;
    cfg.far = 10.0;
    RayRender a = render_ray(f, ray, cfg);
    cfg.n_samples = 192;
    RayRender b = render_ray(f, ray, cfg);
    CHECK((a.rgb - b.rgb).norm() < 1e-2);
}
