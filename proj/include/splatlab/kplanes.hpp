#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "splatlab/camera.hpp"
#include "splatlab/image.hpp"
#include "splatlab/rng.hpp"

namespace splatlab {

struct KPlanesConfig {
    std::vector<int> resolutions = {32, 64, 128};
    int features = 16; // per plane
    int hidden = 64;   // two hidden layers
    int d_img = 0;     // appearance embedding dim, 0 = vanilla
    // Fusion of the three plane features. Mean follows this pipeline's
    // definition; the product mode matches the original K-Planes fusion and
    // is kept behind a flag for comparison.
    bool multiply_planes = false;
};

// Tri-plane feature grids at multiple resolutions plus the MLP decoder.
// Decoder: feature -> hidden -> hidden -> {softplus density, sigmoid rgb};
// the image embedding feeds the color output only, through a zero-initialized
// branch, so an all-zero embedding reproduces the vanilla decoder exactly.
struct KPlanesField {
    KPlanesConfig cfg;
    Vec3 aabb_min = Vec3::Constant(-1.0);
    Vec3 aabb_max = Vec3::Constant(1.0);

    // planes[r][p]: p in {XY, XZ, YZ}, row-major res x res x features
    std::vector<std::array<std::vector<double>, 3>> planes;

    std::vector<double> w1, b1;           // hidden x feature_dim
    std::vector<double> w2, b2;           // hidden x hidden
    std::vector<double> w_sigma, b_sigma; // 1 x hidden
    std::vector<double> w_color, b_color; // 3 x hidden
    std::vector<double> w_emb;            // 3 x d_img, zero-initialized

    int feature_dim() const {
        return cfg.features * static_cast<int>(cfg.resolutions.size());
    }
    int64_t parameter_count() const;

    static KPlanesField init(const KPlanesConfig& cfg, const Vec3& aabb_min,
                             const Vec3& aabb_max, Rng& rng);
};

// Bilinear interpolation on each plane at the projected 2D coordinates,
// fused across planes, concatenated across resolutions. Points outside the
// aabb are clamped to the boundary.
void sample_features(const KPlanesField& field, const Vec3& p, double* out);

struct DecodeScratch {
    std::vector<double> feat, z1, h1, z2, h2;
    double zs = 0.0;
    Vec3 zc = Vec3::Zero();
};

// (rgb, sigma) from a feature vector; embedding may be nullptr when d_img=0.
void decode(const KPlanesField& field, const double* feature, const double* embedding,
            Vec3& rgb, double& sigma, DecodeScratch* scratch = nullptr);

struct SamplingConfig {
    int n_samples = 96;
    double near = 0.05, far = 100.0;
    bool stratified = false;
    Vec3 background = Vec3::Zero();
    double alpha_bg_eps = 1e-3;
    int threads = 0;
};

struct RayRender {
    Vec3 rgb = Vec3::Zero();
    double depth = 0.0;         // expected distance along the ray
    double transmittance = 1.0; // final T
};

// Sample positions of one rendered ray, kept so backward can replay the
// stratified jitter exactly.
struct RaySampleBatch {
    bool hit = false;
    std::vector<double> ts;     // strictly increasing within (near, far)
    std::vector<double> deltas; // > 0
};

RayRender render_ray(const KPlanesField& field, const Ray& ray, const SamplingConfig& cfg,
                     const double* embedding = nullptr, Rng* rng = nullptr,
                     RaySampleBatch* samples = nullptr);

RenderOutput render_kplanes_image(const KPlanesField& field, const Camera& camera,
                                  const SamplingConfig& cfg, const double* embedding = nullptr);

struct KPlanesGrads {
    std::vector<std::array<std::vector<double>, 3>> planes;
    std::vector<double> w1, b1, w2, b2, w_sigma, b_sigma, w_color, b_color, w_emb;
    std::vector<double> embedding;

    void resize_like(const KPlanesField& field);
    void add(const KPlanesGrads& other);
};

struct RayUpstream {
    Vec3 rgb = Vec3::Zero();
    double depth = 0.0;
    double transmittance = 0.0;
};

// Analytic gradients for a batch of rays, accumulated into `grads` (which
// must be resize_like'd). Deterministic for any worker count: rays are
// processed in fixed chunks merged in order.
void render_rays_backward(const KPlanesField& field, const std::vector<Ray>& rays,
                          const std::vector<RaySampleBatch>& samples,
                          const SamplingConfig& cfg, const double* embedding,
                          const std::vector<RayUpstream>& upstream, KPlanesGrads& grads);

// Total-variation regularizer over all planes: mean squared difference of
// adjacent grid features, averaged over planes. Gradient accumulates.
double kplanes_tv_loss(const KPlanesField& field, double weight, KPlanesGrads* grads);

} // namespace splatlab
