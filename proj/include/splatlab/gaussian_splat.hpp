#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "splatlab/appearance.hpp"
#include "splatlab/camera.hpp"
#include "splatlab/image.hpp"
#include "splatlab/rng.hpp"

namespace splatlab {

struct GaussianPrimitive {
    Vec3 position = Vec3::Zero();       // meters
    Quat rotation;                      // unit quaternion
    Vec3 log_scale = Vec3::Zero();      // log meters per axis
    double opacity_logit = 0.0;         // opacity = sigmoid(opacity_logit)
    Vec3 base_color = Vec3::Zero();     // [0,1]
    std::vector<double> appearance_code; // d_prim values, wild variant only

    double opacity() const { return 1.0 / (1.0 + std::exp(-opacity_logit)); }
};

struct GaussianScene {
    std::vector<GaussianPrimitive> primitives;
    double scene_extent = 1.0; // meters
    int sh_degree = 0;         // fixed flat RGB; kept for checkpoint audits

    std::size_t size() const { return primitives.size(); }
};

// Random-in-bounding-box initialization.
GaussianScene init_gaussian_scene(int n, const Vec3& aabb_min, const Vec3& aabb_max,
                                  int d_code, Rng& rng);

// 2D footprint of one projected Gaussian.
struct Splat2D {
    Vec2 mean2 = Vec2::Zero();  // pixels
    Mat2 cov2 = Mat2::Identity(); // pixels^2, regularized SPD
    double depth = 0.0;         // camera z, meters
    Vec3 color = Vec3::Zero();  // compositing color (appearance already applied)
    double opacity = 0.0;
};

struct RasterizeConfig {
    double cov_floor = 0.3;          // px^2 added to the diagonal
    double alpha_clamp = 0.99;
    double transmittance_min = 1e-4; // early-out threshold
    double alpha_bg_eps = kAlphaBackgroundEps; // below: depth = camera.far
    Vec3 background = Vec3::Zero();
    int tile_size = 16;
    int threads = 0; // 0 = process default
};

// Projects one Gaussian; nullopt when culled (depth outside (near, far) or
// the 99%-mass ellipse misses the image).
std::optional<Splat2D> project_gaussian(const Camera& camera, const GaussianPrimitive& g,
                                        double cov_floor = 0.3);

// Everything the backward pass needs from a forward render.
struct GaussianForwardContext {
    bool valid = false;
    int width = 0, height = 0;
    int tile_size = 16, tiles_x = 0, tiles_y = 0;
    RasterizeConfig cfg;
    bool wild = false;

    struct Prepared {
        int prim_index;
        Splat2D splat;
        Mat2 cov_inv;
        Vec3 cam_point;  // camera-frame center
        int x0, x1, y0, y1; // 6.5-sigma pixel bounds, clipped to the image
    };
    std::vector<Prepared> visible;             // sorted by (depth, prim_index)
    std::vector<std::vector<int>> tile_splats; // indices into visible, per tile
    std::vector<uint16_t> n_contrib;           // per pixel, count composited
    ImageBuffer out_alpha;                     // saved for the depth far-fill branch
    ImageBuffer out_depth_num;                 // sum of d_i * w_i per pixel
};

RenderOutput rasterize_gaussians(const GaussianScene& scene, const Camera& camera,
                                 const AppearanceContext* appearance = nullptr,
                                 const RasterizeConfig& cfg = {},
                                 GaussianForwardContext* ctx = nullptr);

struct GaussianGrad {
    Vec3 position = Vec3::Zero();
    Vec4 rotation = Vec4::Zero(); // (w,x,y,z), tangent to the unit sphere
    Vec3 log_scale = Vec3::Zero();
    double opacity_logit = 0.0;
    Vec3 base_color = Vec3::Zero();
    std::vector<double> appearance_code;
    Vec2 mean2 = Vec2::Zero();    // screen-space gradient, for densify stats
};

struct GaussianBackwardResult {
    std::vector<GaussianGrad> primitives;    // one per scene primitive
    std::vector<double> embedding_grad;      // d_img, wild only
    AppearanceHeadGrad head_grad;            // wild only
};

// Analytic gradients of the render w.r.t. every primitive field and the
// appearance inputs. Throws MissingForwardState without a matching forward.
GaussianBackwardResult gaussian_backward(const GaussianScene& scene, const Camera& camera,
                                         const AppearanceContext* appearance,
                                         const GaussianForwardContext& ctx,
                                         const ImageBuffer& grad_color,
                                         const ImageBuffer* grad_depth = nullptr,
                                         const ImageBuffer* grad_alpha = nullptr);

struct DensifyConfig {
    double grad_threshold = 2e-4;     // mean positional gradient, NDC units
    double prune_opacity = 5e-3;
    double clone_scale_frac = 0.01;   // clone below, split above (of scene_extent)
    double split_scale_shrink = 1.6;
    double huge_screen_frac = 0.35;   // prune above this fraction of image diagonal
    int max_primitives = 100000;
};

// Per-primitive accumulators gathered across an interval of training views.
struct GradStats {
    std::vector<double> grad_norm_sum;       // Sum ||dL/dmean2|| in NDC
    std::vector<int> grad_count;
    std::vector<double> max_screen_radius;   // pixels
    std::vector<double> max_contribution;    // convex pruning
    std::vector<int> degenerate_count;       // convex pruning
    int intervals = 0;

    void resize(std::size_t n);
    void accumulate_view(const std::vector<GaussianGrad>& grads, int img_width, int img_height);
};

struct DensifyResult {
    GaussianScene scene;
    std::vector<int> parent;          // new index -> old index
    std::vector<uint8_t> fresh;       // 1 where optimizer moments must reset
};

// Clone/split primitives with large positional gradients, prune transparent
// or huge ones. Throws EmptySceneAfterPrune when nothing survives.
DensifyResult densify_and_prune(const GaussianScene& scene, const GradStats& stats,
                                const DensifyConfig& cfg, double image_diagonal, Rng& rng);

// Per-primitive learnable parameter count at sh_degree 0 (codes excluded).
inline constexpr int kGaussianParamsPerPrimitive = 14;

} // namespace splatlab
