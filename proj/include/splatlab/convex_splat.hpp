#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "splatlab/appearance.hpp"
#include "splatlab/camera.hpp"
#include "splatlab/gaussian_splat.hpp" // RasterizeConfig, GradStats, DensifyConfig
#include "splatlab/image.hpp"
#include "splatlab/rng.hpp"

namespace splatlab {

struct ConvexPrimitive {
    std::vector<Vec3> points;        // K points, meters
    double smoothness_delta = 1.0;   // log-sum-exp temperature, pixels
    double sharpness_sigma = 1.0;    // sigmoid steepness, 1/pixels
    double opacity_logit = 0.0;
    Vec3 base_color = Vec3::Zero();
    std::vector<double> appearance_code;

    double opacity() const { return 1.0 / (1.0 + std::exp(-opacity_logit)); }
};

struct ConvexScene {
    std::vector<ConvexPrimitive> primitives;
    double scene_extent = 1.0;
    int k = 6;

    std::size_t size() const { return primitives.size(); }
};

ConvexScene init_convex_scene(int n, int k, const Vec3& aabb_min, const Vec3& aabb_max,
                              int d_code, Rng& rng);

// Projected 2D footprint: a strictly convex polygon in pixel coordinates.
struct Hull2D {
    std::vector<Vec2> vertices;      // consistently wound, >= 3
    std::vector<int> point_index;    // source 3D point per vertex
    double depth = 0.0;              // mean camera depth of all K points
};

enum class ConvexProjectStatus { Ok, Culled, Degenerate };

struct ConvexProjection {
    ConvexProjectStatus status = ConvexProjectStatus::Culled;
    Hull2D hull;
};

// Convex hull of the projected points (monotone chain, collinear dropped).
ConvexProjection project_convex(const Camera& camera, const ConvexPrimitive& c);

// Smoothed-hull opacity: signed distance is a log-sum-exp over per-edge
// distances (temperature delta, positive outside), pushed through a sigmoid
// of steepness sigma and scaled by opacity.
double convex_alpha_at(const Hull2D& hull, const Vec2& pixel, double delta, double sigma,
                       double opacity);

struct ConvexForwardContext {
    bool valid = false;
    int width = 0, height = 0;
    int tile_size = 16, tiles_x = 0, tiles_y = 0;
    RasterizeConfig cfg;
    bool wild = false;

    struct Prepared {
        int prim_index;
        Hull2D hull;
        Vec3 color;
        double opacity;
        int x0, x1, y0, y1; // bbox of the offset polygon, clipped
    };
    std::vector<Prepared> visible;
    std::vector<std::vector<int>> tile_splats;
    std::vector<uint8_t> degenerate;  // per primitive, this view
    ImageBuffer out_alpha;
    ImageBuffer out_depth_num;
    // Peak per-primitive compositing weight this view, for pruning stats.
    std::vector<double> max_contribution;
};

RenderOutput rasterize_convexes(const ConvexScene& scene, const Camera& camera,
                                const AppearanceContext* appearance = nullptr,
                                const RasterizeConfig& cfg = {},
                                ConvexForwardContext* ctx = nullptr);

struct ConvexGrad {
    std::vector<Vec3> points;
    double smoothness_delta = 0.0;
    double sharpness_sigma = 0.0;
    double opacity_logit = 0.0;
    Vec3 base_color = Vec3::Zero();
    std::vector<double> appearance_code;
    Vec2 mean2 = Vec2::Zero(); // aggregated screen-space gradient (densify stats)
};

struct ConvexBackwardResult {
    std::vector<ConvexGrad> primitives;
    std::vector<double> embedding_grad;
    AppearanceHeadGrad head_grad;
};

ConvexBackwardResult convex_backward(const ConvexScene& scene, const Camera& camera,
                                     const AppearanceContext* appearance,
                                     const ConvexForwardContext& ctx,
                                     const ImageBuffer& grad_color,
                                     const ImageBuffer* grad_depth = nullptr,
                                     const ImageBuffer* grad_alpha = nullptr);

struct ConvexPruneConfig {
    double prune_opacity = 5e-3;
    double prune_contribution = 1e-3; // max per-view compositing weight
    int degenerate_views = 0;         // prune when degenerate in > this many views
                                      // and never valid (see prune_convexes)
};

struct ConvexPruneResult {
    ConvexScene scene;
    std::vector<int> parent;
};

// Removes transparent primitives, primitives degenerate in every view of the
// interval, and primitives whose peak compositing contribution stayed below
// threshold. Throws EmptySceneAfterPrune when nothing survives.
ConvexPruneResult prune_convexes(const ConvexScene& scene, const GradStats& stats,
                                 const ConvexPruneConfig& cfg);

inline int convex_params_per_primitive(int k) { return 3 * k + 6; }

} // namespace splatlab
