#pragma once

#include <optional>
#include <string>
#include <vector>

#include "splatlab/camera.hpp"
#include "splatlab/image.hpp"

namespace splatlab {

struct ViewLight {
    Vec3 direction = Vec3(0, 0, -1); // unit, surface-to-light, world frame
    double brightness = 1.0;
};

struct DatasetView {
    std::string id;
    Camera camera;
    ImageBuffer image;                    // 3-channel color
    std::optional<ImageBuffer> mask;      // 1-channel binary
    std::optional<ImageBuffer> gt_depth;  // 1-channel, meters, far-filled
    std::optional<ViewLight> light;       // synthetic metadata
};

struct Dataset {
    std::vector<DatasetView> views;
    std::vector<std::string> train_ids;
    std::vector<std::string> test_ids;

    const DatasetView& view(const std::string& id) const;
    std::vector<const DatasetView*> split(const std::vector<std::string>& ids) const;
    std::vector<const DatasetView*> train_views() const { return split(train_ids); }
    std::vector<const DatasetView*> test_views() const { return split(test_ids); }

    // World-space bounds the object is known to fit in (from the manifest).
    Vec3 aabb_min = Vec3::Constant(-1.0);
    Vec3 aabb_max = Vec3::Constant(1.0);
};

// Canonical on-disk layout:
//   manifest.json  version, shared intrinsics, per-view pose (unit quaternion
//                  wxyz + translation, world-to-camera), split lists, optional
//                  per-view light metadata, scene aabb
//   images/<id>.png, masks/<id>.png, depth/<id>.pfm
void save_dataset(const Dataset& ds, const std::string& dir);
Dataset load_dataset(const std::string& dir);

enum class IlluminationMode { Fixed, PerViewDirectional };

struct ToySceneConfig {
    int n_train = 20;
    int n_test = 5;
    int image_size = 96;

    // Box-with-panels solid: body box, two solar panel slabs along +-x, an
    // antenna cylinder along +z. Half-extents in meters.
    Vec3 body_half = Vec3(0.4, 0.4, 0.3);
    Vec3 panel_half = Vec3(0.55, 0.35, 0.02); // per panel, offset outward in x
    double panel_gap = 0.15;                  // distance from body to panel
    double antenna_radius = 0.05;
    double antenna_length = 0.55;

    double cam_dist_min = 3.2;
    double cam_dist_max = 4.8;
    double focal = 110.0; // pixels, for the default 96px image

    IlluminationMode illumination = IlluminationMode::Fixed;
    double light_jitter = 0.0;     // radians, PerViewDirectional only
    double brightness_min = 1.0;   // per-view multiplier range, subset of (0,2)
    double brightness_max = 1.0;
    double ambient = 0.18;

    uint64_t seed = 0;

    void validate() const;
};

// Deterministic analytic ray-traced renders of the primitive solid with exact
// ground-truth masks and depths. Views cover the full sphere.
Dataset generate_toy_scene(const ToySceneConfig& cfg);

// External pose-label adapter. The mapping JSON names the fields of the
// foreign per-image pose file and must state conventions explicitly.
Dataset convert_external(const std::string& manifest_path, const std::string& mapping_path,
                         int downscale_factor = 1);

} // namespace splatlab
