#pragma once

#include <optional>
#include <string>

#include "splatlab/appearance.hpp"
#include "splatlab/convex_splat.hpp"
#include "splatlab/gaussian_splat.hpp"
#include "splatlab/kplanes.hpp"

namespace splatlab {

enum class Backend { Gaussian, Convex, KPlanes };
enum class TrainMode { Vanilla, Wild, Hybrid };

std::string to_string(Backend b);
std::string to_string(TrainMode m);
Backend backend_from_string(const std::string& s);
TrainMode mode_from_string(const std::string& s);

// A trained (or training) scene representation plus its optional appearance
// state. Exactly one of the three scene members is meaningful, per `backend`.
struct Model {
    Backend backend = Backend::Gaussian;
    TrainMode mode = TrainMode::Vanilla;
    bool wild_active = false; // hybrid: false until the switch iteration

    GaussianScene gaussians;
    ConvexScene convexes;
    KPlanesField field;
    AppearanceTable appearance;

    RasterizeConfig raster;
    SamplingConfig sampling;

    bool has_appearance() const { return mode != TrainMode::Vanilla; }

    // Renders through the appearance head when the model has one. A null
    // embedding renders with the all-zero embedding.
    RenderOutput render(const Camera& camera, const AppearanceEmbedding* embedding = nullptr) const;

    // Learned parameters per the evaluation protocol: appearance table and
    // per-primitive codes excluded.
    int64_t parameter_count() const;
    std::optional<int64_t> primitive_count() const;
};

// Model checkpoint on disk: <prefix>.model.json + <prefix>.scene.bin and,
// for wild models, the sidecar <prefix>.appearance.bin.
void save_model(const Model& model, const std::string& prefix);
Model load_model(const std::string& prefix);

} // namespace splatlab
