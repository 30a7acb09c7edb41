#include "splatlab/model.hpp"

namespace splatlab {

std::string to_string(Backend b) {
    switch (b) {
    case Backend::Gaussian: return "gs";
    case Backend::Convex: return "cs";
    case Backend::KPlanes: return "kplanes";
    }
    return "gs";
}

std::string to_string(TrainMode m) {
    switch (m) {
    case TrainMode::Vanilla: return "vanilla";
    case TrainMode::Wild: return "wild";
    case TrainMode::Hybrid: return "hybrid";
    }
    return "vanilla";
}

Backend backend_from_string(const std::string& s) {
    if (s == "gs" || s == "gaussian") return Backend::Gaussian;
    if (s == "cs" || s == "convex") return Backend::Convex;
    if (s == "kplanes" || s == "kp") return Backend::KPlanes;
    throw Error(ErrorKind::ConfigError, "unknown backend: " + s);
}

TrainMode mode_from_string(const std::string& s) {
    if (s == "vanilla") return TrainMode::Vanilla;
    if (s == "wild") return TrainMode::Wild;
    if (s == "hybrid") return TrainMode::Hybrid;
    throw Error(ErrorKind::ConfigError, "unknown mode: " + s);
}

RenderOutput Model::render(const Camera& camera, const AppearanceEmbedding* embedding) const {
    std::vector<double> zeros;
    const double* emb = nullptr;
    AppearanceContext actx;
    const AppearanceContext* ctx = nullptr;
    if (has_appearance()) {
        int d = appearance.head.d_img;
        if (embedding) {
            if (embedding->dim() != d)
                throw Error(ErrorKind::DimensionMismatch, "embedding dimension mismatch");
            emb = embedding->v.data();
        } else {
            zeros.assign(d, 0.0);
            emb = zeros.data();
        }
        actx.head = &appearance.head;
        actx.embedding = emb;
        actx.d_img = d;
        ctx = &actx;
    }
    switch (backend) {
    case Backend::Gaussian:
        return rasterize_gaussians(gaussians, camera, ctx, raster);
    case Backend::Convex:
        return rasterize_convexes(convexes, camera, ctx, raster);
    case Backend::KPlanes:
        return render_kplanes_image(field, camera, sampling, emb);
    }
    throw Error(ErrorKind::ConfigError, "invalid backend");
}

int64_t Model::parameter_count() const {
    switch (backend) {
    case Backend::Gaussian:
        return static_cast<int64_t>(gaussians.size()) * kGaussianParamsPerPrimitive;
    case Backend::Convex:
        return static_cast<int64_t>(convexes.size()) * convex_params_per_primitive(convexes.k);
    case Backend::KPlanes:
        return field.parameter_count();
    }
    return 0;
}

std::optional<int64_t> Model::primitive_count() const {
    switch (backend) {
    case Backend::Gaussian:
        return static_cast<int64_t>(gaussians.size());
    case Backend::Convex:
        return static_cast<int64_t>(convexes.size());
    case Backend::KPlanes:
        return std::nullopt;
    }
    return std::nullopt;
}

} // namespace splatlab
