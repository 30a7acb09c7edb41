#include <algorithm>
#include <cmath>

#include "splatlab/dataset.hpp"
#include "splatlab/rng.hpp"
#include "splatlab/threading.hpp"

namespace splatlab {

namespace {

struct Hit {
    double t = 1e300;
    Vec3 normal = Vec3::Zero();
    Vec3 albedo = Vec3::Zero();
    bool valid() const { return t < 1e300; }
};

// Axis-aligned box centered at `center` with half extents `half`.
void intersect_box(const Ray& ray, const Vec3& center, const Vec3& half, const Vec3& albedo,
                   Hit& best) {
    double t0 = 1e-6, t1 = best.t;
    int axis0 = -1;
    double sign0 = 0.0;
    for (int a = 0; a < 3; ++a) {
        double inv = 1.0 / ray.direction[a];
        double lo = (center[a] - half[a] - ray.origin[a]) * inv;
        double hi = (center[a] + half[a] - ray.origin[a]) * inv;
        double sgn = -1.0;
        if (lo > hi) {
            std::swap(lo, hi);
            sgn = 1.0;
        }
        if (lo > t0) {
            t0 = lo;
            axis0 = a;
            sign0 = sgn;
        }
        t1 = std::min(t1, hi);
        if (t0 > t1) return;
    }
    if (axis0 < 0) return; // origin inside the box
    best.t = t0;
    best.normal = Vec3::Zero();
    best.normal[axis0] = sign0;
    best.albedo = albedo;
}

// Finite z-aligned cylinder with caps, axis through (0,0).
void intersect_cylinder(const Ray& ray, double z0, double z1, double radius, const Vec3& albedo,
                        Hit& best) {
    const Vec3& o = ray.origin;
    const Vec3& d = ray.direction;
    double a = d.x() * d.x() + d.y() * d.y();
    double b = 2.0 * (o.x() * d.x() + o.y() * d.y());
    double c = o.x() * o.x() + o.y() * o.y() - radius * radius;
    if (a > 1e-12) {
        double disc = b * b - 4 * a * c;
        if (disc >= 0.0) {
            double sq = std::sqrt(disc);
            for (double t : {(-b - sq) / (2 * a), (-b + sq) / (2 * a)}) {
                if (t <= 1e-6 || t >= best.t) continue;
                double z = o.z() + t * d.z();
                if (z < z0 || z > z1) continue;
                Vec3 p = ray.at(t);
                best.t = t;
                best.normal = Vec3(p.x(), p.y(), 0.0).normalized();
                best.albedo = albedo;
                break;
            }
        }
    }
    // End caps.
    for (double zc : {z0, z1}) {
        if (std::abs(d.z()) < 1e-12) continue;
        double t = (zc - o.z()) / d.z();
        if (t <= 1e-6 || t >= best.t) continue;
        Vec3 p = ray.at(t);
        if (p.x() * p.x() + p.y() * p.y() > radius * radius) continue;
        best.t = t;
        best.normal = Vec3(0, 0, zc == z0 ? -1.0 : 1.0);
        best.albedo = albedo;
    }
}

struct ToyObject {
    Vec3 body_half, panel_half;
    double panel_offset_x; // panel center distance from origin
    double antenna_z0, antenna_z1, antenna_radius;

    static constexpr double kBodyAlbedo[3] = {0.75, 0.62, 0.28};
    static constexpr double kPanelAlbedo[3] = {0.16, 0.22, 0.52};
    static constexpr double kAntennaAlbedo[3] = {0.72, 0.72, 0.75};

    explicit ToyObject(const ToySceneConfig& cfg)
        : body_half(cfg.body_half), panel_half(cfg.panel_half),
          panel_offset_x(cfg.body_half.x() + cfg.panel_gap + cfg.panel_half.x()),
          antenna_z0(cfg.body_half.z()), antenna_z1(cfg.body_half.z() + cfg.antenna_length),
          antenna_radius(cfg.antenna_radius) {}

    Hit trace(const Ray& ray) const {
        Hit hit;
        intersect_box(ray, Vec3::Zero(), body_half, Vec3(kBodyAlbedo[0], kBodyAlbedo[1], kBodyAlbedo[2]), hit);
        Vec3 panel_albedo(kPanelAlbedo[0], kPanelAlbedo[1], kPanelAlbedo[2]);
        intersect_box(ray, Vec3(panel_offset_x, 0, 0), panel_half, panel_albedo, hit);
        intersect_box(ray, Vec3(-panel_offset_x, 0, 0), panel_half, panel_albedo, hit);
        intersect_cylinder(ray, antenna_z0, antenna_z1, antenna_radius,
                           Vec3(kAntennaAlbedo[0], kAntennaAlbedo[1], kAntennaAlbedo[2]), hit);
        return hit;
    }

    double bounding_radius() const {
        double r_panel = std::hypot(panel_offset_x + panel_half.x(),
                                    std::hypot(panel_half.y(), panel_half.z()));
        double r_body = body_half.norm();
        return std::max({r_panel, r_body, antenna_z1});
    }
};

// world_to_cam pose looking from `eye` at the origin, +y down convention.
void look_at_origin(const Vec3& eye, Camera& cam) {
    Vec3 forward = (-eye).normalized();
    Vec3 up(0, 0, 1);
    if (std::abs(forward.dot(up)) > 0.999) up = Vec3(0, 1, 0);
    Vec3 right = forward.cross(up).normalized();
    Vec3 down = forward.cross(right).normalized();
    Mat3 r;
    r.row(0) = right;
    r.row(1) = down;
    r.row(2) = forward;
    // Rotation matrix to quaternion (Shepperd's method).
    double tr = r.trace();
    Quat q;
    if (tr > 0.0) {
        double s = std::sqrt(tr + 1.0) * 2.0;
        q.w = 0.25 * s;
        q.x = (r(2, 1) - r(1, 2)) / s;
        q.y = (r(0, 2) - r(2, 0)) / s;
        q.z = (r(1, 0) - r(0, 1)) / s;
    } else if (r(0, 0) > r(1, 1) && r(0, 0) > r(2, 2)) {
        double s = std::sqrt(1.0 + r(0, 0) - r(1, 1) - r(2, 2)) * 2.0;
        q.w = (r(2, 1) - r(1, 2)) / s;
        q.x = 0.25 * s;
        q.y = (r(0, 1) + r(1, 0)) / s;
        q.z = (r(0, 2) + r(2, 0)) / s;
    } else if (r(1, 1) > r(2, 2)) {
        double s = std::sqrt(1.0 + r(1, 1) - r(0, 0) - r(2, 2)) * 2.0;
        q.w = (r(0, 2) - r(2, 0)) / s;
        q.x = (r(0, 1) + r(1, 0)) / s;
        q.y = 0.25 * s;
        q.z = (r(1, 2) + r(2, 1)) / s;
    } else {
        double s = std::sqrt(1.0 + r(2, 2) - r(0, 0) - r(1, 1)) * 2.0;
        q.w = (r(1, 0) - r(0, 1)) / s;
        q.x = (r(0, 2) + r(2, 0)) / s;
        q.y = (r(1, 2) + r(2, 1)) / s;
        q.z = 0.25 * s;
    }
    cam.rotation = q.normalized();
    cam.translation = -(cam.rotation.to_rotation() * eye);
}

Vec3 sphere_point(double u, double v) {
    double z = 2.0 * u - 1.0;
    double r = std::sqrt(std::max(0.0, 1.0 - z * z));
    double phi = 2.0 * M_PI * v;
    return Vec3(r * std::cos(phi), r * std::sin(phi), z);
}

} // namespace

void ToySceneConfig::validate() const {
    if (image_size < 16) throw Error(ErrorKind::ConfigError, "toy image size must be >= 16");
    if (n_train < 1 || n_test < 1)
        throw Error(ErrorKind::ConfigError, "toy scene needs train and test views");
    if (!(brightness_min > 0.0 && brightness_max < 2.0 && brightness_min <= brightness_max))
        throw Error(ErrorKind::ConfigError, "brightness jitter range must lie inside (0, 2)");
    if (!(cam_dist_min > 0.0 && cam_dist_max >= cam_dist_min))
        throw Error(ErrorKind::ConfigError, "camera distance range is invalid");
}

Dataset generate_toy_scene(const ToySceneConfig& cfg) {
    cfg.validate();
    ToyObject object(cfg);

    Dataset ds;
    double radius = object.bounding_radius();
    ds.aabb_min = Vec3::Constant(-radius);
    ds.aabb_max = Vec3::Constant(radius);

    Rng rng(cfg.seed);
    Rng cam_rng = rng.fork("cameras");
    Rng light_rng = rng.fork("lights");

    const Vec3 base_light = Vec3(0.45, -0.65, 0.61).normalized();
    const double golden = M_PI * (3.0 - std::sqrt(5.0));
    const double lattice_shift = cam_rng.uniform();

    int total = cfg.n_train + cfg.n_test;
    ds.views.resize(total);

    struct ViewSpec {
        Vec3 eye;
        ViewLight light;
        std::string id;
    };
    std::vector<ViewSpec> specs(total);
    for (int i = 0; i < total; ++i) {
        ViewSpec& spec = specs[i];
        bool is_train = i < cfg.n_train;
        if (is_train) {
            // Fibonacci lattice for even spherical coverage of the train set.
            double u = (i + 0.5) / cfg.n_train;
            double phi = std::fmod(i * golden / (2.0 * M_PI) + lattice_shift, 1.0);
            spec.eye = sphere_point(u, phi);
        } else {
            spec.eye = sphere_point(cam_rng.uniform(), cam_rng.uniform());
        }
        spec.eye *= cam_rng.uniform(cfg.cam_dist_min, cfg.cam_dist_max);

        spec.light.direction = base_light;
        if (cfg.illumination == IlluminationMode::PerViewDirectional && cfg.light_jitter > 0.0) {
            Vec3 jitter(light_rng.normal(), light_rng.normal(), light_rng.normal());
            spec.light.direction = (base_light + cfg.light_jitter * jitter).normalized();
        }
        spec.light.brightness = light_rng.uniform(cfg.brightness_min, cfg.brightness_max);

        char buf[32];
        std::snprintf(buf, sizeof(buf), "%s_%03d", is_train ? "train" : "test",
                      is_train ? i : i - cfg.n_train);
        spec.id = buf;
        (is_train ? ds.train_ids : ds.test_ids).push_back(spec.id);
    }

    const int size = cfg.image_size;
    const double focal = cfg.focal * size / 96.0;
    const double far_plane = 4.0 * cfg.cam_dist_max;

    parallel_for(static_cast<std::size_t>(total), [&](std::size_t vi) {
        const ViewSpec& spec = specs[vi];
        DatasetView& view = ds.views[vi];
        view.id = spec.id;
        view.light = spec.light;

        Camera& cam = view.camera;
        cam.fx = cam.fy = focal;
        cam.cx = cam.cy = size / 2.0;
        cam.width = cam.height = size;
        cam.near = 0.05;
        cam.far = far_plane;
        look_at_origin(spec.eye, cam);
        cam.validate();

        view.image = ImageBuffer(size, size, 3);
        view.mask = ImageBuffer(size, size, 1);
        view.gt_depth = ImageBuffer(size, size, 1, far_plane);

        Mat3 rot = cam.rotation_matrix();
        for (int y = 0; y < size; ++y) {
            for (int x = 0; x < size; ++x) {
                Ray ray = ray_for_pixel(cam, x + 0.5, y + 0.5);
                Hit hit = object.trace(ray);
                if (!hit.valid()) continue;
                view.mask->at(x, y) = 1.0;
                Vec3 p_cam = rot * ray.at(hit.t) + cam.translation;
                view.gt_depth->at(x, y) = p_cam.z();
                double lambert = std::max(0.0, hit.normal.dot(spec.light.direction));
                double shade = (cfg.ambient + (1.0 - cfg.ambient) * lambert) * spec.light.brightness;
                for (int c = 0; c < 3; ++c)
                    view.image.at(x, y, c) = std::clamp(hit.albedo[c] * shade, 0.0, 1.0);
            }
        }
    });
    return ds;
}

} // namespace splatlab
