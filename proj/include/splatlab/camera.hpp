#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include "splatlab/common.hpp"

namespace splatlab {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Vec4 = Eigen::Vector4d;
using Mat2 = Eigen::Matrix2d;
using Mat3 = Eigen::Matrix3d;

// Unit quaternion stored as (w, x, y, z).
struct Quat {
    double w = 1.0, x = 0.0, y = 0.0, z = 0.0;

    double norm() const { return std::sqrt(w * w + x * x + y * y + z * z); }

    Quat normalized() const {
        double n = norm();
        return {w / n, x / n, y / n, z / n};
    }

    Mat3 to_rotation() const {
        Mat3 r;
        r << 1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
             2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
             2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y);
        return r;
    }
};

struct Ray {
    Vec3 origin = Vec3::Zero();
    Vec3 direction = Vec3::UnitZ(); // unit length

    Vec3 at(double t) const { return origin + t * direction; }
};

// Pinhole camera. Convention: +z forward, +x right, +y down, pixel origin at
// the top-left corner, pixel centers at integer + 0.5. world_to_cam maps
// world points into the camera frame: p_cam = R * p_world + t.
struct Camera {
    double fx = 0.0, fy = 0.0;
    double cx = 0.0, cy = 0.0;
    int width = 0, height = 0;
    Quat rotation;               // world-to-camera
    Vec3 translation = Vec3::Zero();
    double near = 0.01, far = 100.0;

    void validate() const;

    Mat3 rotation_matrix() const { return rotation.to_rotation(); }
    Vec3 center() const { return -(rotation.to_rotation().transpose() * translation); }
    Vec3 to_camera(const Vec3& p_world) const {
        return rotation.to_rotation() * p_world + translation;
    }
};

struct PixelProjection {
    double u = 0.0, v = 0.0; // pixels
    double z = 0.0;          // camera depth, meters
};

// Throws BehindCamera when the camera depth is <= camera.near.
PixelProjection project_point(const Camera& camera, const Vec3& p_world);

// Throws OutOfImage for pixels outside [0,width) x [0,height).
Ray ray_for_pixel(const Camera& camera, double u, double v);

} // namespace splatlab
