#include "splatlab/camera.hpp"

#include <cmath>

namespace splatlab {

void Camera::validate() const {
    if (fx <= 0.0 || fy <= 0.0)
        throw Error(ErrorKind::DataError, "camera focal lengths must be positive");
    if (width < 1 || height < 1)
        throw Error(ErrorKind::DataError, "camera image size must be at least 1x1");
    if (!(near > 0.0) || !(far > near))
        throw Error(ErrorKind::DataError, "camera requires 0 < near < far");
    if (std::abs(rotation.norm() - 1.0) > 1e-9)
        throw Error(ErrorKind::BadQuaternion, "camera rotation quaternion is not unit length");
}

PixelProjection project_point(const Camera& camera, const Vec3& p_world) {
    Vec3 p = camera.to_camera(p_world);
    if (p.z() <= camera.near)
        throw Error(ErrorKind::BehindCamera, "point at or behind the near plane");
    PixelProjection out;
    out.u = camera.fx * p.x() / p.z() + camera.cx;
    out.v = camera.fy * p.y() / p.z() + camera.cy;
    out.z = p.z();
    return out;
}

Ray ray_for_pixel(const Camera& camera, double u, double v) {
    if (u < 0.0 || u >= camera.width || v < 0.0 || v >= camera.height)
        throw Error(ErrorKind::OutOfImage, "pixel outside image bounds");
    Vec3 dir_cam((u - camera.cx) / camera.fx, (v - camera.cy) / camera.fy, 1.0);
    Mat3 r = camera.rotation_matrix();
    Ray ray;
    ray.origin = camera.center();
    ray.direction = (r.transpose() * dir_cam).normalized();
    return ray;
}

} // namespace splatlab
