#include "vicsim/geometry.hpp"

#include <cmath>
#include <random>

namespace vicsim::geo {

void validate_camera(const CameraParams& cam) {
    const Eigen::Matrix3d should_be_identity = cam.R * cam.R.transpose();
    if ((should_be_identity - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff() > 1e-6)
        throw ConfigError("camera: R is not orthonormal");
    if (std::abs(cam.R.determinant() - 1.0) > 1e-6)
        throw ConfigError("camera: det(R) != 1");
    if (std::abs(cam.K(1, 0)) > 1e-12 || std::abs(cam.K(2, 0)) > 1e-12 ||
        std::abs(cam.K(2, 1)) > 1e-12)
        throw ConfigError("camera: K is not upper-triangular");
    if (cam.K(0, 0) <= 0 || cam.K(1, 1) <= 0)
        throw ConfigError("camera: non-positive focal length");
}

std::array<double, 21> flatten_camera(const CameraParams& cam) {
    std::array<double, 21> v{};
    int n = 0;
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) v[n++] = cam.R(i, j);
    for (int i = 0; i < 3; ++i) v[n++] = cam.t(i);
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) v[n++] = cam.K(i, j);
    return v;
}

CameraParams unflatten_camera(const std::array<double, 21>& v, double capture_time) {
    CameraParams cam;
    int n = 0;
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) cam.R(i, j) = v[n++];
    for (int i = 0; i < 3; ++i) cam.t(i) = v[n++];
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) cam.K(i, j) = v[n++];
    cam.capture_time = capture_time;
    return cam;
}

void validate_grid(const VoxelGridSpec& grid) {
    for (int d = 0; d < 3; ++d) {
        if (grid.counts[static_cast<std::size_t>(d)] < 1)
            throw ConfigError("voxel grid: count < 1 on axis " + std::to_string(d));
        if (grid.voxel_size(d) <= 0)
            throw ConfigError("voxel grid: non-positive voxel size on axis " + std::to_string(d));
    }
}

double wrap_angle(double a) {
    a = std::fmod(a, 2 * M_PI);
    if (a <= -M_PI) a += 2 * M_PI;
    if (a > M_PI) a -= 2 * M_PI;
    return a;
}

ProjectionResult project_points(const std::vector<Eigen::Vector3d>& points, const CameraParams& cam) {
    ProjectionResult r;
    r.pixels.reserve(points.size());
    r.depth.reserve(points.size());
    r.valid.reserve(points.size());
    for (const auto& p : points) {
        const Eigen::Vector3d pc = cam.R * p + cam.t;
        const double z = pc.z();
        r.depth.push_back(z);
        r.valid.push_back(z > kDepthEpsilon);
        if (z > kDepthEpsilon) {
            const Eigen::Vector3d uvw = cam.K * (pc / z);
            r.pixels.emplace_back(uvw.x(), uvw.y());
        } else {
            r.pixels.emplace_back(0.0, 0.0);
        }
    }
    return r;
}

Eigen::Vector3d unproject_pixel(const Eigen::Vector2d& pixel, double depth, const CameraParams& cam) {
    const Eigen::Vector3d ray = cam.K.inverse() * Eigen::Vector3d(pixel.x(), pixel.y(), 1.0);
    const Eigen::Vector3d pc = ray * depth;
    return cam.R.transpose() * (pc - cam.t);
}

CameraParams inject_pose_error(const CameraParams& cam, double rot_noise_deg, double trans_noise_m,
                               std::uint64_t seed) {
    if (rot_noise_deg < 0 || trans_noise_m < 0)
        throw ConfigError("inject_pose_error: negative noise magnitude");
    if (rot_noise_deg == 0.0 && trans_noise_m == 0.0) return cam;

    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::uniform_real_distribution<double> uni(-1.0, 1.0);

    CameraParams out = cam;
    if (rot_noise_deg > 0) {
        // Uniform axis via rejection from the cube.
        Eigen::Vector3d axis;
        do {
            axis = Eigen::Vector3d(uni(rng), uni(rng), uni(rng));
        } while (axis.squaredNorm() < 1e-6 || axis.squaredNorm() > 1.0);
        axis.normalize();
        double angle_deg = normal(rng) * rot_noise_deg;
        angle_deg = std::clamp(angle_deg, -3.0 * rot_noise_deg, 3.0 * rot_noise_deg);
        const Eigen::AngleAxisd noise(angle_deg * M_PI / 180.0, axis);
        out.R = noise.toRotationMatrix() * cam.R;
        // Nearest rotation via SVD, restores orthonormality.
        Eigen::JacobiSVD<Eigen::Matrix3d> svd(out.R, Eigen::ComputeFullU | Eigen::ComputeFullV);
        Eigen::Matrix3d fixed = svd.matrixU() * svd.matrixV().transpose();
        if (fixed.determinant() < 0) {
            Eigen::Matrix3d flip = Eigen::Matrix3d::Identity();
            flip(2, 2) = -1;
            fixed = svd.matrixU() * flip * svd.matrixV().transpose();
        }
        out.R = fixed;
    }
    if (trans_noise_m > 0)
        for (int i = 0; i < 3; ++i) out.t(i) += normal(rng) * trans_noise_m;
    return out;
}

std::vector<SceneObject> displace_objects(const std::vector<SceneObject>& objects, double delta_t) {
    std::vector<SceneObject> out = objects;
    for (auto& o : out) {
        o.center.x() += o.velocity.x() * delta_t;
        o.center.y() += o.velocity.y() * delta_t;
    }
    return out;
}

} // namespace vicsim::geo
