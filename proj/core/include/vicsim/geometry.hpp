#pragma once

#include <Eigen/Dense>
#include <array>
#include <cstdint>
#include <utility>
#include <vector>

#include "vicsim/conv.hpp"
#include "vicsim/tape.hpp"

namespace vicsim::geo {

// Points with camera-frame depth below this are "behind" the camera.
constexpr double kDepthEpsilon = 1e-3;

// Pinhole camera. R,t map world (vehicle-frame) points into camera
// coordinates: p_c = R p + t.
struct CameraParams {
    Eigen::Matrix3d K = Eigen::Matrix3d::Identity();
    Eigen::Matrix3d R = Eigen::Matrix3d::Identity();
    Eigen::Vector3d t = Eigen::Vector3d::Zero();
    double capture_time = 0.0;
};

void validate_camera(const CameraParams& cam);

// Flattened (R | t | K) 21-vector, the channel-mask MLP input and the
// calibration block of the wire header.
std::array<double, 21> flatten_camera(const CameraParams& cam);
CameraParams unflatten_camera(const std::array<double, 21>& v, double capture_time);

struct VoxelGridSpec {
    Eigen::Vector3d origin = Eigen::Vector3d::Zero(); // min corner, vehicle frame (m)
    Eigen::Vector3d voxel_size = Eigen::Vector3d::Ones();
    std::array<int, 3> counts = {1, 1, 1}; // (N_x, N_y, N_z)

    Eigen::Vector3d center_of(int ix, int iy, int iz) const {
        return origin + Eigen::Vector3d((ix + 0.5) * voxel_size.x(), (iy + 0.5) * voxel_size.y(),
                                        (iz + 0.5) * voxel_size.z());
    }
    std::int64_t voxel_count() const {
        return static_cast<std::int64_t>(counts[0]) * counts[1] * counts[2];
    }
};

void validate_grid(const VoxelGridSpec& grid);

struct SceneObject {
    Eigen::Vector3d center = Eigen::Vector3d::Zero(); // m
    Eigen::Vector3d size = Eigen::Vector3d::Ones();   // l, w, h (m)
    double yaw = 0.0;                                 // rad, wrapped to (-pi, pi]
    Eigen::Vector2d velocity = Eigen::Vector2d::Zero(); // ground-plane m/s
    int class_id = 0;
};

double wrap_angle(double a); // to (-pi, pi]

struct ProjectionResult {
    std::vector<Eigen::Vector2d> pixels;
    std::vector<double> depth;
    std::vector<bool> valid; // depth > kDepthEpsilon
};

ProjectionResult project_points(const std::vector<Eigen::Vector3d>& points, const CameraParams& cam);

// Inverse of project_points for a single pixel at known camera depth.
Eigen::Vector3d unproject_pixel(const Eigen::Vector2d& pixel, double depth, const CameraParams& cam);

// Random rotation (angle ~ N(0, rot_noise_deg^2) clamped to 3 sigma, uniform
// axis) composed onto R, plus per-axis N(0, trans_noise_m^2) on t. The result
// is re-orthonormalized. Deterministic per seed; (0,0) noise is the identity.
CameraParams inject_pose_error(const CameraParams& cam, double rot_noise_deg, double trans_noise_m,
                               std::uint64_t seed);

// Advance centers by velocity * delta_t on the ground plane (time asynchrony).
std::vector<SceneObject> displace_objects(const std::vector<SceneObject>& objects, double delta_t);

// Fill a voxel grid by projecting voxel centers into the feature map and
// bilinear-sampling, ImVoxelNet style. feature is [C,Hf,Wf] at feature_stride
// px per feature cell. Output tensor is [N_x,N_y,N_z,C]; invalid or
// out-of-view voxels are zero with valid=false. Gradient flows to the feature
// only; geometry is fixed.
template <class S>
std::pair<Var, Tensor<std::uint8_t>> sample_voxel_features(Tape<S>& tape, Var feature,
                                                           const CameraParams& cam,
                                                           const VoxelGridSpec& grid,
                                                           int feature_stride) {
    validate_grid(grid);
    if (feature_stride < 1) throw ConfigError("sample_voxel_features: feature_stride < 1");
    const Tensor<S>& f = tape.val(feature);
    if (f.rank() != 3) throw ConfigError("sample_voxel_features: feature must be [C,H,W]");
    const int C = f.shape[0], Hf = f.shape[1], Wf = f.shape[2];
    const int nx = grid.counts[0], ny = grid.counts[1], nz = grid.counts[2];

    Tensor<std::uint8_t> valid({nx, ny, nz});
    Tensor<S> out({nx, ny, nz, C});
    struct Tap {
        std::int64_t voxel; // flat (ix,iy,iz)
        double fx, fy;
    };
    std::vector<Tap> taps;
    for (int ix = 0; ix < nx; ++ix)
        for (int iy = 0; iy < ny; ++iy)
            for (int iz = 0; iz < nz; ++iz) {
                const Eigen::Vector3d pc = cam.R * grid.center_of(ix, iy, iz) + cam.t;
                if (pc.z() <= kDepthEpsilon) continue;
                const Eigen::Vector3d uvw = cam.K * (pc / pc.z());
                const double fx = uvw.x() / feature_stride;
                const double fy = uvw.y() / feature_stride;
                if (fx <= -1.0 || fx >= Wf || fy <= -1.0 || fy >= Hf) continue;
                valid.at(ix, iy, iz) = 1;
                const std::int64_t vox = (static_cast<std::int64_t>(ix) * ny + iy) * nz + iz;
                taps.push_back(Tap{vox, fx, fy});
                for (int c = 0; c < C; ++c)
                    out.data[static_cast<std::size_t>(vox * C + c)] =
                        static_cast<S>(ops::detail::bilinear_value(f, c, fx, fy));
            }
    Var o = tape.push(std::move(out));
    tape.record([&tape, feature, o, taps = std::move(taps), C] {
        const Tensor<S>& g = tape.grad(o);
        Tensor<S>& gf = tape.grad(feature);
        for (const auto& tp : taps)
            for (int c = 0; c < C; ++c)
                ops::detail::bilinear_scatter(gf, c, tp.fx, tp.fy,
                                              static_cast<double>(g.data[static_cast<std::size_t>(
                                                  tp.voxel * C + c)]));
    });
    return {o, std::move(valid)};
}

} // namespace vicsim::geo
