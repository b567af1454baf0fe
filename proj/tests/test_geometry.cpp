#include <random>

#include "doctest.h"
#include "vicsim/geometry.hpp"
#include "vicsim/scene.hpp"

using namespace vicsim;

namespace {

geo::CameraParams toy_camera(double fx = 32.0, int w = 64, int h = 64) {
    return scene::build_camera({{0.0, 0.0, 1.6}, 0.0, 2.0, fx}, w, h);
}

} // namespace

TEST_CASE("wrap_angle lands in (-pi, pi]") {
    CHECK(geo::wrap_angle(M_PI) == doctest::Approx(M_PI));
    CHECK(geo::wrap_angle(-M_PI) == doctest::Approx(M_PI));
    CHECK(geo::wrap_angle(3 * M_PI) == doctest::Approx(M_PI));
    CHECK(geo::wrap_angle(0.3 + 4 * M_PI) == doctest::Approx(0.3));
    CHECK(geo::wrap_angle(-0.3 - 6 * M_PI) == doctest::Approx(-0.3));
}

TEST_CASE("validate_camera rejects broken calibrations") {
    geo::CameraParams cam = toy_camera();
    CHECK_NOTHROW(geo::validate_camera(cam));
    geo::CameraParams bad = cam;
    bad.R(0, 0) += 0.01;
    CHECK_THROWS_AS(geo::validate_camera(bad), ConfigError);
    bad = cam;
    bad.K(0, 0) = -5.0;
    CHECK_THROWS_AS(geo::validate_camera(bad), ConfigError);
    bad = cam;
    bad.K(1, 0) = 2.0;
    CHECK_THROWS_AS(geo::validate_camera(bad), ConfigError);
}

TEST_CASE("flatten/unflatten camera round trip") {
    const geo::CameraParams cam = toy_camera();
    const auto flat = geo::flatten_camera(cam);
    const geo::CameraParams back = geo::unflatten_camera(flat, cam.capture_time);
    CHECK((back.R - cam.R).norm() == 0.0);
    CHECK((back.t - cam.t).norm() == 0.0);
    CHECK((back.K - cam.K).norm() == 0.0);
    // layout: R row-major | t | K row-major
    CHECK(flat[0] == cam.R(0, 0));
    CHECK(flat[5] == cam.R(1, 2));
    CHECK(flat[9] == cam.t.x());
    CHECK(flat[12] == cam.K(0, 0));
}

TEST_CASE("project/unproject round trip") {
    const geo::CameraParams cam = toy_camera();
    std::mt19937_64 rng(4);
    std::uniform_real_distribution<double> u(-5.0, 5.0);
    for (int i = 0; i < 50; ++i) {
        const Eigen::Vector3d p(10.0 + u(rng), u(rng), 0.5 + 0.1 * u(rng));
        const auto pr = geo::project_points({p}, cam);
        REQUIRE(pr.valid[0]);
        const Eigen::Vector3d back = geo::unproject_pixel(pr.pixels[0], pr.depth[0], cam);
        CHECK((back - p).norm() < 1e-9);
    }
}

TEST_CASE("points behind the camera are flagged invalid") {
    const geo::CameraParams cam = toy_camera();
    const auto pr = geo::project_points({Eigen::Vector3d(-10.0, 0.0, 1.0)}, cam);
    CHECK_FALSE(pr.valid[0]);
}

TEST_CASE("inject_pose_error with zero noise is the identity") {
    const geo::CameraParams cam = toy_camera();
    const geo::CameraParams out = geo::inject_pose_error(cam, 0.0, 0.0, 99);
    CHECK((out.R - cam.R).norm() == 0.0);
    CHECK((out.t - cam.t).norm() == 0.0);
}

TEST_CASE("inject_pose_error stays orthonormal and scales with sigma") {
    const geo::CameraParams cam = toy_camera();
    auto mean_angle = [&](double sigma_deg) {
        double acc = 0;
        const int n = 200;
        for (int s = 0; s < n; ++s) {
            const geo::CameraParams p = geo::inject_pose_error(cam, sigma_deg, 0.0, 1000 + s);
            CHECK((p.R * p.R.transpose() - Eigen::Matrix3d::Identity()).norm() < 1e-9);
            const double c = std::clamp(((p.R * cam.R.transpose()).trace() - 1.0) / 2.0, -1.0, 1.0);
            acc += std::acos(c);
        }
        return acc / n;
    };
    const double a1 = mean_angle(0.5);
    const double a2 = mean_angle(2.0);
    const double a3 = mean_angle(8.0);
    CHECK(a1 < a2);
    CHECK(a2 < a3);
    // 3-sigma clamp in effect
    const geo::CameraParams p = geo::inject_pose_error(cam, 2.0, 0.0, 7);
    const double c = std::clamp(((p.R * cam.R.transpose()).trace() - 1.0) / 2.0, -1.0, 1.0);
    CHECK(std::acos(c) <= 6.0 * M_PI / 180.0 + 1e-9);
}

TEST_CASE("inject_pose_error is deterministic per seed") {
    const geo::CameraParams cam = toy_camera();
    const geo::CameraParams a = geo::inject_pose_error(cam, 1.0, 0.2, 42);
    const geo::CameraParams b = geo::inject_pose_error(cam, 1.0, 0.2, 42);
    const geo::CameraParams c = geo::inject_pose_error(cam, 1.0, 0.2, 43);
    CHECK((a.R - b.R).norm() == 0.0);
    CHECK((a.t - b.t).norm() == 0.0);
    CHECK((a.R - c.R).norm() > 0.0);
}

TEST_CASE("displace_objects advances along velocity") {
    geo::SceneObject o;
    o.center = Eigen::Vector3d(5.0, 1.0, 0.8);
    o.velocity = Eigen::Vector2d(2.0, -1.0);
    const auto moved = geo::displace_objects({o}, 0.5);
    CHECK(moved[0].center.x() == doctest::Approx(6.0));
    CHECK(moved[0].center.y() == doctest::Approx(0.5));
    CHECK(moved[0].center.z() == doctest::Approx(0.8));
    const auto back = geo::displace_objects(moved, -0.5);
    CHECK(back[0].center.x() == doctest::Approx(5.0));
}

TEST_CASE("sample_voxel_features matches the per-voxel loop oracle") {
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (int trial = 0; trial < 10; ++trial) {
        const geo::CameraParams cam = scene::build_camera(
            {{u(rng), u(rng), 1.5 + u(rng)}, 10.0 * u(rng), 5.0 + 2.0 * u(rng), 20.0}, 64, 64);
        geo::VoxelGridSpec grid;
        grid.origin = Eigen::Vector3d(3.0 + u(rng), -4.0 + u(rng), 0.0);
        grid.voxel_size = Eigen::Vector3d(1.2, 1.2, 0.9);
        grid.counts = {5, 6, 2};
        Tensor<float> feat({3, 16, 16});
        for (float& v : feat.data) v = static_cast<float>(u(rng));

        Tape<float> t;
        auto [vox, valid] = geo::sample_voxel_features(t, t.push(feat), cam, grid, 4);
        const Tensor<float>& got = t.val(vox);

        for (int ix = 0; ix < 5; ++ix)
            for (int iy = 0; iy < 6; ++iy)
                for (int iz = 0; iz < 2; ++iz) {
                    const Eigen::Vector3d pc = cam.R * grid.center_of(ix, iy, iz) + cam.t;
                    bool ok = pc.z() > geo::kDepthEpsilon;
                    double fx = 0, fy = 0;
                    if (ok) {
                        const Eigen::Vector3d uvw = cam.K * (pc / pc.z());
                        fx = uvw.x() / 4.0;
                        fy = uvw.y() / 4.0;
                        ok = fx > -1.0 && fx < 16.0 && fy > -1.0 && fy < 16.0;
                    }
                    CHECK(static_cast<bool>(valid.at(ix, iy, iz)) == ok);
                    for (int c = 0; c < 3; ++c) {
                        double ref = 0.0;
                        if (ok) {
                            const int x0 = static_cast<int>(std::floor(fx));
                            const int y0 = static_cast<int>(std::floor(fy));
                            const double wx = fx - x0, wy = fy - y0;
                            auto px = [&](int yy, int xx) -> double {
                                if (xx < 0 || xx >= 16 || yy < 0 || yy >= 16) return 0.0;
                                return feat.at(c, yy, xx);
                            };
                            ref = (1 - wy) * ((1 - wx) * px(y0, x0) + wx * px(y0, x0 + 1)) +
                                  wy * ((1 - wx) * px(y0 + 1, x0) + wx * px(y0 + 1, x0 + 1));
                        }
                        CHECK(std::abs(got.at(ix, iy, iz, c) - ref) < 1e-6);
                    }
                }
    }
}
