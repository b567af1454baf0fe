#pragma once

#include <random>
#include <string>
#include <vector>

#include "vicsim/emiff.hpp"
#include "vicsim/gradcheck.hpp"
#include "vicsim/scene.hpp"

namespace vicsim::gradsuite {

struct NamedCheck {
    std::string name;
    GradCheckReport rep;
};

namespace detail {

inline Tensor<double> randt(std::vector<int> shape, std::mt19937_64& rng, double lo = -0.5,
                            double hi = 0.5) {
    std::uniform_real_distribution<double> u(lo, hi);
    Tensor<double> t(std::move(shape));
    for (double& v : t.data) v = u(rng);
    return t;
}

inline emiff::Targets toy_targets(const emiff::ModelConfig& cfg, const geo::VoxelGridSpec& grid,
                                  std::mt19937_64& rng) {
    // One ground truth sitting exactly on an anchor guarantees positives.
    eval::Box3D gt = emiff::anchor_at(cfg, grid, grid.counts[0] / 2, grid.counts[1] / 2);
    gt.yaw = 0.12;
    emiff::Targets tg = emiff::assign_targets(cfg, grid, {gt});
    // Jitter the regression targets so the smooth-L1 argument is generic.
    std::uniform_real_distribution<double> u(-0.3, 0.3);
    for (float& v : tg.reg.data) v += static_cast<float>(u(rng));
    return tg;
}

} // namespace detail

// Per-operator and end-to-end finite-difference checks, float64. Every
// report's max_rel_err should come in under the tolerance used by the caller.
inline std::vector<NamedCheck> run_suite(std::uint64_t seed, double h = 1e-5, double tol = 1e-4,
                                         bool include_composed = true) {
    std::mt19937_64 rng(seed);
    std::vector<NamedCheck> out;
    auto run = [&](const std::string& name, const GradFn& fn,
                   const std::vector<Tensor<double>>& inputs, int max_elems = -1) {
        out.push_back({name, finite_diff_check(fn, inputs, h, tol, max_elems, seed)});
    };

    run("conv2d_s1",
        [](Tape<double>& t, const std::vector<Var>& v) {
            return ops::sum(t, ops::conv2d(t, v[0], v[1], v[2], 1, 1));
        },
        {detail::randt({2, 6, 6}, rng), detail::randt({3, 2, 3, 3}, rng),
         detail::randt({3}, rng)});

    run("conv2d_s2",
        [](Tape<double>& t, const std::vector<Var>& v) {
            return ops::sum(t, ops::conv2d(t, v[0], v[1], v[2], 2, 1));
        },
        {detail::randt({2, 6, 6}, rng), detail::randt({3, 2, 3, 3}, rng),
         detail::randt({3}, rng)});

    run("conv3d",
        [](Tape<double>& t, const std::vector<Var>& v) {
            return ops::sum(t, ops::conv3d(t, v[0], v[1], v[2]));
        },
        {detail::randt({2, 3, 4, 4}, rng), detail::randt({2, 2, 3, 3, 3}, rng),
         detail::randt({2}, rng)});

    {
        // Keep predicted offsets away from integer lattice points, where
        // bilinear interpolation is not differentiable.
        Tensor<double> off = detail::randt({18, 5, 5}, rng, -0.35, 0.35);
        for (double& v : off.data) v += 0.137;
        run("deform_conv2d",
            [](Tape<double>& t, const std::vector<Var>& v) {
                return ops::sum(t, ops::deform_conv2d(t, v[0], v[1], v[2]));
            },
            {detail::randt({2, 5, 5}, rng), detail::randt({2, 2, 3, 3}, rng), std::move(off)});
    }

    run("upsample_bilinear",
        [](Tape<double>& t, const std::vector<Var>& v) {
            return ops::sum(t, ops::upsample_bilinear(t, v[0], 2));
        },
        {detail::randt({3, 4, 4}, rng)});

    run("softmax_attention",
        [](Tape<double>& t, const std::vector<Var>& v) {
            Var w = ops::attention_1d(t, v[0], v[1]);
            return ops::sum(t, ops::mul(t, w, v[2]));
        },
        {detail::randt({4}, rng), detail::randt({3, 4}, rng), detail::randt({3}, rng)});

    {
        geo::CameraParams cam = scene::build_camera({{0.0, 0.0, 1.5}, 0.0, 8.0, 10.0}, 32, 32);
        run("ccm_chain",
            [cam](Tape<double>& t, const std::vector<Var>& v) {
                emiff::ModelConfig cfg;
                cfg.channels = 4;
                emiff::Bound<double> b;
                b.tape = &t;
                b.cfg = &cfg;
                b.vars = {{"veh.ccm.l0.w", v[0]}, {"veh.ccm.l0.b", v[1]},
                          {"veh.ccm.l1.w", v[2]}, {"veh.ccm.l1.b", v[3]},
                          {"veh.ccm.l2.w", v[4]}, {"veh.ccm.l2.b", v[5]},
                          {"veh.ccm.l3.w", v[6]}, {"veh.ccm.l3.b", v[7]}};
                emiff::CcmOut o = emiff::ccm(b, v[8], cam, emiff::Side::Veh);
                return ops::sum(t, o.out);
            },
            {detail::randt({64, 21}, rng, -0.02, 0.02), detail::randt({64}, rng),
             detail::randt({4, 64}, rng), detail::randt({4}, rng), detail::randt({4, 4}, rng),
             detail::randt({4}, rng), detail::randt({4, 4}, rng), detail::randt({4}, rng),
             detail::randt({4, 3, 3}, rng)},
            /*max_elems=*/48);
    }

    {
        geo::VoxelGridSpec grid;
        grid.origin = Eigen::Vector3d(2.0, -3.0, 0.0);
        grid.voxel_size = Eigen::Vector3d(1.5, 1.5, 1.0);
        grid.counts = {4, 4, 2};
        geo::CameraParams cam = scene::build_camera({{0.0, 0.0, 1.5}, 0.0, 6.0, 12.0}, 32, 32);
        run("voxel_sampling",
            [cam, grid](Tape<double>& t, const std::vector<Var>& v) {
                auto [vox, valid] = geo::sample_voxel_features(t, v[0], cam, grid, 4);
                return ops::sum(t, vox);
            },
            {detail::randt({3, 8, 8}, rng)});
    }

    {
        Tensor<std::uint8_t> mv({2, 2, 2}), mi({2, 2, 2});
        for (std::size_t i = 0; i < 8; ++i) {
            mv.data[i] = i % 2;
            mi.data[i] = i % 3 != 0;
        }
        run("fuse_voxels",
            [mv, mi](Tape<double>& t, const std::vector<Var>& v) {
                return ops::sum(t, emiff::fuse_voxels(t, v[0], mv, v[1], mi));
            },
            {detail::randt({2, 2, 2, 3}, rng), detail::randt({2, 2, 2, 3}, rng)});
    }

    {
        emiff::ModelConfig cfg;
        geo::VoxelGridSpec grid;
        grid.origin = Eigen::Vector3d(0.0, -3.0, 0.0);
        grid.voxel_size = Eigen::Vector3d(1.0, 1.0, 1.0);
        grid.counts = {4, 4, 2};
        const emiff::Targets tg = detail::toy_targets(cfg, grid, rng);
        run("smooth_l1_loss",
            [tg](Tape<double>& t, const std::vector<Var>& v) {
                return emiff::smooth_l1_loss(t, v[0], tg, 1.0);
            },
            {detail::randt({7, 4, 4}, rng, -1.5, 1.5)});
        run("focal_loss",
            [tg](Tape<double>& t, const std::vector<Var>& v) {
                return emiff::focal_loss(t, v[0], tg, 0.25, 2.0);
            },
            {detail::randt({1, 4, 4}, rng, -2.0, 2.0)});
        run("dir_ce_loss",
            [tg](Tape<double>& t, const std::vector<Var>& v) {
                return emiff::dir_ce_loss(t, v[0], tg);
            },
            {detail::randt({2, 4, 4}, rng, -1.0, 1.0)});
    }

    if (include_composed) {
        emiff::ModelConfig cfg;
        cfg.channels = 4;
        cfg.scales = 2;
        cfg.c2 = 8;
        cfg.grid_nz = 2;
        geo::VoxelGridSpec grid;
        grid.origin = Eigen::Vector3d(2.0, -3.0, 0.0);
        grid.voxel_size = Eigen::Vector3d(1.5, 1.5, 1.0);
        grid.counts = {4, 4, 2};
        const geo::CameraParams veh_cam =
            scene::build_camera({{0.0, 0.0, 1.5}, 0.0, 6.0, 12.0}, 16, 16);
        const geo::CameraParams inf_cam =
            scene::build_camera({{10.0, 4.0, 4.0}, -155.0, 18.0, 12.0}, 16, 16);
        const emiff::Targets tg = detail::toy_targets(cfg, grid, rng);
        const ckpt::Params<double> params = emiff::init_params<double>(cfg, seed + 1);
        const Tensor<double> inf_img = detail::randt({3, 16, 16}, rng, 0.0, 1.0);

        run("composed_pipeline",
            [cfg, grid, veh_cam, inf_cam, tg, params, inf_img](Tape<double>& t,
                                                               const std::vector<Var>& v) {
                emiff::Bound<double> b = emiff::bind(t, cfg, params);
                b.vars["head.cls.w"] = v[1];
                b.vars["fc.cch.w"] = v[2];
                Var inf_image = t.push(inf_img);
                const std::vector<Var> veh_pyr = emiff::extract_features(b, v[0], emiff::Side::Veh);
                const std::vector<Var> inf_src = emiff::extract_features(b, inf_image, emiff::Side::Inf);
                Var ft = emiff::fc_compress(b, inf_src[0]);
                const std::vector<Var> inf_pyr = emiff::fc_decompress(b, ft);
                const emiff::McaOut att = emiff::mca(b, veh_pyr, inf_pyr);
                const emiff::CcmOut vm = emiff::ccm(b, att.f_veh, veh_cam, emiff::Side::Veh);
                const emiff::CcmOut im = emiff::ccm(b, att.f_inf, inf_cam, emiff::Side::Inf);
                auto [vv, maskv] = geo::sample_voxel_features(t, vm.out, veh_cam, grid, 4);
                auto [vi, maski] = geo::sample_voxel_features(t, im.out, inf_cam, grid, 4);
                Var fused = emiff::fuse_voxels(t, vv, maskv, vi, maski);
                Var bev = emiff::bev_reduce(b, fused);
                emiff::HeadOut head = emiff::detect_head(b, bev);
                return emiff::losses(b, head, tg).total;
            },
            {detail::randt({3, 16, 16}, rng, 0.0, 1.0),
             detail::randt({1, cfg.c2, 1, 1}, rng, -0.3, 0.3),
             detail::randt({cfg.channels, cfg.channels, 1, 1}, rng, -0.3, 0.3)},
            /*max_elems=*/20);
    }

    return out;
}

} // namespace vicsim::gradsuite
