#include <random>

#include "doctest.h"
#include "vicsim/emiff.hpp"
#include "vicsim/link.hpp"
#include "vicsim/scene.hpp"

using namespace vicsim;

namespace {

emiff::ModelConfig small_cfg(int scales = 2, int ccr = 1, int scr = 1) {
    emiff::ModelConfig cfg;
    cfg.channels = 4;
    cfg.scales = scales;
    cfg.c2 = 8;
    cfg.ccr = ccr;
    cfg.scr = scr;
    cfg.grid_nz = 2;
    return cfg;
}

Tensor<float> rand_image(int h, int w, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<float> u(0.0f, 1.0f);
    Tensor<float> img({3, h, w});
    for (float& v : img.data) v = u(rng);
    return img;
}

geo::CameraParams test_cam() {
    return scene::build_camera({{0.0, 0.0, 1.6}, 0.0, 2.0, 32.0}, 64, 64);
}

geo::VoxelGridSpec small_grid(int nx = 6, int ny = 6, int nz = 2) {
    geo::VoxelGridSpec g;
    g.origin = Eigen::Vector3d(4.0, -4.0, 0.0);
    g.voxel_size = Eigen::Vector3d(1.0, 1.0, 1.0);
    g.counts = {nx, ny, nz};
    return g;
}

} // namespace

TEST_CASE("validate_config rejects inconsistent rates") {
    CHECK_NOTHROW(emiff::validate_config(small_cfg(2, 2, 4)));
    CHECK_THROWS_AS(emiff::validate_config(small_cfg(2, 3, 1)), ConfigError); // 3 does not divide 4
    CHECK_THROWS_AS(emiff::validate_config(small_cfg(2, 1, 2)), ConfigError); // 2 not a square
    CHECK_THROWS_AS(emiff::validate_config(small_cfg(0)), ConfigError);
}

TEST_CASE("init_params creates the documented parameter set deterministically") {
    const auto cfg = small_cfg(2, 2, 4);
    auto p = emiff::init_params<float>(cfg, 5);
    auto q = emiff::init_params<float>(cfg, 5);
    auto r = emiff::init_params<float>(cfg, 6);
    REQUIRE(p.size() == q.size());
    bool any_diff = false;
    for (const auto& [name, t] : p) {
        REQUIRE(q.count(name) == 1);
        CHECK(max_abs_diff(t, q.at(name)) == 0.0f);
        if (r.count(name) && max_abs_diff(t, r.at(name)) > 0) any_diff = true;
    }
    CHECK(any_diff);
    // spot-check shapes
    CHECK(p.at("veh.stem0.w").shape == std::vector<int>{4, 3, 3, 3});
    CHECK(p.at("inf.mfc1.off.w").shape == std::vector<int>{18, 4, 3, 3});
    CHECK(p.count("inf.mfc1.dcn.b") == 0); // dcn has no bias
    CHECK(p.at("fc.cch.w").shape == std::vector<int>{2, 4, 1, 1});
    CHECK(p.at("fc.csp.w").shape == std::vector<int>{2, 2, 3, 3}); // sr=2 -> k=3
    CHECK(p.at("veh.ccm.l0.w").shape == std::vector<int>{64, 21});
    CHECK(p.at("bev.c3d.w").shape == std::vector<int>{4, 4, 3, 3, 3});
    CHECK(p.at("bev.c2d.w").shape == std::vector<int>{8, 8, 1, 1});
    CHECK(p.at("head.reg.w").shape == std::vector<int>{7, 8, 1, 1});
}

TEST_CASE("extract_features validates image geometry and halves resolution per scale") {
    const auto cfg = small_cfg(2);
    auto params = emiff::init_params<float>(cfg, 1);
    Tape<float> t;
    auto b = emiff::bind(t, cfg, params);
    Var img = t.push(rand_image(16, 24, 2));
    auto pyr = emiff::extract_features(b, img, emiff::Side::Veh);
    REQUIRE(pyr.size() == 2);
    CHECK(t.val(pyr[0]).shape == std::vector<int>{4, 4, 6});
    CHECK(t.val(pyr[1]).shape == std::vector<int>{4, 2, 3});
    Var bad = t.push(rand_image(20, 20, 3)); // 20 % 8 != 0
    CHECK_THROWS_AS(emiff::extract_features(b, bad, emiff::Side::Veh), ConfigError);
}

TEST_CASE("fc codec compresses by the configured rates and round-trips shape") {
    const auto cfg = small_cfg(2, 2, 4);
    auto params = emiff::init_params<float>(cfg, 3);
    Tape<float> t;
    auto b = emiff::bind(t, cfg, params);
    Var f0 = t.push(rand_image(16, 16, 4)); // pretend feature, but needs C=4 channels
    Tensor<float> feat({4, 16, 16});
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<float> u(-1.0f, 1.0f);
    for (float& v : feat.data) v = u(rng);
    f0 = t.push(feat);
    Var ft = emiff::fc_compress(b, f0);
    CHECK(t.val(ft).shape == std::vector<int>{2, 8, 8}); // C/ccr, H/sqrt(scr), W/sqrt(scr)
    // compressed element count = base / (ccr * scr)
    CHECK(t.val(ft).numel() * cfg.ccr * cfg.scr == feat.numel());
    auto pyr = emiff::fc_decompress(b, ft);
    REQUIRE(pyr.size() == 2);
    CHECK(t.val(pyr[0]).shape == std::vector<int>{4, 16, 16});
    CHECK(t.val(pyr[1]).shape == std::vector<int>{4, 8, 8});
    // wrong payload channel count is a protocol violation
    Var badpay = t.push(Tensor<float>({3, 8, 8}));
    CHECK_THROWS_AS(emiff::fc_decompress(b, badpay), ProtocolError);
}

TEST_CASE("serialized payload bytes scale exactly as base/(ccr*scr)") {
    const geo::CameraParams cam = test_cam();
    const std::size_t base = 64 * 64 * 64 * 4; // f32 elements of a [64,64,64] map
    for (int ccr : {1, 2, 4, 8, 16, 32, 64})
        for (int scr : {1, 4, 16, 64, 256}) {
            const int sr = static_cast<int>(std::lround(std::sqrt(double(scr))));
            Tensor<float> t({64 / ccr, 64 / sr, 64 / sr});
            const link::Packet p = link::serialize(t, cam, ccr, scr);
            CHECK(p.payload_bytes() == base / (static_cast<std::size_t>(ccr) * scr));
        }
}

TEST_CASE("mca weights always sum to one") {
    for (int scales : {1, 2, 3}) {
        const auto cfg = small_cfg(scales);
        auto params = emiff::init_params<float>(cfg, 7 + scales);
        Tape<float> t;
        auto b = emiff::bind(t, cfg, params);
        const int side = 1 << (scales + 1);
        Var vimg = t.push(rand_image(side * 2, side * 2, 11));
        Var iimg = t.push(rand_image(side * 2, side * 2, 12));
        auto vp = emiff::extract_features(b, vimg, emiff::Side::Veh);
        auto ip = emiff::extract_features(b, iimg, emiff::Side::Inf);
        auto out = emiff::mca(b, vp, ip);
        const auto& w = t.val(out.weights);
        REQUIRE(w.numel() == scales);
        double s = 0;
        for (float v : w.data) {
            s += v;
            CHECK(v >= 0.0f);
        }
        CHECK(std::abs(s - 1.0) < 1e-6);
        if (scales == 1) CHECK(w.data[0] == 1.0f); // single scale gets weight exactly 1
        CHECK(t.val(out.f_veh).shape == t.val(out.f_inf).shape);
    }
}

TEST_CASE("mca gives uniform weights when all keys coincide") {
    const auto cfg = small_cfg(3);
    auto params = emiff::init_params<float>(cfg, 21);
    // zero every MFC parameter: all corrected maps become zero, so every
    // per-scale key is identical and attention has nothing to prefer
    for (auto& [name, tpar] : params)
        if (name.find(".mfc") != std::string::npos)
            std::fill(tpar.data.begin(), tpar.data.end(), 0.0f);
    Tape<float> t;
    auto b = emiff::bind(t, cfg, params);
    Var vimg = t.push(rand_image(32, 32, 13));
    Var iimg = t.push(rand_image(32, 32, 14));
    auto vp = emiff::extract_features(b, vimg, emiff::Side::Veh);
    auto ip = emiff::extract_features(b, iimg, emiff::Side::Inf);
    auto out = emiff::mca(b, vp, ip);
    const auto& w = t.val(out.weights);
    for (float v : w.data) CHECK(v == doctest::Approx(1.0 / 3.0).epsilon(1e-7));
    CHECK(w.data[0] == w.data[1]);
    CHECK(w.data[1] == w.data[2]);
}

TEST_CASE("mca rejects mismatched pyramids") {
    const auto cfg = small_cfg(2);
    auto params = emiff::init_params<float>(cfg, 9);
    Tape<float> t;
    auto b = emiff::bind(t, cfg, params);
    Var img = t.push(rand_image(16, 16, 15));
    auto vp = emiff::extract_features(b, img, emiff::Side::Veh);
    auto ip = emiff::extract_features(b, img, emiff::Side::Inf);
    ip.pop_back();
    CHECK_THROWS_AS(emiff::mca(b, vp, ip), ConfigError);
}

TEST_CASE("ccm mask is strictly inside (0,1)") {
    const auto cfg = small_cfg(2);
    for (std::uint64_t seed : {1ull, 2ull, 3ull, 4ull}) {
        auto params = emiff::init_params<float>(cfg, seed);
        Tape<float> t;
        auto b = emiff::bind(t, cfg, params);
        Var f = t.push(rand_image(8, 8, seed).cast<float>());
        Tensor<float> feat({4, 8, 8});
        for (float& v : feat.data) v = 0.3f;
        f = t.push(feat);
        auto out = emiff::ccm(b, f, test_cam(), emiff::Side::Inf);
        for (float m : t.val(out.mask).data) {
            CHECK(m > 0.0f);
            CHECK(m < 1.0f);
        }
    }
}

TEST_CASE("ccm with zeroed final layer halves the feature exactly") {
    const auto cfg = small_cfg(2);
    auto params = emiff::init_params<float>(cfg, 6);
    std::fill(params.at("veh.ccm.l3.w").data.begin(), params.at("veh.ccm.l3.w").data.end(), 0.0f);
    std::fill(params.at("veh.ccm.l3.b").data.begin(), params.at("veh.ccm.l3.b").data.end(), 0.0f);
    Tape<float> t;
    auto b = emiff::bind(t, cfg, params);
    Tensor<float> feat({4, 3, 3});
    std::mt19937_64 rng(8);
    std::uniform_real_distribution<float> u(-2.0f, 2.0f);
    for (float& v : feat.data) v = u(rng);
    Var f = t.push(feat);
    auto out = emiff::ccm(b, f, test_cam(), emiff::Side::Veh);
    for (float m : t.val(out.mask).data) CHECK(m == 0.5f);
    const auto& o = t.val(out.out);
    for (std::size_t i = 0; i < feat.data.size(); ++i) CHECK(o.data[i] == 0.5f * feat.data[i]);
}

TEST_CASE("fuse_voxels is the masked average") {
    Tape<float> t;
    // 2 voxels (as [1,1,2,C] grid with C=2)
    Var a = t.push(Tensor<float>({1, 1, 2, 2}, {1.f, 2.f, 3.f, 4.f}));
    Var b = t.push(Tensor<float>({1, 1, 2, 2}, {5.f, 6.f, 7.f, 8.f}));
    Tensor<std::uint8_t> ma({1, 1, 2}, {1, 0});
    Tensor<std::uint8_t> mb({1, 1, 2}, {1, 1});
    Var f = emiff::fuse_voxels(t, a, ma, b, mb);
    const auto& o = t.val(f);
    CHECK(o.data[0] == doctest::Approx(3.0)); // both valid -> mean
    CHECK(o.data[1] == doctest::Approx(4.0));
    CHECK(o.data[2] == doctest::Approx(7.0)); // only inf valid -> inf value
    CHECK(o.data[3] == doctest::Approx(8.0));
    Var s = ops::sum(t, f);
    t.backward(s);
    CHECK(t.grad(a).data[0] == doctest::Approx(0.5));
    CHECK(t.grad(a).data[2] == doctest::Approx(0.0));
    CHECK(t.grad(b).data[2] == doctest::Approx(1.0));
    // neither valid -> zero output
    Tensor<std::uint8_t> none({1, 1, 2}, {0, 0});
    Tape<float> t2;
    Var a2 = t2.push(Tensor<float>({1, 1, 2, 2}, {1.f, 2.f, 3.f, 4.f}));
    Var b2 = t2.push(Tensor<float>({1, 1, 2, 2}, {5.f, 6.f, 7.f, 8.f}));
    for (float v : t2.val(emiff::fuse_voxels(t2, a2, none, b2, none)).data) CHECK(v == 0.0f);
    // shape mismatch
    Var c = t.push(Tensor<float>({1, 1, 1, 2}));
    CHECK_THROWS_AS(emiff::fuse_voxels(t, a, ma, c, mb), ConfigError);
}

TEST_CASE("bev_reduce validates the z extent") {
    const auto cfg = small_cfg(2);
    auto params = emiff::init_params<float>(cfg, 10);
    Tape<float> t;
    auto b = emiff::bind(t, cfg, params);
    Var v = t.push(Tensor<float>({5, 5, 2, 4}));
    CHECK(t.val(emiff::bev_reduce(b, v)).shape == std::vector<int>{8, 5, 5});
    Var bad = t.push(Tensor<float>({5, 5, 3, 4}));
    CHECK_THROWS_AS(emiff::bev_reduce(b, bad), ConfigError);
}

TEST_CASE("assign_targets on an anchor-exact ground truth") {
    const auto cfg = small_cfg(2);
    const auto grid = small_grid();
    eval::Box3D gt = emiff::anchor_at(cfg, grid, 2, 3);
    gt.yaw = 0.12;
    auto tg = emiff::assign_targets(cfg, grid, {gt});
    CHECK(tg.num_pos >= 1);
    CHECK(tg.label.at(2, 3) == 1);
    CHECK(tg.label.at(0, 0) == 0); // far corner is negative
    for (int d = 0; d < 6; ++d) CHECK(tg.reg.at(d, 2, 3) == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(tg.reg.at(6, 2, 3) == doctest::Approx(0.12));
    CHECK(tg.dir.at(2, 3) == 0);
    // flipped heading folds into (-pi/2, pi/2] and sets the direction bit
    gt.yaw = 0.12 + M_PI;
    auto tg2 = emiff::assign_targets(cfg, grid, {gt});
    CHECK(tg2.reg.at(6, 2, 3) == doctest::Approx(0.12));
    CHECK(tg2.dir.at(2, 3) == 1);
}

TEST_CASE("decode_and_nms inverts target encoding") {
    const auto cfg = small_cfg(2);
    const auto grid = small_grid();
    const int nx = grid.counts[0], ny = grid.counts[1];
    Tensor<float> cls({1, nx, ny}, -10.0f); // all background
    Tensor<float> reg({7, nx, ny});
    Tensor<float> dir({2, nx, ny});
    cls.at(0, 2, 3) = 10.0f;
    reg.at(0, 2, 3) = 0.25f;
    reg.at(6, 2, 3) = 0.12f;
    dir.at(1, 2, 3) = 5.0f; // flipped
    auto dets = emiff::decode_and_nms(cfg, grid, cls, reg, dir, 0.3, 0.5);
    REQUIRE(dets.size() == 1);
    const eval::Box3D a = emiff::anchor_at(cfg, grid, 2, 3);
    CHECK(dets[0].box.x == doctest::Approx(a.x + 0.25));
    CHECK(dets[0].box.y == doctest::Approx(a.y));
    CHECK(dets[0].box.yaw == doctest::Approx(geo::wrap_angle(0.12 + M_PI)));
    CHECK(dets[0].score > 0.99);
    // score below threshold yields nothing
    auto none = emiff::decode_and_nms(cfg, grid, Tensor<float>({1, nx, ny}, -10.0f), reg, dir,
                                      0.3, 0.5);
    CHECK(none.empty());
}

TEST_CASE("loss values match hand-computed cases") {
    const auto cfg = small_cfg(2);
    // single-cell grid: one positive anchor
    geo::VoxelGridSpec grid = small_grid(1, 1, 2);
    eval::Box3D gt = emiff::anchor_at(cfg, grid, 0, 0);
    auto tg = emiff::assign_targets(cfg, grid, {gt});
    REQUIRE(tg.num_pos == 1);

    Tape<double> t;
    // reg residual of exactly 1 in one dimension: smooth_l1(1) = 0.5
    Tensor<double> reg({7, 1, 1});
    reg.at(0, 0, 0) = 1.0;
    Var l_bbox = emiff::smooth_l1_loss(t, t.push(reg), tg, 1.0);
    CHECK(t.val(l_bbox).data[0] == doctest::Approx(0.5));

    // cls logit 0 -> p = 0.5, y = 1: focal = 0.25 * 0.25 * ln 2
    Var l_cls = emiff::focal_loss(t, t.push(Tensor<double>({1, 1, 1})), tg, 0.25, 2.0);
    CHECK(t.val(l_cls).data[0] == doctest::Approx(0.25 * 0.25 * std::log(2.0)));

    // equal dir logits -> cross entropy ln 2
    Var l_dir = emiff::dir_ce_loss(t, t.push(Tensor<double>({2, 1, 1})), tg);
    CHECK(t.val(l_dir).data[0] == doctest::Approx(std::log(2.0)));
}
