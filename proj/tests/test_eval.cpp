#include <random>

#include "doctest.h"
#include "vicsim/eval.hpp"

using namespace vicsim;
using eval::Box3D;
using eval::Detection;

namespace {

Box3D box(double x, double y, double l, double w, double yaw = 0, double z = 0.75,
          double h = 1.5) {
    Box3D b;
    b.x = x;
    b.y = y;
    b.z = z;
    b.l = l;
    b.w = w;
    b.h = h;
    b.yaw = yaw;
    return b;
}

// Monte-Carlo BEV IoU: sample uniformly inside box a (its area is known
// exactly), estimate the intersection as area_a times the hit fraction in b.
double iou_bev_mc(const Box3D& a, const Box3D& b, int samples, std::uint64_t seed) {
    auto inside = [](const Box3D& bb, double px, double py) {
        const double c = std::cos(bb.yaw), s = std::sin(bb.yaw);
        const double dx = px - bb.x, dy = py - bb.y;
        const double lx = c * dx + s * dy, ly = -s * dx + c * dy;
        return std::abs(lx) <= bb.l / 2 && std::abs(ly) <= bb.w / 2;
    };
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> ul(-a.l / 2, a.l / 2), uw(-a.w / 2, a.w / 2);
    const double c = std::cos(a.yaw), s = std::sin(a.yaw);
    long hits = 0;
    for (int i = 0; i < samples; ++i) {
        const double lx = ul(rng), ly = uw(rng);
        const double px = a.x + c * lx - s * ly;
        const double py = a.y + s * lx + c * ly;
        if (inside(b, px, py)) ++hits;
    }
    const double inter = a.l * a.w * static_cast<double>(hits) / samples;
    return inter / (a.l * a.w + b.l * b.w - inter);
}

} // namespace

TEST_CASE("iou_bev axis-aligned analytic cases") {
    CHECK(eval::iou_bev(box(0, 0, 2, 2), box(0, 0, 2, 2)) == doctest::Approx(1.0));
    // shifted by half: intersection 2, union 6
    CHECK(eval::iou_bev(box(0, 0, 2, 2), box(1, 0, 2, 2)) == doctest::Approx(2.0 / 6.0));
    CHECK(eval::iou_bev(box(0, 0, 2, 2), box(5, 0, 2, 2)) == doctest::Approx(0.0));
    // containment: 1x1 inside 3x3
    CHECK(eval::iou_bev(box(0, 0, 3, 3), box(0, 0, 1, 1)) == doctest::Approx(1.0 / 9.0));
}

TEST_CASE("iou_bev rotated analytic case") {
    // Unit square vs the same square rotated 45 degrees: the intersection is a
    // regular octagon with area 2*(sqrt(2)-1).
    const double i45 = eval::iou_bev(box(0, 0, 1, 1, 0.0), box(0, 0, 1, 1, M_PI / 4));
    const double a_inter = 2.0 * (std::sqrt(2.0) - 1.0);
    CHECK(i45 == doctest::Approx(a_inter / (2.0 - a_inter)).epsilon(1e-9));
    // 90-degree rotation of a square is itself
    CHECK(eval::iou_bev(box(0, 0, 2, 2, 0), box(0, 0, 2, 2, M_PI / 2)) == doctest::Approx(1.0));
    // symmetric in argument order
    const Box3D a = box(0.3, -0.2, 2.5, 1.2, 0.4), b = box(0.8, 0.5, 3.0, 1.5, -0.7);
    CHECK(eval::iou_bev(a, b) == doctest::Approx(eval::iou_bev(b, a)));
}

TEST_CASE("iou_bev agrees with Monte-Carlo on random rotated pairs") {
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (int i = 0; i < 20; ++i) {
        const Box3D a = box(u(rng), u(rng), 2.0 + u(rng), 1.2 + 0.4 * u(rng), M_PI * u(rng));
        const Box3D b = box(u(rng), u(rng), 2.0 + u(rng), 1.2 + 0.4 * u(rng), M_PI * u(rng));
        const double exact = eval::iou_bev(a, b);
        const double mc = iou_bev_mc(a, b, 400000, 100 + static_cast<std::uint64_t>(i));
        CHECK(std::abs(exact - mc) < 4e-3); // 400k samples; the release gate holds 2e-3 at 1e6
    }
}

TEST_CASE("iou_3d composes BEV overlap with vertical overlap") {
    // identical boxes
    CHECK(eval::iou_3d(box(0, 0, 2, 2), box(0, 0, 2, 2)) == doctest::Approx(1.0));
    // same footprint, half vertical overlap: inter 2*2*0.75, union 2*(6)-3
    Box3D lo = box(0, 0, 2, 2, 0, 0.75, 1.5);
    Box3D hi = box(0, 0, 2, 2, 0, 1.5, 1.5);
    const double inter = 4.0 * 0.75;
    CHECK(eval::iou_3d(lo, hi) == doctest::Approx(inter / (12.0 - inter)));
    // disjoint in z
    Box3D top = box(0, 0, 2, 2, 0, 10.0, 1.5);
    CHECK(eval::iou_3d(lo, top) == doctest::Approx(0.0));
}

TEST_CASE("nms_bev keeps highest score per overlapping cluster") {
    std::vector<Detection> dets;
    dets.push_back({box(0, 0, 2, 2), 0.5, 0});
    dets.push_back({box(0.1, 0, 2, 2), 0.9, 0}); // overlaps first, higher score
    dets.push_back({box(10, 0, 2, 2), 0.7, 0});  // isolated
    auto kept = eval::nms_bev(dets, 0.5);
    REQUIRE(kept.size() == 2);
    CHECK(kept[0].score == doctest::Approx(0.9));
    CHECK(kept[1].score == doctest::Approx(0.7));
    // with a high threshold nothing is suppressed
    CHECK(eval::nms_bev(dets, 0.99).size() == 3);
}

TEST_CASE("nms_bev matches a quadratic reference on random sets") {
    std::mt19937_64 rng(19);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<Detection> dets;
        const int n = 3 + static_cast<int>(rng() % 8);
        for (int i = 0; i < n; ++i)
            dets.push_back({box(6 * u(rng), 6 * u(rng), 2.5, 1.4, M_PI * u(rng)), u(rng), 0});
        auto got = eval::nms_bev(dets, 0.3);
        // reference: sort by score, keep if not overlapping any kept box
        std::vector<Detection> sorted = dets;
        std::stable_sort(sorted.begin(), sorted.end(),
                         [](const Detection& a, const Detection& b) { return a.score > b.score; });
        std::vector<Detection> ref;
        for (const auto& d : sorted) {
            bool ok = true;
            for (const auto& k : ref)
                if (eval::iou_bev(d.box, k.box) > 0.3) ok = false;
            if (ok) ref.push_back(d);
        }
        REQUIRE(got.size() == ref.size());
        for (std::size_t i = 0; i < ref.size(); ++i) CHECK(got[i].score == ref[i].score);
    }
}

TEST_CASE("ap_compute simple exact cases") {
    // one GT, one perfect detection -> AP 1
    std::vector<Box3D> gts = {box(10, 0, 4, 1.6)};
    std::vector<Detection> dets = {{gts[0], 0.9, 0}};
    auto ap = eval::ap_compute(dets, gts, eval::Metric::BEV);
    CHECK(ap.at("overall") == doctest::Approx(1.0));
    CHECK(ap.at("0-30m") == doctest::Approx(1.0));
    CHECK(ap.count("30-50m") == 0); // no GT in that bucket
    CHECK(ap.count("50-100m") == 0);

    // no detections -> AP 0 for the populated bucket
    auto ap0 = eval::ap_compute({}, gts, eval::Metric::BEV);
    CHECK(ap0.at("overall") == doctest::Approx(0.0));

    // one TP ranked above one FP: precision 1 at recall 1 -> AP stays 1
    dets.push_back({box(60, 0, 4, 1.6), 0.5, 0});
    auto ap2 = eval::ap_compute(dets, gts, eval::Metric::BEV);
    CHECK(ap2.at("overall") == doctest::Approx(1.0));

    // FP ranked above the TP: 40-point interpolation, p(r)=1/2 beyond r=0
    std::vector<Detection> fp_first = {{box(60, 0, 4, 1.6), 0.9, 0}, {gts[0], 0.5, 0}};
    auto ap3 = eval::ap_compute(fp_first, gts, eval::Metric::BEV);
    CHECK(ap3.at("overall") == doctest::Approx(0.5).epsilon(0.05));
}

TEST_CASE("ap_compute buckets by ground-truth range") {
    std::vector<Box3D> gts = {box(10, 0, 4, 1.6), box(40, 0, 4, 1.6), box(70, 0, 4, 1.6)};
    std::vector<Detection> dets = {{gts[0], 0.9, 0}, {gts[1], 0.8, 0}}; // miss the far one
    auto ap = eval::ap_compute(dets, gts, eval::Metric::ThreeD);
    CHECK(ap.at("0-30m") == doctest::Approx(1.0));
    CHECK(ap.at("30-50m") == doctest::Approx(1.0));
    CHECK(ap.at("50-100m") == doctest::Approx(0.0));
    CHECK(ap.at("overall") < 1.0);
}

TEST_CASE("ap_compute_scenes pools curves across scenes") {
    std::vector<Box3D> g1 = {box(10, 0, 4, 1.6)};
    std::vector<Box3D> g2 = {box(12, 2, 4, 1.6)};
    std::vector<std::vector<Detection>> dets = {{{g1[0], 0.9, 0}}, {{g2[0], 0.8, 0}}};
    auto ap = eval::ap_compute_scenes(dets, {g1, g2}, eval::Metric::BEV);
    CHECK(ap.at("overall") == doctest::Approx(1.0));
    // a detection matching GT in the wrong scene is a false positive
    std::vector<std::vector<Detection>> swapped = {{{g2[0], 0.9, 0}}, {{g1[0], 0.8, 0}}};
    auto ap_sw = eval::ap_compute_scenes(swapped, {g1, g2}, eval::Metric::BEV);
    CHECK(ap_sw.at("overall") < 0.1);
}

TEST_CASE("default buckets cover 0-100m half-open") {
    const auto b = eval::default_buckets();
    REQUIRE(b.size() == 4);
    CHECK(b[0].name == "overall");
    CHECK(b[1].name == "0-30m");
    CHECK(b[2].name == "30-50m");
    CHECK(b[3].name == "50-100m");
    CHECK(b[2].min_m == 30.0);
    CHECK(b[2].max_m == 50.0);
}
