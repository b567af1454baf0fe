#include <random>

#include "doctest.h"
#include "vicsim/conv.hpp"

using namespace vicsim;

namespace {

Tensor<double> randt(std::vector<int> shape, std::mt19937_64& rng, double lo = -1.0,
                     double hi = 1.0) {
    std::uniform_real_distribution<double> u(lo, hi);
    Tensor<double> t(std::move(shape));
    for (double& v : t.data) v = u(rng);
    return t;
}

// Independent reference: explicitly zero-pad the input, then correlate.
Tensor<double> conv2d_oracle(const Tensor<double>& x, const Tensor<double>& k,
                             const Tensor<double>& b, int stride, int pad) {
    const int cin = x.shape[0], H = x.shape[1], W = x.shape[2];
    const int cout = k.shape[0], kk = k.shape[2];
    Tensor<double> padded({cin, H + 2 * pad, W + 2 * pad});
    for (int c = 0; c < cin; ++c)
        for (int y = 0; y < H; ++y)
            for (int xx = 0; xx < W; ++xx) padded.at(c, y + pad, xx + pad) = x.at(c, y, xx);
    const int Ho = (H + 2 * pad - kk) / stride + 1;
    const int Wo = (W + 2 * pad - kk) / stride + 1;
    Tensor<double> out({cout, Ho, Wo});
    for (int co = 0; co < cout; ++co)
        for (int oy = 0; oy < Ho; ++oy)
            for (int ox = 0; ox < Wo; ++ox) {
                double acc = b.data[co];
                for (int ci = 0; ci < cin; ++ci)
                    for (int ky = 0; ky < kk; ++ky)
                        for (int kx = 0; kx < kk; ++kx)
                            acc += padded.at(ci, oy * stride + ky, ox * stride + kx) *
                                   k.at(co, ci, ky, kx);
                out.at(co, oy, ox) = acc;
            }
    return out;
}

} // namespace

TEST_CASE("conv2d matches the padded-correlation oracle") {
    std::mt19937_64 rng(17);
    for (int trial = 0; trial < 20; ++trial) {
        const int stride = 1 + static_cast<int>(rng() % 2);
        const int pad = static_cast<int>(rng() % 2);
        const int kk = (rng() % 2) ? 1 : 3;
        const int realpad = kk == 1 ? 0 : pad;
        Tensor<double> x = randt({2, 6, 7}, rng);
        Tensor<double> k = randt({3, 2, kk, kk}, rng);
        Tensor<double> b = randt({3}, rng);
        Tape<double> t;
        Var y = ops::conv2d(t, t.push(x), t.push(k), t.push(b), stride, realpad);
        Tensor<double> ref = conv2d_oracle(x, k, b, stride, realpad);
        REQUIRE(t.val(y).shape == ref.shape);
        CHECK(max_abs_diff(t.val(y), ref) < 1e-12);
    }
}

TEST_CASE("conv2d rejects bad geometry") {
    Tape<double> t;
    std::mt19937_64 rng(1);
    Var x = t.push(randt({2, 4, 4}, rng));
    Var k = t.push(randt({3, 2, 2, 2}, rng)); // even kernel
    Var b = t.push(randt({3}, rng));
    CHECK_THROWS_AS(ops::conv2d(t, x, k, b, 1, 0), ConfigError);
    Var k3 = t.push(randt({3, 1, 3, 3}, rng)); // channel mismatch
    CHECK_THROWS_AS(ops::conv2d(t, x, k3, b, 1, 1), ConfigError);
    Var k5 = t.push(randt({3, 2, 5, 5}, rng)); // output would be empty
    CHECK_THROWS_AS(ops::conv2d(t, x, k5, b, 1, 0), ConfigError);
}

TEST_CASE("conv3d same-padding identity kernel") {
    std::mt19937_64 rng(5);
    Tensor<double> x = randt({2, 3, 4, 4}, rng);
    Tensor<double> k({2, 2, 3, 3, 3});
    // center tap of the matching input channel = 1
    k.at(0, 0, 1, 1, 1) = 1.0;
    k.at(1, 1, 1, 1, 1) = 1.0;
    Tensor<double> b({2});
    Tape<double> t;
    Var y = ops::conv3d(t, t.push(x), t.push(k), t.push(b));
    CHECK(max_abs_diff(t.val(y), x) < 1e-15);
}

TEST_CASE("deform_conv2d with zero offsets equals conv2d") {
    std::mt19937_64 rng(23);
    for (int trial = 0; trial < 20; ++trial) {
        Tensor<double> x = randt({2, 5, 6}, rng);
        Tensor<double> k = randt({3, 2, 3, 3}, rng);
        Tensor<double> zero_b({3});
        Tensor<double> zero_off({18, 5, 6});
        Tape<double> t;
        Var yd = ops::deform_conv2d(t, t.push(x), t.push(k), t.push(zero_off));
        Var yc = ops::conv2d(t, t.push(x), t.push(k), t.push(zero_b), 1, 1);
        CHECK(max_abs_diff(t.val(yd), t.val(yc)) < 1e-6);
    }
}

TEST_CASE("deform_conv2d validates offset shape") {
    std::mt19937_64 rng(2);
    Tape<double> t;
    Var x = t.push(randt({2, 5, 5}, rng));
    Var k = t.push(randt({2, 2, 3, 3}, rng));
    Var off = t.push(randt({17, 5, 5}, rng));
    CHECK_THROWS_AS(ops::deform_conv2d(t, x, k, off), ConfigError);
}

TEST_CASE("bilinear_sample interpolates and zero-pads") {
    Tensor<double> f({1, 2, 2}, {1.0, 2.0, 3.0, 4.0});
    Tape<double> t;
    Var v = t.push(f);
    CHECK(t.val(ops::bilinear_sample(t, v, 0.5, 0.5)).data[0] == doctest::Approx(2.5));
    CHECK(t.val(ops::bilinear_sample(t, v, 0.0, 1.0)).data[0] == doctest::Approx(3.0));
    // half inside: (x,y)=(-0.5,0) blends pixel (0,0) with zero padding
    CHECK(t.val(ops::bilinear_sample(t, v, -0.5, 0.0)).data[0] == doctest::Approx(0.5));
    CHECK(t.val(ops::bilinear_sample(t, v, -1.0, 0.0)).data[0] == 0.0);
    CHECK(t.val(ops::bilinear_sample(t, v, 2.0, 0.0)).data[0] == 0.0);
}

TEST_CASE("upsample_bilinear against direct formula") {
    std::mt19937_64 rng(9);
    Tensor<double> x = randt({2, 3, 3}, rng);
    Tape<double> t;
    Var y = ops::upsample_bilinear(t, t.push(x), 2);
    const Tensor<double>& o = t.val(y);
    REQUIRE(o.shape == std::vector<int>{2, 6, 6});
    for (int c = 0; c < 2; ++c)
        for (int oy = 0; oy < 6; ++oy)
            for (int ox = 0; ox < 6; ++ox) {
                const double sy = std::clamp((oy + 0.5) / 2 - 0.5, 0.0, 2.0);
                const double sx = std::clamp((ox + 0.5) / 2 - 0.5, 0.0, 2.0);
                const int y0 = static_cast<int>(sy), x0 = static_cast<int>(sx);
                const int y1 = std::min(y0 + 1, 2), x1 = std::min(x0 + 1, 2);
                const double wy = sy - y0, wx = sx - x0;
                const double ref = (1 - wy) * ((1 - wx) * x.at(c, y0, x0) + wx * x.at(c, y0, x1)) +
                                   wy * ((1 - wx) * x.at(c, y1, x0) + wx * x.at(c, y1, x1));
                CHECK(o.at(c, oy, ox) == doctest::Approx(ref).epsilon(1e-12));
            }
    // constant maps stay constant
    Tensor<double> ones({1, 2, 2}, 1.0);
    Var u = ops::upsample_bilinear(t, t.push(ones), 4);
    for (double v : t.val(u).data) CHECK(v == doctest::Approx(1.0));
}
