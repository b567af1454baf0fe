#pragma once

#include <cmath>

#include "vicsim/ops.hpp"

namespace vicsim::ops {

namespace detail {

// Bilinear tap weights at (x,y) with zero padding outside [-1,W]x[-1,H].
// Up to four (pixel, weight) contributions.
struct BilinearTaps {
    int x0, y0;
    double wx, wy; // fractional parts toward (x0+1, y0+1)
};

inline BilinearTaps bilinear_taps(double x, double y) {
    BilinearTaps t;
    t.x0 = static_cast<int>(std::floor(x));
    t.y0 = static_cast<int>(std::floor(y));
    t.wx = x - t.x0;
    t.wy = y - t.y0;
    return t;
}

template <class S>
double bilinear_value(const Tensor<S>& f, int c, double x, double y) {
    const int H = f.shape[1], W = f.shape[2];
    if (x <= -1.0 || x >= W || y <= -1.0 || y >= H) return 0.0;
    const BilinearTaps t = bilinear_taps(x, y);
    auto px = [&](int yy, int xx) -> double {
        if (xx < 0 || xx >= W || yy < 0 || yy >= H) return 0.0;
        return static_cast<double>(f.at(c, yy, xx));
    };
    return (1 - t.wy) * ((1 - t.wx) * px(t.y0, t.x0) + t.wx * px(t.y0, t.x0 + 1)) +
           t.wy * ((1 - t.wx) * px(t.y0 + 1, t.x0) + t.wx * px(t.y0 + 1, t.x0 + 1));
}

// d(sample)/d(x), d(sample)/d(y) at fixed feature values.
template <class S>
void bilinear_coord_grad(const Tensor<S>& f, int c, double x, double y, double& dx, double& dy) {
    const int H = f.shape[1], W = f.shape[2];
    dx = dy = 0.0;
    if (x <= -1.0 || x >= W || y <= -1.0 || y >= H) return;
    const BilinearTaps t = bilinear_taps(x, y);
    auto px = [&](int yy, int xx) -> double {
        if (xx < 0 || xx >= W || yy < 0 || yy >= H) return 0.0;
        return static_cast<double>(f.at(c, yy, xx));
    };
    const double p00 = px(t.y0, t.x0), p01 = px(t.y0, t.x0 + 1);
    const double p10 = px(t.y0 + 1, t.x0), p11 = px(t.y0 + 1, t.x0 + 1);
    dx = (1 - t.wy) * (p01 - p00) + t.wy * (p11 - p10);
    dy = (1 - t.wx) * (p10 - p00) + t.wx * (p11 - p01);
}

// Scatter g into the feature gradient at (x,y).
template <class S>
void bilinear_scatter(Tensor<S>& gf, int c, double x, double y, double g) {
    const int H = gf.shape[1], W = gf.shape[2];
    if (x <= -1.0 || x >= W || y <= -1.0 || y >= H) return;
    const BilinearTaps t = bilinear_taps(x, y);
    auto acc = [&](int yy, int xx, double w) {
        if (xx < 0 || xx >= W || yy < 0 || yy >= H) return;
        gf.at(c, yy, xx) += static_cast<S>(g * w);
    };
    acc(t.y0, t.x0, (1 - t.wy) * (1 - t.wx));
    acc(t.y0, t.x0 + 1, (1 - t.wy) * t.wx);
    acc(t.y0 + 1, t.x0, t.wy * (1 - t.wx));
    acc(t.y0 + 1, t.x0 + 1, t.wy * t.wx);
}

} // namespace detail

// Cross-correlation with zero padding. input [Cin,H,W], kernel [Cout,Cin,k,k],
// bias [Cout].
template <class S>
Var conv2d(Tape<S>& t, Var input, Var kernel, Var bias, int stride, int pad) {
    const Tensor<S>& x = t.val(input);
    const Tensor<S>& k = t.val(kernel);
    const Tensor<S>& b = t.val(bias);
    if (x.rank() != 3 || k.rank() != 4 || b.rank() != 1)
        throw ConfigError("conv2d: ranks input " + Tensor<S>::shape_str(x.shape) + " kernel " +
                          Tensor<S>::shape_str(k.shape) + " bias " + Tensor<S>::shape_str(b.shape));
    const int cin = x.shape[0], H = x.shape[1], W = x.shape[2];
    const int cout = k.shape[0], kk = k.shape[2];
    if (k.shape[1] != cin || k.shape[3] != kk || b.shape[0] != cout)
        throw ConfigError("conv2d: kernel " + Tensor<S>::shape_str(k.shape) + " incompatible with input " +
                          Tensor<S>::shape_str(x.shape));
    if (kk % 2 == 0) throw ConfigError("conv2d: even kernel size " + std::to_string(kk));
    if (stride < 1 || pad < 0) throw ConfigError("conv2d: bad stride/pad");
    const int Ho = (H + 2 * pad - kk) / stride + 1;
    const int Wo = (W + 2 * pad - kk) / stride + 1;
    if (Ho < 1 || Wo < 1)
        throw ConfigError("conv2d: empty output for input " + Tensor<S>::shape_str(x.shape));
    Tensor<S> out({cout, Ho, Wo});
    for (int co = 0; co < cout; ++co)
        for (int oy = 0; oy < Ho; ++oy)
            for (int ox = 0; ox < Wo; ++ox) {
                double acc = b.data[co];
                for (int ci = 0; ci < cin; ++ci)
                    for (int ky = 0; ky < kk; ++ky) {
                        const int iy = oy * stride - pad + ky;
                        if (iy < 0 || iy >= H) continue;
                        for (int kx = 0; kx < kk; ++kx) {
                            const int ix = ox * stride - pad + kx;
                            if (ix < 0 || ix >= W) continue;
                            acc += static_cast<double>(x.at(ci, iy, ix)) * k.at(co, ci, ky, kx);
                        }
                    }
                out.at(co, oy, ox) = static_cast<S>(acc);
            }
    Var o = t.push(std::move(out));
    t.record([&t, input, kernel, bias, o, cin, cout, H, W, Ho, Wo, kk, stride, pad] {
        const Tensor<S>& g = t.grad(o);
        const Tensor<S>& x = t.val(input);
        const Tensor<S>& k = t.val(kernel);
        Tensor<S>& gx = t.grad(input);
        Tensor<S>& gk = t.grad(kernel);
        Tensor<S>& gb = t.grad(bias);
        for (int co = 0; co < cout; ++co)
            for (int oy = 0; oy < Ho; ++oy)
                for (int ox = 0; ox < Wo; ++ox) {
                    const S go = g.at(co, oy, ox);
                    gb.data[co] += go;
                    for (int ci = 0; ci < cin; ++ci)
                        for (int ky = 0; ky < kk; ++ky) {
                            const int iy = oy * stride - pad + ky;
                            if (iy < 0 || iy >= H) continue;
                            for (int kx = 0; kx < kk; ++kx) {
                                const int ix = ox * stride - pad + kx;
                                if (ix < 0 || ix >= W) continue;
                                gk.at(co, ci, ky, kx) += go * x.at(ci, iy, ix);
                                gx.at(ci, iy, ix) += go * k.at(co, ci, ky, kx);
                            }
                        }
                }
    });
    return o;
}

// 3D cross-correlation, stride 1, same padding. input [Cin,D,H,W],
// kernel [Cout,Cin,k,k,k], bias [Cout].
template <class S>
Var conv3d(Tape<S>& t, Var input, Var kernel, Var bias) {
    const Tensor<S>& x = t.val(input);
    const Tensor<S>& k = t.val(kernel);
    const Tensor<S>& b = t.val(bias);
    if (x.rank() != 4 || k.rank() != 5 || b.rank() != 1)
        throw ConfigError("conv3d: bad ranks");
    const int cin = x.shape[0], D = x.shape[1], H = x.shape[2], W = x.shape[3];
    const int cout = k.shape[0], kk = k.shape[2];
    if (k.shape[1] != cin || k.shape[3] != kk || k.shape[4] != kk || b.shape[0] != cout || kk % 2 == 0)
        throw ConfigError("conv3d: kernel " + Tensor<S>::shape_str(k.shape) + " incompatible with input " +
                          Tensor<S>::shape_str(x.shape));
    const int pad = kk / 2;
    Tensor<S> out({cout, D, H, W});
    for (int co = 0; co < cout; ++co)
        for (int oz = 0; oz < D; ++oz)
            for (int oy = 0; oy < H; ++oy)
                for (int ox = 0; ox < W; ++ox) {
                    double acc = b.data[co];
                    for (int ci = 0; ci < cin; ++ci)
                        for (int kz = 0; kz < kk; ++kz) {
                            const int iz = oz - pad + kz;
                            if (iz < 0 || iz >= D) continue;
                            for (int ky = 0; ky < kk; ++ky) {
                                const int iy = oy - pad + ky;
                                if (iy < 0 || iy >= H) continue;
                                for (int kx = 0; kx < kk; ++kx) {
                                    const int ix = ox - pad + kx;
                                    if (ix < 0 || ix >= W) continue;
                                    acc += static_cast<double>(x.at(ci, iz, iy, ix)) *
                                           k.at(co, ci, kz, ky, kx);
                                }
                            }
                        }
                    out.at(co, oz, oy, ox) = static_cast<S>(acc);
                }
    Var o = t.push(std::move(out));
    t.record([&t, input, kernel, bias, o, cin, cout, D, H, W, kk, pad] {
        const Tensor<S>& g = t.grad(o);
        const Tensor<S>& x = t.val(input);
        const Tensor<S>& k = t.val(kernel);
        for (int co = 0; co < cout; ++co)
            for (int oz = 0; oz < D; ++oz)
                for (int oy = 0; oy < H; ++oy)
                    for (int ox = 0; ox < W; ++ox) {
                        const S go = g.at(co, oz, oy, ox);
                        t.grad(bias).data[co] += go;
                        for (int ci = 0; ci < cin; ++ci)
                            for (int kz = 0; kz < kk; ++kz) {
                                const int iz = oz - pad + kz;
                                if (iz < 0 || iz >= D) continue;
                                for (int ky = 0; ky < kk; ++ky) {
                                    const int iy = oy - pad + ky;
                                    if (iy < 0 || iy >= H) continue;
                                    for (int kx = 0; kx < kk; ++kx) {
                                        const int ix = ox - pad + kx;
                                        if (ix < 0 || ix >= W) continue;
                                        t.grad(kernel).at(co, ci, kz, ky, kx) += go * x.at(ci, iz, iy, ix);
                                        t.grad(input).at(ci, iz, iy, ix) += go * k.at(co, ci, kz, ky, kx);
                                    }
                                }
                            }
                    }
    });
    return o;
}

// Single-point bilinear sample, zero padding outside the map. Coordinates are
// fixed geometry; gradient flows to the feature values only.
template <class S>
Var bilinear_sample(Tape<S>& t, Var feature, double x, double y) {
    const Tensor<S>& f = t.val(feature);
    if (f.rank() != 3) throw ConfigError("bilinear_sample: want [C,H,W]");
    const int C = f.shape[0];
    Tensor<S> out({C});
    for (int c = 0; c < C; ++c) out.data[c] = static_cast<S>(detail::bilinear_value(f, c, x, y));
    Var o = t.push(std::move(out));
    t.record([&t, feature, o, x, y, C] {
        const Tensor<S>& g = t.grad(o);
        for (int c = 0; c < C; ++c)
            detail::bilinear_scatter(t.grad(feature), c, x, y, static_cast<double>(g.data[c]));
    });
    return o;
}

// Deformable 3x3-style convolution, stride 1, pad k/2 (same-size output).
// offsets [2*k*k,H,W]; channel 2t is the x displacement of tap t = ky*k+kx,
// channel 2t+1 the y displacement. Gradients reach input, kernel and offsets.
template <class S>
Var deform_conv2d(Tape<S>& t, Var input, Var kernel, Var offsets) {
    const Tensor<S>& x = t.val(input);
    const Tensor<S>& k = t.val(kernel);
    const Tensor<S>& off = t.val(offsets);
    if (x.rank() != 3 || k.rank() != 4 || off.rank() != 3) throw ConfigError("deform_conv2d: bad ranks");
    const int cin = x.shape[0], H = x.shape[1], W = x.shape[2];
    const int cout = k.shape[0], kk = k.shape[2];
    if (k.shape[1] != cin || k.shape[3] != kk || kk % 2 == 0)
        throw ConfigError("deform_conv2d: kernel " + Tensor<S>::shape_str(k.shape) +
                          " incompatible with input " + Tensor<S>::shape_str(x.shape));
    if (off.shape[0] != 2 * kk * kk || off.shape[1] != H || off.shape[2] != W)
        throw ConfigError("deform_conv2d: offsets " + Tensor<S>::shape_str(off.shape) + " want (" +
                          std::to_string(2 * kk * kk) + "," + std::to_string(H) + "," +
                          std::to_string(W) + ")");
    const int pad = kk / 2;
    Tensor<S> out({cout, H, W});
    for (int oy = 0; oy < H; ++oy)
        for (int ox = 0; ox < W; ++ox)
            for (int ky = 0; ky < kk; ++ky)
                for (int kx = 0; kx < kk; ++kx) {
                    const int tap = ky * kk + kx;
                    const double sx = ox - pad + kx + static_cast<double>(off.at(2 * tap, oy, ox));
                    const double sy = oy - pad + ky + static_cast<double>(off.at(2 * tap + 1, oy, ox));
                    for (int ci = 0; ci < cin; ++ci) {
                        const double v = detail::bilinear_value(x, ci, sx, sy);
                        for (int co = 0; co < cout; ++co)
                            out.at(co, oy, ox) += static_cast<S>(v * k.at(co, ci, ky, kx));
                    }
                }
    Var o = t.push(std::move(out));
    t.record([&t, input, kernel, offsets, o, cin, cout, H, W, kk, pad] {
        const Tensor<S>& g = t.grad(o);
        const Tensor<S>& x = t.val(input);
        const Tensor<S>& k = t.val(kernel);
        const Tensor<S>& off = t.val(offsets);
        for (int oy = 0; oy < H; ++oy)
            for (int ox = 0; ox < W; ++ox)
                for (int ky = 0; ky < kk; ++ky)
                    for (int kx = 0; kx < kk; ++kx) {
                        const int tap = ky * kk + kx;
                        const double sx = ox - pad + kx + static_cast<double>(off.at(2 * tap, oy, ox));
                        const double sy = oy - pad + ky + static_cast<double>(off.at(2 * tap + 1, oy, ox));
                        double gox = 0, goy = 0;
                        for (int ci = 0; ci < cin; ++ci) {
                            double wsum = 0; // sum over cout of go * kernel weight
                            for (int co = 0; co < cout; ++co) {
                                const double go = g.at(co, oy, ox);
                                wsum += go * k.at(co, ci, ky, kx);
                                t.grad(kernel).at(co, ci, ky, kx) +=
                                    static_cast<S>(go * detail::bilinear_value(x, ci, sx, sy));
                            }
                            detail::bilinear_scatter(t.grad(input), ci, sx, sy, wsum);
                            double dx, dy;
                            detail::bilinear_coord_grad(x, ci, sx, sy, dx, dy);
                            gox += wsum * dx;
                            goy += wsum * dy;
                        }
                        t.grad(offsets).at(2 * tap, oy, ox) += static_cast<S>(gox);
                        t.grad(offsets).at(2 * tap + 1, oy, ox) += static_cast<S>(goy);
                    }
    });
    return o;
}

// Bilinear upsample by integer factor with edge clamping (interpolation
// within the map, unlike the zero-padded point sampler).
template <class S>
Var upsample_bilinear(Tape<S>& t, Var input, int factor) {
    const Tensor<S>& x = t.val(input);
    if (x.rank() != 3) throw ConfigError("upsample_bilinear: want [C,H,W]");
    if (factor < 1) throw ConfigError("upsample_bilinear: factor < 1");
    const int C = x.shape[0], H = x.shape[1], W = x.shape[2];
    const int Ho = H * factor, Wo = W * factor;
    Tensor<S> out({C, Ho, Wo});
    auto src = [&](int o, int n, int f) {
        double s = (o + 0.5) / f - 0.5;
        return std::clamp(s, 0.0, static_cast<double>(n - 1));
    };
    for (int c = 0; c < C; ++c)
        for (int oy = 0; oy < Ho; ++oy) {
            const double syv = src(oy, H, factor);
            const int y0 = static_cast<int>(syv);
            const int y1 = std::min(y0 + 1, H - 1);
            const double wy = syv - y0;
            for (int ox = 0; ox < Wo; ++ox) {
                const double sxv = src(ox, W, factor);
                const int x0 = static_cast<int>(sxv);
                const int x1 = std::min(x0 + 1, W - 1);
                const double wx = sxv - x0;
                out.at(c, oy, ox) = static_cast<S>((1 - wy) * ((1 - wx) * x.at(c, y0, x0) + wx * x.at(c, y0, x1)) +
                                                   wy * ((1 - wx) * x.at(c, y1, x0) + wx * x.at(c, y1, x1)));
            }
        }
    Var o = t.push(std::move(out));
    t.record([&t, input, o, C, H, W, Ho, Wo, factor] {
        const Tensor<S>& g = t.grad(o);
        Tensor<S>& gx = t.grad(input);
        auto src = [&](int oo, int n, int f) {
            double s = (oo + 0.5) / f - 0.5;
            return std::clamp(s, 0.0, static_cast<double>(n - 1));
        };
        for (int c = 0; c < C; ++c)
            for (int oy = 0; oy < Ho; ++oy) {
                const double syv = src(oy, H, factor);
                const int y0 = static_cast<int>(syv);
                const int y1 = std::min(y0 + 1, H - 1);
                const double wy = syv - y0;
                for (int ox = 0; ox < Wo; ++ox) {
                    const double sxv = src(ox, W, factor);
                    const int x0 = static_cast<int>(sxv);
                    const int x1 = std::min(x0 + 1, W - 1);
                    const double wx = sxv - x0;
                    const double go = g.at(c, oy, ox);
                    gx.at(c, y0, x0) += static_cast<S>(go * (1 - wy) * (1 - wx));
                    gx.at(c, y0, x1) += static_cast<S>(go * (1 - wy) * wx);
                    gx.at(c, y1, x0) += static_cast<S>(go * wy * (1 - wx));
                    gx.at(c, y1, x1) += static_cast<S>(go * wy * wx);
                }
            }
    });
    return o;
}

template <class S>
Var upsample2x(Tape<S>& t, Var input) {
    return upsample_bilinear(t, input, 2);
}

} // namespace vicsim::ops
