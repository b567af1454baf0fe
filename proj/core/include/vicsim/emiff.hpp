#pragma once

#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "vicsim/checkpoint.hpp"
#include "vicsim/conv.hpp"
#include "vicsim/eval.hpp"
#include "vicsim/geometry.hpp"
#include "vicsim/ops.hpp"

namespace vicsim::emiff {

using ckpt::Params;

enum class Side { Veh, Inf };

inline const char* side_prefix(Side s) { return s == Side::Veh ? "veh" : "inf"; }

struct ModelConfig {
    int channels = 64; // C: pyramid channel count; also the voxel channel count C1
    int scales = 4;    // M: pyramid depth, strides 4,8,16,32
    int c2 = 256;      // BEV channel count
    int ccr = 1;       // channel compression rate
    int scr = 1;       // spatial compression rate (perfect square)
    int feature_stride = 4; // image px per scale-0 feature cell
    int grid_nz = 4;   // N_z the BEV neck is built for

    // Single-class anchor, one per BEV cell.
    double anchor_l = 3.9, anchor_w = 1.6, anchor_h = 1.56;
    double anchor_z = 0.78;

    double score_thresh = 0.3;
    double nms_iou = 0.5;

    // SECOND-style matching and loss weights.
    double pos_iou = 0.6, neg_iou = 0.45;
    double focal_alpha = 0.25, focal_gamma = 2.0;
    double smooth_l1_beta = 1.0;
    double lambda_cls = 1.0, lambda_dir = 0.2;
};

inline void validate_config(const ModelConfig& cfg) {
    if (cfg.scales < 1) throw ConfigError("model: scales < 1");
    if (cfg.channels < 1 || cfg.c2 < 1) throw ConfigError("model: bad channel counts");
    if (cfg.ccr < 1 || cfg.channels % cfg.ccr != 0)
        throw ConfigError("model: ccr " + std::to_string(cfg.ccr) + " does not divide C=" +
                          std::to_string(cfg.channels));
    const int root = static_cast<int>(std::lround(std::sqrt(static_cast<double>(cfg.scr))));
    if (cfg.scr < 1 || root * root != cfg.scr)
        throw ConfigError("model: scr " + std::to_string(cfg.scr) + " is not a perfect square");
}

inline int scr_root(const ModelConfig& cfg) {
    return static_cast<int>(std::lround(std::sqrt(static_cast<double>(cfg.scr))));
}

// ---- parameter creation -----------------------------------------------------

namespace detail {

template <class S>
Tensor<S> uniform_tensor(std::vector<int> shape, double bound, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(-bound, bound);
    Tensor<S> t(std::move(shape));
    for (S& v : t.data) v = static_cast<S>(u(rng));
    return t;
}

template <class S>
void add_conv(Params<S>& p, const std::string& name, int cout, int cin, int k,
              std::mt19937_64& rng, bool bias = true) {
    const double bound = std::sqrt(6.0 / (static_cast<double>(cin) * k * k));
    p.emplace(name + ".w", uniform_tensor<S>({cout, cin, k, k}, bound, rng));
    if (bias) p.emplace(name + ".b", Tensor<S>({cout}));
}

template <class S>
void add_conv3d(Params<S>& p, const std::string& name, int cout, int cin, int k,
                std::mt19937_64& rng) {
    const double bound = std::sqrt(6.0 / (static_cast<double>(cin) * k * k * k));
    p.emplace(name + ".w", uniform_tensor<S>({cout, cin, k, k, k}, bound, rng));
    p.emplace(name + ".b", Tensor<S>({cout}));
}

template <class S>
void add_linear(Params<S>& p, const std::string& name, int out, int in, std::mt19937_64& rng) {
    const double bound = std::sqrt(6.0 / static_cast<double>(in));
    p.emplace(name + ".w", uniform_tensor<S>({out, in}, bound, rng));
    p.emplace(name + ".b", Tensor<S>({out}));
}

} // namespace detail

// Seeded He-style uniform initialization (bound sqrt(6/fan_in)), which keeps
// activation variance roughly constant through the ReLU conv stacks.
template <class S>
Params<S> init_params(const ModelConfig& cfg, std::uint64_t seed) {
    validate_config(cfg);
    std::mt19937_64 rng(seed);
    Params<S> p;
    const int C = cfg.channels;
    const int M = cfg.scales;

    for (Side side : {Side::Veh, Side::Inf}) {
        const std::string s = side_prefix(side);
        // Feature extractor: two stride-2 stem convs to stride 4, then one
        // stride-2 conv per extra scale. Independent weights per side.
        detail::add_conv(p, s + ".stem0", C, 3, 3, rng);
        detail::add_conv(p, s + ".stem1", C, C, 3, rng);
        for (int m = 1; m < M; ++m) detail::add_conv(p, s + ".down" + std::to_string(m), C, C, 3, rng);
        // MFC: per-scale offset predictor + deformable conv + up-conv chain.
        for (int m = 0; m < M; ++m) {
            const std::string base = s + ".mfc" + std::to_string(m);
            detail::add_conv(p, base + ".off", 18, C, 3, rng);
            detail::add_conv(p, base + ".dcn", C, C, 3, rng, /*bias=*/false);
            for (int j = 0; j < m; ++j)
                detail::add_conv(p, base + ".up" + std::to_string(j), C, C, 3, rng);
        }
        // CCM: 21 -> 64 -> C, then FC+ReLU, FC+Sigmoid.
        detail::add_linear(p, s + ".ccm.l0", 64, 21, rng);
        detail::add_linear(p, s + ".ccm.l1", C, 64, rng);
        detail::add_linear(p, s + ".ccm.l2", C, C, rng);
        detail::add_linear(p, s + ".ccm.l3", C, C, rng);
    }

    // FC codec (infrastructure side only).
    const int cc = C / cfg.ccr;
    const int sr = scr_root(cfg);
    detail::add_conv(p, "fc.cch", cc, C, 1, rng);            // channel compressor
    if (sr > 1) {
        const int k = sr % 2 == 1 ? sr : sr + 1; // odd kernel covering the stride window
        detail::add_conv(p, "fc.csp", cc, cc, k, rng);       // spatial compressor (strided)
    }
    detail::add_conv(p, "fc.dsp", cc, cc, 3, rng);           // spatial decompressor conv
    detail::add_conv(p, "fc.dch", C, cc, 1, rng);            // channel decompressor
    for (int m = 1; m < M; ++m) detail::add_conv(p, "fc.down" + std::to_string(m), C, C, 3, rng);

    // BEV neck: 3D conv then z-concat and 1x1 conv to C2.
    detail::add_conv3d(p, "bev.c3d", C, C, 3, rng);
    detail::add_conv(p, "bev.c2d", cfg.c2, C * cfg.grid_nz, 1, rng);

    // Detection head: three parallel 1x1 convs.
    detail::add_conv(p, "head.cls", 1, cfg.c2, 1, rng);
    detail::add_conv(p, "head.reg", 7, cfg.c2, 1, rng);
    detail::add_conv(p, "head.dir", 2, cfg.c2, 1, rng);
    return p;
}

// Parameters bound onto a tape for one recording.
template <class S>
struct Bound {
    Tape<S>* tape = nullptr;
    const ModelConfig* cfg = nullptr;
    std::map<std::string, Var> vars;

    Var operator[](const std::string& name) const {
        auto it = vars.find(name);
        if (it == vars.end()) throw ConfigError("unknown parameter " + name);
        return it->second;
    }
};

template <class S>
Bound<S> bind(Tape<S>& tape, const ModelConfig& cfg, const Params<S>& params) {
    Bound<S> b;
    b.tape = &tape;
    b.cfg = &cfg;
    for (const auto& [name, t] : params) b.vars.emplace(name, tape.push(t));
    return b;
}

template <class S>
Params<S> collect_grads(const Bound<S>& b) {
    Params<S> g;
    for (const auto& [name, v] : b.vars) g.emplace(name, b.tape->grad(v));
    return g;
}

// ---- forward blocks ---------------------------------------------------------

template <class S>
Var conv_block(Bound<S>& b, const std::string& name, Var x, int stride, int pad, bool act = true) {
    Var y = ops::conv2d(*b.tape, x, b[name + ".w"], b[name + ".b"], stride, pad);
    return act ? ops::relu(*b.tape, y) : y;
}

// Small per-side conv stack standing in for the pretrained backbone+neck.
// image [3,H,W] with H,W divisible by 2^(M+1); output M maps, strides 4..4*2^(M-1).
template <class S>
std::vector<Var> extract_features(Bound<S>& b, Var image, Side side) {
    const ModelConfig& cfg = *b.cfg;
    const Tensor<S>& img = b.tape->val(image);
    if (img.rank() != 3 || img.shape[0] != 3) throw ConfigError("extract_features: image must be [3,H,W]");
    const int div = 1 << (cfg.scales + 1);
    if (img.shape[1] % div != 0 || img.shape[2] % div != 0)
        throw ConfigError("extract_features: image " + Tensor<S>::shape_str(img.shape) +
                          " not divisible by " + std::to_string(div));
    const std::string s = side_prefix(side);
    Var x = conv_block(b, s + ".stem0", image, 2, 1);
    x = conv_block(b, s + ".stem1", x, 2, 1);
    std::vector<Var> pyramid{x};
    for (int m = 1; m < cfg.scales; ++m)
        pyramid.push_back(conv_block(b, s + ".down" + std::to_string(m), pyramid.back(), 2, 1));
    return pyramid;
}

// Channel then spatial compressor; output is the transmitted tensor f_inf^T.
template <class S>
Var fc_compress(Bound<S>& b, Var f0_inf) {
    const ModelConfig& cfg = *b.cfg;
    const Tensor<S>& f = b.tape->val(f0_inf);
    const int sr = scr_root(cfg);
    if (f.shape[1] % sr != 0 || f.shape[2] % sr != 0)
        throw ConfigError("fc_compress: sqrt(scr)=" + std::to_string(sr) + " does not divide map " +
                          Tensor<S>::shape_str(f.shape));
    Var x = conv_block(b, "fc.cch", f0_inf, 1, 0, /*act=*/false);
    if (sr > 1) {
        const int k = sr % 2 == 1 ? sr : sr + 1;
        x = conv_block(b, "fc.csp", x, sr, k / 2, /*act=*/false);
    }
    return x;
}

// Decode the transmitted tensor back into a full multi-scale pyramid.
template <class S>
std::vector<Var> fc_decompress(Bound<S>& b, Var ft) {
    const ModelConfig& cfg = *b.cfg;
    const Tensor<S>& f = b.tape->val(ft);
    if (f.rank() != 3 || f.shape[0] != cfg.channels / cfg.ccr)
        throw ProtocolError("shape", "fc_decompress: payload " + Tensor<S>::shape_str(f.shape) +
                                         " does not match ccr=" + std::to_string(cfg.ccr));
    const int sr = scr_root(cfg);
    Var x = ft;
    if (sr > 1) x = ops::upsample_bilinear(*b.tape, x, sr);
    x = conv_block(b, "fc.dsp", x, 1, 1, /*act=*/false);
    x = conv_block(b, "fc.dch", x, 1, 0, /*act=*/false); // f_inf^{S'}
    std::vector<Var> pyramid{x};
    for (int m = 1; m < cfg.scales; ++m)
        pyramid.push_back(conv_block(b, "fc.down" + std::to_string(m), pyramid.back(), 2, 1));
    return pyramid;
}

// Multi-scale Feature Correction: per scale a predicted-offset deformable
// conv, then upsample+conv until every map sits at scale-0 size.
template <class S>
std::vector<Var> mfc(Bound<S>& b, const std::vector<Var>& pyramid, Side side) {
    const std::string s = side_prefix(side);
    std::vector<Var> out;
    for (std::size_t m = 0; m < pyramid.size(); ++m) {
        const std::string base = s + ".mfc" + std::to_string(m);
        Var offsets = conv_block(b, base + ".off", pyramid[m], 1, 1, /*act=*/false);
        Var x = ops::deform_conv2d(*b.tape, pyramid[m], b[base + ".dcn.w"], offsets);
        x = ops::relu(*b.tape, x);
        for (std::size_t j = 0; j < m; ++j) {
            x = ops::upsample2x(*b.tape, x);
            x = conv_block(b, base + ".up" + std::to_string(j), x, 1, 1);
        }
        out.push_back(x);
    }
    return out;
}

struct McaOut {
    Var f_veh;
    Var f_inf;
    Var weights; // omega, [M], sums to 1
};

template <class S>
Var scale_by_weight(Bound<S>& b, Var map, Var weights, int index);

// Multi-scale Cross Attention: corrected vehicle maps are mean-fused; the
// vehicle query attends over per-scale infrastructure keys and the weights
// recombine the corrected infrastructure maps.
template <class S>
McaOut mca(Bound<S>& b, const std::vector<Var>& f_veh_pyr, const std::vector<Var>& f_inf_pyr) {
    if (f_veh_pyr.size() != f_inf_pyr.size())
        throw ConfigError("mca: pyramid depth mismatch");
    for (std::size_t m = 0; m < f_veh_pyr.size(); ++m)
        if (b.tape->val(f_veh_pyr[m]).shape[0] != b.tape->val(f_inf_pyr[m]).shape[0])
            throw ConfigError("mca: channel mismatch at scale " + std::to_string(m));
    Tape<S>& t = *b.tape;
    const std::vector<Var> veh_hat = mfc(b, f_veh_pyr, Side::Veh);
    const std::vector<Var> inf_hat = mfc(b, f_inf_pyr, Side::Inf);
    McaOut out;
    out.f_veh = ops::mean_list(t, veh_hat);
    Var query = ops::mean_pool(t, out.f_veh);
    std::vector<Var> key_rows;
    for (Var v : inf_hat) {
        Var k = ops::mean_pool(t, v);
        key_rows.push_back(ops::reshape(t, k, {1, t.val(k).shape[0]}));
    }
    Var keys = key_rows.size() == 1 ? key_rows[0] : ops::concat(t, key_rows, 0);
    out.weights = ops::attention_1d(t, query, keys);
    // inner product: sum_m omega_m * f_hat_m
    Var acc = scale_by_weight(b, inf_hat[0], out.weights, 0);
    for (std::size_t m = 1; m < inf_hat.size(); ++m)
        acc = ops::add(t, acc, scale_by_weight(b, inf_hat[m], out.weights, static_cast<int>(m)));
    out.f_inf = acc;
    return out;
}

// map * weights[index], gradient to both.
template <class S>
Var scale_by_weight(Bound<S>& b, Var map, Var weights, int index) {
    Tape<S>& t = *b.tape;
    Tensor<S> out = t.val(map);
    const S w = t.val(weights).data[static_cast<std::size_t>(index)];
    for (S& v : out.data) v *= w;
    Var o = t.push(std::move(out));
    t.record([&t, map, weights, o, index] {
        const Tensor<S>& g = t.grad(o);
        const S w2 = t.val(weights).data[static_cast<std::size_t>(index)];
        double acc = 0;
        for (std::size_t i = 0; i < g.data.size(); ++i) {
            t.grad(map).data[i] += g.data[i] * w2;
            acc += static_cast<double>(g.data[i]) * t.val(map).data[i];
        }
        t.grad(weights).data[static_cast<std::size_t>(index)] += static_cast<S>(acc);
    });
    return o;
}

struct CcmOut {
    Var out;
    Var mask; // [C], strictly in (0,1)
};

// Camera-aware Channel Masking: sigmoid channel mask predicted from the
// flattened (R | t | K) calibration, broadcast-multiplied onto the feature.
template <class S>
CcmOut ccm(Bound<S>& b, Var feature, const geo::CameraParams& cam, Side side) {
    Tape<S>& t = *b.tape;
    const std::string s = side_prefix(side);
    const auto flat = geo::flatten_camera(cam);
    Tensor<S> in({21});
    for (int i = 0; i < 21; ++i) in.data[static_cast<std::size_t>(i)] = static_cast<S>(flat[static_cast<std::size_t>(i)]);
    Var x = t.push(std::move(in));
    x = ops::relu(t, ops::linear(t, b[s + ".ccm.l0.w"], x, b[s + ".ccm.l0.b"]));
    x = ops::relu(t, ops::linear(t, b[s + ".ccm.l1.w"], x, b[s + ".ccm.l1.b"]));
    x = ops::relu(t, ops::linear(t, b[s + ".ccm.l2.w"], x, b[s + ".ccm.l2.b"]));
    Var mask = ops::sigmoid(t, ops::linear(t, b[s + ".ccm.l3.w"], x, b[s + ".ccm.l3.b"]));
    return CcmOut{ops::channel_mul(t, mask, feature), mask};
}

// Per-voxel masked average of the two sampled voxel grids.
template <class S>
Var fuse_voxels(Tape<S>& t, Var v_veh, const Tensor<std::uint8_t>& mask_veh, Var v_inf,
                const Tensor<std::uint8_t>& mask_inf) {
    const Tensor<S>& a = t.val(v_veh);
    const Tensor<S>& bb = t.val(v_inf);
    if (a.shape != bb.shape) throw ConfigError("fuse_voxels: grid shape mismatch");
    if (mask_veh.shape != mask_inf.shape || a.rank() != 4 ||
        mask_veh.numel() * a.shape[3] != a.numel())
        throw ConfigError("fuse_voxels: mask shape mismatch");
    const std::int64_t nvox = mask_veh.numel();
    const int C = a.shape[3];
    Tensor<S> out(a.shape);
    for (std::int64_t v = 0; v < nvox; ++v) {
        const bool mv = mask_veh.data[static_cast<std::size_t>(v)] != 0;
        const bool mi = mask_inf.data[static_cast<std::size_t>(v)] != 0;
        if (!mv && !mi) continue;
        const S wv = mv && mi ? S(0.5) : (mv ? S(1) : S(0));
        const S wi = mv && mi ? S(0.5) : (mi ? S(1) : S(0));
        for (int c = 0; c < C; ++c) {
            const std::size_t i = static_cast<std::size_t>(v * C + c);
            out.data[i] = wv * a.data[i] + wi * bb.data[i];
        }
    }
    Var o = t.push(std::move(out));
    t.record([&t, v_veh, v_inf, o, mask_veh, mask_inf, nvox, C] {
        const Tensor<S>& g = t.grad(o);
        for (std::int64_t v = 0; v < nvox; ++v) {
            const bool mv = mask_veh.data[static_cast<std::size_t>(v)] != 0;
            const bool mi = mask_inf.data[static_cast<std::size_t>(v)] != 0;
            if (!mv && !mi) continue;
            const S wv = mv && mi ? S(0.5) : (mv ? S(1) : S(0));
            const S wi = mv && mi ? S(0.5) : (mi ? S(1) : S(0));
            for (int c = 0; c < C; ++c) {
                const std::size_t i = static_cast<std::size_t>(v * C + c);
                t.grad(v_veh).data[i] += g.data[i] * wv;
                t.grad(v_inf).data[i] += g.data[i] * wi;
            }
        }
    });
    return o;
}

// Simplified 3D neck: one 3x3x3 conv, fold z into channels, 1x1 conv to C2.
// v_vic is [Nx,Ny,Nz,C]; output [C2,Nx,Ny].
template <class S>
Var bev_reduce(Bound<S>& b, Var v_vic) {
    Tape<S>& t = *b.tape;
    const Tensor<S>& v = t.val(v_vic);
    if (v.rank() != 4) throw ConfigError("bev_reduce: want [Nx,Ny,Nz,C]");
    if (v.shape[2] != b.cfg->grid_nz)
        throw ConfigError("bev_reduce: grid N_z " + std::to_string(v.shape[2]) +
                          " does not match model (" + std::to_string(b.cfg->grid_nz) + ")");
    // [Nx,Ny,Nz,C] -> [C,Nz,Nx,Ny]
    Var x = ops::permute(t, v_vic, {3, 2, 0, 1});
    x = ops::conv3d(t, x, b["bev.c3d.w"], b["bev.c3d.b"]);
    x = ops::relu(t, x);
    const Tensor<S>& xv = t.val(x);
    // fold (C,Nz) into channels
    x = ops::reshape(t, x, {xv.shape[0] * xv.shape[1], xv.shape[2], xv.shape[3]});
    x = conv_block(b, "bev.c2d", x, 1, 0);
    return x;
}

struct HeadOut {
    Var cls; // [1,Nx,Ny] logits
    Var reg; // [7,Nx,Ny] residuals vs anchor
    Var dir; // [2,Nx,Ny] direction logits
};

template <class S>
HeadOut detect_head(Bound<S>& b, Var bev) {
    HeadOut h;
    h.cls = conv_block(b, "head.cls", bev, 1, 0, /*act=*/false);
    h.reg = conv_block(b, "head.reg", bev, 1, 0, /*act=*/false);
    h.dir = conv_block(b, "head.dir", bev, 1, 0, /*act=*/false);
    return h;
}

// ---- anchors, decoding, targets, losses ------------------------------------

inline eval::Box3D anchor_at(const ModelConfig& cfg, const geo::VoxelGridSpec& grid, int ix, int iy) {
    eval::Box3D a;
    a.x = grid.origin.x() + (ix + 0.5) * grid.voxel_size.x();
    a.y = grid.origin.y() + (iy + 0.5) * grid.voxel_size.y();
    a.z = cfg.anchor_z;
    a.l = cfg.anchor_l;
    a.w = cfg.anchor_w;
    a.h = cfg.anchor_h;
    a.yaw = 0.0;
    return a;
}

// Decoded-box recovery: anchor plus additive deltas, yaw flipped by pi when
// the second direction logit wins, then score-threshold and rotated NMS.
template <class S>
std::vector<eval::Detection> decode_and_nms(const ModelConfig& cfg, const geo::VoxelGridSpec& grid,
                                            const Tensor<S>& cls, const Tensor<S>& reg,
                                            const Tensor<S>& dir, double score_thresh,
                                            double nms_iou) {
    const int nx = cls.shape[1], ny = cls.shape[2];
    std::vector<eval::Detection> dets;
    for (int ix = 0; ix < nx; ++ix)
        for (int iy = 0; iy < ny; ++iy) {
            const double score =
                1.0 / (1.0 + std::exp(-static_cast<double>(cls.at(0, ix, iy))));
            if (score < score_thresh) continue;
            eval::Box3D box = anchor_at(cfg, grid, ix, iy);
            box.x += reg.at(0, ix, iy);
            box.y += reg.at(1, ix, iy);
            box.z += reg.at(2, ix, iy);
            box.l += reg.at(3, ix, iy);
            box.w += reg.at(4, ix, iy);
            box.h += reg.at(5, ix, iy);
            box.yaw += reg.at(6, ix, iy);
            if (dir.at(1, ix, iy) > dir.at(0, ix, iy)) box.yaw += M_PI;
            box.yaw = geo::wrap_angle(box.yaw);
            if (box.l <= 0 || box.w <= 0 || box.h <= 0) continue;
            dets.push_back({box, score, 0});
        }
    return eval::nms_bev(std::move(dets), nms_iou);
}

struct Targets {
    Tensor<std::int8_t> label;   // [Nx,Ny]: 1 pos, 0 neg, -1 ignore
    Tensor<float> reg;           // [7,Nx,Ny] residuals (pos cells only)
    Tensor<std::int8_t> dir;     // [Nx,Ny]: 1 when yaw is flipped by pi
    int num_pos = 0;
};

// BEV-IoU anchor matching: positive >= pos_iou, negative < neg_iou, else
// ignored. Regression learns yaw folded into (-pi/2, pi/2]; the flip bit is
// the direction target.
inline Targets assign_targets(const ModelConfig& cfg, const geo::VoxelGridSpec& grid,
                              const std::vector<eval::Box3D>& gts) {
    const int nx = grid.counts[0], ny = grid.counts[1];
    Targets t;
    t.label = Tensor<std::int8_t>({nx, ny});
    t.reg = Tensor<float>({7, nx, ny});
    t.dir = Tensor<std::int8_t>({nx, ny});
    for (int ix = 0; ix < nx; ++ix)
        for (int iy = 0; iy < ny; ++iy) {
            const eval::Box3D anchor = anchor_at(cfg, grid, ix, iy);
            double best = 0;
            int best_gt = -1;
            for (std::size_t g = 0; g < gts.size(); ++g) {
                const double v = eval::iou_bev(anchor, gts[g]);
                if (v > best) {
                    best = v;
                    best_gt = static_cast<int>(g);
                }
            }
            if (best >= cfg.pos_iou) {
                const eval::Box3D& g = gts[static_cast<std::size_t>(best_gt)];
                t.label.at(ix, iy) = 1;
                ++t.num_pos;
                double yaw = geo::wrap_angle(g.yaw);
                bool flip = false;
                if (yaw > M_PI / 2) {
                    yaw -= M_PI;
                    flip = true;
                } else if (yaw <= -M_PI / 2) {
                    yaw += M_PI;
                    flip = true;
                }
                t.reg.at(0, ix, iy) = static_cast<float>(g.x - anchor.x);
                t.reg.at(1, ix, iy) = static_cast<float>(g.y - anchor.y);
                t.reg.at(2, ix, iy) = static_cast<float>(g.z - anchor.z);
                t.reg.at(3, ix, iy) = static_cast<float>(g.l - anchor.l);
                t.reg.at(4, ix, iy) = static_cast<float>(g.w - anchor.w);
                t.reg.at(5, ix, iy) = static_cast<float>(g.h - anchor.h);
                t.reg.at(6, ix, iy) = static_cast<float>(yaw - anchor.yaw);
                t.dir.at(ix, iy) = flip ? 1 : 0;
            } else if (best < cfg.neg_iou) {
                t.label.at(ix, iy) = 0;
            } else {
                t.label.at(ix, iy) = -1;
            }
        }
    return t;
}

inline double smooth_l1(double x, double beta) {
    const double a = std::abs(x);
    return a < beta ? 0.5 * a * a / beta : a - 0.5 * beta;
}

inline double focal_term(double p, int y, double alpha, double gamma) {
    if (y == 1) return -alpha * std::pow(1 - p, gamma) * std::log(p);
    return -(1 - alpha) * std::pow(p, gamma) * std::log(1 - p);
}

struct LossBundle {
    Var bbox, cls, dir, total;
};

// Smooth-L1 over positive cells (sum over 7 dims, / max(1, num_pos)).
template <class S>
Var smooth_l1_loss(Tape<S>& t, Var reg, const Targets& tg, double beta) {
    const Tensor<S>& r = t.val(reg);
    const int nx = r.shape[1], ny = r.shape[2];
    const double norm = std::max(1, tg.num_pos);
    double acc = 0;
    for (int ix = 0; ix < nx; ++ix)
        for (int iy = 0; iy < ny; ++iy) {
            if (tg.label.at(ix, iy) != 1) continue;
            for (int d = 0; d < 7; ++d)
                acc += smooth_l1(static_cast<double>(r.at(d, ix, iy)) - tg.reg.at(d, ix, iy), beta);
        }
    Var o = t.push(Tensor<S>({1}, {static_cast<S>(acc / norm)}));
    t.record([&t, reg, o, tg, beta, norm, nx, ny] {
        const double g = t.grad(o).data[0];
        const Tensor<S>& r = t.val(reg);
        for (int ix = 0; ix < nx; ++ix)
            for (int iy = 0; iy < ny; ++iy) {
                if (tg.label.at(ix, iy) != 1) continue;
                for (int d = 0; d < 7; ++d) {
                    const double x = static_cast<double>(r.at(d, ix, iy)) - tg.reg.at(d, ix, iy);
                    const double dx = std::abs(x) < beta ? x / beta : (x > 0 ? 1.0 : -1.0);
                    t.grad(reg).at(d, ix, iy) += static_cast<S>(g * dx / norm);
                }
            }
    });
    return o;
}

// Sigmoid focal loss over non-ignored cells, / max(1, num_pos).
template <class S>
Var focal_loss(Tape<S>& t, Var cls, const Targets& tg, double alpha, double gamma) {
    const Tensor<S>& c = t.val(cls);
    const int nx = c.shape[1], ny = c.shape[2];
    const double norm = std::max(1, tg.num_pos);
    double acc = 0;
    for (int ix = 0; ix < nx; ++ix)
        for (int iy = 0; iy < ny; ++iy) {
            const int y = tg.label.at(ix, iy);
            if (y < 0) continue;
            const double p = static_cast<double>(ops::detail::sigmoid_scalar(c.at(0, ix, iy)));
            acc += focal_term(p, y, alpha, gamma);
        }
    Var o = t.push(Tensor<S>({1}, {static_cast<S>(acc / norm)}));
    t.record([&t, cls, o, tg, alpha, gamma, norm, nx, ny] {
        const double g = t.grad(o).data[0];
        const Tensor<S>& c = t.val(cls);
        for (int ix = 0; ix < nx; ++ix)
            for (int iy = 0; iy < ny; ++iy) {
                const int y = tg.label.at(ix, iy);
                if (y < 0) continue;
                const double p = static_cast<double>(ops::detail::sigmoid_scalar(c.at(0, ix, iy)));
                double dldx;
                if (y == 1) {
                    // d/dx of -alpha (1-p)^g log p with p = sigmoid(x)
                    dldx = alpha * (gamma * p * std::pow(1 - p, gamma) * std::log(p) -
                                    std::pow(1 - p, gamma + 1));
                } else {
                    dldx = (1 - alpha) * (std::pow(p, gamma + 1) -
                                          gamma * std::pow(p, gamma) * (1 - p) * std::log(1 - p));
                }
                t.grad(cls).at(0, ix, iy) += static_cast<S>(g * dldx / norm);
            }
    });
    return o;
}

// Two-way softmax cross-entropy on positive cells, / max(1, num_pos).
template <class S>
Var dir_ce_loss(Tape<S>& t, Var dir, const Targets& tg) {
    const Tensor<S>& d = t.val(dir);
    const int nx = d.shape[1], ny = d.shape[2];
    const double norm = std::max(1, tg.num_pos);
    double acc = 0;
    auto probs = [&](int ix, int iy, double& p0, double& p1) {
        const double a = d.at(0, ix, iy), bb = d.at(1, ix, iy);
        const double m = std::max(a, bb);
        const double ea = std::exp(a - m), eb = std::exp(bb - m);
        p0 = ea / (ea + eb);
        p1 = eb / (ea + eb);
    };
    for (int ix = 0; ix < nx; ++ix)
        for (int iy = 0; iy < ny; ++iy) {
            if (tg.label.at(ix, iy) != 1) continue;
            double p0, p1;
            probs(ix, iy, p0, p1);
            acc += -std::log(tg.dir.at(ix, iy) == 1 ? p1 : p0);
        }
    Var o = t.push(Tensor<S>({1}, {static_cast<S>(acc / norm)}));
    t.record([&t, dir, o, tg, norm, nx, ny, probs] {
        const double g = t.grad(o).data[0];
        for (int ix = 0; ix < nx; ++ix)
            for (int iy = 0; iy < ny; ++iy) {
                if (tg.label.at(ix, iy) != 1) continue;
                double p0, p1;
                probs(ix, iy, p0, p1);
                const int y = tg.dir.at(ix, iy);
                t.grad(dir).at(0, ix, iy) += static_cast<S>(g * (p0 - (y == 0 ? 1 : 0)) / norm);
                t.grad(dir).at(1, ix, iy) += static_cast<S>(g * (p1 - (y == 1 ? 1 : 0)) / norm);
            }
    });
    return o;
}

template <class S>
LossBundle losses(Bound<S>& b, const HeadOut& head, const Targets& tg) {
    Tape<S>& t = *b.tape;
    const ModelConfig& cfg = *b.cfg;
    LossBundle l;
    l.bbox = smooth_l1_loss(t, head.reg, tg, cfg.smooth_l1_beta);
    l.cls = focal_loss(t, head.cls, tg, cfg.focal_alpha, cfg.focal_gamma);
    l.dir = dir_ce_loss(t, head.dir, tg);
    l.total = ops::add(t, l.bbox,
                       ops::add(t, ops::scale(t, l.cls, cfg.lambda_cls),
                                ops::scale(t, l.dir, cfg.lambda_dir)));
    return l;
}

} // namespace vicsim::emiff
