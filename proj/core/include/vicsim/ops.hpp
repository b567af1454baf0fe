#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "vicsim/tape.hpp"

namespace vicsim::ops {

// Pointwise and shape ops for the fusion pipeline. Every op is a pure
// function of its tensor inputs; the tape owns all intermediate storage.

namespace detail {

// sigmoid saturates to exactly 0/1 in finite precision; clamping the logit
// keeps outputs strictly inside (0,1), which the channel-mask contract needs.
template <class S>
constexpr double sigmoid_clip() {
    return sizeof(S) == 4 ? 15.0 : 30.0;
}

template <class S>
S sigmoid_scalar(S x) {
    double z = std::clamp(static_cast<double>(x), -sigmoid_clip<S>(), sigmoid_clip<S>());
    return static_cast<S>(1.0 / (1.0 + std::exp(-z)));
}

template <class S>
void check_same_shape(const Tensor<S>& a, const Tensor<S>& b, const char* op) {
    if (a.shape != b.shape)
        throw ConfigError(std::string(op) + ": shape mismatch " + Tensor<S>::shape_str(a.shape) +
                          " vs " + Tensor<S>::shape_str(b.shape));
}

} // namespace detail

template <class S>
Var add(Tape<S>& t, Var a, Var b) {
    detail::check_same_shape(t.val(a), t.val(b), "add");
    Tensor<S> out = t.val(a);
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] += t.val(b).data[i];
    Var o = t.push(std::move(out));
    t.record([&t, a, b, o] {
        const Tensor<S>& g = t.grad(o);
        for (std::size_t i = 0; i < g.data.size(); ++i) {
            t.grad(a).data[i] += g.data[i];
            t.grad(b).data[i] += g.data[i];
        }
    });
    return o;
}

template <class S>
Var mul(Tape<S>& t, Var a, Var b) {
    detail::check_same_shape(t.val(a), t.val(b), "mul");
    Tensor<S> out = t.val(a);
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] *= t.val(b).data[i];
    Var o = t.push(std::move(out));
    t.record([&t, a, b, o] {
        const Tensor<S>& g = t.grad(o);
        for (std::size_t i = 0; i < g.data.size(); ++i) {
            t.grad(a).data[i] += g.data[i] * t.val(b).data[i];
            t.grad(b).data[i] += g.data[i] * t.val(a).data[i];
        }
    });
    return o;
}

template <class S>
Var scale(Tape<S>& t, Var a, double c) {
    Tensor<S> out = t.val(a);
    for (S& v : out.data) v = static_cast<S>(v * c);
    Var o = t.push(std::move(out));
    t.record([&t, a, o, c] {
        const Tensor<S>& g = t.grad(o);
        for (std::size_t i = 0; i < g.data.size(); ++i)
            t.grad(a).data[i] += static_cast<S>(g.data[i] * c);
    });
    return o;
}

template <class S>
Var relu(Tape<S>& t, Var a) {
    Tensor<S> out = t.val(a);
    for (S& v : out.data) v = v > S(0) ? v : S(0);
    Var o = t.push(std::move(out));
    t.record([&t, a, o] {
        const Tensor<S>& g = t.grad(o);
        for (std::size_t i = 0; i < g.data.size(); ++i)
            if (t.val(a).data[i] > S(0)) t.grad(a).data[i] += g.data[i];
    });
    return o;
}

template <class S>
Var sigmoid(Tape<S>& t, Var a) {
    Tensor<S> out = t.val(a);
    for (S& v : out.data) v = detail::sigmoid_scalar(v);
    Var o = t.push(std::move(out));
    t.record([&t, a, o] {
        const Tensor<S>& g = t.grad(o);
        const Tensor<S>& y = t.val(o);
        for (std::size_t i = 0; i < g.data.size(); ++i)
            t.grad(a).data[i] += g.data[i] * y.data[i] * (S(1) - y.data[i]);
    });
    return o;
}

// Softmax along one axis, shift-invariant via max subtraction.
template <class S>
Var softmax(Tape<S>& t, Var a, int axis) {
    const Tensor<S>& x = t.val(a);
    if (axis < 0 || axis >= x.rank())
        throw ConfigError("softmax: axis " + std::to_string(axis) + " out of range for rank " +
                          std::to_string(x.rank()));
    std::int64_t inner = 1, outer = 1;
    for (int d = axis + 1; d < x.rank(); ++d) inner *= x.shape[d];
    for (int d = 0; d < axis; ++d) outer *= x.shape[d];
    const int n = x.shape[axis];
    Tensor<S> out = x;
    for (std::int64_t ou = 0; ou < outer; ++ou)
        for (std::int64_t in = 0; in < inner; ++in) {
            auto idx = [&](int k) { return (ou * n + k) * inner + in; };
            double mx = -1e300;
            for (int k = 0; k < n; ++k) mx = std::max(mx, static_cast<double>(x.data[idx(k)]));
            double sum = 0;
            for (int k = 0; k < n; ++k) {
                double e = std::exp(static_cast<double>(x.data[idx(k)]) - mx);
                out.data[idx(k)] = static_cast<S>(e);
                sum += e;
            }
            for (int k = 0; k < n; ++k) out.data[idx(k)] = static_cast<S>(out.data[idx(k)] / sum);
        }
    Var o = t.push(std::move(out));
    t.record([&t, a, o, outer, inner, n] {
        const Tensor<S>& g = t.grad(o);
        const Tensor<S>& p = t.val(o);
        for (std::int64_t ou = 0; ou < outer; ++ou)
            for (std::int64_t in = 0; in < inner; ++in) {
                auto idx = [&](int k) { return (ou * n + k) * inner + in; };
                double dot = 0;
                for (int k = 0; k < n; ++k)
                    dot += static_cast<double>(g.data[idx(k)]) * static_cast<double>(p.data[idx(k)]);
                for (int k = 0; k < n; ++k)
                    t.grad(a).data[idx(k)] += static_cast<S>(
                        static_cast<double>(p.data[idx(k)]) *
                        (static_cast<double>(g.data[idx(k)]) - dot));
            }
    });
    return o;
}

// mask[C] broadcast over f[C,H,W].
template <class S>
Var channel_mul(Tape<S>& t, Var mask, Var f) {
    const Tensor<S>& m = t.val(mask);
    const Tensor<S>& x = t.val(f);
    if (m.rank() != 1 || x.rank() != 3 || m.shape[0] != x.shape[0])
        throw ConfigError("channel_mul: mask " + Tensor<S>::shape_str(m.shape) + " vs feature " +
                          Tensor<S>::shape_str(x.shape));
    Tensor<S> out = x;
    const std::int64_t hw = static_cast<std::int64_t>(x.shape[1]) * x.shape[2];
    for (int c = 0; c < x.shape[0]; ++c)
        for (std::int64_t i = 0; i < hw; ++i) out.data[c * hw + i] *= m.data[c];
    Var o = t.push(std::move(out));
    t.record([&t, mask, f, o, hw] {
        const Tensor<S>& g = t.grad(o);
        const Tensor<S>& m2 = t.val(mask);
        const Tensor<S>& x2 = t.val(f);
        for (int c = 0; c < x2.shape[0]; ++c) {
            S acc = S(0);
            for (std::int64_t i = 0; i < hw; ++i) {
                t.grad(f).data[c * hw + i] += g.data[c * hw + i] * m2.data[c];
                acc += g.data[c * hw + i] * x2.data[c * hw + i];
            }
            t.grad(mask).data[c] += acc;
        }
    });
    return o;
}

// Elementwise mean of a list of same-shape tensors.
template <class S>
Var mean_list(Tape<S>& t, const std::vector<Var>& xs) {
    if (xs.empty()) throw ConfigError("mean_list: empty list");
    for (const Var& v : xs) detail::check_same_shape(t.val(xs[0]), t.val(v), "mean_list");
    Tensor<S> out = Tensor<S>::zeros(t.val(xs[0]).shape);
    const S inv = S(1) / static_cast<S>(xs.size());
    for (const Var& v : xs)
        for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] += t.val(v).data[i] * inv;
    Var o = t.push(std::move(out));
    t.record([&t, xs, o, inv] {
        const Tensor<S>& g = t.grad(o);
        for (const Var& v : xs)
            for (std::size_t i = 0; i < g.data.size(); ++i) t.grad(v).data[i] += g.data[i] * inv;
    });
    return o;
}

// Global mean pool [C,H,W] -> [C].
template <class S>
Var mean_pool(Tape<S>& t, Var f) {
    const Tensor<S>& x = t.val(f);
    if (x.rank() != 3) throw ConfigError("mean_pool: want rank-3, got " + Tensor<S>::shape_str(x.shape));
    const std::int64_t hw = static_cast<std::int64_t>(x.shape[1]) * x.shape[2];
    Tensor<S> out({x.shape[0]});
    for (int c = 0; c < x.shape[0]; ++c) {
        double acc = 0;
        for (std::int64_t i = 0; i < hw; ++i) acc += x.data[c * hw + i];
        out.data[c] = static_cast<S>(acc / static_cast<double>(hw));
    }
    Var o = t.push(std::move(out));
    t.record([&t, f, o, hw] {
        const Tensor<S>& g = t.grad(o);
        const S inv = S(1) / static_cast<S>(hw);
        for (int c = 0; c < static_cast<int>(g.data.size()); ++c)
            for (std::int64_t i = 0; i < hw; ++i) t.grad(f).data[c * hw + i] += g.data[c] * inv;
    });
    return o;
}

// y = W x + b, W[out,in], x[in], b[out].
template <class S>
Var linear(Tape<S>& t, Var w, Var x, Var b) {
    const Tensor<S>& W = t.val(w);
    const Tensor<S>& X = t.val(x);
    const Tensor<S>& B = t.val(b);
    if (W.rank() != 2 || X.rank() != 1 || B.rank() != 1 || W.shape[1] != X.shape[0] ||
        W.shape[0] != B.shape[0])
        throw ConfigError("linear: W " + Tensor<S>::shape_str(W.shape) + " x " +
                          Tensor<S>::shape_str(X.shape) + " b " + Tensor<S>::shape_str(B.shape));
    const int m = W.shape[0], n = W.shape[1];
    Tensor<S> out({m});
    for (int i = 0; i < m; ++i) {
        double acc = B.data[i];
        for (int j = 0; j < n; ++j) acc += static_cast<double>(W.at(i, j)) * X.data[j];
        out.data[i] = static_cast<S>(acc);
    }
    Var o = t.push(std::move(out));
    t.record([&t, w, x, b, o, m, n] {
        const Tensor<S>& g = t.grad(o);
        for (int i = 0; i < m; ++i) {
            t.grad(b).data[i] += g.data[i];
            for (int j = 0; j < n; ++j) {
                t.grad(w).at(i, j) += g.data[i] * t.val(x).data[j];
                t.grad(x).data[j] += g.data[i] * t.val(w).at(i, j);
            }
        }
    });
    return o;
}

// keys[M,D] . q[D] -> [M]
template <class S>
Var matvec(Tape<S>& t, Var keys, Var q) {
    const Tensor<S>& K = t.val(keys);
    const Tensor<S>& Q = t.val(q);
    if (K.rank() != 2 || Q.rank() != 1 || K.shape[1] != Q.shape[0])
        throw ConfigError("matvec: keys " + Tensor<S>::shape_str(K.shape) + " q " +
                          Tensor<S>::shape_str(Q.shape));
    const int m = K.shape[0], d = K.shape[1];
    Tensor<S> out({m});
    for (int i = 0; i < m; ++i) {
        double acc = 0;
        for (int j = 0; j < d; ++j) acc += static_cast<double>(K.at(i, j)) * Q.data[j];
        out.data[i] = static_cast<S>(acc);
    }
    Var o = t.push(std::move(out));
    t.record([&t, keys, q, o, m, d] {
        const Tensor<S>& g = t.grad(o);
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < d; ++j) {
                t.grad(keys).at(i, j) += g.data[i] * t.val(q).data[j];
                t.grad(q).data[j] += g.data[i] * t.val(keys).at(i, j);
            }
    });
    return o;
}

// Scaled dot-product attention weights over M keys.
template <class S>
Var attention_1d(Tape<S>& t, Var query, Var keys) {
    const int d = t.val(query).shape[0];
    Var logits = matvec(t, keys, query);
    Var scaled = scale(t, logits, 1.0 / std::sqrt(static_cast<double>(d)));
    return softmax(t, scaled, 0);
}

template <class S>
Var concat(Tape<S>& t, const std::vector<Var>& xs, int axis) {
    if (xs.empty()) throw ConfigError("concat: empty list");
    const Tensor<S>& first = t.val(xs[0]);
    const int r = first.rank();
    if (axis < 0 || axis >= r) throw ConfigError("concat: axis out of range");
    std::vector<int> oshape = first.shape;
    for (std::size_t i = 1; i < xs.size(); ++i) {
        const Tensor<S>& x = t.val(xs[i]);
        if (x.rank() != r) throw ConfigError("concat: rank mismatch");
        for (int d = 0; d < r; ++d)
            if (d != axis && x.shape[d] != first.shape[d])
                throw ConfigError("concat: shape mismatch on non-concat axis " + std::to_string(d));
        oshape[axis] += x.shape[axis];
    }
    std::int64_t inner = 1, outer = 1;
    for (int d = axis + 1; d < r; ++d) inner *= first.shape[d];
    for (int d = 0; d < axis; ++d) outer *= first.shape[d];
    Tensor<S> out(oshape);
    const std::int64_t ostride = static_cast<std::int64_t>(oshape[axis]) * inner;
    std::int64_t off = 0;
    for (const Var& v : xs) {
        const Tensor<S>& x = t.val(v);
        const std::int64_t xstride = static_cast<std::int64_t>(x.shape[axis]) * inner;
        for (std::int64_t ou = 0; ou < outer; ++ou)
            std::copy(x.data.begin() + ou * xstride, x.data.begin() + (ou + 1) * xstride,
                      out.data.begin() + ou * ostride + off);
        off += xstride;
    }
    Var o = t.push(std::move(out));
    t.record([&t, xs, o, axis, inner, outer, ostride] {
        const Tensor<S>& g = t.grad(o);
        std::int64_t off2 = 0;
        for (const Var& v : xs) {
            Tensor<S>& gx = t.grad(v);
            const std::int64_t xstride = static_cast<std::int64_t>(t.val(v).shape[axis]) * inner;
            for (std::int64_t ou = 0; ou < outer; ++ou)
                for (std::int64_t i = 0; i < xstride; ++i)
                    gx.data[ou * xstride + i] += g.data[ou * ostride + off2 + i];
            off2 += xstride;
        }
    });
    return o;
}

template <class S>
Var permute(Tape<S>& t, Var a, const std::vector<int>& perm) {
    const Tensor<S>& x = t.val(a);
    const int r = x.rank();
    if (static_cast<int>(perm.size()) != r) throw ConfigError("permute: bad permutation length");
    std::vector<int> oshape(r);
    for (int d = 0; d < r; ++d) oshape[d] = x.shape[perm[d]];
    std::vector<std::int64_t> istrides(r, 1), ostrides(r, 1);
    for (int d = r - 2; d >= 0; --d) istrides[d] = istrides[d + 1] * x.shape[d + 1];
    for (int d = r - 2; d >= 0; --d) ostrides[d] = ostrides[d + 1] * oshape[d + 1];
    Tensor<S> out(oshape);
    std::vector<int> idx(r, 0);
    for (std::int64_t n = 0; n < out.numel(); ++n) {
        std::int64_t rem = n, src = 0;
        for (int d = 0; d < r; ++d) {
            idx[d] = static_cast<int>(rem / ostrides[d]);
            rem %= ostrides[d];
            src += idx[d] * istrides[perm[d]];
        }
        out.data[static_cast<std::size_t>(n)] = x.data[static_cast<std::size_t>(src)];
    }
    Var o = t.push(std::move(out));
    t.record([&t, a, o, perm, istrides, ostrides, r] {
        const Tensor<S>& g = t.grad(o);
        Tensor<S>& gx = t.grad(a);
        for (std::int64_t n = 0; n < g.numel(); ++n) {
            std::int64_t rem = n, src = 0;
            for (int d = 0; d < r; ++d) {
                const std::int64_t q = rem / ostrides[d];
                rem %= ostrides[d];
                src += q * istrides[perm[d]];
            }
            gx.data[static_cast<std::size_t>(src)] += g.data[static_cast<std::size_t>(n)];
        }
    });
    return o;
}

template <class S>
Var reshape(Tape<S>& t, Var a, std::vector<int> shape) {
    const Tensor<S>& x = t.val(a);
    if (Tensor<S>::numel_of(shape) != x.numel())
        throw ConfigError("reshape: element count mismatch");
    Tensor<S> out(std::move(shape), x.data);
    Var o = t.push(std::move(out));
    t.record([&t, a, o] {
        const Tensor<S>& g = t.grad(o);
        for (std::size_t i = 0; i < g.data.size(); ++i) t.grad(a).data[i] += g.data[i];
    });
    return o;
}

// Sum of all elements -> scalar [1].
template <class S>
Var sum(Tape<S>& t, Var a) {
    double acc = 0;
    for (const S& v : t.val(a).data) acc += v;
    Var o = t.push(Tensor<S>({1}, {static_cast<S>(acc)}));
    t.record([&t, a, o] {
        const S g = t.grad(o).data[0];
        for (S& v : t.grad(a).data) v += g;
    });
    return o;
}

} // namespace vicsim::ops
