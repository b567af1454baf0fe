#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "vicsim/tape.hpp"

namespace vicsim {

struct GradCheckReport {
    double max_rel_err = 0.0;
    bool ok = false;
    // Location of the worst disagreement.
    int worst_input = -1;
    std::int64_t worst_elem = -1;
    double analytic = 0.0, numeric = 0.0;
    std::int64_t elements_checked = 0;
};

// A differentiable scalar pipeline: pushes nothing itself, consumes the
// already-pushed input vars and returns the scalar output var.
using GradFn = std::function<Var(Tape<double>&, const std::vector<Var>&)>;

// Central-difference check of the tape gradient, float64 only.
// rel-err = |a-b| / max(1, |a|, |b|). When max_elems_per_input > 0 a seeded
// random subset of each input's elements is probed; otherwise all of them.
inline GradCheckReport finite_diff_check(const GradFn& fn, const std::vector<Tensor<double>>& inputs,
                                         double h, double tol, int max_elems_per_input = -1,
                                         std::uint64_t seed = 0) {
    if (h < 1e-6 || h > 1e-4) throw ConfigError("finite_diff_check: h must be in [1e-6, 1e-4]");

    auto eval = [&](const std::vector<Tensor<double>>& xs, std::vector<Tensor<double>>* grads) {
        Tape<double> tape;
        std::vector<Var> vars;
        vars.reserve(xs.size());
        for (const auto& x : xs) vars.push_back(tape.push(x));
        Var out = fn(tape, vars);
        if (tape.val(out).numel() != 1) throw ConfigError("finite_diff_check: fn must return a scalar");
        const double y = tape.val(out).data[0];
        if (!std::isfinite(y)) throw NumericError("finite_diff_check: non-finite function output");
        if (grads) {
            tape.backward(out);
            grads->clear();
            for (Var v : vars) grads->push_back(tape.grad(v));
        }
        return y;
    };

    std::vector<Tensor<double>> analytic;
    eval(inputs, &analytic);

    GradCheckReport rep;
    std::mt19937_64 rng(seed);
    std::vector<Tensor<double>> work = inputs;
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        const std::int64_t n = inputs[i].numel();
        std::vector<std::int64_t> elems;
        if (max_elems_per_input > 0 && n > max_elems_per_input) {
            for (int k = 0; k < max_elems_per_input; ++k)
                elems.push_back(static_cast<std::int64_t>(rng() % static_cast<std::uint64_t>(n)));
        } else {
            elems.resize(static_cast<std::size_t>(n));
            for (std::int64_t k = 0; k < n; ++k) elems[static_cast<std::size_t>(k)] = k;
        }
        for (std::int64_t e : elems) {
            const double orig = work[i].data[static_cast<std::size_t>(e)];
            work[i].data[static_cast<std::size_t>(e)] = orig + h;
            const double yp = eval(work, nullptr);
            work[i].data[static_cast<std::size_t>(e)] = orig - h;
            const double ym = eval(work, nullptr);
            work[i].data[static_cast<std::size_t>(e)] = orig;
            const double num = (yp - ym) / (2 * h);
            const double ana = analytic[i].data[static_cast<std::size_t>(e)];
            const double rel = std::abs(ana - num) / std::max({1.0, std::abs(ana), std::abs(num)});
            ++rep.elements_checked;
            if (rel > rep.max_rel_err) {
                rep.max_rel_err = rel;
                rep.worst_input = static_cast<int>(i);
                rep.worst_elem = e;
                rep.analytic = ana;
                rep.numeric = num;
            }
        }
    }
    rep.ok = rep.max_rel_err < tol;
    return rep;
}

} // namespace vicsim
