#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "vicsim/errors.hpp"

namespace vicsim {

// Dense row-major n-d array. Rank <= 5, every extent >= 1.
// The scalar type doubles as the dtype: float for pipeline runs,
// double for gradient checks.
template <class S>
struct Tensor {
    std::vector<int> shape;
    std::vector<S> data;

    Tensor() = default;

    explicit Tensor(std::vector<int> sh, S fill = S(0)) : shape(std::move(sh)) {
        validate_shape(shape);
        data.assign(static_cast<std::size_t>(numel_of(shape)), fill);
    }

    Tensor(std::vector<int> sh, std::vector<S> values) : shape(std::move(sh)), data(std::move(values)) {
        validate_shape(shape);
        if (static_cast<std::int64_t>(data.size()) != numel_of(shape))
            throw ConfigError("tensor data length " + std::to_string(data.size()) +
                              " does not match shape " + shape_str(shape));
    }

    static Tensor zeros(std::vector<int> sh) { return Tensor(std::move(sh)); }

    static Tensor full(std::vector<int> sh, S v) { return Tensor(std::move(sh), v); }

    int rank() const { return static_cast<int>(shape.size()); }

    std::int64_t numel() const { return static_cast<std::int64_t>(data.size()); }

    S& operator[](std::size_t i) { return data[i]; }
    const S& operator[](std::size_t i) const { return data[i]; }

    // Row-major index helpers for the ranks the pipeline uses.
    S& at(int i) { return data[static_cast<std::size_t>(i)]; }
    const S& at(int i) const { return data[static_cast<std::size_t>(i)]; }

    S& at(int i, int j) { return data[static_cast<std::size_t>(i) * shape[1] + j]; }
    const S& at(int i, int j) const { return data[static_cast<std::size_t>(i) * shape[1] + j]; }

    S& at(int i, int j, int k) {
        return data[(static_cast<std::size_t>(i) * shape[1] + j) * shape[2] + k];
    }
    const S& at(int i, int j, int k) const {
        return data[(static_cast<std::size_t>(i) * shape[1] + j) * shape[2] + k];
    }

    S& at(int i, int j, int k, int l) {
        return data[((static_cast<std::size_t>(i) * shape[1] + j) * shape[2] + k) * shape[3] + l];
    }
    const S& at(int i, int j, int k, int l) const {
        return data[((static_cast<std::size_t>(i) * shape[1] + j) * shape[2] + k) * shape[3] + l];
    }

    S& at(int i, int j, int k, int l, int m) {
        return data[(((static_cast<std::size_t>(i) * shape[1] + j) * shape[2] + k) * shape[3] + l) *
                        shape[4] +
                    m];
    }
    const S& at(int i, int j, int k, int l, int m) const {
        return data[(((static_cast<std::size_t>(i) * shape[1] + j) * shape[2] + k) * shape[3] + l) *
                        shape[4] +
                    m];
    }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    bool all_finite() const {
        for (const S& v : data)
            if (!std::isfinite(static_cast<double>(v))) return false;
        return true;
    }

    template <class T>
    Tensor<T> cast() const {
        Tensor<T> out;
        out.shape = shape;
        out.data.resize(data.size());
        for (std::size_t i = 0; i < data.size(); ++i) out.data[i] = static_cast<T>(data[i]);
        return out;
    }

    static std::int64_t numel_of(const std::vector<int>& sh) {
        std::int64_t n = 1;
        for (int e : sh) n *= e;
        return n;
    }

    static std::string shape_str(const std::vector<int>& sh) {
        std::ostringstream os;
        os << "(";
        for (std::size_t i = 0; i < sh.size(); ++i) os << (i ? "," : "") << sh[i];
        os << ")";
        return os.str();
    }

    static void validate_shape(const std::vector<int>& sh) {
        if (sh.size() > 5) throw ConfigError("tensor rank " + std::to_string(sh.size()) + " exceeds 5");
        for (int e : sh)
            if (e < 1) throw ConfigError("tensor extent " + std::to_string(e) + " < 1 in " + shape_str(sh));
    }
};

template <class S>
bool shapes_equal(const Tensor<S>& a, const Tensor<S>& b) {
    return a.shape == b.shape;
}

template <class S>
double max_abs_diff(const Tensor<S>& a, const Tensor<S>& b) {
    if (a.shape != b.shape) throw ConfigError("max_abs_diff: shape mismatch " +
                                              Tensor<S>::shape_str(a.shape) + " vs " +
                                              Tensor<S>::shape_str(b.shape));
    double m = 0.0;
    for (std::size_t i = 0; i < a.data.size(); ++i)
        m = std::max(m, std::abs(static_cast<double>(a.data[i]) - static_cast<double>(b.data[i])));
    return m;
}

} // namespace vicsim
