#pragma once

#include <deque>
#include <functional>
#include <vector>

#include "vicsim/tensor.hpp"

namespace vicsim {

// Handle into a tape. Only meaningful for the tape that issued it.
struct Var {
    int id = -1;
};

// Reverse-mode tape. Single-writer: one recording at a time. Each op pushes
// its output slot and records one backward node; replaying nodes in reverse
// recording order is a reverse topological visit, each node exactly once.
template <class S>
class Tape {
public:
    Var push(Tensor<S> value) {
        slots_.push_back(Slot{std::move(value), Tensor<S>()});
        Slot& s = slots_.back();
        s.grad = Tensor<S>::zeros(s.value.shape);
        return Var{static_cast<int>(slots_.size()) - 1};
    }

    const Tensor<S>& val(Var v) const { return slots_[static_cast<std::size_t>(v.id)].value; }
    Tensor<S>& grad(Var v) { return slots_[static_cast<std::size_t>(v.id)].grad; }
    const Tensor<S>& grad(Var v) const { return slots_[static_cast<std::size_t>(v.id)].grad; }

    void record(std::function<void()> back) { nodes_.push_back(std::move(back)); }

    // Seeds d(root)/d(root) = 1 and sweeps the recorded graph once.
    void backward(Var root) {
        Tensor<S>& g = grad(root);
        if (g.numel() != 1) throw ConfigError("backward root must be scalar");
        g.data[0] = S(1);
        for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)();
    }

    std::size_t size() const { return slots_.size(); }

private:
    struct Slot {
        Tensor<S> value;
        Tensor<S> grad;
    };
    std::deque<Slot> slots_;
    std::vector<std::function<void()>> nodes_;
};

} // namespace vicsim
