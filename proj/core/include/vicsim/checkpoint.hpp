#pragma once

#include <map>
#include <string>

#include "vicsim/tensor.hpp"

namespace vicsim::ckpt {

template <class S>
using Params = std::map<std::string, Tensor<S>>;

// Weight checkpoint (.vicw), little-endian:
//   magic "VICW", version u16 (=1), dtype u8 (0 = f32), reserved u8,
//   entry count u32; then per entry:
//   name_len u16, name bytes, rank u8 (<= 5), reserved u8, shape 5 x u16
//   (unused trailing extents = 1), payload (f32, row-major).
void save_checkpoint(const std::string& path, const Params<float>& params);
Params<float> load_checkpoint(const std::string& path);

template <class S>
Params<S> load_checkpoint_as(const std::string& path) {
    Params<S> out;
    for (auto& [name, t] : load_checkpoint(path)) out.emplace(name, t.template cast<S>());
    return out;
}

template <class S>
void save_checkpoint_any(const std::string& path, const Params<S>& params) {
    Params<float> f;
    for (const auto& [name, t] : params) f.emplace(name, t.template cast<float>());
    save_checkpoint(path, f);
}

} // namespace vicsim::ckpt
