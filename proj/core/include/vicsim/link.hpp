#pragma once

#include <cstdint>
#include <vector>

#include "vicsim/geometry.hpp"
#include "vicsim/tensor.hpp"

namespace vicsim::link {

// Wire format for transmitted infrastructure features (.vicf). All
// multi-byte fields little-endian. Fixed 114-byte header:
//
//   offset  size  field
//        0     4  magic "VICF"
//        4     2  version (u16, = 1)
//        6     1  dtype code (u8: 0 = f32, 1 = f16)
//        7     1  rank (u8, <= 4)
//        8     8  shape (4 x u16, unused trailing extents = 1)
//       16     2  ccr (u16)
//       18     2  scr (u16)
//       20     2  reserved (u16, = 0)
//       22    84  camera params (21 x f32: R row-major, t, K row-major)
//      106     8  capture_time (f64, seconds)
//      114        payload: element bytes, row-major
inline constexpr std::size_t kHeaderSize = 114;
inline constexpr std::uint16_t kVersion = 1;

enum class WireDtype : std::uint8_t { F32 = 0, F16 = 1 };

inline std::size_t element_size(WireDtype d) { return d == WireDtype::F32 ? 4 : 2; }

struct Packet {
    std::vector<std::uint8_t> bytes; // header + payload
    std::size_t size() const { return bytes.size(); }
    std::size_t payload_bytes() const { return bytes.size() - kHeaderSize; }
};

struct DecodedPacket {
    Tensor<float> tensor;
    geo::CameraParams cam;
    int ccr = 1;
    int scr = 1;
    WireDtype dtype = WireDtype::F32;
};

Packet serialize(const Tensor<float>& t, const geo::CameraParams& cam, int ccr, int scr,
                 WireDtype dtype = WireDtype::F32);

template <class S>
Packet serialize_any(const Tensor<S>& t, const geo::CameraParams& cam, int ccr, int scr,
                     WireDtype dtype = WireDtype::F32) {
    return serialize(t.template cast<float>(), cam, ccr, scr, dtype);
}

DecodedPacket deserialize(const Packet& p);

// Arithmetic mean of total packet byte lengths (header + payload).
double average_byte(const std::vector<Packet>& packets);
double average_byte_sizes(const std::vector<std::size_t>& sizes);

struct LinkConfig {
    double bandwidth_bps = 1e6; // bits/s
    double latency_s = 0.0;
    std::uint64_t seed = 0;
};

struct Delivery {
    double arrival_delay_s = 0.0;
};

// arrival_delay = latency + 8 * bytes / bandwidth. Pure in (length, link).
Delivery transmit(const Packet& p, const LinkConfig& link);

// IEEE 754 binary16 conversion (round to nearest even).
std::uint16_t float_to_half(float f);
float half_to_float(std::uint16_t h);

} // namespace vicsim::link
