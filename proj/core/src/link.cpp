#include "vicsim/link.hpp"

#include <cmath>
#include <cstring>

namespace vicsim::link {

namespace {

void put_u16(std::vector<std::uint8_t>& b, std::uint16_t v) {
    b.push_back(static_cast<std::uint8_t>(v & 0xff));
    b.push_back(static_cast<std::uint8_t>(v >> 8));
}

void put_u32(std::vector<std::uint8_t>& b, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) b.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xff));
}

void put_u64(std::vector<std::uint8_t>& b, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) b.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xff));
}

std::uint16_t get_u16(const std::uint8_t* p) {
    return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

std::uint32_t get_u32(const std::uint8_t* p) {
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

std::uint64_t get_u64(const std::uint8_t* p) {
    std::uint64_t v = 0;
    for (int i = 7; i >= 0; --i) v = (v << 8) | p[i];
    return v;
}

std::uint32_t float_bits(float f) {
    std::uint32_t u;
    std::memcpy(&u, &f, 4);
    return u;
}

float bits_float(std::uint32_t u) {
    float f;
    std::memcpy(&f, &u, 4);
    return f;
}

} // namespace

std::uint16_t float_to_half(float f) {
    const std::uint32_t x = float_bits(f);
    const std::uint32_t sign = (x >> 16) & 0x8000u;
    std::int32_t exp = static_cast<std::int32_t>((x >> 23) & 0xff) - 127 + 15;
    std::uint32_t mant = x & 0x7fffffu;
    if (((x >> 23) & 0xff) == 0xff) // inf / nan
        return static_cast<std::uint16_t>(sign | 0x7c00u | (mant ? 0x200u : 0u));
    if (exp >= 31) return static_cast<std::uint16_t>(sign | 0x7c00u); // overflow -> inf
    if (exp <= 0) {
        if (exp < -10) return static_cast<std::uint16_t>(sign); // underflow -> zero
        mant |= 0x800000u;
        const int shift = 14 - exp;
        std::uint32_t half_mant = mant >> shift;
        const std::uint32_t rem = mant & ((1u << shift) - 1);
        const std::uint32_t halfway = 1u << (shift - 1);
        if (rem > halfway || (rem == halfway && (half_mant & 1))) ++half_mant;
        return static_cast<std::uint16_t>(sign | half_mant);
    }
    std::uint32_t half = sign | (static_cast<std::uint32_t>(exp) << 10) | (mant >> 13);
    const std::uint32_t rem = mant & 0x1fffu;
    if (rem > 0x1000u || (rem == 0x1000u && (half & 1))) ++half; // carries propagate correctly
    return static_cast<std::uint16_t>(half);
}

float half_to_float(std::uint16_t h) {
    const std::uint32_t sign = static_cast<std::uint32_t>(h & 0x8000u) << 16;
    const std::uint32_t exp = (h >> 10) & 0x1f;
    std::uint32_t mant = h & 0x3ffu;
    if (exp == 0x1f) return bits_float(sign | 0x7f800000u | (mant << 13));
    if (exp == 0) {
        if (mant == 0) return bits_float(sign);
        int e = -1;
        do {
            mant <<= 1;
            ++e;
        } while (!(mant & 0x400u));
        mant &= 0x3ffu;
        return bits_float(sign | (static_cast<std::uint32_t>(127 - 15 - e) << 23) | (mant << 13));
    }
    return bits_float(sign | ((exp - 15 + 127) << 23) | (mant << 13));
}

Packet serialize(const Tensor<float>& t, const geo::CameraParams& cam, int ccr, int scr,
                 WireDtype dtype) {
    if (t.rank() > 4) throw ConfigError("serialize: rank > 4");
    for (int e : t.shape)
        if (e > 0xffff) throw ConfigError("serialize: extent " + std::to_string(e) + " exceeds u16");
    if (ccr < 1 || ccr > 0xffff || scr < 1 || scr > 0xffff)
        throw ConfigError("serialize: ccr/scr out of range");

    Packet p;
    p.bytes.reserve(kHeaderSize + t.data.size() * element_size(dtype));
    p.bytes.insert(p.bytes.end(), {'V', 'I', 'C', 'F'});
    put_u16(p.bytes, kVersion);
    p.bytes.push_back(static_cast<std::uint8_t>(dtype));
    p.bytes.push_back(static_cast<std::uint8_t>(t.rank()));
    for (int d = 0; d < 4; ++d)
        put_u16(p.bytes, d < t.rank() ? static_cast<std::uint16_t>(t.shape[d]) : 1);
    put_u16(p.bytes, static_cast<std::uint16_t>(ccr));
    put_u16(p.bytes, static_cast<std::uint16_t>(scr));
    put_u16(p.bytes, 0); // reserved
    for (double v : geo::flatten_camera(cam)) put_u32(p.bytes, float_bits(static_cast<float>(v)));
    std::uint64_t tb;
    {
        double ct = cam.capture_time;
        std::memcpy(&tb, &ct, 8);
    }
    put_u64(p.bytes, tb);
    if (p.bytes.size() != kHeaderSize) throw ProtocolError("length", "serialize: header size bug");

    if (dtype == WireDtype::F32) {
        for (float v : t.data) put_u32(p.bytes, float_bits(v));
    } else {
        for (float v : t.data) put_u16(p.bytes, float_to_half(v));
    }
    return p;
}

DecodedPacket deserialize(const Packet& p) {
    if (p.bytes.size() < kHeaderSize)
        throw ProtocolError("length", "packet shorter than header (" +
                                          std::to_string(p.bytes.size()) + " bytes)");
    const std::uint8_t* b = p.bytes.data();
    if (!(b[0] == 'V' && b[1] == 'I' && b[2] == 'C' && b[3] == 'F'))
        throw ProtocolError("magic", "bad packet magic");
    const std::uint16_t ver = get_u16(b + 4);
    if (ver != kVersion)
        throw ProtocolError("version", "unsupported packet version " + std::to_string(ver));
    const std::uint8_t dcode = b[6];
    if (dcode > 1) throw ProtocolError("dtype", "unknown dtype code " + std::to_string(dcode));
    const WireDtype dtype = static_cast<WireDtype>(dcode);
    const int rank = b[7];
    if (rank < 1 || rank > 4) throw ProtocolError("rank", "bad rank " + std::to_string(rank));
    std::vector<int> shape;
    std::int64_t count = 1;
    for (int d = 0; d < rank; ++d) {
        const int e = get_u16(b + 8 + 2 * d);
        if (e < 1) throw ProtocolError("shape", "zero extent on axis " + std::to_string(d));
        shape.push_back(e);
        count *= e;
    }
    const int ccr = get_u16(b + 16);
    const int scr = get_u16(b + 18);
    const std::size_t want = static_cast<std::size_t>(count) * element_size(dtype);
    if (p.bytes.size() - kHeaderSize != want)
        throw ProtocolError("length", "payload length " + std::to_string(p.bytes.size() - kHeaderSize) +
                                          " != expected " + std::to_string(want));

    std::array<double, 21> camv{};
    for (int i = 0; i < 21; ++i) camv[static_cast<std::size_t>(i)] = bits_float(get_u32(b + 22 + 4 * i));
    double capture_time;
    {
        const std::uint64_t tb = get_u64(b + 106);
        std::memcpy(&capture_time, &tb, 8);
    }

    DecodedPacket out;
    out.cam = geo::unflatten_camera(camv, capture_time);
    out.ccr = ccr;
    out.scr = scr;
    out.dtype = dtype;
    out.tensor = Tensor<float>(shape);
    const std::uint8_t* payload = b + kHeaderSize;
    if (dtype == WireDtype::F32) {
        for (std::int64_t i = 0; i < count; ++i)
            out.tensor.data[static_cast<std::size_t>(i)] = bits_float(get_u32(payload + 4 * i));
    } else {
        for (std::int64_t i = 0; i < count; ++i)
            out.tensor.data[static_cast<std::size_t>(i)] = half_to_float(get_u16(payload + 2 * i));
    }
    return out;
}

double average_byte(const std::vector<Packet>& packets) {
    std::vector<std::size_t> sizes;
    sizes.reserve(packets.size());
    for (const auto& p : packets) sizes.push_back(p.size());
    return average_byte_sizes(sizes);
}

double average_byte_sizes(const std::vector<std::size_t>& sizes) {
    if (sizes.empty()) throw ConfigError("average_byte: empty packet list");
    double total = 0;
    for (std::size_t s : sizes) total += static_cast<double>(s);
    return total / static_cast<double>(sizes.size());
}

Delivery transmit(const Packet& p, const LinkConfig& link) {
    if (link.bandwidth_bps <= 0) throw ConfigError("transmit: bandwidth must be positive");
    if (link.latency_s < 0) throw ConfigError("transmit: negative latency");
    return Delivery{link.latency_s + 8.0 * static_cast<double>(p.size()) / link.bandwidth_bps};
}

} // namespace vicsim::link
