#include "vicsim/checkpoint.hpp"

#include <cstring>
#include <filesystem>
#include <fstream>

#include "vicsim/errors.hpp"

namespace vicsim::ckpt {

namespace {

constexpr std::uint16_t kVersion = 1;

void put_u16(std::string& b, std::uint16_t v) {
    b.push_back(static_cast<char>(v & 0xff));
    b.push_back(static_cast<char>(v >> 8));
}

void put_u32(std::string& b, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) b.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint16_t get_u16(const unsigned char* p) {
    return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

std::uint32_t get_u32(const unsigned char* p) {
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

} // namespace

void save_checkpoint(const std::string& path, const Params<float>& params) {
    std::string buf;
    buf += "VICW";
    put_u16(buf, kVersion);
    buf.push_back(0); // dtype f32
    buf.push_back(0); // reserved
    put_u32(buf, static_cast<std::uint32_t>(params.size()));
    for (const auto& [name, t] : params) {
        if (name.size() > 0xffff) throw ConfigError("checkpoint: parameter name too long");
        if (t.rank() > 5) throw ConfigError("checkpoint: rank > 5 for " + name);
        put_u16(buf, static_cast<std::uint16_t>(name.size()));
        buf += name;
        buf.push_back(static_cast<char>(t.rank()));
        buf.push_back(0); // reserved
        for (int d = 0; d < 5; ++d) {
            const int e = d < t.rank() ? t.shape[d] : 1;
            if (e > 0xffff) throw ConfigError("checkpoint: extent exceeds u16 for " + name);
            put_u16(buf, static_cast<std::uint16_t>(e));
        }
        for (float v : t.data) {
            std::uint32_t u;
            std::memcpy(&u, &v, 4);
            put_u32(buf, u);
        }
    }
    const std::filesystem::path fp(path);
    if (fp.has_parent_path()) std::filesystem::create_directories(fp.parent_path());
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw ConfigError("checkpoint: cannot open " + path + " for writing");
    f.write(buf.data(), static_cast<std::streamsize>(buf.size()));
}

Params<float> load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw ProtocolError("file", "checkpoint: cannot open " + path);
    std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    const auto* b = reinterpret_cast<const unsigned char*>(buf.data());
    const std::size_t n = buf.size();
    if (n < 12 || std::memcmp(b, "VICW", 4) != 0)
        throw ProtocolError("magic", "checkpoint: bad magic in " + path);
    if (get_u16(b + 4) != kVersion)
        throw ProtocolError("version", "checkpoint: unsupported version");
    if (b[6] != 0) throw ProtocolError("dtype", "checkpoint: unsupported dtype code");
    const std::uint32_t count = get_u32(b + 8);
    std::size_t off = 12;
    Params<float> out;
    for (std::uint32_t i = 0; i < count; ++i) {
        if (off + 2 > n) throw ProtocolError("length", "checkpoint: truncated entry header");
        const std::uint16_t name_len = get_u16(b + off);
        off += 2;
        if (off + name_len + 12 > n) throw ProtocolError("length", "checkpoint: truncated entry");
        std::string name(buf.data() + off, name_len);
        off += name_len;
        const int rank = b[off];
        off += 2; // rank + reserved
        if (rank < 1 || rank > 5) throw ProtocolError("rank", "checkpoint: bad rank for " + name);
        std::vector<int> shape;
        std::int64_t numel = 1;
        for (int d = 0; d < 5; ++d) {
            const int e = get_u16(b + off);
            off += 2;
            if (d < rank) {
                shape.push_back(e);
                numel *= e;
            }
        }
        if (off + static_cast<std::size_t>(numel) * 4 > n)
            throw ProtocolError("length", "checkpoint: truncated payload for " + name);
        Tensor<float> t(shape);
        for (std::int64_t k = 0; k < numel; ++k) {
            const std::uint32_t u = get_u32(b + off);
            off += 4;
            std::memcpy(&t.data[static_cast<std::size_t>(k)], &u, 4);
        }
        out.emplace(std::move(name), std::move(t));
    }
    return out;
}

} // namespace vicsim::ckpt
