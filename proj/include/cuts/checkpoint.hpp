#pragma once

// Binary checkpoint format for weight snapshots:
//
//   magic "CUTS" | version u16 | dtype u8 (0 = f32, 1 = f64) |
//   layer_count u32 | per layer: name_len u16, name bytes, rank u8,
//   dims u32[rank] | payload (values little-endian, declared order) |
//   CRC32 of payload (u32)
//
// All integers little-endian. Round trips are bitwise.

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "cuts/weights.hpp"

namespace cuts {

inline constexpr std::uint16_t kCheckpointVersion = 1;

namespace detail {

inline const std::array<std::uint32_t, 256>& crc32_table() {
    static const auto table = [] {
        std::array<std::uint32_t, 256> t{};
        for (std::uint32_t i = 0; i < 256; ++i) {
            std::uint32_t c = i;
            for (int j = 0; j < 8; ++j) {
                c = (c & 1) ? (0xEDB88320u ^ (c >> 1)) : (c >> 1);
            }
            t[i] = c;
        }
        return t;
    }();
    return table;
}

inline std::uint32_t crc32(const std::uint8_t* data, std::size_t len) {
    const auto& table = crc32_table();
    std::uint32_t c = 0xFFFFFFFFu;
    for (std::size_t i = 0; i < len; ++i) {
        c = table[(c ^ data[i]) & 0xFFu] ^ (c >> 8);
    }
    return c ^ 0xFFFFFFFFu;
}

struct ByteWriter {
    std::vector<std::uint8_t> bytes;

    void u8(std::uint8_t v) { bytes.push_back(v); }
    void u16(std::uint16_t v) {
        bytes.push_back(std::uint8_t(v));
        bytes.push_back(std::uint8_t(v >> 8));
    }
    void u32(std::uint32_t v) {
        for (int i = 0; i < 4; ++i) bytes.push_back(std::uint8_t(v >> (8 * i)));
    }
    void raw(const void* data, std::size_t len) {
        const auto* p = static_cast<const std::uint8_t*>(data);
        bytes.insert(bytes.end(), p, p + len);
    }
    template <typename T>
    void scalar(T v) {
        if constexpr (sizeof(T) == 4) {
            u32(std::bit_cast<std::uint32_t>(v));
        } else {
            const auto u = std::bit_cast<std::uint64_t>(v);
            u32(std::uint32_t(u));
            u32(std::uint32_t(u >> 32));
        }
    }
};

struct ByteReader {
    const std::vector<std::uint8_t>& bytes;
    std::size_t pos = 0;

    void need(std::size_t n) const {
        if (pos + n > bytes.size()) throw std::runtime_error("checkpoint: truncated file");
    }
    std::uint8_t u8() {
        need(1);
        return bytes[pos++];
    }
    std::uint16_t u16() {
        need(2);
        const std::uint16_t v = std::uint16_t(bytes[pos]) | std::uint16_t(bytes[pos + 1]) << 8;
        pos += 2;
        return v;
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= std::uint32_t(bytes[pos + i]) << (8 * i);
        pos += 4;
        return v;
    }
    std::string str(std::size_t n) {
        need(n);
        std::string s(reinterpret_cast<const char*>(bytes.data() + pos), n);
        pos += n;
        return s;
    }
    template <typename T>
    T scalar() {
        if constexpr (sizeof(T) == 4) {
            return std::bit_cast<T>(u32());
        } else {
            const std::uint64_t lo = u32();
            const std::uint64_t hi = u32();
            return std::bit_cast<T>(lo | hi << 32);
        }
    }
};

template <typename T>
constexpr std::uint8_t dtype_tag() {
    static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>);
    return std::is_same_v<T, float> ? 0 : 1;
}

}  // namespace detail

template <typename T>
void save_checkpoint(const WeightSnapshot<T>& snap, const std::filesystem::path& path) {
    snap.validate();
    detail::ByteWriter w;
    w.raw("CUTS", 4);
    w.u16(kCheckpointVersion);
    w.u8(detail::dtype_tag<T>());
    w.u32(std::uint32_t(snap.layers.size()));
    for (const auto& layer : snap.layers) {
        if (layer.name.size() > 0xFFFF) throw std::invalid_argument("checkpoint: name too long");
        w.u16(std::uint16_t(layer.name.size()));
        w.raw(layer.name.data(), layer.name.size());
        if (layer.shape.size() > 0xFF) throw std::invalid_argument("checkpoint: rank too large");
        w.u8(std::uint8_t(layer.shape.size()));
        for (auto d : layer.shape) w.u32(std::uint32_t(d));
    }
    const std::size_t payload_begin = w.bytes.size();
    for (const auto& layer : snap.layers) {
        for (T v : layer.values) w.scalar(v);
    }
    const std::uint32_t crc =
        detail::crc32(w.bytes.data() + payload_begin, w.bytes.size() - payload_begin);
    w.u32(crc);

    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("checkpoint: cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(w.bytes.data()), std::streamsize(w.bytes.size()));
    if (!out) throw std::runtime_error("checkpoint: write failed " + path.string());
}

template <typename T>
WeightSnapshot<T> load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("checkpoint: cannot open " + path.string());
    std::vector<std::uint8_t> bytes(std::istreambuf_iterator<char>(in),
                                    std::istreambuf_iterator<char>{});
    detail::ByteReader r{bytes};

    if (r.str(4) != "CUTS") throw std::runtime_error("checkpoint: bad magic");
    const auto version = r.u16();
    if (version != kCheckpointVersion) {
        throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version));
    }
    const auto dtype = r.u8();
    if (dtype != detail::dtype_tag<T>()) {
        throw std::runtime_error("checkpoint: dtype mismatch (file has " +
                                 std::string(dtype == 0 ? "f32" : "f64") + ")");
    }
    const auto layer_count = r.u32();
    if (layer_count == 0) throw std::runtime_error("checkpoint: empty layer list");

    WeightSnapshot<T> snap;
    snap.layers.resize(layer_count);
    for (auto& layer : snap.layers) {
        const auto name_len = r.u16();
        layer.name = r.str(name_len);
        const auto rank = r.u8();
        layer.shape.resize(rank);
        for (auto& d : layer.shape) d = r.u32();
        layer.values.resize(layer.shape_product());
    }

    const std::size_t payload_begin = r.pos;
    for (auto& layer : snap.layers) {
        for (auto& v : layer.values) v = r.template scalar<T>();
    }
    const std::size_t payload_end = r.pos;
    const auto stored_crc = r.u32();
    if (r.pos != bytes.size()) throw std::runtime_error("checkpoint: trailing bytes");
    const auto actual_crc =
        detail::crc32(bytes.data() + payload_begin, payload_end - payload_begin);
    if (stored_crc != actual_crc) throw std::runtime_error("checkpoint: checksum mismatch");
    snap.validate();
    return snap;
}

}  // namespace cuts
