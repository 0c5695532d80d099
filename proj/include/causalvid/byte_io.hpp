#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <vector>

namespace causalvid {

// Little-endian scalar and float32 array I/O shared by the file formats.

inline std::uint32_t to_little(std::uint32_t v) {
    if constexpr (std::endian::native == std::endian::big) {
        return ((v & 0xffu) << 24) | ((v & 0xff00u) << 8) | ((v >> 8) & 0xff00u) | (v >> 24);
    }
    return v;
}

inline void write_u32(std::ostream& out, std::uint32_t v) {
    const std::uint32_t le = to_little(v);
    out.write(reinterpret_cast<const char*>(&le), sizeof(le));
}

inline std::uint32_t read_u32(std::istream& in) {
    std::uint32_t le = 0;
    in.read(reinterpret_cast<char*>(&le), sizeof(le));
    return to_little(le);
}

inline void write_f32_array(std::ostream& out, const std::vector<float>& data) {
    if constexpr (std::endian::native == std::endian::little) {
        out.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size() * sizeof(float)));
    } else {
        for (float f : data) {
            write_u32(out, std::bit_cast<std::uint32_t>(f));
        }
    }
}

// Returns false when the stream ends early.
inline bool read_f32_array(std::istream& in, std::vector<float>& data) {
    in.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(data.size() * sizeof(float)));
    if (!in || static_cast<size_t>(in.gcount()) != data.size() * sizeof(float)) {
        return false;
    }
    if constexpr (std::endian::native == std::endian::big) {
        for (float& f : data) {
            f = std::bit_cast<float>(to_little(std::bit_cast<std::uint32_t>(f)));
        }
    }
    return true;
}

}  // namespace causalvid
