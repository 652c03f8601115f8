// Little-endian primitives for the binary container formats. Byte-by-byte so
// files are identical regardless of host endianness.
#pragma once

#include <bit>
#include <cstdint>
#include <istream>
#include <ostream>
#include <string>

#include "thama/error.hpp"

namespace thama::bytes {

inline void put_u32(std::ostream& os, std::uint32_t v) {
    const char b[4] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
                       static_cast<char>((v >> 16) & 0xff),
                       static_cast<char>((v >> 24) & 0xff)};
    os.write(b, 4);
}

inline void put_u64(std::ostream& os, std::uint64_t v) {
    put_u32(os, static_cast<std::uint32_t>(v & 0xffffffffULL));
    put_u32(os, static_cast<std::uint32_t>(v >> 32));
}

inline void put_u8(std::ostream& os, std::uint8_t v) {
    os.put(static_cast<char>(v));
}

inline void put_f32(std::ostream& os, float v) {
    put_u32(os, std::bit_cast<std::uint32_t>(v));
}

inline void put_str(std::ostream& os, const std::string& s) {
    put_u32(os, static_cast<std::uint32_t>(s.size()));
    os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

template <typename What>
void need(std::istream& is, bool ok, const What& what) {
    if (!ok || !is.good())
        throw DataError(std::string("truncated or unreadable data while reading ") + what);
}

inline std::uint32_t get_u32(std::istream& is, const char* what) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    need(is, is.gcount() == 4, what);
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) |
           (static_cast<std::uint32_t>(b[3]) << 24);
}

inline std::uint64_t get_u64(std::istream& is, const char* what) {
    const std::uint64_t lo = get_u32(is, what);
    const std::uint64_t hi = get_u32(is, what);
    return lo | (hi << 32);
}

inline std::uint8_t get_u8(std::istream& is, const char* what) {
    const int c = is.get();
    need(is, c != EOF, what);
    return static_cast<std::uint8_t>(c);
}

inline float get_f32(std::istream& is, const char* what) {
    return std::bit_cast<float>(get_u32(is, what));
}

inline std::string get_str(std::istream& is, const char* what, std::uint32_t max_len) {
    const std::uint32_t n = get_u32(is, what);
    if (n > max_len) throw DataError(std::string("implausible string length in ") + what);
    std::string s(n, '\0');
    is.read(s.data(), n);
    need(is, static_cast<std::uint32_t>(is.gcount()) == n, what);
    return s;
}

// Bulk f32 read/write; still little-endian regardless of host.
inline void put_f32_block(std::ostream& os, const float* v, std::size_t n) {
    if constexpr (std::endian::native == std::endian::little) {
        os.write(reinterpret_cast<const char*>(v), static_cast<std::streamsize>(n * 4));
    } else {
        for (std::size_t i = 0; i < n; ++i) put_f32(os, v[i]);
    }
}

inline void get_f32_block(std::istream& is, float* v, std::size_t n, const char* what) {
    if constexpr (std::endian::native == std::endian::little) {
        is.read(reinterpret_cast<char*>(v), static_cast<std::streamsize>(n * 4));
        need(is, static_cast<std::size_t>(is.gcount()) == n * 4, what);
    } else {
        for (std::size_t i = 0; i < n; ++i) v[i] = get_f32(is, what);
    }
}

} // namespace thama::bytes
