#pragma once

// Little-endian primitive readers/writers shared by every on-disk format.

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "pvp/error.hpp"

namespace pvp::binio {

static_assert(std::endian::native == std::endian::little, "big-endian hosts need byte swapping here");

template <typename T>
void put(std::ostream& os, T v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

inline void put_magic(std::ostream& os, std::string_view magic) { os.write(magic.data(), static_cast<std::streamsize>(magic.size())); }

inline void put_f32(std::ostream& os, std::span<const double> values) {
    std::vector<float> buf(values.begin(), values.end());
    os.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size() * sizeof(float)));
}

inline void put_string(std::ostream& os, std::string_view s) {
    put<std::uint32_t>(os, static_cast<std::uint32_t>(s.size()));
    os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

template <typename T>
T get(std::istream& is) {
    T v{};
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!is) throw Error(ErrorKind::Format, "truncated stream");
    return v;
}

inline void expect_magic(std::istream& is, std::string_view magic) {
    std::array<char, 4> buf{};
    is.read(buf.data(), 4);
    if (!is || std::string_view(buf.data(), 4) != magic)
        throw Error(ErrorKind::Format, "bad magic, expected " + std::string(magic));
}

inline std::vector<double> get_f32(std::istream& is, std::size_t count) {
    std::vector<float> buf(count);
    is.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(count * sizeof(float)));
    if (!is) throw Error(ErrorKind::Format, "truncated float payload");
    return {buf.begin(), buf.end()};
}

inline std::string get_string(std::istream& is, std::size_t max_len = 1 << 20) {
    auto n = get<std::uint32_t>(is);
    if (n > max_len) throw Error(ErrorKind::Format, "string length out of range");
    std::string s(n, '\0');
    is.read(s.data(), n);
    if (!is) throw Error(ErrorKind::Format, "truncated string");
    return s;
}

// Rounds a value through float32, matching what a save/load cycle produces.
inline double f32_round(double v) { return static_cast<double>(static_cast<float>(v)); }

}  // namespace pvp::binio
