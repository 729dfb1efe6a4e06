#pragma once

#include <bit>
#include <cstdint>
#include <istream>
#include <ostream>

namespace textdistill {

// Little-endian 64-bit float payload helpers shared by the binary formats.
inline void put_f64(std::ostream& out, double v) {
    uint64_t bits = std::bit_cast<uint64_t>(v);
    char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((bits >> (8 * i)) & 0xffu);
    out.write(b, 8);
}

inline double get_f64(std::istream& in) {
    char b[8];
    in.read(b, 8);
    uint64_t bits = 0;
    for (int i = 0; i < 8; ++i)
        bits |= static_cast<uint64_t>(static_cast<unsigned char>(b[i])) << (8 * i);
    return std::bit_cast<double>(bits);
}

} // namespace textdistill
