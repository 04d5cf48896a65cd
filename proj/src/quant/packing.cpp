#include "qrel/quant/packing.hpp"

#include <algorithm>
#include <string>

#include "qrel/error.hpp"

namespace qrel::quant {

namespace {

void check_bits(int bits)
{
    require(bits >= 1 && bits <= 8, "code width must be in [1, 8] bits (got " + std::to_string(bits) + ")");
}

} // namespace

std::vector<std::uint8_t> pack_codes(std::span<const std::uint8_t> codes, int bits)
{
    check_bits(bits);
    const unsigned limit = 1u << bits;
    std::vector<std::uint8_t> out(packed_size(codes.size(), bits), 0);
    std::size_t bitpos = 0;
    for (std::size_t i = 0; i < codes.size(); ++i) {
        if (codes[i] >= limit)
            throw ValidationError("code " + std::to_string(codes[i]) + " at index " + std::to_string(i) +
                                  " does not fit in " + std::to_string(bits) + " bits");
        unsigned v = codes[i];
        int left = bits;
        while (left > 0) {
            const std::size_t byte = bitpos / 8;
            const int off = static_cast<int>(bitpos % 8);
            const int take = std::min(left, 8 - off);
            out[byte] |= static_cast<std::uint8_t>((v & ((1u << take) - 1)) << off);
            v >>= take;
            left -= take;
            bitpos += static_cast<std::size_t>(take);
        }
    }
    return out;
}

std::vector<std::uint8_t> unpack_codes(std::span<const std::uint8_t> bytes, int bits, std::size_t count)
{
    check_bits(bits);
    const std::size_t need = packed_size(count, bits);
    require(bytes.size() == need, "packed code buffer has " + std::to_string(bytes.size()) + " bytes, expected " +
                                      std::to_string(need));
    std::vector<std::uint8_t> out(count);
    std::size_t bitpos = 0;
    for (std::size_t i = 0; i < count; ++i) {
        unsigned v = 0;
        int got = 0;
        while (got < bits) {
            const std::size_t byte = bitpos / 8;
            const int off = static_cast<int>(bitpos % 8);
            const int take = std::min(bits - got, 8 - off);
            v |= ((static_cast<unsigned>(bytes[byte]) >> off) & ((1u << take) - 1)) << got;
            got += take;
            bitpos += static_cast<std::size_t>(take);
        }
        out[i] = static_cast<std::uint8_t>(v);
    }
    const int tail = static_cast<int>(bitpos % 8);
    if (tail != 0 && (bytes.back() >> tail) != 0)
        throw ValidationError("corrupted packing: nonzero pad bits in final byte");
    return out;
}

} // namespace qrel::quant
