#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace qrel::quant {

/// Bytes needed for `count` codes of `bits` each: ceil(bits * count / 8).
constexpr std::size_t packed_size(std::size_t count, int bits)
{
    return (count * static_cast<std::size_t>(bits) + 7) / 8;
}

/// Packs codes into a little-endian bit stream: code i occupies bits
/// [i*bits, (i+1)*bits), least significant bit first. Pad bits are zero.
std::vector<std::uint8_t> pack_codes(std::span<const std::uint8_t> codes, int bits);

/// Inverse of pack_codes. Rejects short input and nonzero pad bits.
std::vector<std::uint8_t> unpack_codes(std::span<const std::uint8_t> bytes, int bits, std::size_t count);

} // namespace qrel::quant
