#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "qrel/quant/quantizer.hpp"

namespace qrel::quant {

// SQNT container layout (all integers and floats little-endian):
//
//   "SQNT"  u16 version  u32 tensor_count  <pad to 8>
//   per tensor:
//     u32 name_len, name bytes (UTF-8)
//     u32 rows, u32 cols, u8 bits, u32 group_size
//     bits == 32: rows*cols f32 values, row-major
//     otherwise:  n_groups f32 scales, n_groups f32 zero_points,
//                 ceil(rows*cols*bits/8) packed code bytes
//     u32 eq_len, eq_len f32 equalization scales (0 = none)
//     <zero pad to 8-byte file offset>

inline constexpr std::uint16_t kCheckpointVersion = 1;
inline constexpr std::uint8_t kFp32Tag = 32;

struct Fp32Tensor {
    std::uint32_t rows = 0;
    std::uint32_t cols = 0;
    std::vector<float> values;  // row-major

    bool operator==(const Fp32Tensor&) const = default;
};

struct CheckpointTensor {
    std::string name;
    std::variant<Fp32Tensor, QuantizedTensor> data;
    std::vector<float> equalization;  // per input channel; empty when absent

    bool quantized() const { return std::holds_alternative<QuantizedTensor>(data); }
    bool operator==(const CheckpointTensor&) const = default;
};

struct Checkpoint {
    std::vector<CheckpointTensor> tensors;

    const CheckpointTensor* find(const std::string& name) const;
    const CheckpointTensor& at(const std::string& name) const;

    bool operator==(const Checkpoint&) const = default;
};

std::vector<std::uint8_t> serialize(const Checkpoint& ckpt);
Checkpoint deserialize(std::span<const std::uint8_t> bytes);

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint read_checkpoint(const std::filesystem::path& path);

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);

} // namespace qrel::quant
