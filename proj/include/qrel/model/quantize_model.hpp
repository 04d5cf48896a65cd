#pragma once

#include <map>
#include <optional>
#include <string>

#include "qrel/mbq/equalization.hpp"
#include "qrel/model/decoder.hpp"
#include "qrel/quant/checkpoint.hpp"
#include "qrel/quant/quantizer.hpp"

namespace qrel::model {

using EqualizationPlans = std::map<std::string, mbq::EqualizationPlan>;

/// Quantizes every linear weight (weight-only); embeddings and norm gains are
/// left untouched. An empty spec is the full-precision passthrough. Plans are
/// keyed by tensor name; layers without a plan are quantized directly.
quant::Checkpoint quantize_to_checkpoint(const Model& m, const std::optional<quant::QuantSpec>& spec,
                                         const EqualizationPlans& plans = {}, quant::HqqLog* log = nullptr);

/// Model whose linear weights are replaced by their dequantized values.
Model quantize_model(const Model& m, const std::optional<quant::QuantSpec>& spec,
                     const EqualizationPlans& plans = {}, quant::HqqLog* log = nullptr);

/// Full-precision checkpoint (every tensor stored as FP32).
quant::Checkpoint to_checkpoint(const Model& m);

/// Rebuilds a model from a full-precision or quantized checkpoint.
Model from_checkpoint(const quant::Checkpoint& ckpt);

/// Sizes of the stored weights: the checkpoint payload vs a 16-bit baseline.
struct StorageReport {
    std::size_t weights = 0;           // number of parameters
    std::size_t fp16_bytes = 0;        // 2 bytes per parameter
    std::size_t fp32_bytes = 0;        // 4 bytes per parameter
    std::size_t checkpoint_bytes = 0;  // serialized SQNT size
    std::size_t quantized_weights = 0;  // parameters stored as codes
    std::size_t quantized_bytes = 0;    // their codes plus 32-bit scales and zero-points
};

StorageReport storage_report(const quant::Checkpoint& ckpt);

} // namespace qrel::model
