#pragma once

#include <optional>
#include <string>

namespace qrel::quant {

enum class Method { RTN, HQQ, MBQ };

std::string to_string(Method m);
Method method_from_string(const std::string& s);

/// Parameters of group-wise weight quantization.
///
/// Groups are contiguous runs of `group_size` weights in row-major order;
/// weight matrices are stored (out, in) so a group runs along input channels.
struct QuantSpec {
    int bits = 4;
    int group_size = 64;
    Method method = Method::RTN;
    double lp_norm = 0.7;
    int hqq_iters = 20;
    // Half-quadratic penalty schedule: beta grows by kappa each iteration.
    double hqq_beta = 10.0;
    double hqq_kappa = 1.01;

    int levels() const { return (1 << bits) - 1; }

    /// Throws ValidationError when any invariant is violated.
    void validate() const;

    bool operator==(const QuantSpec&) const = default;
};

/// A row label of the quantization matrix: either full precision ("bf16")
/// or "<intN>_<METHOD>", e.g. "int4_MBQ".
struct QuantLabel {
    std::optional<QuantSpec> spec;  // empty means full precision

    bool full_precision() const { return !spec.has_value(); }
    std::string str() const;

    /// Parses a label; spec fields other than bits/method come from `base`.
    static QuantLabel parse(const std::string& label, const QuantSpec& base = {});
};

} // namespace qrel::quant
