#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "qrel/error.hpp"
#include "qrel/quant/quant_spec.hpp"

namespace qrel::quant {

/// A group-quantized, bit-packed weight matrix.
///
/// Element i (row-major) belongs to group i / group_size and dequantizes to
/// scales[g] * (code[i] - zero_points[g]). The last group may be partial;
/// its missing tail is implicit zero padding and is not stored.
struct QuantizedTensor {
    Eigen::Index rows = 0;
    Eigen::Index cols = 0;
    QuantSpec spec;
    std::vector<std::uint8_t> packed;
    std::vector<float> scales;
    std::vector<float> zero_points;

    std::size_t size() const { return static_cast<std::size_t>(rows * cols); }
    std::size_t num_groups() const;
    std::vector<std::uint8_t> codes() const;

    /// Payload bytes: packed codes plus a 32-bit scale and zero-point per group.
    std::size_t storage_bytes() const;

    void validate() const;

    bool operator==(const QuantizedTensor&) const = default;
};

/// Per-call diagnostics of the half-quadratic solver.
struct HqqLog {
    std::size_t groups = 0;
    std::size_t iterations = 0;     // summed over groups
    std::size_t early_stopped = 0;  // groups whose error rose and were cut short
};

/// Generalized soft-threshold for an l_p penalty (p <= 1):
/// sign(x) * max(|x| - |x|^(p-1) / beta, 0).
double lp_shrink(double x, double beta, double p);

QuantizedTensor rtn_quantize_rowmajor(std::span<const double> w, Eigen::Index rows, Eigen::Index cols,
                                      const QuantSpec& spec);
QuantizedTensor hqq_optimize_rowmajor(std::span<const double> w, Eigen::Index rows, Eigen::Index cols,
                                      const QuantSpec& spec, HqqLog* log = nullptr);
std::vector<double> dequantize_rowmajor(const QuantizedTensor& qt);

namespace detail {

template <typename Derived>
std::vector<double> flatten(const Eigen::MatrixBase<Derived>& m)
{
    std::vector<double> out;
    out.reserve(static_cast<std::size_t>(m.size()));
    for (Eigen::Index i = 0; i < m.rows(); ++i)
        for (Eigen::Index j = 0; j < m.cols(); ++j) out.push_back(static_cast<double>(m(i, j)));
    return out;
}

} // namespace detail

/// Min-max round-to-nearest quantization (half away from zero).
template <typename Derived>
QuantizedTensor rtn_quantize(const Eigen::MatrixBase<Derived>& weights, const QuantSpec& spec)
{
    const auto flat = detail::flatten(weights);
    return rtn_quantize_rowmajor(flat, weights.rows(), weights.cols(), spec);
}

/// Half-quadratic refinement of the RTN zero-points under an l_p error model.
/// Scales stay at their RTN values; the best iterate per group is kept.
template <typename Derived>
QuantizedTensor hqq_optimize(const Eigen::MatrixBase<Derived>& weights, const QuantSpec& spec,
                             HqqLog* log = nullptr)
{
    const auto flat = detail::flatten(weights);
    return hqq_optimize_rowmajor(flat, weights.rows(), weights.cols(), spec, log);
}

/// Dispatches on spec.method: HQQ runs the solver, RTN and MBQ use RTN
/// (MBQ's data-aware part lives in the equalization step).
template <typename Derived>
QuantizedTensor quantize(const Eigen::MatrixBase<Derived>& weights, const QuantSpec& spec, HqqLog* log = nullptr)
{
    if (spec.method == Method::HQQ) return hqq_optimize(weights, spec, log);
    return rtn_quantize(weights, spec);
}

template <typename Scalar = double>
Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> dequantize(const QuantizedTensor& qt)
{
    const auto flat = dequantize_rowmajor(qt);
    Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> out(qt.rows, qt.cols);
    std::size_t k = 0;
    for (Eigen::Index i = 0; i < qt.rows; ++i)
        for (Eigen::Index j = 0; j < qt.cols; ++j) out(i, j) = static_cast<Scalar>(flat[k++]);
    return out;
}

/// Error norm: Lp(p) sums |w - w~|^p, L2 is Lp(2) (squared Euclidean).
struct ErrorNorm {
    double p = 2.0;
    static constexpr ErrorNorm L2() { return {2.0}; }
    static constexpr ErrorNorm Lp(double p) { return {p}; }
};

double lp_error(std::span<const double> a, std::span<const double> b, double p);

template <typename DA, typename DB>
double quant_error(const Eigen::MatrixBase<DA>& weights, const Eigen::MatrixBase<DB>& reconstructed,
                   ErrorNorm norm)
{
    if (weights.rows() != reconstructed.rows() || weights.cols() != reconstructed.cols())
        throw ValidationError("quant_error: shape mismatch");
    const auto a = detail::flatten(weights);
    const auto b = detail::flatten(reconstructed);
    return lp_error(a, b, norm.p);
}

template <typename Derived>
double quant_error(const Eigen::MatrixBase<Derived>& weights, const QuantizedTensor& qt, ErrorNorm norm)
{
    if (weights.rows() != qt.rows || weights.cols() != qt.cols)
        throw ValidationError("quant_error: shape mismatch");
    return quant_error(weights, dequantize(qt), norm);
}

} // namespace qrel::quant
