#include "qrel/quant/quantizer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "qrel/quant/packing.hpp"

namespace qrel::quant {

namespace {

constexpr double kScaleFloor = 1e-8;
constexpr double kDivergenceTol = 1e-9;

struct GroupParams {
    float scale;
    float zero;
};

// std::round rounds half away from zero, the rounding mode used throughout.
std::uint8_t encode(double w, const GroupParams& g, int levels)
{
    const double q = std::round(w / static_cast<double>(g.scale) + static_cast<double>(g.zero));
    return static_cast<std::uint8_t>(std::clamp(q, 0.0, static_cast<double>(levels)));
}

double decode(std::uint8_t q, const GroupParams& g)
{
    return static_cast<double>(g.scale) * (static_cast<double>(q) - static_cast<double>(g.zero));
}

float to_float(double x)
{
    return static_cast<float>(x) + 0.0f;  // normalizes -0 to +0
}

GroupParams min_max_params(std::span<const double> w, int levels)
{
    const auto [lo, hi] = std::minmax_element(w.begin(), w.end());
    const double mn = *lo, mx = *hi;
    if (mx == mn) {
        // Constant group: pick (scale, zero) so code 0 decodes to the constant.
        const double mag = std::abs(mn);
        if (mag >= kScaleFloor) return {to_float(mag), mn > 0 ? -1.0f : 1.0f};
        const float s = to_float(kScaleFloor);
        return {s, to_float(-mn / static_cast<double>(s))};
    }
    const float s = to_float(std::max((mx - mn) / levels, kScaleFloor));
    return {s, to_float(std::round(-mn / static_cast<double>(s)))};
}

void check_input(std::span<const double> w, Eigen::Index rows, Eigen::Index cols, const QuantSpec& spec)
{
    spec.validate();
    require(rows >= 0 && cols >= 0 && static_cast<std::size_t>(rows * cols) == w.size(),
            "weight buffer does not match its shape");
    for (std::size_t i = 0; i < w.size(); ++i) {
        if (!std::isfinite(w[i])) {
            const auto c = static_cast<std::size_t>(cols);
            throw ValidationError("non-finite weight at index " + std::to_string(i) + " (row " +
                                  std::to_string(i / c) + ", col " + std::to_string(i % c) + ")");
        }
    }
}

double group_lp(std::span<const double> w, std::span<const std::uint8_t> q, const GroupParams& g, double p)
{
    double acc = 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) acc += std::pow(std::abs(w[i] - decode(q[i], g)), p);
    return acc;
}

QuantizedTensor assemble(Eigen::Index rows, Eigen::Index cols, const QuantSpec& spec,
                         const std::vector<std::uint8_t>& codes, const std::vector<GroupParams>& params)
{
    QuantizedTensor qt;
    qt.rows = rows;
    qt.cols = cols;
    qt.spec = spec;
    qt.packed = pack_codes(codes, spec.bits);
    qt.scales.reserve(params.size());
    qt.zero_points.reserve(params.size());
    for (const auto& g : params) {
        qt.scales.push_back(g.scale);
        qt.zero_points.push_back(g.zero);
    }
    return qt;
}

} // namespace

std::size_t QuantizedTensor::num_groups() const
{
    const auto g = static_cast<std::size_t>(spec.group_size);
    return (size() + g - 1) / g;
}

std::vector<std::uint8_t> QuantizedTensor::codes() const
{
    return unpack_codes(packed, spec.bits, size());
}

std::size_t QuantizedTensor::storage_bytes() const
{
    return packed.size() + num_groups() * (sizeof(float) + sizeof(float));
}

void QuantizedTensor::validate() const
{
    spec.validate();
    require(rows >= 0 && cols >= 0, "negative tensor shape");
    require(scales.size() == num_groups() && zero_points.size() == num_groups(),
            "scale/zero-point count does not match group count");
    for (std::size_t g = 0; g < scales.size(); ++g) {
        require(std::isfinite(scales[g]) && scales[g] > 0.0f, "scale of group " + std::to_string(g) + " is not positive");
        require(std::isfinite(zero_points[g]), "zero-point of group " + std::to_string(g) + " is not finite");
    }
    require(packed.size() == packed_size(size(), spec.bits), "packed code buffer has the wrong length");
}

double lp_shrink(double x, double beta, double p)
{
    const double ax = std::abs(x);
    if (ax == 0.0) return 0.0;
    const double mag = std::max(ax - std::pow(ax, p - 1.0) / beta, 0.0);
    return std::copysign(mag, x);
}

double lp_error(std::span<const double> a, std::span<const double> b, double p)
{
    require(a.size() == b.size(), "lp_error: length mismatch");
    double acc = 0.0;
    if (p == 2.0) {
        for (std::size_t i = 0; i < a.size(); ++i) acc += (a[i] - b[i]) * (a[i] - b[i]);
    } else {
        for (std::size_t i = 0; i < a.size(); ++i) acc += std::pow(std::abs(a[i] - b[i]), p);
    }
    return acc;
}

QuantizedTensor rtn_quantize_rowmajor(std::span<const double> w, Eigen::Index rows, Eigen::Index cols,
                                      const QuantSpec& spec)
{
    check_input(w, rows, cols, spec);
    const auto gs = static_cast<std::size_t>(spec.group_size);
    const int levels = spec.levels();
    std::vector<std::uint8_t> codes(w.size());
    std::vector<GroupParams> params;
    for (std::size_t begin = 0; begin < w.size(); begin += gs) {
        const auto group = w.subspan(begin, std::min(gs, w.size() - begin));
        const auto g = min_max_params(group, levels);
        for (std::size_t i = 0; i < group.size(); ++i) codes[begin + i] = encode(group[i], g, levels);
        params.push_back(g);
    }
    return assemble(rows, cols, spec, codes, params);
}

QuantizedTensor hqq_optimize_rowmajor(std::span<const double> w, Eigen::Index rows, Eigen::Index cols,
                                      const QuantSpec& spec, HqqLog* log)
{
    check_input(w, rows, cols, spec);
    const auto gs = static_cast<std::size_t>(spec.group_size);
    const int levels = spec.levels();
    const double p = spec.lp_norm;
    std::vector<std::uint8_t> codes(w.size());
    std::vector<GroupParams> params;
    HqqLog local;

    std::vector<std::uint8_t> q, best_q;
    for (std::size_t begin = 0; begin < w.size(); begin += gs) {
        const auto group = w.subspan(begin, std::min(gs, w.size() - begin));
        const std::size_t n = group.size();
        GroupParams g = min_max_params(group, levels);
        q.resize(n);
        for (std::size_t i = 0; i < n; ++i) q[i] = encode(group[i], g, levels);

        GroupParams best = g;
        best_q = q;
        double best_err = group_lp(group, q, g, p);
        double prev_err = best_err;
        double beta = spec.hqq_beta;
        const double s = g.scale;

        for (int it = 0; it < spec.hqq_iters; ++it) {
            ++local.iterations;
            // Shrink the residual under the l_p penalty, then solve for the
            // zero-point in closed form against the shrunken target.
            double zsum = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                const double e = lp_shrink(group[i] - decode(q[i], g), beta, p);
                zsum += static_cast<double>(q[i]) - (group[i] - e) / s;
            }
            g.zero = to_float(zsum / static_cast<double>(n));
            for (std::size_t i = 0; i < n; ++i) q[i] = encode(group[i], g, levels);
            beta *= spec.hqq_kappa;

            const double err = group_lp(group, q, g, p);
            if (err < best_err) {
                best_err = err;
                best = g;
                best_q = q;
            }
            if (err > prev_err + kDivergenceTol) {
                ++local.early_stopped;
                break;
            }
            prev_err = err;
        }
        std::copy(best_q.begin(), best_q.end(), codes.begin() + static_cast<std::ptrdiff_t>(begin));
        params.push_back(best);
        ++local.groups;
    }
    if (log) {
        log->groups += local.groups;
        log->iterations += local.iterations;
        log->early_stopped += local.early_stopped;
    }
    return assemble(rows, cols, spec, codes, params);
}

std::vector<double> dequantize_rowmajor(const QuantizedTensor& qt)
{
    qt.validate();
    const auto codes = qt.codes();
    const auto gs = static_cast<std::size_t>(qt.spec.group_size);
    std::vector<double> out(codes.size());
    for (std::size_t i = 0; i < codes.size(); ++i) {
        const std::size_t g = i / gs;
        out[i] = decode(codes[i], {qt.scales[g], qt.zero_points[g]});
    }
    return out;
}

} // namespace qrel::quant
