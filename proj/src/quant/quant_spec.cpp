#include "qrel/quant/quant_spec.hpp"

#include <cmath>

#include "qrel/error.hpp"

namespace qrel::quant {

std::string to_string(Method m)
{
    switch (m) {
    case Method::RTN: return "RTN";
    case Method::HQQ: return "HQQ";
    case Method::MBQ: return "MBQ";
    }
    return "?";
}

Method method_from_string(const std::string& s)
{
    if (s == "RTN") return Method::RTN;
    if (s == "HQQ") return Method::HQQ;
    if (s == "MBQ") return Method::MBQ;
    throw ValidationError("unknown quantization method '" + s + "' (expected RTN, HQQ or MBQ)");
}

void QuantSpec::validate() const
{
    require(bits == 3 || bits == 4 || bits == 8, "bits must be 3, 4 or 8 (got " + std::to_string(bits) + ")");
    require(group_size >= 1, "group_size must be >= 1");
    require(std::isfinite(lp_norm) && lp_norm > 0.0 && lp_norm <= 1.0, "lp_norm must lie in (0, 1]");
    require(hqq_iters >= 0, "hqq_iters must be >= 0");
    require(std::isfinite(hqq_beta) && hqq_beta > 0.0, "hqq_beta must be positive");
    require(std::isfinite(hqq_kappa) && hqq_kappa >= 1.0, "hqq_kappa must be >= 1");
}

std::string QuantLabel::str() const
{
    if (!spec) return "bf16";
    return "int" + std::to_string(spec->bits) + "_" + to_string(spec->method);
}

QuantLabel QuantLabel::parse(const std::string& label, const QuantSpec& base)
{
    if (label == "bf16" || label == "fp32") return {};
    const auto us = label.find('_');
    require(label.rfind("int", 0) == 0 && us != std::string::npos,
            "bad quantization label '" + label + "' (expected bf16 or int<bits>_<METHOD>)");
    int bits = 0;
    try {
        std::size_t used = 0;
        bits = std::stoi(label.substr(3, us - 3), &used);
        require(used == us - 3, "");
    } catch (const std::exception&) {
        throw ValidationError("bad bit width in label '" + label + "'");
    }
    QuantSpec spec = base;
    spec.bits = bits;
    spec.method = method_from_string(label.substr(us + 1));
    spec.validate();
    return {spec};
}

} // namespace qrel::quant
