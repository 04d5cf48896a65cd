#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <string>

#include "qrel/error.hpp"

namespace qrel::mbq {

/// Per-input-channel scales s: weights become W diag(s), activations X diag(s)^-1.
struct EqualizationPlan {
    Eigen::VectorXd scales;
    double exponent = 0.0;

    bool operator==(const EqualizationPlan&) const = default;
};

inline void validate(const EqualizationPlan& plan, Eigen::Index channels)
{
    require(plan.scales.size() == channels, "equalization plan has " + std::to_string(plan.scales.size()) +
                                                " scales for " + std::to_string(channels) + " input channels");
    for (Eigen::Index j = 0; j < plan.scales.size(); ++j)
        require(std::isfinite(plan.scales(j)) && plan.scales(j) > 0.0,
                "equalization scale " + std::to_string(j) + " must be positive and finite");
}

/// W (out, in) -> W diag(s).
template <typename Derived>
Eigen::Matrix<typename Derived::Scalar, Eigen::Dynamic, Eigen::Dynamic>
apply_equalization(const Eigen::MatrixBase<Derived>& weights, const EqualizationPlan& plan)
{
    validate(plan, weights.cols());
    using Scalar = typename Derived::Scalar;
    return weights * plan.scales.cast<Scalar>().asDiagonal();
}

/// X (tokens, in) -> X diag(s)^-1.
template <typename Derived>
Eigen::Matrix<typename Derived::Scalar, Eigen::Dynamic, Eigen::Dynamic>
fold_inverse(const Eigen::MatrixBase<Derived>& activations, const EqualizationPlan& plan)
{
    validate(plan, activations.cols());
    using Scalar = typename Derived::Scalar;
    return activations * plan.scales.cwiseInverse().cast<Scalar>().asDiagonal();
}

/// W~ (out, in) of an equalized layer -> W~ diag(s)^-1, the weight that acts on raw activations.
template <typename Derived>
Eigen::Matrix<typename Derived::Scalar, Eigen::Dynamic, Eigen::Dynamic>
unfold_weights(const Eigen::MatrixBase<Derived>& weights, const EqualizationPlan& plan)
{
    validate(plan, weights.cols());
    using Scalar = typename Derived::Scalar;
    Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> out = weights;
    for (Eigen::Index j = 0; j < out.cols(); ++j) out.col(j) /= static_cast<Scalar>(plan.scales(j));
    return out;
}

} // namespace qrel::mbq
