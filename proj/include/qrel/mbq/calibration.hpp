#pragma once

#include <map>
#include <span>
#include <string>
#include <vector>

#include "qrel/mbq/equalization.hpp"
#include "qrel/model/decoder.hpp"
#include "qrel/model/quantize_model.hpp"
#include "qrel/quant/quant_spec.hpp"

namespace qrel::mbq {

enum class Modality { Vision, Text };

struct CalibSequence {
    std::vector<int> tokens;
    std::vector<Modality> modality;  // one tag per token
};

struct CalibBatch {
    std::vector<CalibSequence> samples;

    std::size_t size() const { return samples.size(); }
    void validate() const;
};

/// Relative importance of vision and text tokens, normalized to sum 1.
struct ModalityWeights {
    double alpha_v = 0.5;
    double alpha_t = 0.5;
};

/// alpha_m is the batch mean of the L2 norm of the next-token loss gradient
/// w.r.t. the input embeddings of modality-m tokens (samples without such
/// tokens contribute zero), then both are normalized to sum to one.
ModalityWeights modality_weights(const model::Model& m, const CalibBatch& batch);

/// Inputs of one linear layer gathered over the calibration batch, split by
/// the modality of the position they were computed at.
struct ModalityActivations {
    Eigen::MatrixXd vision;  // (tokens, in)
    Eigen::MatrixXd text;
};

std::map<std::string, ModalityActivations> collect_activations(const model::Model& m, const CalibBatch& batch);

inline const std::vector<double>& default_exponent_grid()
{
    static const std::vector<double> grid{0.0, 0.25, 0.5, 0.75, 1.0};
    return grid;
}

/// Scales s_j = max(maxabs_j(X)^beta, 1e-8), rounded to FP32 as stored.
Eigen::VectorXd equalization_scales(const ModalityActivations& acts, double exponent);

/// Modality-weighted output reconstruction error of quantizing W diag(s).
double equalization_loss(const Eigen::MatrixXd& weights, const ModalityActivations& acts, const ModalityWeights& mw,
                         const quant::QuantSpec& spec, const EqualizationPlan& plan);

/// Grid search over exponents; ties resolve to the smaller exponent. `losses`
/// receives L(beta) for every grid point when given.
EqualizationPlan search_equalization(const Eigen::MatrixXd& weights, const ModalityActivations& acts,
                                     const ModalityWeights& mw, const quant::QuantSpec& spec,
                                     std::span<const double> exponent_grid, std::vector<double>* losses = nullptr);

struct LayerSearch {
    EqualizationPlan plan;
    std::vector<double> losses;  // per grid point
};

/// Runs the search for every linear layer of the model.
std::map<std::string, LayerSearch> calibrate_model(const model::Model& m, const CalibBatch& batch,
                                                    const quant::QuantSpec& spec,
                                                    std::span<const double> exponent_grid = default_exponent_grid());

model::EqualizationPlans plans_of(const std::map<std::string, LayerSearch>& searches);

} // namespace qrel::mbq
