#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "qrel/features.hpp"

namespace qrel::confidence {

/// Two-layer perceptron on standardized features:
/// sigmoid(w2 . tanh(W1 z + b1) + b2), z = (x - mean) / stddev.
struct SelectorModel {
    Eigen::VectorXd mean;
    Eigen::VectorXd stddev;
    Eigen::MatrixXd w1;  // (hidden, in)
    Eigen::VectorXd b1;
    Eigen::VectorXd w2;  // (hidden)
    double b2 = 0.0;

    int in_dim() const { return static_cast<int>(w1.cols()); }
    int hidden() const { return static_cast<int>(w1.rows()); }
    void validate() const;

    bool operator==(const SelectorModel&) const = default;
};

struct SelectorTrainConfig {
    int epochs = 200;
    double learning_rate = 3e-3;
    int batch_size = 32;
    std::uint64_t seed = 0;
    int hidden = 32;
    double weight_decay = 3e-2;
};

struct SelectorExample {
    Eigen::VectorXd x;  // raw (unnormalized) input
    double target = 0.0;
};

struct SelectorTrainLog {
    int best_epoch = 0;  // 0 = initial model
    double initial_heldout_mse = 0.0;
    double best_heldout_mse = 0.0;
    std::vector<double> heldout_mse;  // per epoch
    std::vector<std::string> warnings;
};

struct SelectorGradients {
    Eigen::MatrixXd w1;
    Eigen::VectorXd b1;
    Eigen::VectorXd w2;
    double b2 = 0.0;
    double loss = 0.0;  // mean squared error over the batch
};

/// Seeded initial parameters with identity normalization.
SelectorModel selector_init(int in_dim, const SelectorTrainConfig& cfg);

/// Mean-squared-error regression onto soft targets by mini-batch Adam. 10% of
/// the examples are split off (seeded) and the best epoch by held-out MSE is returned.
SelectorModel selector_train(std::span<const SelectorExample> examples, const SelectorTrainConfig& cfg,
                             SelectorTrainLog* log = nullptr);

double selector_predict(const SelectorModel& m, const Eigen::VectorXd& x);
double selector_predict(const SelectorModel& m, const FeatureVector& f);

/// d prediction / d raw input.
Eigen::VectorXd selector_input_gradient(const SelectorModel& m, const Eigen::VectorXd& x);

/// Gradient of the batch MSE w.r.t. every parameter (normalization fixed).
SelectorGradients selector_backprop(const SelectorModel& m, std::span<const SelectorExample> batch);

double selector_mse(const SelectorModel& m, std::span<const SelectorExample> examples);

} // namespace qrel::confidence
