#pragma once

#include <vector>

#include "qrel/model/decoder.hpp"
#include "qrel/model/task.hpp"

namespace qrel::model {

struct TrainConfig {
    int epochs = 24;
    double learning_rate = 3e-3;
    int batch_size = 16;
    std::uint64_t seed = 0;
};

struct TrainLog {
    std::vector<double> epoch_loss;  // mean per-sequence loss
};

/// Adam on summed next-token cross-entropy. Single-threaded and seeded, so
/// the result is bit-reproducible. The returned weights are rounded to FP32.
Model train_model(Model m, const std::vector<TrainingSequence>& data, const TrainConfig& cfg,
                  TrainLog* log = nullptr);

} // namespace qrel::model
