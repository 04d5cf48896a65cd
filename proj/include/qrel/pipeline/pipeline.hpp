#pragma once

#include <optional>
#include <span>
#include <vector>

#include "qrel/confidence/selector.hpp"
#include "qrel/mbq/calibration.hpp"
#include "qrel/metrics/records.hpp"
#include "qrel/model/decoder.hpp"
#include "qrel/model/task.hpp"
#include "qrel/model/trainer.hpp"
#include "qrel/quant/checkpoint.hpp"
#include "qrel/quant/quant_spec.hpp"

namespace qrel::pipeline {

inline constexpr int kDefaultMaxNew = 4;

/// Decoder sized for the synthetic task.
model::ModelConfig task_model_config(const model::TaskConfig& task, model::ModelConfig base = {});

/// Fits a decoder on the task's model split.
model::Model train_task_model(const model::TaskData& data, const model::ModelConfig& cfg,
                              const model::TrainConfig& train, model::TrainLog* log = nullptr);

/// Quantized checkpoint for a label. MBQ labels need a calibration batch;
/// full-precision labels store every tensor as FP32.
quant::Checkpoint quantize_for_label(const model::Model& m, const quant::QuantLabel& label,
                                     const std::optional<mbq::CalibBatch>& calib,
                                     std::map<std::string, mbq::LayerSearch>* searches = nullptr,
                                     quant::HqqLog* log = nullptr);

metrics::Split record_split(model::SampleSplit s);
metrics::Source record_source(model::SampleSource s);

/// Greedy-decodes every sample; confidence is MaxProb, features are attached.
std::vector<metrics::PredictionRecord> evaluate(const model::Model& m, std::span<const model::TaskSample> samples,
                                                int max_new = kDefaultMaxNew);

std::vector<confidence::SelectorExample> selector_examples(std::span<const metrics::PredictionRecord> records);

/// Same records with confidences replaced by the selector's output.
std::vector<metrics::PredictionRecord> rescore(std::span<const metrics::PredictionRecord> records,
                                               const confidence::SelectorModel& selector);

/// Records of one split and source.
std::vector<metrics::PredictionRecord> select(std::span<const metrics::PredictionRecord> records,
                                              metrics::Split split,
                                              std::optional<metrics::Source> source = metrics::Source::ID);

} // namespace qrel::pipeline
