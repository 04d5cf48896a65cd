#pragma once

#include <filesystem>
#include <json.hpp>
#include <span>
#include <string>
#include <vector>

#include "qrel/confidence/selector.hpp"
#include "qrel/mbq/calibration.hpp"
#include "qrel/metrics/metrics.hpp"
#include "qrel/model/task.hpp"

namespace qrel::io {

using Json = nlohmann::ordered_json;

// Records: one JSON object per line.
Json record_to_json(const metrics::PredictionRecord& r, const std::string& manifest_hash);
metrics::PredictionRecord record_from_json(const Json& j);

struct RecordFile {
    std::vector<metrics::PredictionRecord> records;
    std::string manifest_hash;  // shared by every line; empty for an empty file
};

std::string records_to_jsonl(std::span<const metrics::PredictionRecord> records, const std::string& manifest_hash);
RecordFile records_from_jsonl(const std::string& text);
void write_records(const std::filesystem::path& path, std::span<const metrics::PredictionRecord> records,
                   const std::string& manifest_hash);
RecordFile read_records(const std::filesystem::path& path);

// Synthetic task directory: task.json, samples.jsonl, ood.jsonl, calib.jsonl.
Json task_config_to_json(const model::TaskConfig& cfg);
model::TaskConfig task_config_from_json(const Json& j);
Json sample_to_json(const model::TaskSample& s);
model::TaskSample sample_from_json(const Json& j);

void write_task_dir(const std::filesystem::path& dir, const model::TaskConfig& cfg, const model::TaskData& data);

struct TaskFiles {
    model::TaskConfig config;
    model::TaskData data;
};
TaskFiles read_task_dir(const std::filesystem::path& dir);

// Calibration batch: {"tokens": [...], "modality": ["v"|"t", ...]} per line.
std::string calib_to_jsonl(const mbq::CalibBatch& batch);
mbq::CalibBatch calib_from_jsonl(const std::string& text);
mbq::CalibBatch read_calib(const std::filesystem::path& path);

/// Prompt plus reference answer, vision tokens tagged "v" and the rest "t".
mbq::CalibBatch calib_from_samples(std::span<const model::TaskSample> samples);

// Selector: numbers are decimal strings so every double round-trips exactly.
Json selector_to_json(const confidence::SelectorModel& m, const std::string& manifest_hash);
confidence::SelectorModel selector_from_json(const Json& j, std::string* manifest_hash = nullptr);

// Report and CSV exports.
Json report_to_json(const metrics::ReliabilityReport& rep, const std::string& manifest_hash);
std::string curve_to_csv(const metrics::RiskCoverageCurve& curve);
std::string mixture_to_csv(std::span<const metrics::MixtureRow> rows);

/// Stable text form of a JSON document with a trailing newline.
std::string dump(const Json& j);

} // namespace qrel::io
