#pragma once

#include <optional>
#include <string>
#include <vector>

#include "qrel/features.hpp"

namespace qrel::metrics {

enum class Split { Train, Dev, Test };
enum class Source { ID, OOD_A, OOD_B };

std::string to_string(Split s);
std::string to_string(Source s);
Split split_from_string(const std::string& s);
Source source_from_string(const std::string& s);

/// One evaluated sample: the confidence g(x) and the correctness Acc(x).
struct PredictionRecord {
    std::string id;
    double confidence = 0.0;
    double soft_acc = 0.0;
    Split split = Split::Test;
    Source source = Source::ID;
    std::optional<FeatureVector> features;
    std::optional<std::string> answer;
    std::vector<double> step_probs;
    std::vector<std::string> refs;

    bool operator==(const PredictionRecord&) const = default;
};

/// Throws ValidationError on out-of-range confidence/soft_acc or duplicate ids.
void validate_records(const std::vector<PredictionRecord>& records);

std::vector<PredictionRecord> filter_split(const std::vector<PredictionRecord>& records, Split split);

} // namespace qrel::metrics
