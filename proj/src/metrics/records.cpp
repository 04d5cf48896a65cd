#include "qrel/metrics/records.hpp"

#include <cmath>
#include <unordered_set>

#include "qrel/error.hpp"

namespace qrel::metrics {

std::string to_string(Split s)
{
    switch (s) {
    case Split::Train: return "train";
    case Split::Dev: return "dev";
    case Split::Test: return "test";
    }
    return "?";
}

std::string to_string(Source s)
{
    switch (s) {
    case Source::ID: return "ID";
    case Source::OOD_A: return "OOD_A";
    case Source::OOD_B: return "OOD_B";
    }
    return "?";
}

Split split_from_string(const std::string& s)
{
    if (s == "train") return Split::Train;
    if (s == "dev") return Split::Dev;
    if (s == "test") return Split::Test;
    throw ValidationError("unknown record split '" + s + "'");
}

Source source_from_string(const std::string& s)
{
    if (s == "ID") return Source::ID;
    if (s == "OOD_A") return Source::OOD_A;
    if (s == "OOD_B") return Source::OOD_B;
    throw ValidationError("unknown record source '" + s + "'");
}

void validate_records(const std::vector<PredictionRecord>& records)
{
    std::unordered_set<std::string> seen;
    for (const auto& r : records) {
        require(std::isfinite(r.confidence) && r.confidence >= 0.0 && r.confidence <= 1.0,
                "record '" + r.id + "' has confidence outside [0, 1]");
        require(std::isfinite(r.soft_acc) && r.soft_acc >= 0.0 && r.soft_acc <= 1.0,
                "record '" + r.id + "' has soft_acc outside [0, 1]");
        require(seen.insert(r.id).second, "duplicate record id '" + r.id + "'");
    }
}

std::vector<PredictionRecord> filter_split(const std::vector<PredictionRecord>& records, Split split)
{
    std::vector<PredictionRecord> out;
    for (const auto& r : records)
        if (r.split == split) out.push_back(r);
    return out;
}

} // namespace qrel::metrics
