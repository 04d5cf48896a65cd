#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "qrel/metrics/records.hpp"

namespace qrel::metrics {

/// Lowercase, punctuation stripped, whitespace collapsed.
std::string normalize_answer(const std::string& s);

/// VQA soft accuracy: min(#normalized exact matches / 3, 1); empty answer scores 0.
double soft_accuracy(const std::string& answer, std::span<const std::string> refs);

/// Mean soft accuracy over all records.
double accuracy(std::span<const PredictionRecord> records);

/// Equal-width binned calibration error. Bins are right-closed, (b/B, (b+1)/B],
/// with confidence 0 placed in the first bin.
double ece(std::span<const PredictionRecord> records, int n_bins = 15);

struct RiskCoveragePoint {
    double coverage;
    double risk;
    double threshold;  // answer iff confidence >= threshold
};

/// One point per distinct confidence, ordered by decreasing threshold, so
/// coverage is strictly increasing.
struct RiskCoverageCurve {
    std::vector<RiskCoveragePoint> points;
};

RiskCoverageCurve risk_coverage_curve(std::span<const PredictionRecord> records);

/// Rounding allowance when comparing a curve risk to a target level: error
/// sums accumulated in different orders differ in the last bits.
inline constexpr double kRiskSlack = 1e-12;

/// Largest coverage over all curve points whose risk is <= r (0 if none).
double coverage_at_risk(const RiskCoverageCurve& curve, double r);

/// Trapezoidal area under risk(coverage) on [0, 1]; risk at coverage 0 is the
/// first point's risk.
double rc_auc(const RiskCoverageCurve& curve);

/// Phi_c on a percentage scale: answered records score soft_acc (or -c when
/// soft_acc is 0), abstentions score 0.
double effective_reliability(std::span<const PredictionRecord> records, double gamma, double c);

/// Threshold maximizing Phi_c on dev records. Candidates are 0, midpoints of
/// consecutive distinct confidences, and a value just above 1. Ties go to the
/// largest threshold.
double select_threshold(std::span<const PredictionRecord> dev, double c);

/// Fraction of records answered at threshold gamma.
double coverage_at(std::span<const PredictionRecord> records, double gamma);

struct MixtureRow {
    double fraction;
    double accuracy;
    double coverage;
    double phi;
    std::size_t n_id;
    std::size_t n_ood;
};

/// Deterministic k-subset: records ranked by splitmix64(seed ^ fnv1a64(id))
/// (ties by id), the first k kept, returned in their input order.
std::vector<PredictionRecord> mixture_subset(std::span<const PredictionRecord> records, std::size_t k,
                                             std::uint64_t seed);

/// ceil(x) after forgiving 1e-9 of floating-point excess.
std::size_t ceil_count(double x);

/// For each OOD fraction f: ceil((1-f) N) ID records plus ceil(f M) OOD records.
std::vector<MixtureRow> eval_mixture(std::span<const PredictionRecord> id, std::span<const PredictionRecord> ood,
                                     std::span<const double> fractions, double gamma, double c,
                                     std::uint64_t seed = 0);

inline constexpr std::array<double, 3> kRiskLevels{0.005, 0.01, 0.05};

struct ReliabilityReport {
    double accuracy = 0.0;
    double ece = 0.0;
    std::array<double, 3> c_at_r{};  // at kRiskLevels
    double rc_auc = 0.0;
    double phi10 = 0.0;
    double phi100 = 0.0;
    double gamma10 = 0.0;
    double gamma100 = 0.0;
    std::size_t n = 0;
    std::string label;
    int ece_bins = 15;
};

/// Metrics on `test`, with Phi thresholds selected on `dev`.
ReliabilityReport make_report(std::span<const PredictionRecord> test, std::span<const PredictionRecord> dev,
                              const std::string& label, int ece_bins = 15);

} // namespace qrel::metrics
