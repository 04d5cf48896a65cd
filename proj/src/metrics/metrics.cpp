#include "qrel/metrics/metrics.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <limits>
#include <numeric>

#include "qrel/error.hpp"
#include "qrel/rng.hpp"

namespace qrel::metrics {

namespace {

void require_nonempty(std::span<const PredictionRecord> records, const char* what)
{
    require(!records.empty(), std::string(what) + ": empty record set");
}

// Indices sorted by confidence descending, ties by id.
std::vector<std::size_t> ranking(std::span<const PredictionRecord> records)
{
    std::vector<std::size_t> idx(records.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
        if (records[a].confidence != records[b].confidence) return records[a].confidence > records[b].confidence;
        return records[a].id < records[b].id;
    });
    return idx;
}

double phi_score(const PredictionRecord& r, double c)
{
    return r.soft_acc > 0.0 ? r.soft_acc : -c;
}

int ece_bin(double conf, int n_bins)
{
    // Smallest b with conf <= (b + 1) / B.
    int b = static_cast<int>(std::ceil(conf * n_bins)) - 1;
    b = std::clamp(b, 0, n_bins - 1);
    while (b > 0 && conf <= static_cast<double>(b) / n_bins) --b;
    while (b < n_bins - 1 && conf > static_cast<double>(b + 1) / n_bins) ++b;
    return b;
}

} // namespace

std::string normalize_answer(const std::string& s)
{
    std::string out;
    bool pending_space = false;
    for (unsigned char ch : s) {
        if (std::isspace(ch)) {
            pending_space = !out.empty();
            continue;
        }
        if (std::ispunct(ch)) continue;
        if (pending_space) out += ' ';
        pending_space = false;
        out += static_cast<char>(std::tolower(ch));
    }
    return out;
}

double soft_accuracy(const std::string& answer, std::span<const std::string> refs)
{
    require(!refs.empty(), "soft_accuracy needs at least one reference answer");
    const std::string a = normalize_answer(answer);
    if (a.empty()) return 0.0;
    int matches = 0;
    for (const auto& r : refs) matches += normalize_answer(r) == a;
    return std::min(static_cast<double>(matches) / 3.0, 1.0);
}

double accuracy(std::span<const PredictionRecord> records)
{
    require_nonempty(records, "accuracy");
    double sum = 0.0;
    for (const auto& r : records) sum += r.soft_acc;
    return sum / static_cast<double>(records.size());
}

double ece(std::span<const PredictionRecord> records, int n_bins)
{
    require_nonempty(records, "ece");
    require(n_bins >= 1, "ece needs at least one bin");
    std::vector<double> conf(static_cast<std::size_t>(n_bins), 0.0), acc(conf.size(), 0.0);
    std::vector<std::size_t> count(conf.size(), 0);
    for (const auto& r : records) {
        const auto b = static_cast<std::size_t>(ece_bin(r.confidence, n_bins));
        conf[b] += r.confidence;
        acc[b] += r.soft_acc;
        ++count[b];
    }
    double total = 0.0;
    const double n = static_cast<double>(records.size());
    for (std::size_t b = 0; b < conf.size(); ++b) {
        if (count[b] == 0) continue;
        const double k = static_cast<double>(count[b]);
        total += (k / n) * std::abs(conf[b] / k - acc[b] / k);
    }
    return total;
}

RiskCoverageCurve risk_coverage_curve(std::span<const PredictionRecord> records)
{
    require_nonempty(records, "risk_coverage_curve");
    const auto idx = ranking(records);
    const double n = static_cast<double>(records.size());
    RiskCoverageCurve curve;
    double errors = 0.0;
    for (std::size_t k = 0; k < idx.size(); ++k) {
        const auto& r = records[idx[k]];
        errors += 1.0 - r.soft_acc;
        const bool boundary = k + 1 == idx.size() || records[idx[k + 1]].confidence != r.confidence;
        if (!boundary) continue;
        const double covered = static_cast<double>(k + 1);
        curve.points.push_back({covered / n, errors / covered, r.confidence});
    }
    return curve;
}

double coverage_at_risk(const RiskCoverageCurve& curve, double r)
{
    require(r >= 0.0, "risk level must be >= 0");
    double best = 0.0;
    for (const auto& p : curve.points)
        if (p.risk <= r + kRiskSlack) best = std::max(best, p.coverage);
    return best;
}

double rc_auc(const RiskCoverageCurve& curve)
{
    if (curve.points.empty()) return 0.0;
    double prev_cov = 0.0, prev_risk = curve.points.front().risk, area = 0.0;
    for (const auto& p : curve.points) {
        area += (p.coverage - prev_cov) * 0.5 * (p.risk + prev_risk);
        prev_cov = p.coverage;
        prev_risk = p.risk;
    }
    return area;
}

double effective_reliability(std::span<const PredictionRecord> records, double gamma, double c)
{
    require_nonempty(records, "effective_reliability");
    require(c >= 0.0, "cost c must be >= 0");
    double sum = 0.0;
    for (const auto& r : records)
        if (r.confidence >= gamma) sum += phi_score(r, c);
    return 100.0 * sum / static_cast<double>(records.size());
}

double coverage_at(std::span<const PredictionRecord> records, double gamma)
{
    require_nonempty(records, "coverage_at");
    std::size_t answered = 0;
    for (const auto& r : records) answered += r.confidence >= gamma;
    return static_cast<double>(answered) / static_cast<double>(records.size());
}

double select_threshold(std::span<const PredictionRecord> dev, double c)
{
    require_nonempty(dev, "select_threshold");
    require(c >= 0.0, "cost c must be >= 0");
    // Ascending confidences with suffix sums of scores: answering at gamma
    // covers the suffix starting at the first confidence >= gamma.
    std::vector<std::size_t> idx(dev.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return dev[a].confidence < dev[b].confidence; });
    std::vector<double> conf(idx.size());
    std::vector<double> suffix(idx.size() + 1, 0.0);
    for (std::size_t k = 0; k < idx.size(); ++k) conf[k] = dev[idx[k]].confidence;
    for (std::size_t k = idx.size(); k-- > 0;) suffix[k] = suffix[k + 1] + phi_score(dev[idx[k]], c);

    std::vector<double> candidates{0.0};
    for (std::size_t k = 0; k + 1 < conf.size(); ++k)
        if (conf[k + 1] != conf[k]) candidates.push_back(0.5 * (conf[k] + conf[k + 1]));
    candidates.push_back(std::nextafter(1.0, 2.0));

    double best_gamma = 0.0;
    double best_score = -std::numeric_limits<double>::infinity();
    for (double g : candidates) {
        const auto first = static_cast<std::size_t>(std::lower_bound(conf.begin(), conf.end(), g) - conf.begin());
        const double score = suffix[first];
        if (score > best_score || (score == best_score && g > best_gamma)) {
            best_score = score;
            best_gamma = g;
        }
    }
    return best_gamma;
}

std::size_t ceil_count(double x)
{
    if (x <= 0.0) return 0;
    return static_cast<std::size_t>(std::ceil(x - 1e-9));
}

std::vector<PredictionRecord> mixture_subset(std::span<const PredictionRecord> records, std::size_t k,
                                             std::uint64_t seed)
{
    k = std::min(k, records.size());
    std::vector<std::pair<std::uint64_t, std::size_t>> keyed;
    keyed.reserve(records.size());
    for (std::size_t i = 0; i < records.size(); ++i) keyed.emplace_back(splitmix64(seed ^ fnv1a64(records[i].id)), i);
    std::sort(keyed.begin(), keyed.end(), [&](const auto& a, const auto& b) {
        if (a.first != b.first) return a.first < b.first;
        return records[a.second].id < records[b.second].id;
    });
    std::vector<std::size_t> chosen;
    for (std::size_t i = 0; i < k; ++i) chosen.push_back(keyed[i].second);
    std::sort(chosen.begin(), chosen.end());
    std::vector<PredictionRecord> out;
    out.reserve(k);
    for (std::size_t i : chosen) out.push_back(records[i]);
    return out;
}

std::vector<MixtureRow> eval_mixture(std::span<const PredictionRecord> id, std::span<const PredictionRecord> ood,
                                     std::span<const double> fractions, double gamma, double c, std::uint64_t seed)
{
    std::vector<MixtureRow> rows;
    for (double f : fractions) {
        require(f >= 0.0 && f <= 1.0, "mixture fractions must lie in [0, 1]");
        auto mix = mixture_subset(id, ceil_count((1.0 - f) * static_cast<double>(id.size())), seed);
        const auto extra = mixture_subset(ood, ceil_count(f * static_cast<double>(ood.size())), seed);
        const std::size_t n_id = mix.size();
        mix.insert(mix.end(), extra.begin(), extra.end());
        require(!mix.empty(), "mixture at fraction " + std::to_string(f) + " is empty");
        rows.push_back({f, accuracy(mix), coverage_at(mix, gamma), effective_reliability(mix, gamma, c), n_id,
                        extra.size()});
    }
    return rows;
}

ReliabilityReport make_report(std::span<const PredictionRecord> test, std::span<const PredictionRecord> dev,
                              const std::string& label, int ece_bins)
{
    ReliabilityReport rep;
    rep.label = label;
    rep.n = test.size();
    rep.ece_bins = ece_bins;
    rep.accuracy = accuracy(test);
    rep.ece = ece(test, ece_bins);
    const auto curve = risk_coverage_curve(test);
    for (std::size_t i = 0; i < kRiskLevels.size(); ++i) rep.c_at_r[i] = coverage_at_risk(curve, kRiskLevels[i]);
    rep.rc_auc = rc_auc(curve);
    rep.gamma10 = select_threshold(dev, 10.0);
    rep.gamma100 = select_threshold(dev, 100.0);
    rep.phi10 = effective_reliability(test, rep.gamma10, 10.0);
    rep.phi100 = effective_reliability(test, rep.gamma100, 100.0);
    return rep;
}

} // namespace qrel::metrics
