#include "qrel/mbq/calibration.hpp"

#include <cmath>

#include "qrel/error.hpp"
#include "qrel/quant/quantizer.hpp"

namespace qrel::mbq {

namespace {

constexpr double kScaleFloor = 1e-8;

void check_finite(const Eigen::MatrixXd& x, const char* what)
{
    for (Eigen::Index i = 0; i < x.rows(); ++i)
        for (Eigen::Index j = 0; j < x.cols(); ++j)
            if (!std::isfinite(x(i, j)))
                throw ValidationError(std::string("non-finite ") + what + " activation at (" + std::to_string(i) +
                                      ", " + std::to_string(j) + ")");
}

void append_rows(Eigen::MatrixXd& dst, const Eigen::MatrixXd& rows)
{
    if (rows.rows() == 0) return;
    if (dst.size() == 0) {
        dst = rows;
        return;
    }
    Eigen::MatrixXd merged(dst.rows() + rows.rows(), dst.cols());
    merged << dst, rows;
    dst = std::move(merged);
}

} // namespace

void CalibBatch::validate() const
{
    require(!samples.empty(), "calibration batch is empty");
    for (std::size_t i = 0; i < samples.size(); ++i) {
        require(!samples[i].tokens.empty(), "calibration sequence " + std::to_string(i) + " is empty");
        require(samples[i].tokens.size() == samples[i].modality.size(),
                "calibration sequence " + std::to_string(i) + " needs one modality tag per token");
    }
}

ModalityWeights modality_weights(const model::Model& m, const CalibBatch& batch)
{
    batch.validate();
    double sum_v = 0.0, sum_t = 0.0;
    for (const auto& s : batch.samples) {
        const auto targets = model::next_token_targets(s.tokens);
        const auto g = model::backprop(m, s.tokens, targets);
        double sq_v = 0.0, sq_t = 0.0;
        for (std::size_t i = 0; i < s.tokens.size(); ++i) {
            const double sq = g.input_embeddings.row(static_cast<Eigen::Index>(i)).squaredNorm();
            (s.modality[i] == Modality::Vision ? sq_v : sq_t) += sq;
        }
        sum_v += std::sqrt(sq_v);
        sum_t += std::sqrt(sq_t);
    }
    const double n = static_cast<double>(batch.size());
    const double av = sum_v / n, at = sum_t / n;
    require(av + at > 0.0, "both modality gradient magnitudes are zero");
    return {av / (av + at), at / (av + at)};
}

std::map<std::string, ModalityActivations> collect_activations(const model::Model& m, const CalibBatch& batch)
{
    batch.validate();
    std::map<std::string, ModalityActivations> out;
    for (const auto& s : batch.samples) {
        Eigen::Index nv = 0;
        for (auto tag : s.modality) nv += tag == Modality::Vision;
        model::forward(m, s.tokens, [&](const std::string& name, const Eigen::MatrixXd& x) {
            Eigen::MatrixXd xv(nv, x.cols()), xt(x.rows() - nv, x.cols());
            Eigen::Index iv = 0, it = 0;
            for (Eigen::Index r = 0; r < x.rows(); ++r) {
                if (s.modality[static_cast<std::size_t>(r)] == Modality::Vision)
                    xv.row(iv++) = x.row(r);
                else
                    xt.row(it++) = x.row(r);
            }
            auto& acts = out[name];
            if (acts.vision.cols() == 0) acts.vision.resize(0, x.cols());
            if (acts.text.cols() == 0) acts.text.resize(0, x.cols());
            append_rows(acts.vision, xv);
            append_rows(acts.text, xt);
        });
    }
    return out;
}

Eigen::VectorXd equalization_scales(const ModalityActivations& acts, double exponent)
{
    const Eigen::Index in = std::max(acts.vision.cols(), acts.text.cols());
    Eigen::VectorXd s(in);
    for (Eigen::Index j = 0; j < in; ++j) {
        double mx = 0.0;
        if (acts.vision.rows() > 0) mx = std::max(mx, acts.vision.col(j).cwiseAbs().maxCoeff());
        if (acts.text.rows() > 0) mx = std::max(mx, acts.text.col(j).cwiseAbs().maxCoeff());
        s(j) = static_cast<float>(std::max(std::pow(mx, exponent), kScaleFloor));
    }
    return s;
}

double equalization_loss(const Eigen::MatrixXd& weights, const ModalityActivations& acts, const ModalityWeights& mw,
                         const quant::QuantSpec& spec, const EqualizationPlan& plan)
{
    const Eigen::MatrixXd deq = quant::dequantize(quant::quantize(apply_equalization(weights, plan), spec));
    auto term = [&](const Eigen::MatrixXd& x) {
        if (x.rows() == 0) return 0.0;
        const Eigen::MatrixXd ref = x * weights.transpose();
        const Eigen::MatrixXd got = fold_inverse(x, plan) * deq.transpose();
        return (ref - got).squaredNorm();
    };
    return mw.alpha_v * term(acts.vision) + mw.alpha_t * term(acts.text);
}

EqualizationPlan search_equalization(const Eigen::MatrixXd& weights, const ModalityActivations& acts,
                                     const ModalityWeights& mw, const quant::QuantSpec& spec,
                                     std::span<const double> exponent_grid, std::vector<double>* losses)
{
    require(!exponent_grid.empty(), "exponent grid is empty");
    require(acts.vision.rows() == 0 || acts.vision.cols() == weights.cols(),
            "vision activation width does not match weight input channels");
    require(acts.text.rows() == 0 || acts.text.cols() == weights.cols(),
            "text activation width does not match weight input channels");
    require(acts.vision.rows() + acts.text.rows() > 0, "no calibration activations");
    check_finite(acts.vision, "vision");
    check_finite(acts.text, "text");
    spec.validate();

    EqualizationPlan best;
    double best_loss = 0.0;
    bool have = false;
    if (losses) losses->clear();
    for (double beta : exponent_grid) {
        require(std::isfinite(beta) && beta >= 0.0 && beta <= 1.0, "grid exponents must lie in [0, 1]");
        EqualizationPlan plan{equalization_scales(acts, beta), beta};
        const double loss = equalization_loss(weights, acts, mw, spec, plan);
        if (losses) losses->push_back(loss);
        if (!have || loss < best_loss || (loss == best_loss && beta < best.exponent)) {
            best = std::move(plan);
            best_loss = loss;
            have = true;
        }
    }
    return best;
}

std::map<std::string, LayerSearch> calibrate_model(const model::Model& m, const CalibBatch& batch,
                                                    const quant::QuantSpec& spec,
                                                    std::span<const double> exponent_grid)
{
    const ModalityWeights mw = modality_weights(m, batch);
    const auto acts = collect_activations(m, batch);
    std::map<std::string, LayerSearch> out;
    for (const auto& t : m.tensors()) {
        if (t.kind != model::TensorKind::Linear) continue;
        LayerSearch ls;
        ls.plan = search_equalization(*t.value, acts.at(t.name), mw, spec, exponent_grid, &ls.losses);
        out.emplace(t.name, std::move(ls));
    }
    return out;
}

model::EqualizationPlans plans_of(const std::map<std::string, LayerSearch>& searches)
{
    model::EqualizationPlans plans;
    for (const auto& [name, ls] : searches) plans.emplace(name, ls.plan);
    return plans;
}

} // namespace qrel::mbq
