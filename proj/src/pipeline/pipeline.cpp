#include "qrel/pipeline/pipeline.hpp"

#include "qrel/confidence/maxprob.hpp"
#include "qrel/error.hpp"
#include "qrel/metrics/metrics.hpp"
#include "qrel/model/quantize_model.hpp"

namespace qrel::pipeline {

model::ModelConfig task_model_config(const model::TaskConfig& task, model::ModelConfig base)
{
    base.vocab_size = task.vocab_size;
    base.max_seq = std::max(base.max_seq, model::task_max_seq());
    base.validate();
    return base;
}

model::Model train_task_model(const model::TaskData& data, const model::ModelConfig& cfg,
                              const model::TrainConfig& train, model::TrainLog* log)
{
    std::vector<model::TrainingSequence> seqs;
    for (const auto& s : data.samples)
        if (s.split == model::SampleSplit::Model) seqs.push_back(model::training_sequence(s));
    require(!seqs.empty(), "task has no samples in the model split");
    return model::train_model(model::init_model(cfg), seqs, train, log);
}

quant::Checkpoint quantize_for_label(const model::Model& m, const quant::QuantLabel& label,
                                     const std::optional<mbq::CalibBatch>& calib,
                                     std::map<std::string, mbq::LayerSearch>* searches, quant::HqqLog* log)
{
    if (label.full_precision()) return model::to_checkpoint(m);
    const auto& spec = *label.spec;
    model::EqualizationPlans plans;
    if (spec.method == quant::Method::MBQ) {
        require(calib.has_value(), "MBQ quantization needs a calibration batch (pass --calib)");
        auto found = mbq::calibrate_model(m, *calib, spec);
        plans = mbq::plans_of(found);
        if (searches) *searches = std::move(found);
    }
    return model::quantize_to_checkpoint(m, spec, plans, log);
}

metrics::Split record_split(model::SampleSplit s)
{
    switch (s) {
    case model::SampleSplit::Train: return metrics::Split::Train;
    case model::SampleSplit::Dev: return metrics::Split::Dev;
    case model::SampleSplit::Test: return metrics::Split::Test;
    case model::SampleSplit::Model: break;
    }
    throw ValidationError("samples of the model split are not evaluated");
}

metrics::Source record_source(model::SampleSource s)
{
    switch (s) {
    case model::SampleSource::ID: return metrics::Source::ID;
    case model::SampleSource::OOD_A: return metrics::Source::OOD_A;
    case model::SampleSource::OOD_B: return metrics::Source::OOD_B;
    }
    return metrics::Source::ID;
}

std::vector<metrics::PredictionRecord> evaluate(const model::Model& m, std::span<const model::TaskSample> samples,
                                                int max_new)
{
    std::vector<metrics::PredictionRecord> out;
    out.reserve(samples.size());
    for (const auto& s : samples) {
        const auto gen = model::greedy_decode(m, s.input, max_new);
        metrics::PredictionRecord r;
        r.id = s.id;
        r.split = record_split(s.split);
        r.source = record_source(s.source);
        r.answer = model::answer_text(gen.answer_tokens);
        r.refs = s.refs;
        r.soft_acc = metrics::soft_accuracy(*r.answer, r.refs);
        r.confidence = confidence::maxprob(gen);
        r.step_probs = gen.step_probs;
        r.features = gen.features;
        out.push_back(std::move(r));
    }
    return out;
}

std::vector<confidence::SelectorExample> selector_examples(std::span<const metrics::PredictionRecord> records)
{
    std::vector<confidence::SelectorExample> out;
    out.reserve(records.size());
    for (const auto& r : records) {
        require(r.features.has_value(), "record '" + r.id + "' carries no features");
        out.push_back({r.features->flatten(), r.soft_acc});
    }
    return out;
}

std::vector<metrics::PredictionRecord> rescore(std::span<const metrics::PredictionRecord> records,
                                               const confidence::SelectorModel& selector)
{
    std::vector<metrics::PredictionRecord> out(records.begin(), records.end());
    for (auto& r : out) {
        require(r.features.has_value(), "record '" + r.id + "' carries no features");
        r.confidence = confidence::selector_predict(selector, *r.features);
    }
    return out;
}

std::vector<metrics::PredictionRecord> select(std::span<const metrics::PredictionRecord> records,
                                              metrics::Split split, std::optional<metrics::Source> source)
{
    std::vector<metrics::PredictionRecord> out;
    for (const auto& r : records)
        if (r.split == split && (!source || r.source == *source)) out.push_back(r);
    return out;
}

} // namespace qrel::pipeline
