#include <gtest/gtest.h>

#include <cmath>

#include "qrel/error.hpp"
#include "qrel/confidence/maxprob.hpp"
#include "qrel/io/formats.hpp"
#include "qrel/metrics/metrics.hpp"
#include "qrel/pipeline/pipeline.hpp"

using namespace qrel;

namespace {

struct Fixture {
    model::TaskConfig task;
    model::TaskData data;
    model::Model m;
};

const Fixture& fixture()
{
    static const Fixture f = [] {
        Fixture x;
        x.task.n_samples = 200;
        x.task.n_ood = 20;
        x.task.calib_size = 8;
        x.task.noise_rate = 0.3;
        x.data = model::generate_task(x.task);
        model::ModelConfig base;
        base.d_model = 16;
        base.n_heads = 2;
        model::TrainConfig tc;
        tc.epochs = 3;
        x.m = pipeline::train_task_model(x.data, pipeline::task_model_config(x.task, base), tc);
        return x;
    }();
    return f;
}

} // namespace

TEST(Pipeline, ModelConfigFitsTheTask)
{
    model::TaskConfig t;
    t.vocab_size = 40;
    model::ModelConfig base;
    base.max_seq = 4;
    const auto c = pipeline::task_model_config(t, base);
    EXPECT_EQ(c.vocab_size, 40);
    EXPECT_GE(c.max_seq, model::task_max_seq());
}

TEST(Pipeline, TrainingReducesLossAndIsReproducible)
{
    const auto& f = fixture();
    model::ModelConfig base;
    base.d_model = 16;
    base.n_heads = 2;
    model::TrainConfig tc;
    tc.epochs = 3;
    model::TrainLog log;
    const auto again = pipeline::train_task_model(f.data, pipeline::task_model_config(f.task, base), tc, &log);
    EXPECT_TRUE(again == f.m);
    ASSERT_EQ(log.epoch_loss.size(), 3u);
    EXPECT_LT(log.epoch_loss.back(), log.epoch_loss.front());
}

TEST(Pipeline, EvaluateBuildsConsistentRecords)
{
    const auto& f = fixture();
    std::vector<model::TaskSample> held;
    for (const auto& s : f.data.samples)
        if (s.split != model::SampleSplit::Model) held.push_back(s);
    held.insert(held.end(), f.data.ood.begin(), f.data.ood.end());
    const auto recs = pipeline::evaluate(f.m, held);
    ASSERT_EQ(recs.size(), held.size());
    for (std::size_t i = 0; i < recs.size(); ++i) {
        const auto& r = recs[i];
        EXPECT_EQ(r.id, held[i].id);
        EXPECT_EQ(r.refs, held[i].refs);
        ASSERT_TRUE(r.answer.has_value());
        EXPECT_EQ(r.soft_acc, metrics::soft_accuracy(*r.answer, held[i].refs));
        EXPECT_NEAR(r.confidence, confidence::maxprob(r.step_probs), 1e-15);
        ASSERT_TRUE(r.features.has_value());
        EXPECT_EQ(r.features->p, r.confidence);
        EXPECT_EQ(r.split, pipeline::record_split(held[i].split));
        EXPECT_EQ(r.source, pipeline::record_source(held[i].source));
    }
    EXPECT_THROW(pipeline::record_split(model::SampleSplit::Model), ValidationError);
    EXPECT_EQ(pipeline::select(recs, metrics::Split::Test).size(), 42u);
    EXPECT_EQ(pipeline::select(recs, metrics::Split::Test, metrics::Source::OOD_A).size(), 20u);
}

TEST(Pipeline, RescorePreservesIdsAndAccuracy)
{
    const auto& f = fixture();
    std::vector<model::TaskSample> held;
    for (const auto& s : f.data.samples)
        if (s.split != model::SampleSplit::Model) held.push_back(s);
    const auto recs = pipeline::evaluate(f.m, held);
    const auto train = pipeline::select(recs, metrics::Split::Train);
    const auto ex = pipeline::selector_examples(train);
    ASSERT_EQ(ex.size(), train.size());
    EXPECT_EQ(ex[0].target, train[0].soft_acc);
    confidence::SelectorTrainConfig cfg;
    cfg.epochs = 5;
    const auto sel = confidence::selector_train(ex, cfg);
    const auto out = pipeline::rescore(recs, sel);
    ASSERT_EQ(out.size(), recs.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        EXPECT_EQ(out[i].id, recs[i].id);
        EXPECT_EQ(out[i].soft_acc, recs[i].soft_acc);
        EXPECT_GE(out[i].confidence, 0.0);
        EXPECT_LE(out[i].confidence, 1.0);
        EXPECT_EQ(out[i].confidence, confidence::selector_predict(sel, *recs[i].features));
    }
}

TEST(Pipeline, QuantizeForLabel)
{
    const auto& f = fixture();
    const auto calib = io::calib_from_samples(f.data.calib);
    const auto bf16 = pipeline::quantize_for_label(f.m, quant::QuantLabel::parse("bf16"), std::nullopt);
    for (const auto& t : bf16.tensors) EXPECT_FALSE(t.quantized());
    EXPECT_THROW(pipeline::quantize_for_label(f.m, quant::QuantLabel::parse("int4_MBQ"), std::nullopt),
                 ValidationError);
    std::map<std::string, mbq::LayerSearch> searches;
    const auto mbq = pipeline::quantize_for_label(f.m, quant::QuantLabel::parse("int4_MBQ"), calib, &searches);
    EXPECT_FALSE(searches.empty());
    for (const auto& [name, ls] : searches) {
        const auto& t = mbq.at(name);
        EXPECT_TRUE(t.quantized());
        EXPECT_EQ(t.equalization.size(), static_cast<std::size_t>(ls.plan.scales.size()));
    }
    quant::HqqLog log;
    const auto hqq = pipeline::quantize_for_label(f.m, quant::QuantLabel::parse("int3_HQQ"), std::nullopt, nullptr, &log);
    EXPECT_GT(log.groups, 0u);
    EXPECT_TRUE(hqq.at("layers.0.wq").quantized());
    EXPECT_TRUE(hqq.at("layers.0.wq").equalization.empty());
}
