#include <gtest/gtest.h>

#include <cmath>

#include "qrel/error.hpp"
#include "qrel/confidence/maxprob.hpp"
#include "qrel/confidence/selector.hpp"
#include "qrel/rng.hpp"

using namespace qrel;
using namespace qrel::confidence;

namespace {

double reference_predict(const SelectorModel& m, const Eigen::VectorXd& x)
{
    double out = m.b2;
    for (Eigen::Index h = 0; h < m.w1.rows(); ++h) {
        double a = m.b1(h);
        for (Eigen::Index i = 0; i < m.w1.cols(); ++i) a += m.w1(h, i) * (x(i) - m.mean(i)) / m.stddev(i);
        out += m.w2(h) * std::tanh(a);
    }
    return 1.0 / (1.0 + std::exp(-out));
}

SelectorModel random_selector(Rng& rng, int in, int hidden)
{
    SelectorTrainConfig cfg;
    cfg.hidden = hidden;
    cfg.seed = rng.next();
    auto m = selector_init(in, cfg);
    for (Eigen::Index i = 0; i < in; ++i) {
        m.mean(i) = rng.normal();
        m.stddev(i) = 0.5 + rng.uniform();
    }
    for (Eigen::Index i = 0; i < hidden; ++i) m.b1(i) = 0.3 * rng.normal();
    m.b2 = 0.2 * rng.normal();
    return m;
}

Eigen::VectorXd random_vector(Rng& rng, Eigen::Index n)
{
    Eigen::VectorXd v(n);
    for (Eigen::Index i = 0; i < n; ++i) v(i) = rng.normal();
    return v;
}

} // namespace

TEST(MaxProb, JointProbability)
{
    const std::vector<double> p{0.5, 0.8, 0.25};
    EXPECT_NEAR(maxprob(p), 0.1, 1e-15);
    EXPECT_EQ(maxprob(std::vector<double>{1.0}), 1.0);
    // Long products stay accurate where naive multiplication would underflow to 0.
    const std::vector<double> tiny(400, 0.1);
    EXPECT_EQ(maxprob(tiny), 0.0);
    const std::vector<double> small(300, 0.1);
    EXPECT_NEAR(std::log10(maxprob(small)), -300.0, 1e-9);
    EXPECT_THROW(maxprob(std::vector<double>{}), ValidationError);
    EXPECT_THROW(maxprob(std::vector<double>{0.5, 0.0}), ValidationError);
    EXPECT_THROW(maxprob(std::vector<double>{1.5}), ValidationError);
}

TEST(Selector, PredictMatchesReference)
{
    Rng rng(51);
    for (int t = 0; t < 20; ++t) {
        const auto m = random_selector(rng, 7, 5);
        const auto x = random_vector(rng, 7);
        const double y = selector_predict(m, x);
        EXPECT_NEAR(y, reference_predict(m, x), 1e-14);
        EXPECT_GT(y, 0.0);
        EXPECT_LT(y, 1.0);
    }
}

TEST(Selector, PredictFromFeatureVector)
{
    Rng rng(52);
    FeatureVector f{random_vector(rng, 3), random_vector(rng, 3), random_vector(rng, 3), 0.4};
    const auto m = random_selector(rng, 10, 4);
    EXPECT_EQ(selector_predict(m, f), selector_predict(m, f.flatten()));
    EXPECT_EQ(f.flatten()(9), 0.4);
    EXPECT_THROW(selector_predict(m, random_vector(rng, 9)), ValidationError);
}

TEST(Selector, BackpropMatchesFiniteDifferences)
{
    Rng rng(53);
    for (int t = 0; t < 5; ++t) {
        auto m = random_selector(rng, 6, 4);
        std::vector<SelectorExample> batch;
        for (int i = 0; i < 9; ++i) batch.push_back({random_vector(rng, 6), rng.uniform()});
        const auto g = selector_backprop(m, batch);
        EXPECT_NEAR(g.loss, selector_mse(m, batch), 1e-14);
        const double h = 1e-6;
        auto fd = [&](double& param) {
            const double keep = param;
            param = keep + h;
            const double lp = selector_mse(m, batch);
            param = keep - h;
            const double lm = selector_mse(m, batch);
            param = keep;
            return (lp - lm) / (2 * h);
        };
        for (Eigen::Index i = 0; i < m.w1.size(); ++i) EXPECT_NEAR(g.w1(i), fd(m.w1(i)), 1e-8);
        for (Eigen::Index i = 0; i < m.b1.size(); ++i) EXPECT_NEAR(g.b1(i), fd(m.b1(i)), 1e-8);
        for (Eigen::Index i = 0; i < m.w2.size(); ++i) EXPECT_NEAR(g.w2(i), fd(m.w2(i)), 1e-8);
        EXPECT_NEAR(g.b2, fd(m.b2), 1e-8);
    }
}

TEST(Selector, InputGradientMatchesFiniteDifferences)
{
    Rng rng(54);
    const auto m = random_selector(rng, 5, 3);
    const auto x = random_vector(rng, 5);
    const auto g = selector_input_gradient(m, x);
    for (Eigen::Index i = 0; i < 5; ++i) {
        auto p = x, q = x;
        p(i) += 1e-6;
        q(i) -= 1e-6;
        EXPECT_NEAR(g(i), (selector_predict(m, p) - selector_predict(m, q)) / 2e-6, 1e-8);
    }
}

TEST(Selector, LearnsAnInformativeFeature)
{
    Rng rng(55);
    std::vector<SelectorExample> ex;
    for (int i = 0; i < 600; ++i) {
        Eigen::VectorXd x(3);
        x << rng.normal(), rng.normal() * 5 + 10, rng.normal();
        ex.push_back({x, x(0) > 0 ? 1.0 : 0.0});
    }
    SelectorTrainConfig cfg;
    cfg.epochs = 60;
    SelectorTrainLog log;
    const auto m = selector_train(ex, cfg, &log);
    EXPECT_LT(log.best_heldout_mse, 0.5 * log.initial_heldout_mse);
    EXPECT_EQ(log.heldout_mse.size(), 60u);
    EXPECT_GE(log.best_epoch, 1);
    EXPECT_NEAR(m.mean(1), 10.0, 1.0);
    EXPECT_NEAR(m.stddev(1), 5.0, 1.0);
    Eigen::VectorXd pos(3), neg(3);
    pos << 1.5, 10, 0;
    neg << -1.5, 10, 0;
    EXPECT_GT(selector_predict(m, pos), 0.8);
    EXPECT_LT(selector_predict(m, neg), 0.2);
}

TEST(Selector, TrainingIsSeededAndReproducible)
{
    Rng rng(56);
    std::vector<SelectorExample> ex;
    for (int i = 0; i < 100; ++i) ex.push_back({random_vector(rng, 4), rng.uniform()});
    SelectorTrainConfig cfg;
    cfg.epochs = 5;
    EXPECT_EQ(selector_train(ex, cfg), selector_train(ex, cfg));
    auto other = cfg;
    other.seed = 1;
    EXPECT_FALSE(selector_train(ex, cfg) == selector_train(ex, other));
}

TEST(Selector, ZeroEpochsReturnsTheInitialModel)
{
    Rng rng(57);
    std::vector<SelectorExample> ex;
    for (int i = 0; i < 20; ++i) ex.push_back({random_vector(rng, 2), 0.5});
    SelectorTrainConfig cfg;
    cfg.epochs = 0;
    SelectorTrainLog log;
    selector_train(ex, cfg, &log);
    EXPECT_EQ(log.best_epoch, 0);
    EXPECT_EQ(log.best_heldout_mse, log.initial_heldout_mse);
}

TEST(Selector, ConstantFeaturesWithVaryingTargetsWarn)
{
    std::vector<SelectorExample> ex;
    for (int i = 0; i < 20; ++i) ex.push_back({Eigen::VectorXd::Constant(3, 2.0), i % 2 ? 1.0 : 0.0});
    SelectorTrainConfig cfg;
    cfg.epochs = 3;
    SelectorTrainLog log;
    const auto m = selector_train(ex, cfg, &log);
    ASSERT_EQ(log.warnings.size(), 1u);
    EXPECT_EQ(m.stddev, Eigen::VectorXd::Ones(3));
}

TEST(Selector, InputValidation)
{
    SelectorTrainConfig cfg;
    std::vector<SelectorExample> one{{Eigen::VectorXd::Ones(2), 1.0}};
    EXPECT_THROW(selector_train(one, cfg), ValidationError);
    std::vector<SelectorExample> ragged{{Eigen::VectorXd::Ones(2), 1.0}, {Eigen::VectorXd::Ones(3), 0.0}};
    EXPECT_THROW(selector_train(ragged, cfg), ValidationError);
    std::vector<SelectorExample> bad_target{{Eigen::VectorXd::Ones(2), 1.0}, {Eigen::VectorXd::Ones(2), 1.5}};
    EXPECT_THROW(selector_train(bad_target, cfg), ValidationError);
    std::vector<SelectorExample> nan_x{{Eigen::VectorXd::Ones(2), 1.0}, {Eigen::VectorXd::Constant(2, NAN), 0.0}};
    EXPECT_THROW(selector_train(nan_x, cfg), ValidationError);
    cfg.hidden = 0;
    std::vector<SelectorExample> ok{{Eigen::VectorXd::Ones(2), 1.0}, {Eigen::VectorXd::Zero(2), 0.0}};
    EXPECT_THROW(selector_train(ok, cfg), ValidationError);
}

TEST(Selector, ModelValidation)
{
    Rng rng(58);
    auto m = random_selector(rng, 3, 2);
    EXPECT_NO_THROW(m.validate());
    m.stddev(0) = 0.0;
    EXPECT_THROW(m.validate(), ValidationError);
    m = random_selector(rng, 3, 2);
    m.b1.resize(3);
    EXPECT_THROW(m.validate(), ValidationError);
}
