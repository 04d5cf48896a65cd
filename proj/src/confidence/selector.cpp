#include "qrel/confidence/selector.hpp"

#include <cmath>
#include <numeric>

#include "qrel/error.hpp"
#include "qrel/rng.hpp"

namespace qrel::confidence {

namespace {

constexpr double kBeta1 = 0.9;
constexpr double kBeta2 = 0.999;
constexpr double kAdamEps = 1e-8;
constexpr double kMinStd = 1e-12;

double sigmoid(double x)
{
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

struct Activations {
    Eigen::VectorXd z, h;
    double y;
};

Activations run(const SelectorModel& m, const Eigen::VectorXd& x)
{
    Activations a;
    a.z = (x - m.mean).cwiseQuotient(m.stddev);
    a.h = (m.w1 * a.z + m.b1).array().tanh();
    a.y = sigmoid(m.w2.dot(a.h) + m.b2);
    return a;
}

void check_input(const SelectorModel& m, const Eigen::VectorXd& x)
{
    require(x.size() == m.in_dim(), "selector input has " + std::to_string(x.size()) + " features, model expects " +
                                        std::to_string(m.in_dim()));
    for (Eigen::Index i = 0; i < x.size(); ++i)
        require(std::isfinite(x(i)), "non-finite selector feature at index " + std::to_string(i));
}

// Adam moment pair for one parameter block.
template <typename T>
struct Moments {
    T first, second;
};

template <typename T>
void adam_step(T& param, const T& grad, Moments<T>& mo, double lr, double c1, double c2)
{
    mo.first = kBeta1 * mo.first + (1.0 - kBeta1) * grad;
    mo.second = kBeta2 * mo.second + (1.0 - kBeta2) * grad.cwiseAbs2();
    param.array() -= lr * (mo.first.array() / c1) / ((mo.second.array() / c2).sqrt() + kAdamEps);
}

} // namespace

void SelectorModel::validate() const
{
    require(hidden() >= 1, "selector hidden size must be >= 1");
    require(mean.size() == in_dim() && stddev.size() == in_dim(), "selector normalization has the wrong size");
    require(b1.size() == hidden() && w2.size() == hidden(), "selector layer sizes are inconsistent");
    require(mean.allFinite() && stddev.allFinite() && (stddev.array() > 0.0).all(),
            "selector normalization statistics must be finite with positive spread");
    require(w1.allFinite() && b1.allFinite() && w2.allFinite() && std::isfinite(b2), "non-finite selector weights");
}

SelectorModel selector_init(int in_dim, const SelectorTrainConfig& cfg)
{
    require(in_dim >= 1 && cfg.hidden >= 1, "selector dimensions must be positive");
    SelectorModel m;
    m.mean = Eigen::VectorXd::Zero(in_dim);
    m.stddev = Eigen::VectorXd::Ones(in_dim);
    m.w1.resize(cfg.hidden, in_dim);
    m.b1 = Eigen::VectorXd::Zero(cfg.hidden);
    m.w2.resize(cfg.hidden);
    m.b2 = 0.0;
    Rng rng(cfg.seed ^ 0x5E1EC7ULL);
    const double s1 = 1.0 / std::sqrt(static_cast<double>(in_dim));
    const double s2 = 1.0 / std::sqrt(static_cast<double>(cfg.hidden));
    for (Eigen::Index i = 0; i < m.w1.rows(); ++i)
        for (Eigen::Index j = 0; j < m.w1.cols(); ++j) m.w1(i, j) = s1 * rng.normal();
    for (Eigen::Index i = 0; i < m.w2.size(); ++i) m.w2(i) = s2 * rng.normal();
    return m;
}

double selector_predict(const SelectorModel& m, const Eigen::VectorXd& x)
{
    check_input(m, x);
    return run(m, x).y;
}

double selector_predict(const SelectorModel& m, const FeatureVector& f)
{
    return selector_predict(m, f.flatten());
}

Eigen::VectorXd selector_input_gradient(const SelectorModel& m, const Eigen::VectorXd& x)
{
    check_input(m, x);
    const Activations a = run(m, x);
    const Eigen::VectorXd dh = m.w2.cwiseProduct((1.0 - a.h.array().square()).matrix());
    return (a.y * (1.0 - a.y)) * (m.w1.transpose() * dh).cwiseQuotient(m.stddev);
}

SelectorGradients selector_backprop(const SelectorModel& m, std::span<const SelectorExample> batch)
{
    require(!batch.empty(), "empty selector batch");
    SelectorGradients g;
    g.w1 = Eigen::MatrixXd::Zero(m.w1.rows(), m.w1.cols());
    g.b1 = Eigen::VectorXd::Zero(m.b1.size());
    g.w2 = Eigen::VectorXd::Zero(m.w2.size());
    const double inv = 1.0 / static_cast<double>(batch.size());
    for (const auto& ex : batch) {
        const Activations a = run(m, ex.x);
        const double err = a.y - ex.target;
        g.loss += err * err * inv;
        const double d_out = 2.0 * err * inv * a.y * (1.0 - a.y);
        g.w2 += d_out * a.h;
        g.b2 += d_out;
        const Eigen::VectorXd da = (d_out * m.w2).cwiseProduct((1.0 - a.h.array().square()).matrix());
        g.w1 += da * a.z.transpose();
        g.b1 += da;
    }
    return g;
}

double selector_mse(const SelectorModel& m, std::span<const SelectorExample> examples)
{
    require(!examples.empty(), "empty example set");
    double acc = 0.0;
    for (const auto& ex : examples) {
        const double e = run(m, ex.x).y - ex.target;
        acc += e * e;
    }
    return acc / static_cast<double>(examples.size());
}

SelectorModel selector_train(std::span<const SelectorExample> examples, const SelectorTrainConfig& cfg,
                             SelectorTrainLog* log)
{
    require(examples.size() >= 2, "selector training needs at least 2 records");
    require(cfg.epochs >= 0 && cfg.batch_size >= 1 && cfg.learning_rate > 0.0 && cfg.hidden >= 1 &&
                cfg.weight_decay >= 0.0,
            "invalid selector training config");
    const auto in_dim = examples.front().x.size();
    for (std::size_t i = 0; i < examples.size(); ++i) {
        const auto& ex = examples[i];
        require(ex.x.size() == in_dim, "record " + std::to_string(i) + " has a different feature width");
        require(ex.x.allFinite(), "record " + std::to_string(i) + " has non-finite features");
        require(std::isfinite(ex.target) && ex.target >= 0.0 && ex.target <= 1.0,
                "record " + std::to_string(i) + " has a target outside [0, 1]");
    }

    // Seeded held-out split.
    std::vector<std::size_t> order(examples.size());
    std::iota(order.begin(), order.end(), 0);
    Rng rng(cfg.seed);
    rng.shuffle(order);
    const std::size_t n_hold =
        std::min(examples.size() - 1, std::max<std::size_t>(1, (examples.size() + 5) / 10));
    std::vector<SelectorExample> held, train;
    for (std::size_t i = 0; i < order.size(); ++i) (i < n_hold ? held : train).push_back(examples[order[i]]);

    SelectorTrainLog local;
    SelectorModel m = selector_init(static_cast<int>(in_dim), cfg);
    Eigen::VectorXd sum = Eigen::VectorXd::Zero(in_dim), sq = Eigen::VectorXd::Zero(in_dim);
    for (const auto& ex : train) sum += ex.x;
    m.mean = sum / static_cast<double>(train.size());
    for (const auto& ex : train) sq += (ex.x - m.mean).cwiseAbs2();
    m.stddev = (sq / static_cast<double>(train.size())).cwiseSqrt();
    bool constant_features = true;
    for (Eigen::Index j = 0; j < in_dim; ++j) {
        if (m.stddev(j) < kMinStd) m.stddev(j) = 1.0;
        else constant_features = false;
    }
    if (constant_features) {
        bool targets_differ = false;
        for (const auto& ex : examples) targets_differ |= ex.target != examples.front().target;
        if (targets_differ)
            local.warnings.push_back("all feature vectors are identical but targets differ: irreducible error");
    }

    local.initial_heldout_mse = selector_mse(m, held);
    local.best_heldout_mse = local.initial_heldout_mse;
    SelectorModel best = m;

    Moments<Eigen::MatrixXd> mw1{Eigen::MatrixXd::Zero(m.w1.rows(), m.w1.cols()),
                                 Eigen::MatrixXd::Zero(m.w1.rows(), m.w1.cols())};
    Moments<Eigen::VectorXd> mb1{Eigen::VectorXd::Zero(m.b1.size()), Eigen::VectorXd::Zero(m.b1.size())};
    Moments<Eigen::VectorXd> mw2{Eigen::VectorXd::Zero(m.w2.size()), Eigen::VectorXd::Zero(m.w2.size())};
    Moments<Eigen::VectorXd> mb2{Eigen::VectorXd::Zero(1), Eigen::VectorXd::Zero(1)};

    std::vector<std::size_t> idx(train.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::vector<SelectorExample> batch;
    long step = 0;
    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        rng.shuffle(idx);
        for (std::size_t start = 0; start < idx.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
            const std::size_t end = std::min(idx.size(), start + static_cast<std::size_t>(cfg.batch_size));
            batch.clear();
            for (std::size_t k = start; k < end; ++k) batch.push_back(train[idx[k]]);
            SelectorGradients g = selector_backprop(m, batch);
            g.w1 += cfg.weight_decay * m.w1;
            g.w2 += cfg.weight_decay * m.w2;
            ++step;
            const double c1 = 1.0 - std::pow(kBeta1, static_cast<double>(step));
            const double c2 = 1.0 - std::pow(kBeta2, static_cast<double>(step));
            adam_step(m.w1, g.w1, mw1, cfg.learning_rate, c1, c2);
            adam_step(m.b1, g.b1, mb1, cfg.learning_rate, c1, c2);
            adam_step(m.w2, g.w2, mw2, cfg.learning_rate, c1, c2);
            Eigen::VectorXd b2(1), gb2(1);
            b2 << m.b2;
            gb2 << g.b2;
            adam_step(b2, gb2, mb2, cfg.learning_rate, c1, c2);
            m.b2 = b2(0);
        }
        const double mse = selector_mse(m, held);
        local.heldout_mse.push_back(mse);
        if (mse < local.best_heldout_mse) {
            local.best_heldout_mse = mse;
            local.best_epoch = epoch;
            best = m;
        }
    }
    if (log) *log = std::move(local);
    return best;
}

} // namespace qrel::confidence
