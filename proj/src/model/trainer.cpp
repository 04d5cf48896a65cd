#include "qrel/model/trainer.hpp"

#include <cmath>
#include <numeric>

#include "qrel/error.hpp"
#include "qrel/rng.hpp"

namespace qrel::model {

namespace {

constexpr double kBeta1 = 0.9;
constexpr double kBeta2 = 0.999;
constexpr double kAdamEps = 1e-8;

} // namespace

Model train_model(Model m, const std::vector<TrainingSequence>& data, const TrainConfig& cfg, TrainLog* log)
{
    require(!data.empty(), "no training sequences");
    require(cfg.epochs >= 0 && cfg.batch_size >= 1 && cfg.learning_rate > 0.0, "invalid training config");

    Model first = m.zeros_like();
    Model second = m.zeros_like();
    Model grad = m.zeros_like();
    auto params = m.tensors();
    auto m1 = first.tensors();
    auto m2 = second.tensors();
    auto acc = grad.tensors();

    std::vector<std::size_t> order(data.size());
    std::iota(order.begin(), order.end(), 0);
    Rng rng(cfg.seed);
    long step = 0;

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        rng.shuffle(order);
        double epoch_loss = 0.0;
        for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
            const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
            for (auto& t : acc) t.value->setZero();
            std::vector<SequenceRef> batch;
            for (std::size_t b = start; b < end; ++b) batch.push_back({data[order[b]].tokens, data[order[b]].targets});
            epoch_loss += accumulate_gradients(m, batch, grad);
            ++step;
            const double inv = 1.0 / static_cast<double>(end - start);
            const double c1 = 1.0 - std::pow(kBeta1, static_cast<double>(step));
            const double c2 = 1.0 - std::pow(kBeta2, static_cast<double>(step));
            for (std::size_t k = 0; k < params.size(); ++k) {
                const Matrix gk = *acc[k].value * inv;
                *m1[k].value = kBeta1 * *m1[k].value + (1.0 - kBeta1) * gk;
                *m2[k].value = kBeta2 * *m2[k].value + (1.0 - kBeta2) * gk.cwiseAbs2();
                const auto mhat = m1[k].value->array() / c1;
                const auto vhat = m2[k].value->array() / c2;
                params[k].value->array() -= cfg.learning_rate * mhat / (vhat.sqrt() + kAdamEps);
            }
        }
        if (log) log->epoch_loss.push_back(epoch_loss / static_cast<double>(data.size()));
    }
    round_to_fp32(m);
    return m;
}

} // namespace qrel::model
