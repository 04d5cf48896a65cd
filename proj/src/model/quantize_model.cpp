#include "qrel/model/quantize_model.hpp"

#include "qrel/error.hpp"

namespace qrel::model {

namespace {

constexpr const char* kConfigTensor = "__config__";

quant::Fp32Tensor to_fp32(const Matrix& m)
{
    quant::Fp32Tensor t{static_cast<std::uint32_t>(m.rows()), static_cast<std::uint32_t>(m.cols()), {}};
    t.values.reserve(static_cast<std::size_t>(m.size()));
    for (Eigen::Index i = 0; i < m.rows(); ++i)
        for (Eigen::Index j = 0; j < m.cols(); ++j) t.values.push_back(static_cast<float>(m(i, j)));
    return t;
}

Matrix from_fp32(const quant::Fp32Tensor& t)
{
    Matrix m(t.rows, t.cols);
    std::size_t k = 0;
    for (Eigen::Index i = 0; i < m.rows(); ++i)
        for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = static_cast<double>(t.values[k++]);
    return m;
}

quant::CheckpointTensor config_tensor(const ModelConfig& cfg)
{
    Matrix c(1, 5);
    c << cfg.d_model, cfg.n_layers, cfg.n_heads, cfg.vocab_size, cfg.max_seq;
    return {kConfigTensor, to_fp32(c), {}};
}

ModelConfig config_from(const quant::Checkpoint& ckpt)
{
    const auto& t = ckpt.at(kConfigTensor);
    require(!t.quantized(), "model config tensor must be FP32");
    const auto& v = std::get<quant::Fp32Tensor>(t.data).values;
    require(v.size() == 5, "model config tensor must hold 5 values");
    ModelConfig cfg;
    cfg.d_model = static_cast<int>(v[0]);
    cfg.n_layers = static_cast<int>(v[1]);
    cfg.n_heads = static_cast<int>(v[2]);
    cfg.vocab_size = static_cast<int>(v[3]);
    cfg.max_seq = static_cast<int>(v[4]);
    cfg.validate();
    return cfg;
}

std::vector<float> as_float_scales(const mbq::EqualizationPlan& plan)
{
    std::vector<float> s(static_cast<std::size_t>(plan.scales.size()));
    for (Eigen::Index j = 0; j < plan.scales.size(); ++j) s[static_cast<std::size_t>(j)] = static_cast<float>(plan.scales(j));
    return s;
}

mbq::EqualizationPlan plan_from(const std::vector<float>& scales)
{
    mbq::EqualizationPlan p;
    p.scales.resize(static_cast<Eigen::Index>(scales.size()));
    for (std::size_t j = 0; j < scales.size(); ++j) p.scales(static_cast<Eigen::Index>(j)) = scales[j];
    return p;
}

quant::CheckpointTensor quantize_tensor(const std::string& name, const Matrix& w, const quant::QuantSpec& spec,
                                        const EqualizationPlans& plans, quant::HqqLog* log)
{
    quant::CheckpointTensor t;
    t.name = name;
    const auto it = plans.find(name);
    if (it == plans.end()) {
        t.data = quant::quantize(w, spec, log);
        return t;
    }
    t.equalization = as_float_scales(it->second);
    const auto plan = plan_from(t.equalization);
    mbq::validate(plan, w.cols());
    t.data = quant::quantize(mbq::apply_equalization(w, plan), spec, log);
    return t;
}

Matrix reconstruct(const quant::CheckpointTensor& t)
{
    if (!t.quantized()) return from_fp32(std::get<quant::Fp32Tensor>(t.data));
    Matrix w = quant::dequantize(std::get<quant::QuantizedTensor>(t.data));
    if (!t.equalization.empty()) w = mbq::unfold_weights(w, plan_from(t.equalization));
    return w;
}

} // namespace

quant::Checkpoint to_checkpoint(const Model& m)
{
    quant::Checkpoint ckpt;
    ckpt.tensors.push_back(config_tensor(m.cfg));
    for (const auto& t : m.tensors()) ckpt.tensors.push_back({t.name, to_fp32(*t.value), {}});
    return ckpt;
}

quant::Checkpoint quantize_to_checkpoint(const Model& m, const std::optional<quant::QuantSpec>& spec,
                                         const EqualizationPlans& plans, quant::HqqLog* log)
{
    if (!spec) return to_checkpoint(m);
    spec->validate();
    quant::Checkpoint ckpt;
    ckpt.tensors.push_back(config_tensor(m.cfg));
    for (const auto& t : m.tensors()) {
        if (t.kind == TensorKind::Linear)
            ckpt.tensors.push_back(quantize_tensor(t.name, *t.value, *spec, plans, log));
        else
            ckpt.tensors.push_back({t.name, to_fp32(*t.value), {}});
    }
    for (const auto& [name, plan] : plans) {
        const auto* t = ckpt.find(name);
        require(t != nullptr && t->quantized(), "equalization plan for unknown linear layer '" + name + "'");
    }
    return ckpt;
}

Model quantize_model(const Model& m, const std::optional<quant::QuantSpec>& spec, const EqualizationPlans& plans,
                     quant::HqqLog* log)
{
    Model out = m;
    if (!spec) return out;
    const auto ckpt = quantize_to_checkpoint(m, spec, plans, log);
    for (auto& t : out.tensors())
        if (t.kind == TensorKind::Linear) *t.value = reconstruct(ckpt.at(t.name));
    return out;
}

Model from_checkpoint(const quant::Checkpoint& ckpt)
{
    Model m = init_model(config_from(ckpt));
    for (auto& t : m.tensors()) {
        const Matrix w = reconstruct(ckpt.at(t.name));
        require(w.rows() == t.value->rows() && w.cols() == t.value->cols(),
                "tensor '" + t.name + "' has the wrong shape for the stored config");
        *t.value = w;
    }
    return m;
}

StorageReport storage_report(const quant::Checkpoint& ckpt)
{
    StorageReport r;
    for (const auto& t : ckpt.tensors) {
        if (t.name == kConfigTensor) continue;
        if (t.quantized()) {
            const auto& q = std::get<quant::QuantizedTensor>(t.data);
            r.weights += q.size();
            r.quantized_weights += q.size();
            r.quantized_bytes += q.storage_bytes();
        } else
            r.weights += std::get<quant::Fp32Tensor>(t.data).values.size();
    }
    r.fp16_bytes = 2 * r.weights;
    r.fp32_bytes = 4 * r.weights;
    r.checkpoint_bytes = quant::serialize(ckpt).size();
    return r;
}

} // namespace qrel::model
