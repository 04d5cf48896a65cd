#include "qrel/model/decoder.hpp"

#include <cmath>
#include <numbers>

#include "qrel/error.hpp"
#include "qrel/rng.hpp"

namespace qrel::model {

namespace {

constexpr double kNormEps = 1e-5;
const double kGeluC = std::sqrt(2.0 / std::numbers::pi);

double gelu(double u)
{
    return 0.5 * u * (1.0 + std::tanh(kGeluC * (u + 0.044715 * u * u * u)));
}

double gelu_grad(double u)
{
    const double th = std::tanh(kGeluC * (u + 0.044715 * u * u * u));
    return 0.5 * (1.0 + th) + 0.5 * u * (1.0 - th * th) * kGeluC * (1.0 + 3.0 * 0.044715 * u * u);
}

Matrix rms_norm(const Matrix& x, const Matrix& gain, Vector& r)
{
    const auto d = static_cast<double>(x.cols());
    r.resize(x.rows());
    Matrix out(x.rows(), x.cols());
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        r(i) = std::sqrt(x.row(i).squaredNorm() / d + kNormEps);
        out.row(i) = x.row(i).cwiseProduct(gain.col(0).transpose()) / r(i);
    }
    return out;
}

// dn: gradient w.r.t. the norm output. Accumulates the gain gradient and
// returns the gradient w.r.t. the norm input.
Matrix rms_norm_backward(const Matrix& dn, const Matrix& x, const Vector& r, const Matrix& gain, Matrix& dgain)
{
    const auto d = static_cast<double>(x.cols());
    Matrix dx(x.rows(), x.cols());
    const auto g = gain.col(0).transpose();
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        const double ri = r(i);
        const auto gdn = dn.row(i).cwiseProduct(g);
        const double dot = gdn.dot(x.row(i));
        dx.row(i) = gdn / ri - x.row(i) * (dot / (d * ri * ri * ri));
        dgain.col(0) += (dn.row(i).cwiseProduct(x.row(i)) / ri).transpose();
    }
    return dx;
}

Matrix causal_softmax(const Matrix& scores)
{
    const Eigen::Index T = scores.rows();
    Matrix a = Matrix::Zero(T, T);
    for (Eigen::Index i = 0; i < T; ++i) {
        const double mx = scores.row(i).head(i + 1).maxCoeff();
        double sum = 0.0;
        for (Eigen::Index j = 0; j <= i; ++j) {
            a(i, j) = std::exp(scores(i, j) - mx);
            sum += a(i, j);
        }
        a.row(i).head(i + 1) /= sum;
    }
    return a;
}

struct LayerCache {
    Matrix x_in, n1;
    Vector r1;
    Matrix q, k, v;
    std::vector<Matrix> attn;  // per (segment, head): (len, len)
    Matrix o_cat, x_mid, n2;
    Vector r2;
    Matrix u, a;
};

struct Cache {
    std::vector<LayerCache> layers;
    Matrix x_final;
    Vector rf;
    Matrix hf;
    Matrix logits;
};

std::string layer_name(std::size_t l, const char* what)
{
    return "layers." + std::to_string(l) + "." + what;
}

Matrix linear(const Matrix& x, const Matrix& w, const std::string& name, const LinearTap& tap)
{
    if (tap) tap(name, x);
    return x * w.transpose();
}

// Rows of a stacked batch: sequence s occupies rows [start[s], start[s] + len[s]).
struct Segments {
    std::vector<Eigen::Index> start, len;

    static Segments single(Eigen::Index T) { return {{0}, {T}}; }
    std::size_t size() const { return start.size(); }
};

void run_forward(const Model& m, const Matrix& x0, const Segments& segs, Cache& c, const LinearTap& tap)
{
    const ModelConfig& cfg = m.cfg;
    const Eigen::Index rows = x0.rows();
    const int dh = cfg.head_dim();
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    const auto heads = static_cast<std::size_t>(cfg.n_heads);
    Matrix x = x0;
    c.layers.resize(m.layers.size());
    for (std::size_t l = 0; l < m.layers.size(); ++l) {
        const LayerWeights& w = m.layers[l];
        LayerCache& lc = c.layers[l];
        lc.x_in = x;
        lc.n1 = rms_norm(x, w.norm1, lc.r1);
        lc.q = linear(lc.n1, w.wq, layer_name(l, "wq"), tap);
        lc.k = linear(lc.n1, w.wk, layer_name(l, "wk"), tap);
        lc.v = linear(lc.n1, w.wv, layer_name(l, "wv"), tap);
        lc.attn.resize(segs.size() * heads);
        lc.o_cat.resize(rows, cfg.d_model);
        for (std::size_t s = 0; s < segs.size(); ++s) {
            const Eigen::Index r0 = segs.start[s], T = segs.len[s];
            for (int h = 0; h < cfg.n_heads; ++h) {
                const auto qh = lc.q.block(r0, h * dh, T, dh);
                const auto kh = lc.k.block(r0, h * dh, T, dh);
                const auto vh = lc.v.block(r0, h * dh, T, dh);
                Matrix& a = lc.attn[s * heads + static_cast<std::size_t>(h)];
                a = causal_softmax((qh * kh.transpose()) * scale);
                lc.o_cat.block(r0, h * dh, T, dh) = a * vh;
            }
        }
        x = x + linear(lc.o_cat, w.wo, layer_name(l, "wo"), tap);
        lc.x_mid = x;
        lc.n2 = rms_norm(x, w.norm2, lc.r2);
        lc.u = linear(lc.n2, w.w1, layer_name(l, "w1"), tap);
        lc.a = lc.u.unaryExpr([](double u) { return gelu(u); });
        x = x + linear(lc.a, w.w2, layer_name(l, "w2"), tap);
    }
    c.x_final = x;
    c.hf = rms_norm(x, m.norm_f, c.rf);
    c.logits = linear(c.hf, m.w_out, "w_out", tap);
}

// Adds the parameter gradients of a cached forward pass into `g` and returns
// the gradient w.r.t. the embedded input.
Matrix run_backward(const Model& m, const Cache& c, const Segments& segs, const Matrix& dlogits, Model& g)
{
    const ModelConfig& cfg = m.cfg;
    const int dh = cfg.head_dim();
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    const auto heads = static_cast<std::size_t>(cfg.n_heads);

    g.w_out += dlogits.transpose() * c.hf;
    Matrix dx = rms_norm_backward(dlogits * m.w_out, c.x_final, c.rf, m.norm_f, g.norm_f);

    for (std::size_t li = m.layers.size(); li-- > 0;) {
        const LayerWeights& w = m.layers[li];
        const LayerCache& lc = c.layers[li];
        LayerWeights& gw = g.layers[li];

        // Feed-forward block: x_out = x_mid + gelu(n2 W1^T) W2^T.
        gw.w2 += dx.transpose() * lc.a;
        const Matrix da = dx * w.w2;
        const Matrix du = da.cwiseProduct(lc.u.unaryExpr([](double u) { return gelu_grad(u); }));
        gw.w1 += du.transpose() * lc.n2;
        Matrix dx_mid = dx + rms_norm_backward(du * w.w1, lc.x_mid, lc.r2, w.norm2, gw.norm2);

        // Attention block: x_mid = x_in + concat_h(A_h V_h) Wo^T.
        gw.wo += dx_mid.transpose() * lc.o_cat;
        const Matrix do_cat = dx_mid * w.wo;
        Matrix dq(lc.q.rows(), lc.q.cols()), dk(lc.k.rows(), lc.k.cols()), dv(lc.v.rows(), lc.v.cols());
        for (std::size_t s = 0; s < segs.size(); ++s) {
            const Eigen::Index r0 = segs.start[s], T = segs.len[s];
            for (int h = 0; h < cfg.n_heads; ++h) {
                const Matrix& a = lc.attn[s * heads + static_cast<std::size_t>(h)];
                const auto doh = do_cat.block(r0, h * dh, T, dh);
                const Matrix da_h = doh * lc.v.block(r0, h * dh, T, dh).transpose();
                dv.block(r0, h * dh, T, dh) = a.transpose() * doh;
                const Vector rowdot = da_h.cwiseProduct(a).rowwise().sum();
                const Matrix ds = a.cwiseProduct(da_h.colwise() - rowdot) * scale;
                dq.block(r0, h * dh, T, dh) = ds * lc.k.block(r0, h * dh, T, dh);
                dk.block(r0, h * dh, T, dh) = ds.transpose() * lc.q.block(r0, h * dh, T, dh);
            }
        }
        gw.wq += dq.transpose() * lc.n1;
        gw.wk += dk.transpose() * lc.n1;
        gw.wv += dv.transpose() * lc.n1;
        const Matrix dn1 = dq * w.wq + dk * w.wk + dv * w.wv;
        dx = dx_mid + rms_norm_backward(dn1, lc.x_in, lc.r1, w.norm1, gw.norm1);
    }
    return dx;
}

void check_tokens(const Model& m, std::span<const int> tokens)
{
    require(!tokens.empty(), "empty token sequence");
    require(static_cast<int>(tokens.size()) <= m.cfg.max_seq,
            "sequence length " + std::to_string(tokens.size()) + " exceeds max_seq " + std::to_string(m.cfg.max_seq));
    for (std::size_t i = 0; i < tokens.size(); ++i)
        require(tokens[i] >= 0 && tokens[i] < m.cfg.vocab_size,
                "token id " + std::to_string(tokens[i]) + " at position " + std::to_string(i) + " is outside the vocabulary");
}

// Gradient of the summed cross-entropy w.r.t. the logits; returns the loss.
double loss_and_dlogits(const Matrix& logits, std::span<const int> targets, Matrix& dlogits)
{
    require(static_cast<Eigen::Index>(targets.size()) == logits.rows(), "targets do not match sequence length");
    dlogits = Matrix::Zero(logits.rows(), logits.cols());
    double loss = 0.0;
    for (Eigen::Index i = 0; i < logits.rows(); ++i) {
        const int t = targets[static_cast<std::size_t>(i)];
        if (t < 0) continue;
        require(t < logits.cols(), "target token outside the vocabulary");
        const Vector p = softmax(logits.row(i).transpose());
        loss -= std::log(p(t));
        dlogits.row(i) = p.transpose();
        dlogits(i, t) -= 1.0;
    }
    return loss;
}

} // namespace

void ModelConfig::validate() const
{
    require(d_model > 0 && n_layers > 0 && n_heads > 0 && vocab_size > 0 && max_seq > 0,
            "model dimensions must all be positive");
    require(d_model % n_heads == 0, "d_model " + std::to_string(d_model) + " is not divisible by n_heads " +
                                        std::to_string(n_heads));
}

std::vector<Model::NamedTensor> Model::tensors()
{
    std::vector<NamedTensor> out{{"tok_emb", &tok_emb, TensorKind::Embedding},
                                 {"pos_emb", &pos_emb, TensorKind::Embedding}};
    for (std::size_t l = 0; l < layers.size(); ++l) {
        auto& w = layers[l];
        out.push_back({layer_name(l, "norm1"), &w.norm1, TensorKind::Norm});
        out.push_back({layer_name(l, "wq"), &w.wq, TensorKind::Linear});
        out.push_back({layer_name(l, "wk"), &w.wk, TensorKind::Linear});
        out.push_back({layer_name(l, "wv"), &w.wv, TensorKind::Linear});
        out.push_back({layer_name(l, "wo"), &w.wo, TensorKind::Linear});
        out.push_back({layer_name(l, "norm2"), &w.norm2, TensorKind::Norm});
        out.push_back({layer_name(l, "w1"), &w.w1, TensorKind::Linear});
        out.push_back({layer_name(l, "w2"), &w.w2, TensorKind::Linear});
    }
    out.push_back({"norm_f", &norm_f, TensorKind::Norm});
    out.push_back({"w_out", &w_out, TensorKind::Linear});
    return out;
}

std::vector<Model::ConstNamedTensor> Model::tensors() const
{
    std::vector<ConstNamedTensor> out;
    for (const auto& t : const_cast<Model*>(this)->tensors()) out.push_back({t.name, t.value, t.kind});
    return out;
}

std::size_t Model::parameter_count() const
{
    std::size_t n = 0;
    for (const auto& t : tensors()) n += static_cast<std::size_t>(t.value->size());
    return n;
}

Model Model::zeros_like() const
{
    Model z = *this;
    for (auto& t : z.tensors()) t.value->setZero();
    return z;
}

bool Model::operator==(const Model& o) const
{
    auto arch = o.cfg;
    arch.seed = cfg.seed;
    if (!(cfg == arch) || layers.size() != o.layers.size()) return false;
    const auto a = tensors();
    const auto b = o.tensors();
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (a[i].value->rows() != b[i].value->rows() || a[i].value->cols() != b[i].value->cols()) return false;
        if (*a[i].value != *b[i].value) return false;
    }
    return true;
}

std::size_t parameter_count(const ModelConfig& cfg)
{
    const std::size_t d = static_cast<std::size_t>(cfg.d_model);
    const std::size_t v = static_cast<std::size_t>(cfg.vocab_size);
    const std::size_t ff = static_cast<std::size_t>(cfg.d_ff());
    const std::size_t per_layer = 4 * d * d + 2 * d * ff + 2 * d;
    return 2 * v * d + static_cast<std::size_t>(cfg.max_seq) * d +
           static_cast<std::size_t>(cfg.n_layers) * per_layer + d;
}

Model init_model(const ModelConfig& cfg)
{
    cfg.validate();
    const Eigen::Index d = cfg.d_model, ff = cfg.d_ff();
    Model m;
    m.cfg = cfg;
    m.tok_emb.resize(cfg.vocab_size, d);
    m.pos_emb.resize(cfg.max_seq, d);
    m.layers.resize(static_cast<std::size_t>(cfg.n_layers));
    for (auto& w : m.layers) {
        w.norm1.resize(d, 1);
        w.wq.resize(d, d);
        w.wk.resize(d, d);
        w.wv.resize(d, d);
        w.wo.resize(d, d);
        w.norm2.resize(d, 1);
        w.w1.resize(ff, d);
        w.w2.resize(d, ff);
    }
    m.norm_f.resize(d, 1);
    m.w_out.resize(cfg.vocab_size, d);

    Rng rng(cfg.seed);
    const double residual_scale = 1.0 / std::sqrt(2.0 * cfg.n_layers);
    for (auto& t : m.tensors()) {
        Matrix& w = *t.value;
        double stddev = 0.5;
        if (t.kind == TensorKind::Norm) {
            w.setOnes();
            continue;
        }
        if (t.kind == TensorKind::Linear) {
            stddev = 1.0 / std::sqrt(static_cast<double>(w.cols()));
            if (t.name.ends_with(".wo") || t.name.ends_with(".w2")) stddev *= residual_scale;
        }
        for (Eigen::Index i = 0; i < w.rows(); ++i)
            for (Eigen::Index j = 0; j < w.cols(); ++j) w(i, j) = stddev * rng.normal();
    }
    round_to_fp32(m);
    return m;
}

void round_to_fp32(Model& m)
{
    for (auto& t : m.tensors())
        *t.value = t.value->unaryExpr([](double x) { return static_cast<double>(static_cast<float>(x)); });
}

Matrix embed(const Model& m, std::span<const int> tokens)
{
    check_tokens(m, tokens);
    Matrix x0(static_cast<Eigen::Index>(tokens.size()), m.cfg.d_model);
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        const auto r = static_cast<Eigen::Index>(i);
        x0.row(r) = m.tok_emb.row(tokens[i]) + m.pos_emb.row(r);
    }
    return x0;
}

ForwardResult forward_embedded(const Model& m, const Matrix& x0, const LinearTap& tap)
{
    require(x0.cols() == m.cfg.d_model && x0.rows() >= 1 && x0.rows() <= m.cfg.max_seq,
            "embedded input has the wrong shape");
    Cache c;
    run_forward(m, x0, Segments::single(x0.rows()), c, tap);
    return {std::move(c.logits), std::move(c.hf)};
}

ForwardResult forward(const Model& m, std::span<const int> tokens, const LinearTap& tap)
{
    return forward_embedded(m, embed(m, tokens), tap);
}

Vector log_softmax(const Eigen::Ref<const Vector>& logits)
{
    const double mx = logits.maxCoeff();
    const double lse = mx + std::log((logits.array() - mx).exp().sum());
    return logits.array() - lse;
}

Vector softmax(const Eigen::Ref<const Vector>& logits)
{
    const double mx = logits.maxCoeff();
    Vector e = (logits.array() - mx).exp();
    return e / e.sum();
}

std::vector<int> next_token_targets(std::span<const int> tokens)
{
    std::vector<int> t(tokens.size(), -1);
    for (std::size_t i = 0; i + 1 < tokens.size(); ++i) t[i] = tokens[i + 1];
    return t;
}

double cross_entropy(const Matrix& logits, std::span<const int> targets)
{
    Matrix unused;
    return loss_and_dlogits(logits, targets, unused);
}

double loss_from_embeddings(const Model& m, const Matrix& x0, std::span<const int> targets)
{
    return cross_entropy(forward_embedded(m, x0).logits, targets);
}

Gradients backprop(const Model& m, std::span<const int> tokens, std::span<const int> targets)
{
    const Matrix x0 = embed(m, tokens);
    const Segments segs = Segments::single(x0.rows());
    Cache c;
    run_forward(m, x0, segs, c, {});

    Gradients g{m.zeros_like(), Matrix(), 0.0};
    Matrix dlogits;
    g.loss = loss_and_dlogits(c.logits, targets, dlogits);
    if (!std::isfinite(g.loss)) throw NumericalError("non-finite loss in backprop");

    g.input_embeddings = run_backward(m, c, segs, dlogits, g.params);
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        const auto r = static_cast<Eigen::Index>(i);
        g.params.tok_emb.row(tokens[i]) += g.input_embeddings.row(r);
        g.params.pos_emb.row(r) += g.input_embeddings.row(r);
    }
    return g;
}

double accumulate_gradients(const Model& m, std::span<const SequenceRef> batch, Model& grads)
{
    require(!batch.empty(), "empty gradient batch");
    Segments segs;
    Eigen::Index rows = 0;
    for (const auto& s : batch) {
        check_tokens(m, s.tokens);
        require(s.targets.size() == s.tokens.size(), "targets do not match sequence length");
        segs.start.push_back(rows);
        segs.len.push_back(static_cast<Eigen::Index>(s.tokens.size()));
        rows += static_cast<Eigen::Index>(s.tokens.size());
    }
    Matrix x0(rows, m.cfg.d_model);
    std::vector<int> targets;
    targets.reserve(static_cast<std::size_t>(rows));
    for (std::size_t b = 0; b < batch.size(); ++b) {
        x0.middleRows(segs.start[b], segs.len[b]) = embed(m, batch[b].tokens);
        targets.insert(targets.end(), batch[b].targets.begin(), batch[b].targets.end());
    }
    Cache c;
    run_forward(m, x0, segs, c, {});
    Matrix dlogits;
    const double loss = loss_and_dlogits(c.logits, targets, dlogits);
    if (!std::isfinite(loss)) throw NumericalError("non-finite loss in backprop");
    const Matrix dx = run_backward(m, c, segs, dlogits, grads);
    for (std::size_t b = 0; b < batch.size(); ++b) {
        for (Eigen::Index i = 0; i < segs.len[b]; ++i) {
            const Eigen::Index r = segs.start[b] + i;
            grads.tok_emb.row(batch[b].tokens[static_cast<std::size_t>(i)]) += dx.row(r);
            grads.pos_emb.row(i) += dx.row(r);
        }
    }
    return loss;
}

Generation greedy_decode(const Model& m, const MMInput& x, int max_new)
{
    require(!x.question_tokens.empty(), "empty question");
    require(max_new >= 1, "max_new must be >= 1");
    const std::size_t prompt_len = x.vision_tokens.size() + x.question_tokens.size();
    require(prompt_len + static_cast<std::size_t>(max_new) <= static_cast<std::size_t>(m.cfg.max_seq),
            "prompt plus generation budget exceeds max_seq");

    std::vector<int> seq(x.vision_tokens);
    seq.insert(seq.end(), x.question_tokens.begin(), x.question_tokens.end());

    Generation gen;
    ForwardResult fr = forward(m, seq);
    const Eigen::Index d = m.cfg.d_model;
    const auto nv = static_cast<Eigen::Index>(x.vision_tokens.size());
    const auto nq = static_cast<Eigen::Index>(x.question_tokens.size());
    FeatureVector& f = gen.features;
    f.v = nv > 0 ? Vector(fr.hidden.topRows(nv).colwise().maxCoeff().transpose()) : Vector::Zero(d);
    f.q = fr.hidden.middleRows(nv, nq).colwise().maxCoeff().transpose();
    f.o1 = fr.hidden.row(static_cast<Eigen::Index>(prompt_len) - 1).transpose();

    double log_p = 0.0;
    for (int step = 0; step < max_new; ++step) {
        if (step > 0) fr = forward(m, seq);
        const Vector p = softmax(fr.logits.row(fr.logits.rows() - 1).transpose());
        int best = 0;
        for (int t = 1; t < p.size(); ++t)
            if (p(t) > p(best)) best = t;
        gen.answer_tokens.push_back(best);
        gen.step_probs.push_back(p(best));
        log_p += std::log(p(best));
        seq.push_back(best);
        if (best == kEosToken) break;
    }
    f.p = std::exp(log_p);
    return gen;
}

double mean_kl(const Model& reference, const Model& other, std::span<const MMInput> inputs, int max_new)
{
    require(!inputs.empty(), "mean_kl needs at least one input");
    double total = 0.0;
    std::size_t steps = 0;
    for (const auto& x : inputs) {
        const Generation g = greedy_decode(reference, x, max_new);
        std::vector<int> seq(x.vision_tokens);
        seq.insert(seq.end(), x.question_tokens.begin(), x.question_tokens.end());
        const std::size_t prompt = seq.size();
        seq.insert(seq.end(), g.answer_tokens.begin(), g.answer_tokens.end());
        seq.pop_back();  // the final answer token is never fed back
        const Matrix la = forward(reference, seq).logits;
        const Matrix lb = forward(other, seq).logits;
        for (std::size_t k = 0; k < g.answer_tokens.size(); ++k) {
            const auto r = static_cast<Eigen::Index>(prompt - 1 + k);
            const Vector lp = log_softmax(la.row(r).transpose());
            const Vector lq = log_softmax(lb.row(r).transpose());
            const double kl = (lp.array().exp() * (lp - lq).array()).sum();
            total += kl;
            ++steps;
        }
    }
    return total / static_cast<double>(steps);
}

} // namespace qrel::model
