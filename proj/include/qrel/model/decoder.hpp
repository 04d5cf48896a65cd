#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "qrel/features.hpp"

namespace qrel::model {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

inline constexpr int kEosToken = 0;

struct ModelConfig {
    int d_model = 64;
    int n_layers = 2;
    int n_heads = 4;
    int vocab_size = 32;
    int max_seq = 16;
    std::uint64_t seed = 0;

    int d_ff() const { return 4 * d_model; }
    int head_dim() const { return d_model / n_heads; }
    void validate() const;

    bool operator==(const ModelConfig&) const = default;
};

enum class TensorKind { Embedding, Norm, Linear };

// Linear weights are stored (out, in): y = x * W^T with x holding one position per row.
// Norm gains are (d, 1) columns.
struct LayerWeights {
    Matrix norm1, wq, wk, wv, wo;
    Matrix norm2, w1, w2;
};

struct Model {
    ModelConfig cfg;
    Matrix tok_emb;  // (vocab, d)
    Matrix pos_emb;  // (max_seq, d)
    std::vector<LayerWeights> layers;
    Matrix norm_f;   // (d, 1)
    Matrix w_out;    // (vocab, d)

    struct NamedTensor {
        std::string name;
        Matrix* value;
        TensorKind kind;
    };
    struct ConstNamedTensor {
        std::string name;
        const Matrix* value;
        TensorKind kind;
    };

    /// All parameters in a fixed canonical order.
    std::vector<NamedTensor> tensors();
    std::vector<ConstNamedTensor> tensors() const;

    std::size_t parameter_count() const;
    /// Same-shaped model with every parameter zero (gradient / optimizer state holder).
    Model zeros_like() const;

    /// Same architecture and weights; the init seed is not compared.
    bool operator==(const Model& o) const;
};

/// Closed-form parameter count of the architecture.
std::size_t parameter_count(const ModelConfig& cfg);

/// Deterministic seeded initialization; every value is exactly representable in 32-bit float.
Model init_model(const ModelConfig& cfg);

/// Rounds every parameter to the nearest 32-bit float (what a checkpoint stores).
void round_to_fp32(Model& m);

struct ForwardResult {
    Matrix logits;  // (T, vocab)
    Matrix hidden;  // (T, d) final normalized hidden states
};

/// Observer of linear-layer inputs: called with (layer name, input rows).
using LinearTap = std::function<void(const std::string&, const Matrix&)>;

Matrix embed(const Model& m, std::span<const int> tokens);
ForwardResult forward(const Model& m, std::span<const int> tokens, const LinearTap& tap = {});
ForwardResult forward_embedded(const Model& m, const Matrix& x0, const LinearTap& tap = {});

Vector softmax(const Eigen::Ref<const Vector>& logits);
Vector log_softmax(const Eigen::Ref<const Vector>& logits);

/// targets[i] is the token to predict at position i, or -1 to skip it.
std::vector<int> next_token_targets(std::span<const int> tokens);

/// Summed cross-entropy over positions with targets >= 0.
double cross_entropy(const Matrix& logits, std::span<const int> targets);

struct Gradients {
    Model params;             // gradient for every parameter
    Matrix input_embeddings;  // (T, d) gradient w.r.t. token + position embedding sum
    double loss = 0.0;
};

/// Exact reverse-mode gradients of the summed next-token cross-entropy.
Gradients backprop(const Model& m, std::span<const int> tokens, std::span<const int> targets);

struct SequenceRef {
    std::span<const int> tokens;
    std::span<const int> targets;
};

/// Stacks the sequences into one pass, adds the summed gradient into `grads`
/// and returns the summed loss.
double accumulate_gradients(const Model& m, std::span<const SequenceRef> batch, Model& grads);

/// Loss as a function of the embedded input, for gradient checks.
double loss_from_embeddings(const Model& m, const Matrix& x0, std::span<const int> targets);

struct MMInput {
    std::vector<int> vision_tokens;
    std::vector<int> question_tokens;

    bool operator==(const MMInput&) const = default;
};

struct Generation {
    std::vector<int> answer_tokens;  // includes the end-of-sequence token when emitted
    std::vector<double> step_probs;
    FeatureVector features;

    bool operator==(const Generation&) const = default;
};

/// Greedy decoding: argmax each step, ties to the lowest token id, stops at
/// kEosToken or after max_new tokens.
Generation greedy_decode(const Model& m, const MMInput& x, int max_new);

/// Mean KL(reference || other) of next-token distributions, teacher-forced
/// along the reference model's greedy answer, averaged over steps and inputs.
double mean_kl(const Model& reference, const Model& other, std::span<const MMInput> inputs, int max_new);

} // namespace qrel::model
