#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "rotsym/matrix.hpp"

namespace rotsym {

struct TransformerConfig {
    std::size_t n_layers = 1;
    std::size_t n_heads = 1;
    std::size_t d_model = 4;
    std::size_t d_head = 4;
    std::size_t d_ff = 16;
    std::size_t vocab_size = 16;
    std::size_t n_classes = 2;
    std::size_t seq_len = 8;

    bool operator==(const TransformerConfig&) const = default;
    void validate() const; // throws ConfigError
};

struct AttentionHeadParams {
    Matrix w_q; // d_head x d_model
    Matrix b_q; // 1 x d_head
    Matrix w_k; // d_head x d_model
    Matrix b_k; // 1 x d_head
    Matrix w_v; // d_head x d_model
    Matrix b_v; // 1 x d_head
    Matrix w_o; // d_model x d_head
};

struct AttentionLayerParams {
    std::vector<AttentionHeadParams> heads;
    Matrix b_o;     // 1 x d_model, shared across heads
    Matrix ln_gain; // 1 x d_model
    Matrix ln_bias; // 1 x d_model
};

struct FfnParams {
    Matrix w_i;     // d_ff x d_model
    Matrix b_i;     // 1 x d_ff
    Matrix w_o;     // d_model x d_ff
    Matrix b_o;     // 1 x d_model
    Matrix ln_gain; // 1 x d_model
    Matrix ln_bias; // 1 x d_model
};

struct TransformerBlock {
    AttentionLayerParams attn;
    FfnParams ffn;
};

struct TransformerModel {
    TransformerConfig config;
    Matrix embedding; // vocab_size x d_model
    std::vector<TransformerBlock> blocks;
    Matrix classifier_w; // n_classes x d_model
    Matrix classifier_b; // 1 x n_classes

    void validate() const; // throws ConfigError / DimensionError
};

struct DatasetItem {
    std::vector<std::size_t> tokens;
    std::size_t label = 0;
};

struct SyntheticDataset {
    std::vector<DatasetItem> items;
    std::uint64_t seed = 0;
    std::size_t seq_len = 0;
    std::size_t vocab_size = 0;
    std::size_t n_classes = 0;
};

// Optional per-layer activations recorded by forward().
struct ForwardTrace {
    std::vector<Matrix> attn_in;                 // per layer, n x d_model
    std::vector<Matrix> attn_concat;             // per layer, n x d_model
    std::vector<std::vector<Matrix>> attn_probs; // per layer per head, n x n
    std::vector<Matrix> ffn_in;                  // per layer, n x d_model
    std::vector<Matrix> ffn_hidden;              // per layer, n x d_ff
    Matrix pooled;                               // 1 x d_model
};

// Row-wise LayerNorm with epsilon 1e-5 inside the variance square root,
// then elementwise gain and bias.
Matrix layer_norm_rows(const Matrix& x, const Matrix& gain, const Matrix& bias);

// Full forward pass: embedding lookup, per block multi-head attention with
// residual + LayerNorm then FFN with residual + LayerNorm, mean pooling over
// positions, classifier. Returns 1 x n_classes logits.
Matrix forward(const TransformerModel& model, std::span<const std::size_t> tokens,
               ForwardTrace* trace = nullptr);

// Cross-entropy of one item / mean over a dataset (fixed left-to-right sum).
double item_loss(const TransformerModel& model, const DatasetItem& item);
double loss(const TransformerModel& model, const SyntheticDataset& dataset);
double accuracy(const TransformerModel& model, const SyntheticDataset& dataset);

// Weights i.i.d. normal(0, scale^2), LayerNorm gain 1 and bias 0.
TransformerModel random_model(const TransformerConfig& config, std::uint64_t seed, double scale);

// Adds i.i.d. normal(0, sigma^2) noise to every parameter in canonical order.
TransformerModel add_noise(const TransformerModel& model, double sigma, std::uint64_t seed);

// Uniform random tokens labeled by the teacher's argmax (lowest index wins ties).
SyntheticDataset gen_synthetic(const TransformerConfig& config, const TransformerModel& teacher,
                               std::size_t n_items, std::uint64_t seed);

struct ActivationRecord {
    Matrix gram; // X^T X accumulated over items and positions
    std::size_t samples = 0;
};

// Input Gram statistics for every distinct linear-map input site:
//   layer.{l}.attn.in      feeds every head's w_q / w_k / w_v
//   layer.{l}.attn.concat  feeds the concatenated-output projection
//   layer.{l}.ffn.in       feeds w_i
//   layer.{l}.ffn.hidden   feeds the FFN w_o
//   classifier.in          feeds classifier_w
std::map<std::string, ActivationRecord> capture_activations(const TransformerModel& model,
                                                            const SyntheticDataset& dataset);

// Central-difference gradient of the per-item loss, flattened in canonical
// order. Per-coordinate step is base_step * (1 + |theta_i|).
std::vector<double> fd_gradient(const TransformerModel& model, const DatasetItem& item,
                                double base_step = 1e-4);

// Canonical tensor walk: embedding, then per layer (per head wq bq wk bk wv
// bv wo, then attention bo/ln_gain/ln_bias, then ffn wi bi wo bo
// ln_gain/ln_bias), classifier last. Flattening and serialization share it.
void for_each_tensor(TransformerModel& m,
                     const std::function<void(const std::string&, Matrix&)>& f);
void for_each_tensor(const TransformerModel& m,
                     const std::function<void(const std::string&, const Matrix&)>& f);

std::size_t parameter_count(const TransformerModel& m);
std::vector<double> flatten(const TransformerModel& m);
void unflatten_into(TransformerModel& m, std::span<const double> theta);

} // namespace rotsym
