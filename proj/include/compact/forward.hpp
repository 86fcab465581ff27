#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "compact/tensorstore.hpp"
#include "compact/tokenizer.hpp"

namespace compact {

struct Matrix {
    std::int64_t rows = 0;
    std::int64_t cols = 0;
    std::vector<float> data;

    Matrix() = default;
    Matrix(std::int64_t r, std::int64_t c) : rows(r), cols(c), data(static_cast<std::size_t>(r * c), 0.0f) {}

    std::span<float> row(std::int64_t r) { return {data.data() + r * cols, static_cast<std::size_t>(cols)}; }
    std::span<const float> row(std::int64_t r) const {
        return {data.data() + r * cols, static_cast<std::size_t>(cols)};
    }
    float at(std::int64_t r, std::int64_t c) const { return data[static_cast<std::size_t>(r * cols + c)]; }
};

using TokenSequence = std::vector<TokenId>;

// Calibration sequences; each is run as its own causal forward. Sequences may
// differ in length.
struct CalibrationBatch {
    std::vector<TokenSequence> sequences;

    std::int64_t positions() const;
    TokenSequence flattened() const;
};

float silu(float z);

enum class Reduction { Squared, Absolute };

// Per layer, per FFN channel running sums.
using ChannelAccumulator = std::vector<std::vector<double>>;

// Weights widened to f32 once, then reused across forwards. Every method is
// const and safe to call concurrently.
class ForwardModel {
public:
    ForwardModel(const WeightMap& weights, const ModelConfig& config);

    const ModelConfig& config() const { return config_; }

    // [len x V] logits.
    Matrix logits(std::span<const TokenId> ids) const;

    // Per layer [len x I] activations SiLU(x Wg^T) * (x Wu^T), tapped before W_down.
    std::vector<Matrix> activations(std::span<const TokenId> ids) const;

    // acc[l][k] += w_i * f(a_{i,k}) where f is square or abs; positions with
    // w_i == 0 contribute nothing. Logits are not computed.
    void accumulate(std::span<const TokenId> ids, std::span<const double> weights, Reduction reduction,
                    ChannelAccumulator& acc) const;

    ChannelAccumulator zero_accumulator() const;

private:
    struct Layer {
        std::vector<float> q, k, v, o;
        std::vector<float> q_bias, k_bias, v_bias;
        std::vector<float> gate, up, down;
        std::vector<float> input_norm, post_norm;
    };

    template <typename Tap>
    void run(std::span<const TokenId> ids, Tap&& tap, Matrix* logits) const;

    ModelConfig config_;
    std::vector<float> embedding_;
    std::vector<float> lm_head_;  // empty when tied
    std::vector<float> final_norm_;
    std::vector<Layer> layers_;
    std::vector<double> inv_freq_;
};

Matrix forward_logits(const WeightMap& weights, const ModelConfig& config, std::span<const TokenId> ids);

std::vector<Matrix> forward_activations(const WeightMap& weights, const ModelConfig& config,
                                        std::span<const TokenId> ids);

// `token_weights` covers the batch's positions in flattened order.
ChannelAccumulator forward_collect(const WeightMap& weights, const ModelConfig& config,
                                   const CalibrationBatch& batch, std::span<const double> token_weights,
                                   Reduction reduction = Reduction::Squared);

}  // namespace compact
