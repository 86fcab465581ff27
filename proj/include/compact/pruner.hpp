#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "compact/forward.hpp"
#include "compact/scoring.hpp"
#include "compact/tensorstore.hpp"
#include "compact/tokenizer.hpp"
#include "json.hpp"

namespace compact {

// Parameter counts split into the vocabulary (embedding + LM head), FFN and
// attention groups; `other` holds norm gains and projection biases.
struct ParamCensus {
    std::int64_t vocab = 0;
    std::int64_t ffn = 0;
    std::int64_t attention = 0;
    std::int64_t other = 0;
    std::int64_t total = 0;

    double fraction(std::int64_t part) const { return total ? static_cast<double>(part) / total : 0.0; }
    double vocab_fraction() const { return fraction(vocab); }
    double ffn_fraction() const { return fraction(ffn); }
    double attention_fraction() const { return fraction(attention); }
    double other_fraction() const { return fraction(other); }
    nlohmann::json to_json() const;
};

// N_vocab = (tied ? 1 : 2) V D, N_ffn = 3 L D I, N_attn = 2 L D^2 (1 + 1/H).
ParamCensus param_counts(const ModelConfig& config);
// Counts from actual tensors; `other` is whatever the three groups leave over.
ParamCensus param_counts(const ModelConfig& config, const WeightMap& weights);

// Fraction of all parameters removed by shrinking to (V', I').
double pruning_ratio(const ModelConfig& config, std::int64_t v_prime, std::int64_t i_prime);

struct PlanRow {
    std::int64_t v_prime;
    std::int64_t i_prime;
    double ratio;
};

// Grid V' = V - a*vocab_step (>= vocab_floor), I' = I - b*inter_step (>= 1);
// keeps rows within `tolerance` of `target`, sorted by V' then I' descending.
std::vector<PlanRow> enumerate_configs(const ModelConfig& config, double target, std::int64_t vocab_step,
                                       std::int64_t inter_step, double tolerance, std::int64_t vocab_floor = 1);

nlohmann::json plan_to_json(const std::vector<PlanRow>& rows);

ModelConfig shrink_config(const ModelConfig& config, std::int64_t v_prime, std::int64_t i_prime);

WeightMap prune_ffn(const WeightMap& weights, const ModelConfig& config, const ChannelSelection& selection);
WeightMap prune_vocab(const WeightMap& weights, const ModelConfig& config, std::int64_t v_prime);

struct PruneSpec {
    std::int64_t v_prime = 0;
    std::int64_t i_prime = 0;
    Scorer scorer = Scorer::CommonAct2;
    std::string calibration = "";
    std::int64_t n_samples = 256;
    std::int64_t seq_len = 2048;
    std::uint64_t seed = 0;
    unsigned threads = 1;
};

struct PruneReport {
    double achieved_ratio = 0.0;
    std::int64_t v_prime = 0;
    std::int64_t i_prime = 0;
    Scorer scorer = Scorer::CommonAct2;
    std::int64_t n_samples = 0;
    std::int64_t seq_len = 0;
    std::int64_t positions_used = 0;
    std::int64_t positions_total = 0;
    std::int64_t params_before = 0;
    std::int64_t params_after = 0;
    std::string calibration;
    double elapsed_seconds = 0.0;
    std::vector<std::string> warnings;

    nlohmann::json to_json() const;
};

struct PruneResult {
    WeightMap weights;
    ModelConfig config;
    BpeTokenizer tokenizer;
    ImportanceTable importance;
    ChannelSelection selection;
    PruneReport report;
};

// The joint pipeline: rare set -> scoring on the original model -> FFN channel
// removal -> vocabulary and tokenizer pruning. The batch must have been
// tokenized with `tokenizer` (the unpruned one).
PruneResult compact(const WeightMap& weights, const ModelConfig& config, const BpeTokenizer& tokenizer,
                    const CalibrationBatch& batch, const PruneSpec& spec);

// Samples and tokenizes `documents` with the original tokenizer first.
PruneResult compact(const WeightMap& weights, const ModelConfig& config, const BpeTokenizer& tokenizer,
                    const std::vector<std::string>& documents, const PruneSpec& spec);

namespace layout {
inline constexpr const char* kModel = "model.safetensors";
inline constexpr const char* kTokenizer = "tokenizer.json";
inline constexpr const char* kConfig = "config.json";
inline constexpr const char* kReport = "report.json";
inline constexpr const char* kImportance = "importance.json";
}  // namespace layout

void write_prune_dir(const PruneResult& result, const std::filesystem::path& dir);

struct VerifyReport {
    std::vector<std::string> findings;
    bool ok() const { return findings.empty(); }
    nlohmann::json to_json() const;
};

// Structural checks on an emitted directory: tensor roles and shapes, tokenizer
// closure and id range, report consistency, and a forward pass.
VerifyReport verify_dir(const std::filesystem::path& dir);

}  // namespace compact
