#pragma once

// Test-only oracles. None of these call into the forward, scoring or pruner
// code paths they check.

#include <cstdint>
#include <string>
#include <vector>

#include "compact/forward.hpp"
#include "compact/scoring.hpp"
#include "compact/tensorstore.hpp"
#include "compact/tokenizer.hpp"

namespace ref {

// Double-precision straight-line forward pass; [len][V] logits.
std::vector<std::vector<double>> logits(const compact::WeightMap& w, const compact::ModelConfig& c,
                                        const std::vector<compact::TokenId>& ids);

// Same pass, returning [layer][pos][channel] FFN activations.
std::vector<std::vector<std::vector<double>>> activations(const compact::WeightMap& w, const compact::ModelConfig& c,
                                                          const std::vector<compact::TokenId>& ids);

// BPE over strings: repeatedly merge the leftmost occurrence of the
// lowest-ranked adjacent pair, one merge at a time.
std::vector<compact::TokenId> bpe_encode(const compact::BpeTokenizer& tok, const std::string& text);

// Scores by recomputing each position's activation on its own prefix.
std::vector<std::vector<double>> brute_force_scores(const compact::WeightMap& w, const compact::ModelConfig& c,
                                                    const compact::CalibrationBatch& batch,
                                                    const compact::RareTokenSet& rare, compact::Scorer scorer);

// Keeps the first I' channels and V' rows with raw take_rows/take_cols and
// returns (elements before - elements after) / elements before.
double ratio_by_surgery(const compact::WeightMap& w, const compact::ModelConfig& c, std::int64_t v_prime,
                        std::int64_t i_prime);

// Same quantity from the shapes the config implies (no tensors needed).
double ratio_by_shapes(const compact::ModelConfig& c, std::int64_t v_prime, std::int64_t i_prime);

double max_rel_diff(const std::vector<std::vector<double>>& a, const std::vector<std::vector<double>>& b);

}  // namespace ref
