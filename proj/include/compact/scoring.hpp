#pragma once

#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include "compact/forward.hpp"
#include "compact/tokenizer.hpp"
#include "json.hpp"

namespace compact {

enum class Scorer { CommonAct2, Act2, AbsAct };

std::string_view scorer_name(Scorer scorer);
// Accepts "common-act2" / "common_act2", "act2", "abs-act" / "abs_act".
Scorer parse_scorer(std::string_view name);

struct ImportanceTable {
    Scorer scorer = Scorer::CommonAct2;
    std::vector<std::vector<double>> layers;  // [L][I]
    std::int64_t positions_used = 0;

    nlohmann::json to_json() const;
    static ImportanceTable from_json(const nlohmann::json& j);
};

struct ChannelSelection {
    std::vector<IndexSet> pruned;    // ascending, I - I' per layer
    std::vector<IndexSet> retained;  // ascending, I' per layer
};

// w_i = 0 for ids in S, 1 otherwise.
std::vector<double> token_weights(std::span<const TokenId> ids, const RareTokenSet& rare);

// Sequences are accumulated in fixed chunks whose partial sums are merged in
// chunk order, so the table does not depend on the thread count.
ImportanceTable score(const ForwardModel& model, const CalibrationBatch& batch, const RareTokenSet& rare,
                      Scorer scorer, unsigned threads = 1);
ImportanceTable score(const WeightMap& weights, const ModelConfig& config, const CalibrationBatch& batch,
                      const RareTokenSet& rare, Scorer scorer, unsigned threads = 1);

// Per layer prunes the I - I' lowest scores; ties go to the lower index.
ChannelSelection select_pruned_channels(const ImportanceTable& table, std::int64_t i_prime);

}  // namespace compact
