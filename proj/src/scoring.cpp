#include "compact/scoring.hpp"

#include <algorithm>
#include <atomic>
#include <exception>
#include <numeric>
#include <thread>

#include "compact/error.hpp"

namespace compact {

namespace {

constexpr std::size_t kChunk = 8;

}  // namespace

std::string_view scorer_name(Scorer scorer) {
    switch (scorer) {
        case Scorer::CommonAct2: return "common-act2";
        case Scorer::Act2: return "act2";
        case Scorer::AbsAct: return "abs-act";
    }
    return "?";
}

Scorer parse_scorer(std::string_view name) {
    if (name == "common-act2" || name == "common_act2") return Scorer::CommonAct2;
    if (name == "act2") return Scorer::Act2;
    if (name == "abs-act" || name == "abs_act") return Scorer::AbsAct;
    throw Error(ErrorKind::InvalidArgument, "unknown scorer '" + std::string(name) + "'");
}

nlohmann::json ImportanceTable::to_json() const {
    return {{"scorer", scorer_name(scorer)}, {"layers", layers}, {"positions_used", positions_used}};
}

ImportanceTable ImportanceTable::from_json(const nlohmann::json& j) {
    try {
        ImportanceTable t;
        t.scorer = parse_scorer(j.at("scorer").get<std::string>());
        t.layers = j.at("layers").get<std::vector<std::vector<double>>>();
        t.positions_used = j.at("positions_used").get<std::int64_t>();
        return t;
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorKind::Format, std::string("importance table: ") + e.what());
    }
}

std::vector<double> token_weights(std::span<const TokenId> ids, const RareTokenSet& rare) {
    std::vector<double> w(ids.size());
    std::transform(ids.begin(), ids.end(), w.begin(), [&](TokenId id) { return rare.contains(id) ? 0.0 : 1.0; });
    return w;
}

ImportanceTable score(const ForwardModel& model, const CalibrationBatch& batch, const RareTokenSet& rare,
                      Scorer scorer, unsigned threads) {
    if (batch.sequences.empty()) throw Error(ErrorKind::InvalidArgument, "no calibration sequences");
    if (rare.vocab_size() != model.config().vocab_size) {
        throw Error(ErrorKind::InvalidArgument, "rare-token set does not match the model vocabulary");
    }

    const bool masked = scorer == Scorer::CommonAct2;
    const Reduction reduction = scorer == Scorer::AbsAct ? Reduction::Absolute : Reduction::Squared;

    std::vector<std::vector<double>> weights(batch.sequences.size());
    std::int64_t used = 0;
    for (std::size_t s = 0; s < batch.sequences.size(); ++s) {
        const auto& seq = batch.sequences[s];
        weights[s] = masked ? token_weights(seq, rare) : std::vector<double>(seq.size(), 1.0);
        used += static_cast<std::int64_t>(std::count(weights[s].begin(), weights[s].end(), 1.0));
    }
    if (used == 0) throw Error(ErrorKind::InvalidArgument, "empty effective calibration: every position is a rare token");

    const std::size_t n_chunks = (batch.sequences.size() + kChunk - 1) / kChunk;
    std::vector<ChannelAccumulator> partial(n_chunks);
    auto work = [&](std::size_t chunk) {
        ChannelAccumulator acc = model.zero_accumulator();
        const std::size_t end = std::min(batch.sequences.size(), (chunk + 1) * kChunk);
        for (std::size_t s = chunk * kChunk; s < end; ++s) {
            model.accumulate(batch.sequences[s], weights[s], reduction, acc);
        }
        partial[chunk] = std::move(acc);
    };

    threads = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(n_chunks)));
    if (threads == 1) {
        for (std::size_t c = 0; c < n_chunks; ++c) work(c);
    } else {
        std::atomic<std::size_t> next{0};
        std::vector<std::exception_ptr> errors(threads);
        std::vector<std::thread> pool;
        for (unsigned t = 0; t < threads; ++t) {
            pool.emplace_back([&, t] {
                try {
                    for (std::size_t c; (c = next.fetch_add(1)) < n_chunks;) work(c);
                } catch (...) {
                    errors[t] = std::current_exception();
                    next = n_chunks;
                }
            });
        }
        for (auto& th : pool) th.join();
        for (auto& e : errors) {
            if (e) std::rethrow_exception(e);
        }
    }

    ImportanceTable table;
    table.scorer = scorer;
    table.positions_used = used;
    table.layers = model.zero_accumulator();
    for (const auto& acc : partial) {
        for (std::size_t l = 0; l < acc.size(); ++l) {
            for (std::size_t k = 0; k < acc[l].size(); ++k) table.layers[l][k] += acc[l][k];
        }
    }
    return table;
}

ImportanceTable score(const WeightMap& weights, const ModelConfig& config, const CalibrationBatch& batch,
                      const RareTokenSet& rare, Scorer scorer, unsigned threads) {
    return score(ForwardModel(weights, config), batch, rare, scorer, threads);
}

ChannelSelection select_pruned_channels(const ImportanceTable& table, std::int64_t i_prime) {
    ChannelSelection sel;
    for (const auto& scores : table.layers) {
        const auto I = static_cast<std::int64_t>(scores.size());
        if (i_prime < 1 || i_prime > I) {
            throw Error(ErrorKind::InvalidArgument,
                        "I' = " + std::to_string(i_prime) + " outside [1, " + std::to_string(I) + "]");
        }
        IndexSet order = iota_indices(0, I);
        std::stable_sort(order.begin(), order.end(), [&](std::int64_t a, std::int64_t b) {
            return scores[static_cast<std::size_t>(a)] < scores[static_cast<std::size_t>(b)];
        });
        IndexSet pruned(order.begin(), order.begin() + (I - i_prime));
        IndexSet retained(order.begin() + (I - i_prime), order.end());
        std::sort(pruned.begin(), pruned.end());
        std::sort(retained.begin(), retained.end());
        sel.pruned.push_back(std::move(pruned));
        sel.retained.push_back(std::move(retained));
    }
    return sel;
}

}  // namespace compact
