#include "compact/corpus.hpp"

#include <fstream>
#include <numeric>
#include <random>

#include "compact/error.hpp"

namespace compact {

std::vector<std::string> read_documents(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorKind::Io, "cannot open corpus '" + path.string() + "'");
    std::vector<std::string> docs;
    for (std::string line; std::getline(in, line);) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (!line.empty()) docs.push_back(std::move(line));
    }
    if (docs.empty()) throw Error(ErrorKind::InvalidArgument, "corpus '" + path.string() + "' is empty");
    return docs;
}

std::vector<std::size_t> seeded_permutation(std::size_t n, std::uint64_t seed) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::mt19937_64 rng(seed);
    // Fisher-Yates with rejection sampling; std::shuffle's algorithm is unspecified.
    for (std::size_t i = n; i > 1; --i) {
        const std::uint64_t bound = i;
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % bound;
        std::uint64_t x;
        do {
            x = rng();
        } while (x >= limit);
        std::swap(order[i - 1], order[static_cast<std::size_t>(x % bound)]);
    }
    return order;
}

CalibrationBatch sample_calibration(const std::vector<std::string>& documents, const BpeTokenizer& tok,
                                    std::int64_t n_samples, std::int64_t seq_len, std::uint64_t seed) {
    if (n_samples < 1) throw Error(ErrorKind::InvalidArgument, "n_samples must be >= 1");
    if (seq_len < 1) throw Error(ErrorKind::InvalidArgument, "seq_len must be >= 1");
    if (documents.empty()) throw Error(ErrorKind::InvalidArgument, "calibration corpus is empty");

    CalibrationBatch batch;
    for (auto idx : seeded_permutation(documents.size(), seed)) {
        auto ids = tok.encode(documents[idx]);
        if (static_cast<std::int64_t>(ids.size()) < kMinDocumentTokens) continue;
        if (static_cast<std::int64_t>(ids.size()) > seq_len) ids.resize(static_cast<std::size_t>(seq_len));
        batch.sequences.push_back(std::move(ids));
        if (static_cast<std::int64_t>(batch.sequences.size()) == n_samples) return batch;
    }
    throw Error(ErrorKind::InvalidArgument, "too few usable documents: " + std::to_string(batch.sequences.size()) +
                                                " of " + std::to_string(documents.size()) + " have >= " +
                                                std::to_string(kMinDocumentTokens) + " tokens, " +
                                                std::to_string(n_samples) + " requested");
}

CalibrationBatch load_corpus(const std::filesystem::path& path, const BpeTokenizer& tok, std::int64_t n_samples,
                             std::int64_t seq_len, std::uint64_t seed) {
    return sample_calibration(read_documents(path), tok, n_samples, seq_len, seed);
}

}  // namespace compact
