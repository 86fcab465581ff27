#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "compact/forward.hpp"
#include "compact/tokenizer.hpp"

namespace compact {

// Documents shorter than this many tokens are skipped during sampling.
inline constexpr std::int64_t kMinDocumentTokens = 8;

// One document per non-empty line.
std::vector<std::string> read_documents(const std::filesystem::path& path);

// Seeded sample of `n_samples` documents, each tokenized and truncated to
// `seq_len`. Throws when fewer than `n_samples` documents are usable.
CalibrationBatch sample_calibration(const std::vector<std::string>& documents, const BpeTokenizer& tok,
                                    std::int64_t n_samples, std::int64_t seq_len, std::uint64_t seed);

CalibrationBatch load_corpus(const std::filesystem::path& path, const BpeTokenizer& tok, std::int64_t n_samples,
                             std::int64_t seq_len, std::uint64_t seed);

// Seeded permutation of [0, n); identical on every platform.
std::vector<std::size_t> seeded_permutation(std::size_t n, std::uint64_t seed);

}  // namespace compact
