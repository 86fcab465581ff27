#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "json.hpp"

namespace compact {

using TokenId = std::int32_t;

// Byte-level BPE: dense ids mapping to byte strings, plus merge rules whose
// priority is their position. Immutable once constructed.
class BpeTokenizer {
public:
    using Merge = std::pair<std::string, std::string>;

    // Throws Error(Validation) when a merge references an unknown token or its
    // output is missing from the vocabulary, or a special id is out of range.
    BpeTokenizer(std::vector<std::string> vocab, std::vector<Merge> merges, std::vector<TokenId> special_tokens = {});

    std::size_t size() const { return vocab_.size(); }
    const std::string& token(TokenId id) const;
    std::optional<TokenId> find(std::string_view bytes) const;
    const std::vector<std::string>& vocab() const { return vocab_; }
    const std::vector<Merge>& merges() const { return merges_; }
    const std::vector<TokenId>& special_tokens() const { return specials_; }

    // Smallest retained vocabulary size that keeps every single-byte token and
    // every special token.
    std::int64_t alphabet_floor() const;

    // Whether every one of the 256 byte values has a single-byte token.
    bool covers_all_bytes() const;

    // Pre-tokenizes on whitespace then runs greedy BPE per word. Throws
    // Error(InvalidArgument) for a byte outside the tokenizer's alphabet.
    std::vector<TokenId> encode(std::string_view text) const;
    std::vector<TokenId> encode_word(std::string_view word) const;
    std::string decode(std::span<const TokenId> ids) const;

    bool operator==(const BpeTokenizer& other) const {
        return vocab_ == other.vocab_ && merges_ == other.merges_ && specials_ == other.specials_;
    }

private:
    struct MergeRule {
        std::int32_t rank;
        TokenId output;
    };
    static std::uint64_t pair_key(TokenId a, TokenId b) {
        return (static_cast<std::uint64_t>(static_cast<std::uint32_t>(a)) << 32) | static_cast<std::uint32_t>(b);
    }

    std::vector<std::string> vocab_;
    std::vector<Merge> merges_;
    std::vector<TokenId> specials_;
    std::unordered_map<std::string, TokenId> ids_;
    std::unordered_map<std::uint64_t, MergeRule> rules_;
    std::array<TokenId, 256> byte_ids_{};
};

// Splits text into words: a run of non-whitespace, optionally preceded by the
// single whitespace byte in front of it. Any other whitespace forms its own
// word. Concatenating the words reproduces the input.
std::vector<std::string_view> pretokenize(std::string_view text);

// GPT-2 byte <-> printable-unicode mapping used by tokenizer files.
std::string bytes_to_unicode(std::string_view bytes);
std::string unicode_to_bytes(std::string_view text);

BpeTokenizer tokenizer_from_json(const nlohmann::json& j);
nlohmann::json tokenizer_to_json(const BpeTokenizer& tok);
BpeTokenizer load_tokenizer(const std::filesystem::path& path);
void save_tokenizer(const BpeTokenizer& tok, const std::filesystem::path& path);

// S = {retained, ..., vocab_size - 1}: the suffix of the id space.
class RareTokenSet {
public:
    RareTokenSet(std::int64_t vocab_size, std::int64_t retained);

    std::int64_t vocab_size() const { return vocab_size_; }
    std::int64_t retained() const { return retained_; }
    std::int64_t size() const { return vocab_size_ - retained_; }
    bool empty() const { return size() == 0; }
    bool contains(std::int64_t id) const { return id >= retained_ && id < vocab_size_; }

private:
    std::int64_t vocab_size_;
    std::int64_t retained_;
};

// Checks alphabet_floor <= v_prime <= vocab_size. `vocab_size` defaults to the
// tokenizer size; a model may carry padding rows beyond it.
RareTokenSet rare_set(const BpeTokenizer& tok, std::int64_t v_prime, std::optional<std::int64_t> vocab_size = {});

// Drops ids in S, every merge producing one, and every merge consuming one.
BpeTokenizer prune_tokenizer(const BpeTokenizer& tok, const RareTokenSet& rare);

struct ChurnStats {
    std::string name;
    std::int64_t words = 0;
    std::int64_t changed_words = 0;
    std::int64_t tokens_original = 0;
    std::int64_t tokens_pruned = 0;

    double changed_fraction() const { return words ? static_cast<double>(changed_words) / words : 0.0; }
    double inflation() const {
        return tokens_original ? static_cast<double>(tokens_pruned) / tokens_original : 1.0;
    }
    nlohmann::json to_json() const;
};

struct ChurnReport {
    std::vector<ChurnStats> sources;
    ChurnStats overall;
    nlohmann::json to_json() const;
};

struct CorpusSource {
    std::string name;
    std::vector<std::string> documents;
};

ChurnReport retok_stats(const BpeTokenizer& original, const BpeTokenizer& pruned,
                        std::span<const CorpusSource> corpus);

}  // namespace compact
