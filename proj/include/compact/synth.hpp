#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "compact/tensorstore.hpp"
#include "compact/tokenizer.hpp"

namespace compact::synth {

// Portable seeded draws (the std distributions are implementation-defined).
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    std::uint64_t below(std::uint64_t n);
    std::uint64_t next() { return engine_(); }

private:
    std::mt19937_64 engine_;
};

// The tiny test model: V=10, D=4, I=6, L=2, 2 query heads sharing 1 KV head.
ModelConfig tiny_config(bool tied = false);

// Ten tokens over the alphabet {a, b, c, space}: single bytes at ids 0-3, then
// merge outputs in merge order. "ca" (8) and " abc" (9) are the rarest.
BpeTokenizer tiny_tokenizer();

// Documents of space-separated words over {a, b, c}; each encodes to at least
// kMinDocumentTokens tokens under tiny_tokenizer().
std::vector<std::string> tiny_corpus(std::size_t n_docs, std::uint64_t seed);

// Seeded weights for every tensor the config implies.
WeightMap random_weights(const ModelConfig& config, std::uint64_t seed);

// Text whose word frequencies follow a Zipf law over a fixed pseudo-word
// lexicon, with occasional punctuation and newlines.
std::vector<std::string> zipf_corpus(std::size_t n_docs, std::uint64_t seed);

// Byte-level BPE trained greedily on `documents`: 256 byte tokens, then the
// specials, then one token per merge (most frequent pair first).
BpeTokenizer train_bpe(const std::vector<std::string>& documents, std::size_t n_merges,
                       const std::vector<std::string>& specials = {});

// Writes model.safetensors, config.json, tokenizer.json and corpus.txt for the
// tiny model into `dir`.
void write_tiny_model(const std::filesystem::path& dir, std::uint64_t seed, std::size_t n_docs = 256);

}  // namespace compact::synth
