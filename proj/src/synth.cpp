#include "compact/synth.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>

#include "compact/corpus.hpp"
#include "compact/error.hpp"

namespace compact::synth {

std::uint64_t Rng::below(std::uint64_t n) {
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t x;
    do {
        x = engine_();
    } while (x >= limit);
    return x % n;
}

ModelConfig tiny_config(bool tied) {
    ModelConfig c;
    c.vocab_size = 10;
    c.hidden_size = 4;
    c.intermediate_size = 6;
    c.num_layers = 2;
    c.num_heads = 2;
    c.num_kv_heads = 1;
    c.head_dim = 2;
    c.tied = tied;
    c.norm_eps = 1e-6;
    c.rope_theta = 10000.0;
    return c;
}

BpeTokenizer tiny_tokenizer() {
    std::vector<std::string> vocab = {"a", "b", "c", " ", " a", "ab", " ab", "abc", " abc", "ca"};
    std::vector<BpeTokenizer::Merge> merges = {
        {" ", "a"}, {"a", "b"}, {" a", "b"}, {"ab", "c"}, {" ab", "c"}, {"c", "a"},
    };
    return BpeTokenizer(std::move(vocab), std::move(merges));
}

std::vector<std::string> tiny_corpus(std::size_t n_docs, std::uint64_t seed) {
    Rng rng(seed);
    static const char* const kWords[] = {"a", "b", "c", "ab", "abc", "ba", "cab", "bca", "cc", "abcab", "aab", "bb"};
    constexpr std::size_t kNumWords = sizeof(kWords) / sizeof(kWords[0]);
    const BpeTokenizer tok = tiny_tokenizer();
    std::vector<std::string> docs;
    docs.reserve(n_docs);
    while (docs.size() < n_docs) {
        const std::size_t n_words = 6 + rng.below(14);
        std::string doc;
        for (std::size_t w = 0; w < n_words; ++w) {
            if (w) doc += ' ';
            // Skew toward the first entries so frequency is uneven.
            const double u = rng.uniform();
            doc += kWords[static_cast<std::size_t>(u * u * kNumWords)];
        }
        if (static_cast<std::int64_t>(tok.encode(doc).size()) >= kMinDocumentTokens) {
            docs.push_back(std::move(doc));
        }
    }
    return docs;
}

WeightMap random_weights(const ModelConfig& config, std::uint64_t seed) {
    config.validate();
    Rng rng(seed);
    WeightMap w;
    for (const auto& [name, shape] : expected_shapes(config)) {
        const auto n = static_cast<std::size_t>(shape_numel(shape));
        std::vector<float> values(n);
        const bool is_norm = name.find("norm") != std::string::npos;
        const bool is_bias = name.size() > 5 && name.compare(name.size() - 5, 5, ".bias") == 0;
        const bool is_table = name == names::embedding() || name == names::lm_head();
        const double fan_in = shape.size() == 2 ? static_cast<double>(shape[1]) : 1.0;
        const double scale = 1.5 / std::sqrt(fan_in);
        for (auto& v : values) {
            if (is_norm) {
                v = static_cast<float>(rng.uniform(0.8, 1.2));
            } else if (is_bias) {
                v = static_cast<float>(rng.uniform(-0.1, 0.1));
            } else if (is_table) {
                v = static_cast<float>(rng.uniform(-1.0, 1.0));
            } else {
                v = static_cast<float>(rng.uniform(-scale, scale));
            }
        }
        w.insert(TensorView::from_floats(name, shape, values));
    }
    return w;
}

std::vector<std::string> zipf_corpus(std::size_t n_docs, std::uint64_t seed) {
    Rng rng(seed);
    static const char* const kSyllables[] = {"ka", "to", "ri", "an", "el", "mo", "su", "ne", "li", "or",
                                             "pa", "th", "in", "ve", "qu", "is", "da", "ex", "un", "yo"};
    constexpr std::size_t kNumSyl = sizeof(kSyllables) / sizeof(kSyllables[0]);
    // Fixed lexicon; position is frequency rank.
    Rng lex_rng(0x5eed);
    std::vector<std::string> lexicon;
    for (std::size_t i = 0; i < 600; ++i) {
        std::string word;
        const std::size_t n_syl = 1 + lex_rng.below(i < 50 ? 2 : 4);
        for (std::size_t s = 0; s < n_syl; ++s) word += kSyllables[lex_rng.below(kNumSyl)];
        if (lex_rng.below(10) == 0) word[0] = static_cast<char>(word[0] - 'a' + 'A');
        lexicon.push_back(std::move(word));
    }
    std::vector<double> cdf(lexicon.size());
    double total = 0.0;
    for (std::size_t i = 0; i < lexicon.size(); ++i) cdf[i] = (total += 1.0 / static_cast<double>(i + 1));
    for (auto& x : cdf) x /= total;

    std::vector<std::string> docs;
    for (std::size_t d = 0; d < n_docs; ++d) {
        const std::size_t n_words = 8 + rng.below(40);
        std::string doc;
        for (std::size_t w = 0; w < n_words; ++w) {
            if (w) doc += rng.below(25) == 0 ? ", " : " ";
            const auto it = std::lower_bound(cdf.begin(), cdf.end(), rng.uniform());
            doc += lexicon[std::min<std::size_t>(static_cast<std::size_t>(it - cdf.begin()), lexicon.size() - 1)];
        }
        doc += '.';
        docs.push_back(std::move(doc));
    }
    return docs;
}

BpeTokenizer train_bpe(const std::vector<std::string>& documents, std::size_t n_merges,
                       const std::vector<std::string>& specials) {
    std::vector<std::string> vocab;
    for (int b = 0; b < 256; ++b) vocab.emplace_back(1, static_cast<char>(b));
    std::vector<TokenId> special_ids;
    for (const auto& s : specials) {
        special_ids.push_back(static_cast<TokenId>(vocab.size()));
        vocab.push_back(s);
    }

    // word -> (symbols, count)
    std::map<std::string, std::pair<std::vector<std::string>, std::int64_t>> words;
    for (const auto& doc : documents) {
        for (auto w : pretokenize(doc)) {
            auto& entry = words[std::string(w)];
            if (entry.first.empty()) {
                for (char c : w) entry.first.emplace_back(1, c);
            }
            ++entry.second;
        }
    }

    std::vector<BpeTokenizer::Merge> merges;
    std::map<std::string, bool> known;
    for (const auto& v : vocab) known[v] = true;
    while (merges.size() < n_merges) {
        std::map<std::pair<std::string, std::string>, std::int64_t> counts;
        for (const auto& [_, entry] : words) {
            const auto& sym = entry.first;
            for (std::size_t i = 0; i + 1 < sym.size(); ++i) counts[{sym[i], sym[i + 1]}] += entry.second;
        }
        const std::pair<std::string, std::string>* best = nullptr;
        std::int64_t best_count = 0;
        for (const auto& [pair, count] : counts) {
            if (count > best_count && !known.count(pair.first + pair.second)) {
                best = &pair;
                best_count = count;
            }
        }
        if (!best) break;
        const auto merge = *best;
        merges.push_back(merge);
        const std::string joined = merge.first + merge.second;
        vocab.push_back(joined);
        known[joined] = true;
        for (auto& [_, entry] : words) {
            auto& sym = entry.first;
            std::vector<std::string> next;
            for (std::size_t i = 0; i < sym.size();) {
                if (i + 1 < sym.size() && sym[i] == merge.first && sym[i + 1] == merge.second) {
                    next.push_back(joined);
                    i += 2;
                } else {
                    next.push_back(sym[i++]);
                }
            }
            sym.swap(next);
        }
    }
    return BpeTokenizer(std::move(vocab), std::move(merges), std::move(special_ids));
}

void write_tiny_model(const std::filesystem::path& dir, std::uint64_t seed, std::size_t n_docs) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw Error(ErrorKind::Io, "cannot create '" + dir.string() + "': " + ec.message());
    const ModelConfig config = tiny_config();
    save_container(random_weights(config, seed), dir / "model.safetensors");
    save_config(config, dir / "config.json");
    save_tokenizer(tiny_tokenizer(), dir / "tokenizer.json");
    std::ofstream out(dir / "corpus.txt", std::ios::trunc);
    for (const auto& doc : tiny_corpus(n_docs, seed + 1)) out << doc << '\n';
    if (!out) throw Error(ErrorKind::Io, "cannot write corpus into '" + dir.string() + "'");
}

}  // namespace compact::synth
