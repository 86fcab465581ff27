#include "compact/tokenizer.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <limits>

#include "compact/error.hpp"

namespace compact {

namespace {

Error invalid(const std::string& msg) { return Error(ErrorKind::Validation, "tokenizer: " + msg); }

bool is_space(unsigned char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\v' || c == '\f'; }

// GPT-2 byte -> code point table.
const std::array<char32_t, 256>& byte_encoder() {
    static const std::array<char32_t, 256> table = [] {
        std::array<char32_t, 256> t{};
        std::array<bool, 256> printable{};
        for (int b = '!'; b <= '~'; ++b) printable[b] = true;
        for (int b = 0xA1; b <= 0xAC; ++b) printable[b] = true;
        for (int b = 0xAE; b <= 0xFF; ++b) printable[b] = true;
        char32_t next = 256;
        for (int b = 0; b < 256; ++b) t[b] = printable[b] ? static_cast<char32_t>(b) : next++;
        return t;
    }();
    return table;
}

const std::unordered_map<char32_t, std::uint8_t>& byte_decoder() {
    static const std::unordered_map<char32_t, std::uint8_t> table = [] {
        std::unordered_map<char32_t, std::uint8_t> t;
        const auto& enc = byte_encoder();
        for (int b = 0; b < 256; ++b) t[enc[b]] = static_cast<std::uint8_t>(b);
        return t;
    }();
    return table;
}

void append_utf8(std::string& out, char32_t cp) {
    if (cp < 0x80) {
        out.push_back(static_cast<char>(cp));
    } else if (cp < 0x800) {
        out.push_back(static_cast<char>(0xC0 | (cp >> 6)));
        out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    } else {
        out.push_back(static_cast<char>(0xE0 | (cp >> 12)));
        out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
        out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    }
}

}  // namespace

// ---------------------------------------------------------------------------
// Text helpers

std::string bytes_to_unicode(std::string_view bytes) {
    std::string out;
    out.reserve(bytes.size() * 2);
    const auto& enc = byte_encoder();
    for (unsigned char c : bytes) append_utf8(out, enc[c]);
    return out;
}

std::string unicode_to_bytes(std::string_view text) {
    std::string out;
    out.reserve(text.size());
    const auto& dec = byte_decoder();
    for (std::size_t i = 0; i < text.size();) {
        const auto c = static_cast<unsigned char>(text[i]);
        char32_t cp;
        std::size_t len;
        if (c < 0x80) {
            cp = c, len = 1;
        } else if ((c & 0xE0) == 0xC0) {
            cp = c & 0x1F, len = 2;
        } else if ((c & 0xF0) == 0xE0) {
            cp = c & 0x0F, len = 3;
        } else {
            throw Error(ErrorKind::Format, "tokenizer: token string is not byte-level encoded");
        }
        if (i + len > text.size()) throw Error(ErrorKind::Format, "tokenizer: truncated UTF-8 in token string");
        for (std::size_t k = 1; k < len; ++k) cp = (cp << 6) | (static_cast<unsigned char>(text[i + k]) & 0x3F);
        auto it = dec.find(cp);
        if (it == dec.end()) throw Error(ErrorKind::Format, "tokenizer: code point outside the byte-level alphabet");
        out.push_back(static_cast<char>(it->second));
        i += len;
    }
    return out;
}

std::vector<std::string_view> pretokenize(std::string_view text) {
    std::vector<std::string_view> words;
    const std::size_t n = text.size();
    std::size_t i = 0;
    while (i < n) {
        if (is_space(static_cast<unsigned char>(text[i]))) {
            std::size_t j = i;
            while (j < n && is_space(static_cast<unsigned char>(text[j]))) ++j;
            if (j == n) {
                words.push_back(text.substr(i, j - i));
                break;
            }
            // The last whitespace byte of the run prefixes the next word.
            if (j - 1 > i) words.push_back(text.substr(i, j - 1 - i));
            i = j - 1;
        }
        std::size_t j = i + 1;
        while (j < n && !is_space(static_cast<unsigned char>(text[j]))) ++j;
        words.push_back(text.substr(i, j - i));
        i = j;
    }
    return words;
}

// ---------------------------------------------------------------------------
// BpeTokenizer

BpeTokenizer::BpeTokenizer(std::vector<std::string> vocab, std::vector<Merge> merges,
                           std::vector<TokenId> special_tokens)
    : vocab_(std::move(vocab)), merges_(std::move(merges)), specials_(std::move(special_tokens)) {
    if (vocab_.empty()) throw invalid("empty vocabulary");
    if (vocab_.size() > static_cast<std::size_t>(std::numeric_limits<TokenId>::max())) {
        throw invalid("vocabulary too large");
    }
    byte_ids_.fill(-1);
    ids_.reserve(vocab_.size());
    for (std::size_t id = 0; id < vocab_.size(); ++id) {
        const auto& tok = vocab_[id];
        if (tok.empty()) throw invalid("token " + std::to_string(id) + " is empty");
        if (!ids_.emplace(tok, static_cast<TokenId>(id)).second) {
            throw invalid("duplicate token string at id " + std::to_string(id));
        }
        if (tok.size() == 1) byte_ids_[static_cast<unsigned char>(tok[0])] = static_cast<TokenId>(id);
    }
    rules_.reserve(merges_.size());
    for (std::size_t r = 0; r < merges_.size(); ++r) {
        const auto& [left, right] = merges_[r];
        auto l = ids_.find(left), rt = ids_.find(right);
        if (l == ids_.end() || rt == ids_.end()) {
            throw invalid("merge " + std::to_string(r) + " references an unknown token");
        }
        auto out = ids_.find(left + right);
        if (out == ids_.end()) throw invalid("output of merge " + std::to_string(r) + " is missing from the vocabulary");
        rules_.emplace(pair_key(l->second, rt->second), MergeRule{static_cast<std::int32_t>(r), out->second});
    }
    for (auto s : specials_) {
        if (s < 0 || static_cast<std::size_t>(s) >= vocab_.size()) {
            throw invalid("special token id " + std::to_string(s) + " out of range");
        }
    }
}

const std::string& BpeTokenizer::token(TokenId id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= vocab_.size()) {
        throw Error(ErrorKind::InvalidArgument, "token id " + std::to_string(id) + " out of range");
    }
    return vocab_[static_cast<std::size_t>(id)];
}

std::optional<TokenId> BpeTokenizer::find(std::string_view bytes) const {
    auto it = ids_.find(std::string(bytes));
    if (it == ids_.end()) return std::nullopt;
    return it->second;
}

std::int64_t BpeTokenizer::alphabet_floor() const {
    std::int64_t floor = 1;
    for (auto id : byte_ids_) floor = std::max<std::int64_t>(floor, id + 1);
    for (auto id : specials_) floor = std::max<std::int64_t>(floor, id + 1);
    return floor;
}

bool BpeTokenizer::covers_all_bytes() const {
    return std::all_of(byte_ids_.begin(), byte_ids_.end(), [](TokenId id) { return id >= 0; });
}

std::vector<TokenId> BpeTokenizer::encode_word(std::string_view word) const {
    std::vector<TokenId> symbols;
    symbols.reserve(word.size());
    for (unsigned char c : word) {
        const TokenId id = byte_ids_[c];
        if (id < 0) {
            char hex[8];
            std::snprintf(hex, sizeof hex, "0x%02x", c);
            throw Error(ErrorKind::InvalidArgument,
                        std::string("byte ") + hex + " is not covered by the tokenizer alphabet");
        }
        symbols.push_back(id);
    }
    std::vector<TokenId> next;
    while (symbols.size() > 1) {
        const MergeRule* best = nullptr;
        std::uint64_t best_key = 0;
        for (std::size_t i = 0; i + 1 < symbols.size(); ++i) {
            const auto key = pair_key(symbols[i], symbols[i + 1]);
            auto it = rules_.find(key);
            if (it != rules_.end() && (!best || it->second.rank < best->rank)) {
                best = &it->second;
                best_key = key;
            }
        }
        if (!best) break;
        next.clear();
        for (std::size_t i = 0; i < symbols.size();) {
            if (i + 1 < symbols.size() && pair_key(symbols[i], symbols[i + 1]) == best_key) {
                next.push_back(best->output);
                i += 2;
            } else {
                next.push_back(symbols[i]);
                ++i;
            }
        }
        symbols.swap(next);
    }
    return symbols;
}

std::vector<TokenId> BpeTokenizer::encode(std::string_view text) const {
    std::vector<TokenId> ids;
    for (auto word : pretokenize(text)) {
        auto w = encode_word(word);
        ids.insert(ids.end(), w.begin(), w.end());
    }
    return ids;
}

std::string BpeTokenizer::decode(std::span<const TokenId> ids) const {
    std::string out;
    for (auto id : ids) out += token(id);
    return out;
}

// ---------------------------------------------------------------------------
// File format

BpeTokenizer tokenizer_from_json(const nlohmann::json& j) {
    try {
        const auto& vocab_obj = j.at("vocab");
        if (!vocab_obj.is_object()) throw Error(ErrorKind::Format, "tokenizer: \"vocab\" must be an object");
        const std::size_t n = vocab_obj.size();
        std::vector<std::string> vocab(n);
        std::vector<bool> seen(n, false);
        for (const auto& [text, idv] : vocab_obj.items()) {
            const auto id = idv.get<std::int64_t>();
            if (id < 0 || static_cast<std::size_t>(id) >= n || seen[static_cast<std::size_t>(id)]) {
                throw invalid("non-dense ids");
            }
            seen[static_cast<std::size_t>(id)] = true;
            vocab[static_cast<std::size_t>(id)] = unicode_to_bytes(text);
        }

        std::vector<BpeTokenizer::Merge> merges;
        if (j.contains("merges")) {
            for (const auto& m : j.at("merges")) {
                if (m.is_string()) {
                    const auto s = m.get<std::string>();
                    const auto sp = s.find(' ');
                    if (sp == std::string::npos || s.find(' ', sp + 1) != std::string::npos) {
                        throw Error(ErrorKind::Format, "tokenizer: malformed merge '" + s + "'");
                    }
                    merges.emplace_back(unicode_to_bytes(s.substr(0, sp)), unicode_to_bytes(s.substr(sp + 1)));
                } else if (m.is_array() && m.size() == 2) {
                    merges.emplace_back(unicode_to_bytes(m[0].get<std::string>()),
                                        unicode_to_bytes(m[1].get<std::string>()));
                } else {
                    throw Error(ErrorKind::Format, "tokenizer: merges must be strings or pairs");
                }
            }
        }

        std::vector<TokenId> specials;
        if (j.contains("special_tokens")) {
            for (const auto& s : j.at("special_tokens")) specials.push_back(s.get<TokenId>());
        }
        return BpeTokenizer(std::move(vocab), std::move(merges), std::move(specials));
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorKind::Format, std::string("tokenizer: ") + e.what());
    }
}

nlohmann::json tokenizer_to_json(const BpeTokenizer& tok) {
    nlohmann::json vocab = nlohmann::json::object();
    for (std::size_t id = 0; id < tok.size(); ++id) vocab[bytes_to_unicode(tok.vocab()[id])] = id;
    nlohmann::json merges = nlohmann::json::array();
    for (const auto& [l, r] : tok.merges()) merges.push_back(bytes_to_unicode(l) + " " + bytes_to_unicode(r));
    return {{"vocab", vocab}, {"merges", merges}, {"special_tokens", tok.special_tokens()}};
}

BpeTokenizer load_tokenizer(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorKind::Io, "cannot open '" + path.string() + "'");
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorKind::Format, "'" + path.string() + "': " + e.what());
    }
    return tokenizer_from_json(j);
}

void save_tokenizer(const BpeTokenizer& tok, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw Error(ErrorKind::Io, "cannot open '" + path.string() + "' for writing");
    out << tokenizer_to_json(tok).dump() << '\n';
    if (!out) throw Error(ErrorKind::Io, "write to '" + path.string() + "' failed");
}

// ---------------------------------------------------------------------------
// Rare-token pruning

RareTokenSet::RareTokenSet(std::int64_t vocab_size, std::int64_t retained)
    : vocab_size_(vocab_size), retained_(retained) {
    if (retained < 1 || retained > vocab_size) {
        throw Error(ErrorKind::InvalidArgument, "retained vocabulary size " + std::to_string(retained) +
                                                    " outside [1, " + std::to_string(vocab_size) + "]");
    }
}

RareTokenSet rare_set(const BpeTokenizer& tok, std::int64_t v_prime, std::optional<std::int64_t> vocab_size) {
    const std::int64_t V = vocab_size.value_or(static_cast<std::int64_t>(tok.size()));
    if (V < static_cast<std::int64_t>(tok.size())) {
        throw Error(ErrorKind::InvalidArgument, "model vocabulary is smaller than the tokenizer's");
    }
    if (v_prime > V) {
        throw Error(ErrorKind::InvalidArgument,
                    "V' = " + std::to_string(v_prime) + " exceeds vocabulary size " + std::to_string(V));
    }
    const std::int64_t floor = tok.alphabet_floor();
    if (v_prime < floor) {
        throw Error(ErrorKind::InvalidArgument, "V' = " + std::to_string(v_prime) +
                                                    " would delete single-byte or special tokens (minimum " +
                                                    std::to_string(floor) + ")");
    }
    return RareTokenSet(V, v_prime);
}

BpeTokenizer prune_tokenizer(const BpeTokenizer& tok, const RareTokenSet& rare) {
    const auto keep = rare.retained();
    if (keep >= static_cast<std::int64_t>(tok.size())) return tok;
    if (keep < tok.alphabet_floor()) {
        throw Error(ErrorKind::InvalidArgument, "rare set would delete single-byte or special tokens");
    }
    std::vector<std::string> vocab(tok.vocab().begin(), tok.vocab().begin() + keep);
    auto retained = [&](const std::string& s) {
        auto id = tok.find(s);
        return id && *id < keep;
    };
    std::vector<BpeTokenizer::Merge> merges;
    for (const auto& m : tok.merges()) {
        if (retained(m.first + m.second) && retained(m.first) && retained(m.second)) merges.push_back(m);
    }
    return BpeTokenizer(std::move(vocab), std::move(merges), tok.special_tokens());
}

// ---------------------------------------------------------------------------
// Churn

nlohmann::json ChurnStats::to_json() const {
    return {{"name", name},
            {"words", words},
            {"changed_words", changed_words},
            {"changed_fraction", changed_fraction()},
            {"tokens_original", tokens_original},
            {"tokens_pruned", tokens_pruned},
            {"inflation", inflation()}};
}

nlohmann::json ChurnReport::to_json() const {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& s : sources) arr.push_back(s.to_json());
    return {{"sources", arr}, {"overall", overall.to_json()}};
}

ChurnReport retok_stats(const BpeTokenizer& original, const BpeTokenizer& pruned,
                        std::span<const CorpusSource> corpus) {
    if (pruned.size() > original.size() ||
        !std::equal(pruned.vocab().begin(), pruned.vocab().end(), original.vocab().begin())) {
        throw Error(ErrorKind::InvalidArgument, "retok-stats: pruned tokenizer is not a prefix of the original");
    }
    ChurnReport report;
    report.overall.name = "overall";
    for (const auto& src : corpus) {
        ChurnStats s;
        s.name = src.name;
        for (const auto& doc : src.documents) {
            for (auto word : pretokenize(doc)) {
                const auto a = original.encode_word(word);
                const auto b = pruned.encode_word(word);
                ++s.words;
                if (a != b) ++s.changed_words;
                s.tokens_original += static_cast<std::int64_t>(a.size());
                s.tokens_pruned += static_cast<std::int64_t>(b.size());
            }
        }
        report.overall.words += s.words;
        report.overall.changed_words += s.changed_words;
        report.overall.tokens_original += s.tokens_original;
        report.overall.tokens_pruned += s.tokens_pruned;
        report.sources.push_back(std::move(s));
    }
    if (report.overall.words == 0) throw Error(ErrorKind::InvalidArgument, "retok-stats: empty corpus");
    return report;
}

}  // namespace compact
