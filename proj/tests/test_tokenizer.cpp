#include <algorithm>
#include <fstream>

#include "compact/error.hpp"
#include "compact/synth.hpp"
#include "compact/tokenizer.hpp"
#include "doctest.h"
#include "support/helpers.hpp"
#include "support/reference.hpp"

using namespace compact;

namespace {

BpeTokenizer abc_tokenizer() { return BpeTokenizer({"a", "b", "c", "ab", "abc"}, {{"a", "b"}, {"ab", "c"}}); }

nlohmann::json abc_json() {
    return {{"vocab", {{"a", 0}, {"b", 1}, {"c", 2}, {"ab", 3}, {"abc", 4}}}, {"merges", {"a b", "ab c"}}};
}

std::string random_bytes(synth::Rng& rng, std::size_t max_len) {
    std::string s(rng.below(max_len + 1), '\0');
    for (auto& ch : s) ch = static_cast<char>(rng.below(256));
    return s;
}

}  // namespace

TEST_CASE("abc tokenizer loads with five tokens and two merges") {
    const BpeTokenizer tok = tokenizer_from_json(abc_json());
    CHECK(tok.size() == 5);
    CHECK(tok.merges().size() == 2);
    CHECK(tok == abc_tokenizer());
}

TEST_CASE("abc tokenizer with a missing merge output is rejected") {
    auto j = abc_json();
    j["vocab"].erase("abc");
    CHECK(testing::throws_with([&] { tokenizer_from_json(j); }, "tokenizer:"));
}

TEST_CASE("abc tokenizer with a gap in the ids is rejected") {
    auto j = abc_json();
    j["vocab"]["abc"] = 5;
    CHECK(testing::throws_with([&] { tokenizer_from_json(j); }, "non-dense ids"));
}

TEST_CASE("merge referencing an unknown operand is rejected") {
    CHECK_THROWS_AS(BpeTokenizer({"a", "b", "ab"}, {{"a", "x"}}), Error);
}

TEST_CASE("rare set is an id suffix bounded by the alphabet") {
    const BpeTokenizer tok = abc_tokenizer();
    CHECK(tok.alphabet_floor() == 3);
    const RareTokenSet s4 = rare_set(tok, 4);
    CHECK(s4.size() == 1);
    CHECK(s4.contains(4));
    CHECK_FALSE(s4.contains(3));
    CHECK(rare_set(tok, 5).empty());
    CHECK_THROWS_AS(rare_set(tok, 2), Error);
    CHECK_THROWS_AS(rare_set(tok, 6), Error);
}

TEST_CASE("special tokens raise the floor") {
    const BpeTokenizer tok({"a", "b", "ab", "<eos>", "abab"}, {{"a", "b"}, {"ab", "ab"}}, {3});
    CHECK(tok.alphabet_floor() == 4);
    CHECK_THROWS_AS(rare_set(tok, 3), Error);
    CHECK(rare_set(tok, 4).size() == 1);
}

TEST_CASE("pruning the abc tokenizer") {
    const BpeTokenizer tok = abc_tokenizer();
    const BpeTokenizer p = prune_tokenizer(tok, rare_set(tok, 4));
    CHECK(p.vocab() == std::vector<std::string>{"a", "b", "c", "ab"});
    REQUIRE(p.merges().size() == 1);
    CHECK(p.merges()[0] == BpeTokenizer::Merge{"a", "b"});
    CHECK(prune_tokenizer(tok, rare_set(tok, 5)) == tok);
}

TEST_CASE("operand cascade removes dependent merges") {
    const BpeTokenizer tok({"a", "b", "ab", "aba"}, {{"a", "b"}, {"ab", "a"}});
    const BpeTokenizer p = prune_tokenizer(tok, RareTokenSet(4, 2));
    CHECK(p.merges().empty());
    CHECK(p.size() == 2);
    // Output retained, operand deleted.
    const BpeTokenizer tok2({"a", "b", "abb", "bb"}, {{"b", "b"}, {"a", "bb"}});
    const BpeTokenizer p2 = prune_tokenizer(tok2, RareTokenSet(4, 3));
    CHECK(p2.merges().empty());
    CHECK(p2.encode("abb") == std::vector<TokenId>{0, 1, 1});
}

TEST_CASE("encoding the abc tokenizer and its pruned form") {
    const BpeTokenizer tok = abc_tokenizer();
    CHECK(tok.encode("abc") == std::vector<TokenId>{4});
    CHECK(ref::bpe_encode(tok, "abc") == std::vector<TokenId>{4});
    const BpeTokenizer p = prune_tokenizer(tok, rare_set(tok, 4));
    CHECK(p.encode("abc") == std::vector<TokenId>{3, 2});
    CHECK(ref::bpe_encode(p, "abc") == std::vector<TokenId>{3, 2});
    CHECK(tok.encode("").empty());
    CHECK(p.encode("").empty());
}

TEST_CASE("bytes outside the alphabet are reported") {
    CHECK_THROWS_AS(abc_tokenizer().encode("abd"), Error);
}

TEST_CASE("pretokenization attaches one whitespace byte to the next word") {
    const auto words = pretokenize("hello  world\tx\n");
    const std::vector<std::string> expect{"hello", " ", " world", "\tx", "\n"};
    REQUIRE(words.size() == expect.size());
    for (std::size_t i = 0; i < words.size(); ++i) CHECK(std::string(words[i]) == expect[i]);
    CHECK(pretokenize("").empty());
    CHECK(std::string(pretokenize(" a")[0]) == " a");
}

TEST_CASE("byte-level unicode mapping round-trips every byte") {
    std::string all;
    for (int b = 0; b < 256; ++b) all.push_back(static_cast<char>(b));
    CHECK(unicode_to_bytes(bytes_to_unicode(all)) == all);
    CHECK(bytes_to_unicode(" ") == "\xc4\xa0");
    CHECK(bytes_to_unicode("a") == "a");
}

TEST_CASE("tokenizer file round-trips") {
    testing::TempDir dir;
    const BpeTokenizer tok = synth::tiny_tokenizer();
    save_tokenizer(tok, dir / "tok.json");
    CHECK(load_tokenizer(dir / "tok.json") == tok);
}

TEST_CASE("churn on the abc tokenizer") {
    const BpeTokenizer tok = abc_tokenizer();
    const BpeTokenizer p = prune_tokenizer(tok, rare_set(tok, 4));
    const std::vector<CorpusSource> corpus{{"words", {"abc", "ab", "a"}}};
    const ChurnReport r = retok_stats(tok, p, corpus);
    CHECK(r.overall.words == 3);
    CHECK(r.overall.changed_fraction() == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
    CHECK(r.overall.inflation() == doctest::Approx(4.0 / 3.0).epsilon(1e-12));

    const ChurnReport same = retok_stats(tok, tok, corpus);
    CHECK(same.overall.changed_fraction() == 0.0);
    CHECK(same.overall.inflation() == 1.0);

    const std::vector<CorpusSource> empty{{"none", {}}};
    CHECK(testing::throws_with([&] { retok_stats(tok, p, empty); }, "empty corpus"));
}

TEST_CASE("trained tokenizer agrees with the reference BPE and round-trips") {
    const auto docs = synth::zipf_corpus(200, 3);
    const BpeTokenizer tok = synth::train_bpe(docs, 300, {"<|endoftext|>"});
    REQUIRE(tok.covers_all_bytes());
    CHECK(tok.alphabet_floor() == 257);
    synth::Rng rng(5);
    for (std::size_t i = 0; i < 40; ++i) {
        CHECK(tok.encode(docs[i]) == ref::bpe_encode(tok, docs[i]));
        const auto bytes = random_bytes(rng, 40);
        const auto ids = tok.encode(bytes);
        CHECK(tok.decode(ids) == bytes);
        CHECK(ids == ref::bpe_encode(tok, bytes));
    }
}

TEST_CASE("pruned tokenizers stay closed, in range and prefix-stable") {
    const auto docs = synth::zipf_corpus(200, 4);
    const BpeTokenizer tok = synth::train_bpe(docs, 300);
    synth::Rng rng(9);
    for (std::int64_t v_prime : {256, 300, 400, 556}) {
        const BpeTokenizer p = prune_tokenizer(tok, rare_set(tok, v_prime));
        CHECK(p.size() == static_cast<std::size_t>(v_prime));
        CHECK(tokenizer_from_json(tokenizer_to_json(p)) == p);
        for (std::size_t i = 0; i < 50; ++i) {
            const std::string text = i % 2 ? docs[i] : random_bytes(rng, 30);
            const auto ids = p.encode(text);
            CHECK(std::all_of(ids.begin(), ids.end(), [&](TokenId id) { return id < v_prime; }));
            CHECK(p.decode(ids) == text);
            const auto orig = tok.encode(text);
            if (std::all_of(orig.begin(), orig.end(), [&](TokenId id) { return id < v_prime; })) {
                CHECK(orig == ids);
            }
        }
    }
}

TEST_CASE("churn does not increase with the retained size") {
    const auto docs = synth::zipf_corpus(300, 6);
    const BpeTokenizer tok = synth::train_bpe(docs, 400);
    const std::vector<CorpusSource> corpus{{"zipf", std::vector<std::string>(docs.begin(), docs.begin() + 100)}};
    double previous = 1.0;
    for (std::int64_t v_prime = 256; v_prime <= static_cast<std::int64_t>(tok.size()); v_prime += 50) {
        const auto r = retok_stats(tok, prune_tokenizer(tok, rare_set(tok, v_prime)), corpus);
        CHECK(r.overall.changed_fraction() <= previous);
        previous = r.overall.changed_fraction();
    }
}
