#include <cmath>
#include <cstring>
#include <limits>

#include "compact/error.hpp"
#include "compact/forward.hpp"
#include "compact/synth.hpp"
#include "doctest.h"
#include "support/reference.hpp"

using namespace compact;

namespace {

std::vector<TokenId> random_ids(synth::Rng& rng, std::size_t len, std::int64_t below) {
    std::vector<TokenId> ids(len);
    for (auto& id : ids) id = static_cast<TokenId>(rng.below(static_cast<std::uint64_t>(below)));
    return ids;
}

double max_abs(const Matrix& m, const std::vector<std::vector<double>>& r) {
    double worst = 0.0;
    for (std::int64_t i = 0; i < m.rows; ++i) {
        for (std::int64_t j = 0; j < m.cols; ++j) {
            worst = std::max(worst, std::fabs(m.at(i, j) - r[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)]));
        }
    }
    return worst;
}

double rel(double a, double b) {
    const double s = std::max(std::fabs(a), std::fabs(b));
    return s == 0.0 ? 0.0 : std::fabs(a - b) / s;
}

}  // namespace

TEST_CASE("silu") {
    CHECK(silu(0.0f) == 0.0f);
    CHECK(std::fabs(silu(1.0f) - 0.731059f) <= 1e-6f);
    CHECK(std::fabs(silu(-1.0f) + 0.268941f) <= 1e-6f);
}

TEST_CASE("logits match the straight-line reference") {
    for (bool tied : {false, true}) {
        const ModelConfig c = synth::tiny_config(tied);
        const WeightMap w = synth::random_weights(c, 42);
        const std::vector<TokenId> ids{1, 2, 3};
        const Matrix m = forward_logits(w, c, ids);
        CHECK(m.rows == 3);
        CHECK(m.cols == 10);
        CHECK(max_abs(m, ref::logits(w, c, ids)) <= 1e-5);
    }
}

TEST_CASE("logits match the reference with biases and longer sequences") {
    ModelConfig c = synth::tiny_config();
    c.attention_bias = true;
    c.num_heads = 4;
    c.num_kv_heads = 2;
    c.head_dim = 2;
    c.hidden_size = 8;
    c.intermediate_size = 12;
    synth::Rng rng(1);
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        const WeightMap w = synth::random_weights(c, seed);
        const auto ids = random_ids(rng, 16, c.vocab_size);
        CHECK(max_abs(forward_logits(w, c, ids), ref::logits(w, c, ids)) <= 1e-5);
    }
}

TEST_CASE("activations match the reference") {
    const ModelConfig c = synth::tiny_config();
    const WeightMap w = synth::random_weights(c, 8);
    const std::vector<TokenId> ids{0, 5, 9, 3, 3};
    const auto acts = forward_activations(w, c, ids);
    const auto r = ref::activations(w, c, ids);
    REQUIRE(acts.size() == 2);
    for (std::size_t l = 0; l < 2; ++l) {
        CHECK(acts[l].rows == 5);
        CHECK(acts[l].cols == 6);
        CHECK(max_abs(acts[l], r[l]) <= 1e-5);
    }
}

TEST_CASE("zero embedding row yields zero first-layer activations") {
    const ModelConfig c = synth::tiny_config();
    WeightMap w = synth::random_weights(c, 2);
    std::vector<float> emb = w.at(names::embedding()).to_floats();
    for (int d = 0; d < 4; ++d) emb[static_cast<std::size_t>(4 * 7 + d)] = 0.0f;
    w.insert(TensorView::from_floats(names::embedding(), {10, 4}, emb));
    const std::vector<TokenId> ids{7};
    const auto acts = forward_activations(w, c, ids);
    for (float a : acts[0].row(0)) CHECK(a == 0.0f);
}

TEST_CASE("forward is deterministic and causal") {
    const ModelConfig c = synth::tiny_config();
    const WeightMap w = synth::random_weights(c, 4);
    const ForwardModel model(w, c);
    const std::vector<TokenId> ids{1, 4, 2, 8, 0};
    const Matrix a = model.logits(ids), b = model.logits(ids);
    CHECK(a.data == b.data);
    const std::vector<TokenId> prefix{1, 4, 2};
    const Matrix p = model.logits(prefix);
    for (std::int64_t i = 0; i < 3; ++i) {
        for (std::int64_t j = 0; j < 10; ++j) CHECK(p.at(i, j) == a.at(i, j));
    }
}

TEST_CASE("out-of-range ids and non-finite values are errors") {
    const ModelConfig c = synth::tiny_config();
    WeightMap w = synth::random_weights(c, 4);
    const std::vector<TokenId> bad{1, 10};
    CHECK_THROWS_AS(forward_logits(w, c, bad), Error);
    std::vector<float> emb = w.at(names::embedding()).to_floats();
    emb[0] = std::numeric_limits<float>::infinity();
    w.insert(TensorView::from_floats(names::embedding(), {10, 4}, emb));
    const std::vector<TokenId> ids{0};
    try {
        forward_logits(w, c, ids);
        FAIL("expected an error");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::Numeric);
    }
}

TEST_CASE("forward rejects weights that do not validate") {
    const ModelConfig c = synth::tiny_config();
    WeightMap w = synth::random_weights(c, 4);
    w.erase(names::ffn_up(1));
    CHECK_THROWS_AS(ForwardModel(w, c), Error);
}

TEST_CASE("collect with zero and unit weights") {
    const ModelConfig c = synth::tiny_config();
    const WeightMap w = synth::random_weights(c, 6);
    CalibrationBatch batch{{{1, 2, 3}, {4, 5}}};
    const std::vector<double> zeros(5, 0.0), ones(5, 1.0);
    for (const auto& layer : forward_collect(w, c, batch, zeros)) {
        for (double v : layer) CHECK(v == 0.0);
    }
    const auto acc = forward_collect(w, c, batch, ones);
    std::vector<std::vector<double>> expect(2, std::vector<double>(6, 0.0));
    for (const auto& seq : batch.sequences) {
        const auto acts = forward_activations(w, c, seq);
        for (std::size_t l = 0; l < 2; ++l) {
            for (std::int64_t i = 0; i < acts[l].rows; ++i) {
                for (std::int64_t k = 0; k < 6; ++k) {
                    const double a = acts[l].at(i, k);
                    expect[l][static_cast<std::size_t>(k)] += a * a;
                }
            }
        }
    }
    for (std::size_t l = 0; l < 2; ++l) {
        for (std::size_t k = 0; k < 6; ++k) {
            CHECK(acc[l][k] >= 0.0);
            CHECK(rel(acc[l][k], expect[l][k]) <= 1e-12);
        }
    }
}

TEST_CASE("masked second position leaves only the first") {
    const ModelConfig c = synth::tiny_config();
    const WeightMap w = synth::random_weights(c, 9);
    CalibrationBatch batch{{{1, 2}}};
    const std::vector<double> weights{1.0, 0.0};
    const auto acc = forward_collect(w, c, batch, weights);
    const std::vector<TokenId> first{1};
    const auto acts = forward_activations(w, c, first);
    for (std::size_t l = 0; l < 2; ++l) {
        for (std::size_t k = 0; k < 6; ++k) {
            const double a = acts[l].at(0, static_cast<std::int64_t>(k));
            CHECK(rel(acc[l][k], a * a) <= 1e-12);
        }
    }
}

TEST_CASE("accumulation is additive over batches") {
    const ModelConfig c = synth::tiny_config();
    const WeightMap w = synth::random_weights(c, 12);
    synth::Rng rng(3);
    CalibrationBatch a, b, ab;
    for (int i = 0; i < 4; ++i) a.sequences.push_back(random_ids(rng, 6, 10));
    for (int i = 0; i < 3; ++i) b.sequences.push_back(random_ids(rng, 5, 10));
    ab.sequences = a.sequences;
    ab.sequences.insert(ab.sequences.end(), b.sequences.begin(), b.sequences.end());
    const auto wa = std::vector<double>(static_cast<std::size_t>(a.positions()), 1.0);
    const auto wb = std::vector<double>(static_cast<std::size_t>(b.positions()), 1.0);
    const auto wab = std::vector<double>(static_cast<std::size_t>(ab.positions()), 1.0);
    const auto sa = forward_collect(w, c, a, wa, Reduction::Absolute);
    const auto sb = forward_collect(w, c, b, wb, Reduction::Absolute);
    const auto sab = forward_collect(w, c, ab, wab, Reduction::Absolute);
    for (std::size_t l = 0; l < 2; ++l) {
        for (std::size_t k = 0; k < 6; ++k) CHECK(rel(sa[l][k] + sb[l][k], sab[l][k]) <= 1e-12);
    }
}

TEST_CASE("weight count must match the batch positions") {
    const ModelConfig c = synth::tiny_config();
    const WeightMap w = synth::random_weights(c, 12);
    CalibrationBatch batch{{{1, 2, 3}}};
    const std::vector<double> weights{1.0, 1.0};
    CHECK_THROWS_AS(forward_collect(w, c, batch, weights), Error);
}

TEST_CASE("16-bit weights are widened on read") {
    const ModelConfig c = synth::tiny_config();
    const WeightMap w32 = synth::random_weights(c, 3);
    WeightMap w16;
    for (const auto& [name, t] : w32) {
        const auto v = t.to_floats();
        Bytes b(v.size() * 2);
        for (std::size_t i = 0; i < v.size(); ++i) {
            std::uint32_t bits;
            std::memcpy(&bits, &v[i], 4);
            const auto top = static_cast<std::uint16_t>(bits >> 16);
            b[2 * i] = static_cast<std::uint8_t>(top);
            b[2 * i + 1] = static_cast<std::uint8_t>(top >> 8);
        }
        w16.insert(TensorView(name, DType::BF16, t.shape(), std::move(b)));
    }
    const std::vector<TokenId> ids{3, 1, 4};
    CHECK(max_abs(forward_logits(w16, c, ids), ref::logits(w16, c, ids)) <= 1e-5);
}
