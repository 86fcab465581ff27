#include <cstring>
#include <fstream>

#include "compact/error.hpp"
#include "compact/synth.hpp"
#include "compact/tensorstore.hpp"
#include "doctest.h"
#include "support/helpers.hpp"

using namespace compact;

namespace {

TensorView floats(const std::string& name, Shape shape, std::vector<float> v) {
    return TensorView::from_floats(name, std::move(shape), v);
}

Bytes raw_container(const std::string& header, std::size_t data_len) {
    Bytes out(8, 0);
    std::uint64_t n = header.size();
    for (int i = 0; i < 8; ++i) out[static_cast<std::size_t>(i)] = static_cast<std::uint8_t>(n >> (8 * i));
    out.insert(out.end(), header.begin(), header.end());
    out.resize(out.size() + data_len, 0);
    return out;
}

}  // namespace

TEST_CASE("container round-trips a single f32 tensor") {
    testing::TempDir dir;
    WeightMap w;
    w.insert(floats("t", {2, 2}, {1, 2, 3, 4}));
    save_container(w, dir / "one.safetensors");
    const WeightMap back = load_container(dir / "one.safetensors");
    REQUIRE(back.contains("t"));
    CHECK(back.at("t").shape() == Shape{2, 2});
    CHECK(back.at("t").to_floats() == std::vector<float>{1, 2, 3, 4});
}

TEST_CASE("header length beyond the file is malformed") {
    Bytes file = raw_container("{}", 0);
    file[0] = 0xff;
    CHECK(testing::throws_with([&] { parse_container(file); }, "malformed header"));
}

TEST_CASE("container rejects overlapping and out-of-range offsets and unknown dtypes") {
    const std::string overlap =
        R"({"a":{"dtype":"F32","shape":[2],"data_offsets":[0,8]},"b":{"dtype":"F32","shape":[2],"data_offsets":[4,12]}})";
    CHECK(testing::throws_with([&] { parse_container(raw_container(overlap, 12)); }, "overlap"));
    const std::string beyond = R"({"a":{"dtype":"F32","shape":[4],"data_offsets":[0,16]}})";
    CHECK(testing::throws_with([&] { parse_container(raw_container(beyond, 8)); }, "exceed"));
    const std::string dtype = R"({"a":{"dtype":"I8","shape":[1],"data_offsets":[0,1]}})";
    CHECK(testing::throws_with([&] { parse_container(raw_container(dtype, 1)); }, "unknown dtype"));
}

TEST_CASE("metadata entry is skipped") {
    const std::string header =
        R"({"__metadata__":{"format":"pt"},"a":{"dtype":"F16","shape":[1],"data_offsets":[0,2]}})";
    const WeightMap w = parse_container(raw_container(header, 2));
    CHECK(w.size() == 1);
    CHECK(w.at("a").dtype() == DType::F16);
}

TEST_CASE("tiny model reloads element-wise") {
    testing::TempDir dir;
    const ModelConfig c = synth::tiny_config();
    const WeightMap w = synth::random_weights(c, 7);
    save_container(w, dir / "m.safetensors");
    const WeightMap back = load_container(dir / "m.safetensors");
    CHECK(back.identical_to(w));
    CHECK(back.at(names::embedding()).shape() == Shape{10, 4});
    CHECK(back.at(names::lm_head()).shape() == Shape{10, 4});
    for (std::int64_t l = 0; l < 2; ++l) {
        CHECK(back.at(names::ffn_gate(l)).shape() == Shape{6, 4});
        CHECK(back.at(names::ffn_down(l)).shape() == Shape{4, 6});
        CHECK(back.at(names::attn_k(l)).shape() == Shape{2, 4});
    }
    for (const auto& [name, t] : back) {
        const auto a = t.to_floats(), b = w.at(name).to_floats();
        CHECK(a == b);
    }
}

TEST_CASE("serialization is deterministic and header is 8-byte aligned") {
    const WeightMap w = synth::random_weights(synth::tiny_config(), 3);
    const Bytes a = serialize_container(w), b = serialize_container(w);
    CHECK(a == b);
    std::uint64_t n = 0;
    for (int i = 7; i >= 0; --i) n = (n << 8) | a[static_cast<std::size_t>(i)];
    CHECK(n % 8 == 0);
}

TEST_CASE("save refuses an inconsistent tensor before writing") {
    testing::TempDir dir;
    WeightMap w;
    w.insert(TensorView("bad", DType::F32, Shape{2, 2}, Bytes(12, 0)));
    const auto path = dir / "bad.safetensors";
    CHECK_THROWS_AS(save_container(w, path), Error);
    CHECK_FALSE(std::filesystem::exists(path));
}

TEST_CASE("take_rows selects rows") {
    const auto t = floats("t", {3, 2}, {1, 2, 3, 4, 5, 6});
    const IndexSet keep{0, 2};
    const auto r = take_rows(t, keep);
    CHECK(r.shape() == Shape{2, 2});
    CHECK(r.to_floats() == std::vector<float>{1, 2, 5, 6});
    CHECK(take_rows(t, iota_indices(0, 3)).same_contents(t));
    CHECK(t.to_floats() == std::vector<float>{1, 2, 3, 4, 5, 6});
    const IndexSet oob{3};
    CHECK_THROWS_AS(take_rows(t, oob), Error);
    const IndexSet unordered{2, 1};
    CHECK(testing::throws_with([&] { take_rows(t, unordered); }, "strictly increasing"));
    const IndexSet dup{1, 1};
    CHECK_THROWS_AS(take_rows(t, dup), Error);
}

TEST_CASE("take_cols selects columns") {
    const auto t = floats("t", {2, 3}, {1, 2, 3, 4, 5, 6});
    const IndexSet keep{1};
    const auto r = take_cols(t, keep);
    CHECK(r.shape() == Shape{2, 1});
    CHECK(r.to_floats() == std::vector<float>{2, 5});
    CHECK(take_cols(t, iota_indices(0, 3)).same_contents(t));
    const IndexSet none;
    CHECK(testing::throws_with([&] { take_cols(t, none); }, "empty slice forbidden"));
    CHECK(testing::throws_with([&] { take_rows(t, none); }, "empty slice forbidden"));
}

TEST_CASE("surgery is bit-exact for 16-bit dtypes") {
    Bytes data(2 * 3 * 2);
    for (std::size_t i = 0; i < data.size(); ++i) data[i] = static_cast<std::uint8_t>(0x11 * (i + 1));
    for (DType dt : {DType::F16, DType::BF16}) {
        const TensorView t("h", dt, Shape{2, 3}, data);
        const IndexSet cols{0, 2};
        const auto c = take_cols(t, cols);
        const auto b = c.bytes();
        CHECK(c.dtype() == dt);
        REQUIRE(b.size() == 8);
        CHECK(std::memcmp(b.data(), data.data(), 2) == 0);
        CHECK(std::memcmp(b.data() + 2, data.data() + 4, 2) == 0);
        CHECK(std::memcmp(b.data() + 4, data.data() + 6, 2) == 0);
        CHECK(std::memcmp(b.data() + 6, data.data() + 10, 2) == 0);
    }
}

TEST_CASE("half and bfloat16 widen exactly") {
    CHECK(half_to_float(0x3c00) == 1.0f);
    CHECK(half_to_float(0xc000) == -2.0f);
    CHECK(half_to_float(0x0001) == 0x1p-24f);
    CHECK(bf16_to_float(0x3f80) == 1.0f);
    CHECK(bf16_to_float(0x4049) == 3.140625f);
}

TEST_CASE("row selections compose") {
    synth::Rng rng(11);
    std::vector<float> v(20 * 3);
    for (auto& x : v) x = static_cast<float>(rng.uniform(-1, 1));
    const auto t = floats("t", {20, 3}, v);
    for (int trial = 0; trial < 50; ++trial) {
        IndexSet a, b, ab;
        for (std::int64_t i = 0; i < 20; ++i) {
            if (rng.below(2)) a.push_back(i);
        }
        if (a.empty()) a.push_back(0);
        for (std::size_t j = 0; j < a.size(); ++j) {
            if (rng.below(2)) b.push_back(static_cast<std::int64_t>(j));
        }
        if (b.empty()) b.push_back(0);
        for (auto j : b) ab.push_back(a[static_cast<std::size_t>(j)]);
        CHECK(take_rows(take_rows(t, a), b).same_contents(take_rows(t, ab)));
    }
}

TEST_CASE("validate reports findings by role") {
    const ModelConfig c = synth::tiny_config();
    WeightMap w = synth::random_weights(c, 1);
    CHECK(validate(w, c).ok());

    WeightMap transposed = w;
    const auto& g = w.at(names::ffn_gate(0));
    transposed.insert(TensorView(g.name(), g.dtype(), Shape{4, 6}, Bytes(g.bytes().begin(), g.bytes().end())));
    const auto r = validate(transposed, c);
    REQUIRE(r.findings.size() == 1);
    CHECK(r.findings[0].tensor == names::ffn_gate(0));
    CHECK(r.findings[0].kind == Finding::Kind::Misshaped);

    const auto tied = validate(w, synth::tiny_config(true));
    REQUIRE(tied.findings.size() == 1);
    CHECK(tied.findings[0].tensor == names::lm_head());
    CHECK(tied.findings[0].kind == Finding::Kind::Extra);

    WeightMap missing = w;
    missing.erase(names::final_norm());
    const auto m = validate(missing, c);
    REQUIRE(m.findings.size() == 1);
    CHECK(m.findings[0].kind == Finding::Kind::Missing);
}

TEST_CASE("config parsing") {
    nlohmann::json j = {{"vocab_size", 10},        {"hidden_size", 4},         {"intermediate_size", 6},
                        {"num_hidden_layers", 2},   {"num_attention_heads", 2}, {"num_key_value_heads", 1},
                        {"tie_word_embeddings", false}, {"model_type", "qwen2"}};
    ModelConfig c = config_from_json(j);
    CHECK(c.head_dim == 2);
    CHECK(c.group_size() == 2);
    CHECK(config_to_json(c)["model_type"] == "qwen2");

    auto bad = j;
    bad["num_key_value_heads"] = 3;
    CHECK_THROWS_AS(config_from_json(bad), Error);
    auto gemma = j;
    gemma["model_type"] = "gemma2";
    CHECK(testing::throws_with([&] { config_from_json(gemma); }, "unsupported architecture"));
    auto zero = j;
    zero["intermediate_size"] = 0;
    CHECK_THROWS_AS(config_from_json(zero), Error);
}

TEST_CASE("attention bias is inferred from the container") {
    testing::TempDir dir;
    ModelConfig c = synth::tiny_config();
    c.attention_bias = true;
    save_container(synth::random_weights(c, 5), dir / "m.safetensors");
    nlohmann::json j = config_to_json(c);
    j.erase("attention_bias");
    std::ofstream(dir / "config.json") << j.dump();
    const Model m = load_model(dir / "config.json", dir / "m.safetensors");
    CHECK(m.config.attention_bias);
    CHECK(validate(m.weights, m.config).ok());
}
