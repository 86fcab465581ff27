#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

namespace compact {

enum class DType { F32, F16, BF16 };

std::size_t dtype_size(DType dtype);
std::string_view dtype_name(DType dtype);
DType parse_dtype(std::string_view tag);

using Shape = std::vector<std::int64_t>;
using IndexSet = std::vector<std::int64_t>;
using Bytes = std::vector<std::uint8_t>;

std::int64_t shape_numel(const Shape& shape);

// A named, immutable, row-major tensor. The buffer is shared between copies so
// surgery that leaves a tensor untouched costs nothing. Construction does not
// validate; `consistent()` checks the byte-length invariant and every operation
// that consumes a TensorView enforces it.
class TensorView {
public:
    TensorView() = default;
    TensorView(std::string name, DType dtype, Shape shape, std::shared_ptr<const Bytes> data);
    TensorView(std::string name, DType dtype, Shape shape, Bytes data);

    static TensorView from_floats(std::string name, Shape shape, std::span<const float> values);

    const std::string& name() const { return name_; }
    DType dtype() const { return dtype_; }
    const Shape& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::int64_t numel() const { return shape_numel(shape_); }
    std::int64_t rows() const;
    std::int64_t cols() const;

    std::span<const std::uint8_t> bytes() const;
    bool consistent() const;
    void require_consistent() const;

    // Element values widened to 32-bit float (F16/BF16 converted exactly).
    std::vector<float> to_floats() const;

    TensorView renamed(std::string name) const;

    // Bitwise equality of dtype, shape and contents; names are ignored.
    bool same_contents(const TensorView& other) const;

private:
    std::string name_;
    DType dtype_ = DType::F32;
    Shape shape_;
    std::shared_ptr<const Bytes> data_;
};

float half_to_float(std::uint16_t bits);
float bf16_to_float(std::uint16_t bits);

// Tensors keyed by container name. Iteration order is lexicographic, which is
// also the on-disk header order.
class WeightMap {
public:
    using Storage = std::map<std::string, TensorView, std::less<>>;

    void insert(TensorView tensor);
    void erase(std::string_view name);
    bool contains(std::string_view name) const;
    const TensorView& at(std::string_view name) const;
    const TensorView* find(std::string_view name) const;

    std::size_t size() const { return tensors_.size(); }
    bool empty() const { return tensors_.empty(); }
    std::int64_t total_elements() const;

    Storage::const_iterator begin() const { return tensors_.begin(); }
    Storage::const_iterator end() const { return tensors_.end(); }

    // Same names and bit-identical tensors.
    bool identical_to(const WeightMap& other) const;

private:
    Storage tensors_;
};

WeightMap load_container(const std::filesystem::path& path);
WeightMap parse_container(std::span<const std::uint8_t> file);
void save_container(const WeightMap& weights, const std::filesystem::path& path);
Bytes serialize_container(const WeightMap& weights);

// Row/column selection. `keep` must be non-empty, strictly increasing and in
// range; retained elements are copied bit-for-bit whatever the dtype.
TensorView take_rows(const TensorView& t, std::span<const std::int64_t> keep);
TensorView take_cols(const TensorView& t, std::span<const std::int64_t> keep);

IndexSet iota_indices(std::int64_t begin, std::int64_t end);

struct ModelConfig {
    std::int64_t vocab_size = 0;
    std::int64_t hidden_size = 0;
    std::int64_t intermediate_size = 0;
    std::int64_t num_layers = 0;
    std::int64_t num_heads = 0;
    std::int64_t num_kv_heads = 0;
    std::int64_t head_dim = 0;
    bool tied = false;
    bool attention_bias = false;
    double norm_eps = 1e-6;
    double rope_theta = 10000.0;
    // Keys of the source config.json that this toolkit does not interpret;
    // written back untouched.
    nlohmann::json extra = nlohmann::json::object();

    std::int64_t kv_dim() const { return num_kv_heads * head_dim; }
    std::int64_t group_size() const { return num_heads / num_kv_heads; }

    // Throws Error(Validation) on a violated invariant.
    void validate() const;
};

ModelConfig config_from_json(const nlohmann::json& j);
nlohmann::json config_to_json(const ModelConfig& config);
ModelConfig load_config(const std::filesystem::path& path);
void save_config(const ModelConfig& config, const std::filesystem::path& path);

// Container names for each tensor role (Hugging Face decoder-only layout).
namespace names {
std::string embedding();
std::string lm_head();
std::string final_norm();
std::string attn_q(std::int64_t layer);
std::string attn_k(std::int64_t layer);
std::string attn_v(std::int64_t layer);
std::string attn_o(std::int64_t layer);
std::string attn_q_bias(std::int64_t layer);
std::string attn_k_bias(std::int64_t layer);
std::string attn_v_bias(std::int64_t layer);
std::string ffn_gate(std::int64_t layer);
std::string ffn_up(std::int64_t layer);
std::string ffn_down(std::int64_t layer);
std::string input_norm(std::int64_t layer);
std::string post_attn_norm(std::int64_t layer);
}  // namespace names

// Name -> shape for every tensor the config implies.
std::map<std::string, Shape, std::less<>> expected_shapes(const ModelConfig& config);

struct Finding {
    enum class Kind { Missing, Extra, Misshaped, Corrupt };
    Kind kind;
    std::string tensor;
    std::string detail;
};

std::string_view finding_kind_name(Finding::Kind kind);

struct ValidationReport {
    std::vector<Finding> findings;
    bool ok() const { return findings.empty(); }
    nlohmann::json to_json() const;
};

ValidationReport validate(const WeightMap& weights, const ModelConfig& config);

// A config file plus its weights. If the config omits `attention_bias` it is
// inferred from the presence of projection biases in the container.
struct Model {
    ModelConfig config;
    WeightMap weights;
};

Model load_model(const std::filesystem::path& config_path, const std::filesystem::path& weights_path);

}  // namespace compact
