#include "compact/tensorstore.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <sstream>

#include "compact/error.hpp"

static_assert(std::endian::native == std::endian::little,
              "container data is little-endian and copied without byte swapping");

namespace compact {

namespace {

constexpr std::string_view kMetadataKey = "__metadata__";

Error format_error(const std::string& msg) { return Error(ErrorKind::Format, msg); }

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
    os << ']';
    return os.str();
}

void check_selection(std::span<const std::int64_t> keep, std::int64_t extent, const char* what) {
    if (keep.empty()) throw Error(ErrorKind::InvalidArgument, "empty slice forbidden");
    for (std::size_t i = 0; i < keep.size(); ++i) {
        if (keep[i] < 0 || keep[i] >= extent) {
            throw Error(ErrorKind::InvalidArgument,
                        std::string(what) + " index " + std::to_string(keep[i]) + " out of range [0," +
                            std::to_string(extent) + ")");
        }
        if (i > 0 && keep[i] <= keep[i - 1]) {
            throw Error(ErrorKind::InvalidArgument, std::string(what) + " indices must be strictly increasing");
        }
    }
}

}  // namespace

std::size_t dtype_size(DType dtype) {
    switch (dtype) {
        case DType::F32: return 4;
        case DType::F16:
        case DType::BF16: return 2;
    }
    return 0;
}

std::string_view dtype_name(DType dtype) {
    switch (dtype) {
        case DType::F32: return "F32";
        case DType::F16: return "F16";
        case DType::BF16: return "BF16";
    }
    return "?";
}

DType parse_dtype(std::string_view tag) {
    if (tag == "F32") return DType::F32;
    if (tag == "F16") return DType::F16;
    if (tag == "BF16") return DType::BF16;
    throw format_error("unknown dtype tag '" + std::string(tag) + "'");
}

std::int64_t shape_numel(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::int64_t{1}, std::multiplies<>());
}

float half_to_float(std::uint16_t h) {
    const std::uint32_t sign = static_cast<std::uint32_t>(h & 0x8000u) << 16;
    std::uint32_t exp = (h >> 10) & 0x1fu;
    std::uint32_t mant = h & 0x3ffu;
    std::uint32_t bits;
    if (exp == 0) {
        if (mant == 0) {
            bits = sign;
        } else {
            // subnormal: renormalize
            int e = -1;
            do {
                ++e;
                mant <<= 1;
            } while ((mant & 0x400u) == 0);
            mant &= 0x3ffu;
            bits = sign | (static_cast<std::uint32_t>(127 - 15 - e) << 23) | (mant << 13);
        }
    } else if (exp == 0x1f) {
        bits = sign | 0x7f800000u | (mant << 13);
    } else {
        bits = sign | ((exp + (127 - 15)) << 23) | (mant << 13);
    }
    return std::bit_cast<float>(bits);
}

float bf16_to_float(std::uint16_t bits) {
    return std::bit_cast<float>(static_cast<std::uint32_t>(bits) << 16);
}

// ---------------------------------------------------------------------------
// TensorView

TensorView::TensorView(std::string name, DType dtype, Shape shape, std::shared_ptr<const Bytes> data)
    : name_(std::move(name)), dtype_(dtype), shape_(std::move(shape)), data_(std::move(data)) {}

TensorView::TensorView(std::string name, DType dtype, Shape shape, Bytes data)
    : TensorView(std::move(name), dtype, std::move(shape), std::make_shared<const Bytes>(std::move(data))) {}

TensorView TensorView::from_floats(std::string name, Shape shape, std::span<const float> values) {
    Bytes data(values.size() * sizeof(float));
    if (!values.empty()) std::memcpy(data.data(), values.data(), data.size());
    return TensorView(std::move(name), DType::F32, std::move(shape), std::move(data));
}

std::int64_t TensorView::rows() const { return shape_.empty() ? 1 : shape_[0]; }

std::int64_t TensorView::cols() const { return shape_.size() < 2 ? 1 : shape_[1]; }

std::span<const std::uint8_t> TensorView::bytes() const {
    if (!data_) return {};
    return {data_->data(), data_->size()};
}

bool TensorView::consistent() const {
    if (!data_) return false;
    for (auto d : shape_) {
        if (d < 0) return false;
    }
    return static_cast<std::uint64_t>(numel()) * dtype_size(dtype_) == data_->size();
}

void TensorView::require_consistent() const {
    if (!consistent()) {
        throw Error(ErrorKind::Validation, "tensor '" + name_ + "' shape " + shape_str(shape_) + " (" +
                                               std::string(dtype_name(dtype_)) + ") does not match its " +
                                               std::to_string(data_ ? data_->size() : 0) + "-byte buffer");
    }
}

std::vector<float> TensorView::to_floats() const {
    require_consistent();
    const auto n = static_cast<std::size_t>(numel());
    std::vector<float> out(n);
    const std::uint8_t* src = data_->data();
    switch (dtype_) {
        case DType::F32:
            if (n) std::memcpy(out.data(), src, n * sizeof(float));
            break;
        case DType::F16:
        case DType::BF16:
            for (std::size_t i = 0; i < n; ++i) {
                std::uint16_t bits;
                std::memcpy(&bits, src + 2 * i, 2);
                out[i] = dtype_ == DType::F16 ? half_to_float(bits) : bf16_to_float(bits);
            }
            break;
    }
    return out;
}

TensorView TensorView::renamed(std::string name) const {
    TensorView copy = *this;
    copy.name_ = std::move(name);
    return copy;
}

bool TensorView::same_contents(const TensorView& other) const {
    if (dtype_ != other.dtype_ || shape_ != other.shape_) return false;
    auto a = bytes();
    auto b = other.bytes();
    return a.size() == b.size() && std::equal(a.begin(), a.end(), b.begin());
}

// ---------------------------------------------------------------------------
// WeightMap

void WeightMap::insert(TensorView tensor) {
    std::string key = tensor.name();
    tensors_.insert_or_assign(std::move(key), std::move(tensor));
}

void WeightMap::erase(std::string_view name) {
    auto it = tensors_.find(name);
    if (it != tensors_.end()) tensors_.erase(it);
}

bool WeightMap::contains(std::string_view name) const { return tensors_.find(name) != tensors_.end(); }

const TensorView& WeightMap::at(std::string_view name) const {
    auto it = tensors_.find(name);
    if (it == tensors_.end()) {
        throw Error(ErrorKind::Validation, "missing tensor '" + std::string(name) + "'");
    }
    return it->second;
}

const TensorView* WeightMap::find(std::string_view name) const {
    auto it = tensors_.find(name);
    return it == tensors_.end() ? nullptr : &it->second;
}

std::int64_t WeightMap::total_elements() const {
    std::int64_t total = 0;
    for (const auto& [_, t] : tensors_) total += t.numel();
    return total;
}

bool WeightMap::identical_to(const WeightMap& other) const {
    if (size() != other.size()) return false;
    for (auto a = begin(), b = other.begin(); a != end(); ++a, ++b) {
        if (a->first != b->first || !a->second.same_contents(b->second)) return false;
    }
    return true;
}

// ---------------------------------------------------------------------------
// Container I/O

WeightMap parse_container(std::span<const std::uint8_t> file) {
    if (file.size() < 8) throw format_error("malformed header: file shorter than the 8-byte length prefix");
    std::uint64_t header_len = 0;
    for (int i = 7; i >= 0; --i) header_len = (header_len << 8) | file[static_cast<std::size_t>(i)];
    if (header_len > file.size() - 8) {
        throw format_error("malformed header: declared length " + std::to_string(header_len) +
                           " exceeds file size");
    }

    const auto* header_begin = reinterpret_cast<const char*>(file.data() + 8);
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(header_begin, header_begin + header_len);
    } catch (const nlohmann::json::exception& e) {
        throw format_error(std::string("malformed header: ") + e.what());
    }
    if (!header.is_object()) throw format_error("malformed header: not a JSON object");

    const std::span<const std::uint8_t> data = file.subspan(8 + header_len);

    struct Range {
        std::uint64_t begin, end;
        std::string name;
    };
    std::vector<Range> ranges;
    WeightMap weights;

    for (const auto& [name, entry] : header.items()) {
        if (name == kMetadataKey) continue;
        try {
            const DType dtype = parse_dtype(entry.at("dtype").get<std::string>());
            Shape shape;
            for (const auto& d : entry.at("shape")) {
                const auto v = d.get<std::int64_t>();
                if (v < 0) throw format_error("malformed header: negative dimension in '" + name + "'");
                shape.push_back(v);
            }
            const auto& offsets = entry.at("data_offsets");
            if (!offsets.is_array() || offsets.size() != 2) {
                throw format_error("malformed header: data_offsets of '" + name + "' must have two entries");
            }
            const auto b = offsets[0].get<std::uint64_t>();
            const auto e = offsets[1].get<std::uint64_t>();
            if (b > e || e > data.size()) {
                throw format_error("malformed header: offsets of '" + name + "' exceed file length");
            }
            if (e - b != static_cast<std::uint64_t>(shape_numel(shape)) * dtype_size(dtype)) {
                throw format_error("malformed header: byte range of '" + name + "' does not match its shape");
            }
            ranges.push_back({b, e, name});
            Bytes buf(data.begin() + static_cast<std::ptrdiff_t>(b), data.begin() + static_cast<std::ptrdiff_t>(e));
            weights.insert(TensorView(name, dtype, std::move(shape), std::move(buf)));
        } catch (const nlohmann::json::exception& ex) {
            throw format_error("malformed header entry '" + name + "': " + ex.what());
        }
    }

    std::sort(ranges.begin(), ranges.end(), [](const Range& a, const Range& b) { return a.begin < b.begin; });
    for (std::size_t i = 1; i < ranges.size(); ++i) {
        if (ranges[i].begin < ranges[i - 1].end) {
            throw format_error("malformed header: data of '" + ranges[i - 1].name + "' and '" + ranges[i].name +
                               "' overlap");
        }
    }
    return weights;
}

WeightMap load_container(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorKind::Io, "cannot open '" + path.string() + "'");
    Bytes file((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return parse_container(file);
}

Bytes serialize_container(const WeightMap& weights) {
    for (const auto& [_, t] : weights) t.require_consistent();

    // nlohmann::json objects are std::map-backed, so keys serialize sorted.
    nlohmann::json header = nlohmann::json::object();
    std::uint64_t offset = 0;
    for (const auto& [name, t] : weights) {
        const std::uint64_t n = t.bytes().size();
        header[name] = {{"dtype", dtype_name(t.dtype())}, {"shape", t.shape()}, {"data_offsets", {offset, offset + n}}};
        offset += n;
    }
    std::string text = header.dump();
    text.append((8 - text.size() % 8) % 8, ' ');

    Bytes out;
    out.reserve(8 + text.size() + offset);
    const std::uint64_t len = text.size();
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(len >> (8 * i)));
    out.insert(out.end(), text.begin(), text.end());
    for (const auto& [_, t] : weights) {
        auto b = t.bytes();
        out.insert(out.end(), b.begin(), b.end());
    }
    return out;
}

void save_container(const WeightMap& weights, const std::filesystem::path& path) {
    const Bytes bytes = serialize_container(weights);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorKind::Io, "cannot open '" + path.string() + "' for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error(ErrorKind::Io, "write to '" + path.string() + "' failed");
}

// ---------------------------------------------------------------------------
// Surgery

TensorView take_rows(const TensorView& t, std::span<const std::int64_t> keep) {
    t.require_consistent();
    if (t.rank() != 2) throw Error(ErrorKind::InvalidArgument, "take_rows needs a rank-2 tensor: " + t.name());
    check_selection(keep, t.rows(), "row");
    const std::size_t row_bytes = static_cast<std::size_t>(t.cols()) * dtype_size(t.dtype());
    const auto src = t.bytes();
    Bytes out(keep.size() * row_bytes);
    for (std::size_t j = 0; j < keep.size(); ++j) {
        std::memcpy(out.data() + j * row_bytes, src.data() + static_cast<std::size_t>(keep[j]) * row_bytes, row_bytes);
    }
    return TensorView(t.name(), t.dtype(), {static_cast<std::int64_t>(keep.size()), t.cols()}, std::move(out));
}

TensorView take_cols(const TensorView& t, std::span<const std::int64_t> keep) {
    t.require_consistent();
    if (t.rank() != 2) throw Error(ErrorKind::InvalidArgument, "take_cols needs a rank-2 tensor: " + t.name());
    check_selection(keep, t.cols(), "column");
    const std::size_t es = dtype_size(t.dtype());
    const auto rows = static_cast<std::size_t>(t.rows());
    const auto cols = static_cast<std::size_t>(t.cols());
    const auto src = t.bytes();
    Bytes out(rows * keep.size() * es);
    std::uint8_t* dst = out.data();
    for (std::size_t r = 0; r < rows; ++r) {
        const std::uint8_t* row = src.data() + r * cols * es;
        for (auto c : keep) {
            std::memcpy(dst, row + static_cast<std::size_t>(c) * es, es);
            dst += es;
        }
    }
    return TensorView(t.name(), t.dtype(), {t.rows(), static_cast<std::int64_t>(keep.size())}, std::move(out));
}

IndexSet iota_indices(std::int64_t begin, std::int64_t end) {
    IndexSet out;
    if (end > begin) {
        out.resize(static_cast<std::size_t>(end - begin));
        std::iota(out.begin(), out.end(), begin);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Config

void ModelConfig::validate() const {
    auto fail = [](const std::string& msg) { throw Error(ErrorKind::Validation, "invalid model config: " + msg); };
    if (vocab_size < 1 || hidden_size < 1 || intermediate_size < 1 || num_layers < 1) {
        fail("vocab_size, hidden_size, intermediate_size and num_hidden_layers must all be >= 1");
    }
    if (num_heads < 1 || num_kv_heads < 1) fail("head counts must be >= 1");
    if (num_heads % num_kv_heads != 0) fail("num_attention_heads must be a multiple of num_key_value_heads");
    if (num_heads * head_dim != hidden_size) fail("num_attention_heads * head_dim must equal hidden_size");
    if (head_dim % 2 != 0) fail("head_dim must be even for rotary embeddings");
    if (!(norm_eps > 0.0)) fail("rms_norm_eps must be positive");
    if (!(rope_theta > 0.0)) fail("rope_theta must be positive");
}

namespace {

const std::vector<std::string>& interpreted_keys() {
    static const std::vector<std::string> keys = {
        "vocab_size",          "hidden_size",          "intermediate_size",   "num_hidden_layers",
        "num_attention_heads", "num_key_value_heads",  "head_dim",            "tie_word_embeddings",
        "rms_norm_eps",        "rope_theta",           "attention_bias"};
    return keys;
}

void reject_unsupported(const nlohmann::json& j) {
    auto fail = [](const std::string& why) {
        throw Error(ErrorKind::Validation, "unsupported architecture: " + why +
                                               " (QK-norm / sliding-window attention are not implemented)");
    };
    if (j.contains("model_type") && j["model_type"].is_string()) {
        const auto type = j["model_type"].get<std::string>();
        if (type.find("gemma") != std::string::npos) fail("model_type '" + type + "'");
    }
    if (j.contains("query_pre_attn_scalar")) fail("query_pre_attn_scalar is set");
    if (j.contains("sliding_window_pattern")) fail("sliding_window_pattern is set");
    if (j.value("use_qk_norm", false)) fail("use_qk_norm is true");
    if (j.value("use_sliding_window", false)) fail("use_sliding_window is true");
}

}  // namespace

ModelConfig config_from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw Error(ErrorKind::Format, "model config must be a JSON object");
    reject_unsupported(j);
    ModelConfig c;
    try {
        c.vocab_size = j.at("vocab_size").get<std::int64_t>();
        c.hidden_size = j.at("hidden_size").get<std::int64_t>();
        c.intermediate_size = j.at("intermediate_size").get<std::int64_t>();
        c.num_layers = j.at("num_hidden_layers").get<std::int64_t>();
        c.num_heads = j.at("num_attention_heads").get<std::int64_t>();
        c.num_kv_heads = j.value("num_key_value_heads", c.num_heads);
        c.head_dim = (j.contains("head_dim") && !j["head_dim"].is_null())
                         ? j["head_dim"].get<std::int64_t>()
                         : (c.num_heads > 0 ? c.hidden_size / c.num_heads : 0);
        c.tied = j.value("tie_word_embeddings", false);
        c.attention_bias = j.value("attention_bias", false);
        c.norm_eps = j.value("rms_norm_eps", 1e-6);
        c.rope_theta = j.value("rope_theta", 10000.0);
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorKind::Format, std::string("model config: ") + e.what());
    }
    for (const auto& [key, value] : j.items()) {
        if (std::find(interpreted_keys().begin(), interpreted_keys().end(), key) == interpreted_keys().end()) {
            c.extra[key] = value;
        }
    }
    c.validate();
    return c;
}

nlohmann::json config_to_json(const ModelConfig& c) {
    nlohmann::json j = c.extra;
    j["vocab_size"] = c.vocab_size;
    j["hidden_size"] = c.hidden_size;
    j["intermediate_size"] = c.intermediate_size;
    j["num_hidden_layers"] = c.num_layers;
    j["num_attention_heads"] = c.num_heads;
    j["num_key_value_heads"] = c.num_kv_heads;
    j["head_dim"] = c.head_dim;
    j["tie_word_embeddings"] = c.tied;
    j["attention_bias"] = c.attention_bias;
    j["rms_norm_eps"] = c.norm_eps;
    j["rope_theta"] = c.rope_theta;
    return j;
}

namespace {

nlohmann::json read_json_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorKind::Io, "cannot open '" + path.string() + "'");
    try {
        return nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorKind::Format, "'" + path.string() + "': " + e.what());
    }
}

}  // namespace

ModelConfig load_config(const std::filesystem::path& path) { return config_from_json(read_json_file(path)); }

void save_config(const ModelConfig& config, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw Error(ErrorKind::Io, "cannot open '" + path.string() + "' for writing");
    out << config_to_json(config).dump(2) << '\n';
    if (!out) throw Error(ErrorKind::Io, "write to '" + path.string() + "' failed");
}

Model load_model(const std::filesystem::path& config_path, const std::filesystem::path& weights_path) {
    const nlohmann::json j = read_json_file(config_path);
    Model m{config_from_json(j), load_container(weights_path)};
    if (!j.contains("attention_bias")) m.config.attention_bias = m.weights.contains(names::attn_q_bias(0));
    return m;
}

// ---------------------------------------------------------------------------
// Roles and validation

namespace names {

namespace {
std::string layer_name(std::int64_t layer, std::string_view suffix) {
    return "model.layers." + std::to_string(layer) + "." + std::string(suffix);
}
}  // namespace

std::string embedding() { return "model.embed_tokens.weight"; }
std::string lm_head() { return "lm_head.weight"; }
std::string final_norm() { return "model.norm.weight"; }
std::string attn_q(std::int64_t l) { return layer_name(l, "self_attn.q_proj.weight"); }
std::string attn_k(std::int64_t l) { return layer_name(l, "self_attn.k_proj.weight"); }
std::string attn_v(std::int64_t l) { return layer_name(l, "self_attn.v_proj.weight"); }
std::string attn_o(std::int64_t l) { return layer_name(l, "self_attn.o_proj.weight"); }
std::string attn_q_bias(std::int64_t l) { return layer_name(l, "self_attn.q_proj.bias"); }
std::string attn_k_bias(std::int64_t l) { return layer_name(l, "self_attn.k_proj.bias"); }
std::string attn_v_bias(std::int64_t l) { return layer_name(l, "self_attn.v_proj.bias"); }
std::string ffn_gate(std::int64_t l) { return layer_name(l, "mlp.gate_proj.weight"); }
std::string ffn_up(std::int64_t l) { return layer_name(l, "mlp.up_proj.weight"); }
std::string ffn_down(std::int64_t l) { return layer_name(l, "mlp.down_proj.weight"); }
std::string input_norm(std::int64_t l) { return layer_name(l, "input_layernorm.weight"); }
std::string post_attn_norm(std::int64_t l) { return layer_name(l, "post_attention_layernorm.weight"); }

}  // namespace names

std::map<std::string, Shape, std::less<>> expected_shapes(const ModelConfig& c) {
    const std::int64_t V = c.vocab_size, D = c.hidden_size, I = c.intermediate_size;
    const std::int64_t Q = c.num_heads * c.head_dim, KV = c.kv_dim();
    std::map<std::string, Shape, std::less<>> shapes;
    shapes[names::embedding()] = {V, D};
    if (!c.tied) shapes[names::lm_head()] = {V, D};
    shapes[names::final_norm()] = {D};
    for (std::int64_t l = 0; l < c.num_layers; ++l) {
        shapes[names::attn_q(l)] = {Q, D};
        shapes[names::attn_k(l)] = {KV, D};
        shapes[names::attn_v(l)] = {KV, D};
        shapes[names::attn_o(l)] = {D, Q};
        if (c.attention_bias) {
            shapes[names::attn_q_bias(l)] = {Q};
            shapes[names::attn_k_bias(l)] = {KV};
            shapes[names::attn_v_bias(l)] = {KV};
        }
        shapes[names::ffn_gate(l)] = {I, D};
        shapes[names::ffn_up(l)] = {I, D};
        shapes[names::ffn_down(l)] = {D, I};
        shapes[names::input_norm(l)] = {D};
        shapes[names::post_attn_norm(l)] = {D};
    }
    return shapes;
}

std::string_view finding_kind_name(Finding::Kind kind) {
    switch (kind) {
        case Finding::Kind::Missing: return "missing";
        case Finding::Kind::Extra: return "extra";
        case Finding::Kind::Misshaped: return "misshaped";
        case Finding::Kind::Corrupt: return "corrupt";
    }
    return "?";
}

nlohmann::json ValidationReport::to_json() const {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& f : findings) {
        arr.push_back({{"kind", finding_kind_name(f.kind)}, {"tensor", f.tensor}, {"detail", f.detail}});
    }
    return {{"ok", ok()}, {"findings", arr}};
}

ValidationReport validate(const WeightMap& weights, const ModelConfig& config) {
    ValidationReport report;
    try {
        config.validate();
    } catch (const Error& e) {
        report.findings.push_back({Finding::Kind::Corrupt, "config", e.what()});
        return report;
    }
    const auto shapes = expected_shapes(config);
    for (const auto& [name, shape] : shapes) {
        const TensorView* t = weights.find(name);
        if (!t) {
            report.findings.push_back({Finding::Kind::Missing, name, "expected shape " + shape_str(shape)});
        } else if (t->shape() != shape) {
            report.findings.push_back(
                {Finding::Kind::Misshaped, name, "shape " + shape_str(t->shape()) + ", expected " + shape_str(shape)});
        } else if (!t->consistent()) {
            report.findings.push_back({Finding::Kind::Corrupt, name, "buffer length does not match shape"});
        }
    }
    for (const auto& [name, t] : weights) {
        if (shapes.find(name) == shapes.end()) {
            std::string detail = "not implied by the config";
            if (name == names::lm_head() && config.tied) detail = "lm_head present but tie_word_embeddings is true";
            report.findings.push_back({Finding::Kind::Extra, name, detail});
        }
    }
    return report;
}

}  // namespace compact
