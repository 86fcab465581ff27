#include "compact/forward.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "compact/error.hpp"

namespace compact {

namespace {

void matvec(const std::vector<float>& w, std::int64_t out_dim, std::int64_t in_dim, const float* x, float* y) {
    for (std::int64_t o = 0; o < out_dim; ++o) {
        const float* row = w.data() + o * in_dim;
        float s = 0.0f;
        for (std::int64_t i = 0; i < in_dim; ++i) s += row[i] * x[i];
        y[o] = s;
    }
}

void rms_norm(const float* x, const std::vector<float>& gain, double eps, float* y) {
    const auto n = static_cast<std::int64_t>(gain.size());
    double ss = 0.0;
    for (std::int64_t i = 0; i < n; ++i) ss += static_cast<double>(x[i]) * x[i];
    const double inv = 1.0 / std::sqrt(ss / static_cast<double>(n) + eps);
    for (std::int64_t i = 0; i < n; ++i) y[i] = static_cast<float>(x[i] * inv) * gain[static_cast<std::size_t>(i)];
}

void check_finite(std::span<const float> v, const char* where, std::int64_t layer) {
    for (float x : v) {
        if (!std::isfinite(x)) {
            throw Error(ErrorKind::Numeric, std::string("non-finite value in ") + where + " (layer " +
                                                std::to_string(layer) + ")");
        }
    }
}

std::vector<float> floats_of(const WeightMap& w, const std::string& name) { return w.at(name).to_floats(); }

}  // namespace

float silu(float z) { return z / (1.0f + std::exp(-z)); }

std::int64_t CalibrationBatch::positions() const {
    std::int64_t n = 0;
    for (const auto& s : sequences) n += static_cast<std::int64_t>(s.size());
    return n;
}

TokenSequence CalibrationBatch::flattened() const {
    TokenSequence out;
    out.reserve(static_cast<std::size_t>(positions()));
    for (const auto& s : sequences) out.insert(out.end(), s.begin(), s.end());
    return out;
}

ForwardModel::ForwardModel(const WeightMap& weights, const ModelConfig& config) : config_(config) {
    const auto report = validate(weights, config);
    if (!report.ok()) {
        const auto& f = report.findings.front();
        throw Error(ErrorKind::Validation, "weights do not match config: " + std::string(finding_kind_name(f.kind)) +
                                               " " + f.tensor + " (" + f.detail + ")" +
                                               (report.findings.size() > 1
                                                    ? " and " + std::to_string(report.findings.size() - 1) + " more"
                                                    : ""));
    }
    embedding_ = floats_of(weights, names::embedding());
    if (!config.tied) lm_head_ = floats_of(weights, names::lm_head());
    final_norm_ = floats_of(weights, names::final_norm());
    layers_.resize(static_cast<std::size_t>(config.num_layers));
    for (std::int64_t l = 0; l < config.num_layers; ++l) {
        Layer& L = layers_[static_cast<std::size_t>(l)];
        L.q = floats_of(weights, names::attn_q(l));
        L.k = floats_of(weights, names::attn_k(l));
        L.v = floats_of(weights, names::attn_v(l));
        L.o = floats_of(weights, names::attn_o(l));
        if (const auto* b = weights.find(names::attn_q_bias(l))) L.q_bias = b->to_floats();
        if (const auto* b = weights.find(names::attn_k_bias(l))) L.k_bias = b->to_floats();
        if (const auto* b = weights.find(names::attn_v_bias(l))) L.v_bias = b->to_floats();
        L.gate = floats_of(weights, names::ffn_gate(l));
        L.up = floats_of(weights, names::ffn_up(l));
        L.down = floats_of(weights, names::ffn_down(l));
        L.input_norm = floats_of(weights, names::input_norm(l));
        L.post_norm = floats_of(weights, names::post_attn_norm(l));
    }
    const auto half = config.head_dim / 2;
    inv_freq_.resize(static_cast<std::size_t>(half));
    for (std::int64_t j = 0; j < half; ++j) {
        inv_freq_[static_cast<std::size_t>(j)] =
            std::pow(config.rope_theta, -2.0 * static_cast<double>(j) / static_cast<double>(config.head_dim));
    }
}

ChannelAccumulator ForwardModel::zero_accumulator() const {
    return ChannelAccumulator(static_cast<std::size_t>(config_.num_layers),
                              std::vector<double>(static_cast<std::size_t>(config_.intermediate_size), 0.0));
}

template <typename Tap>
void ForwardModel::run(std::span<const TokenId> ids, Tap&& tap, Matrix* logits) const {
    const auto& c = config_;
    const std::int64_t T = static_cast<std::int64_t>(ids.size());
    const std::int64_t D = c.hidden_size, I = c.intermediate_size, V = c.vocab_size;
    const std::int64_t hd = c.head_dim, nh = c.num_heads, KV = c.kv_dim(), Q = nh * hd;
    const std::int64_t group = c.group_size(), half = hd / 2;
    const float scale = 1.0f / std::sqrt(static_cast<float>(hd));

    Matrix h(T, D);
    for (std::int64_t t = 0; t < T; ++t) {
        const auto id = ids[static_cast<std::size_t>(t)];
        if (id < 0 || id >= V) {
            throw Error(ErrorKind::InvalidArgument, "token id " + std::to_string(id) + " out of range [0," +
                                                        std::to_string(V) + ")");
        }
        std::copy_n(embedding_.data() + id * D, D, h.row(t).data());
    }
    if (T == 0) {
        if (logits) *logits = Matrix(0, V);
        return;
    }

    // cos/sin per position and frequency, shared by every layer.
    std::vector<float> cos_t(static_cast<std::size_t>(T * half)), sin_t(cos_t.size());
    for (std::int64_t t = 0; t < T; ++t) {
        for (std::int64_t j = 0; j < half; ++j) {
            const double angle = static_cast<double>(t) * inv_freq_[static_cast<std::size_t>(j)];
            cos_t[static_cast<std::size_t>(t * half + j)] = static_cast<float>(std::cos(angle));
            sin_t[static_cast<std::size_t>(t * half + j)] = static_cast<float>(std::sin(angle));
        }
    }
    auto rope = [&](float* vec, std::int64_t t) {
        const float* cs = cos_t.data() + t * half;
        const float* sn = sin_t.data() + t * half;
        for (std::int64_t j = 0; j < half; ++j) {
            const float a = vec[j], b = vec[j + half];
            vec[j] = a * cs[j] - b * sn[j];
            vec[j + half] = b * cs[j] + a * sn[j];
        }
    };

    Matrix xn(T, D), q(T, Q), k(T, KV), v(T, KV), attn(T, Q);
    std::vector<float> scores(static_cast<std::size_t>(T)), proj(static_cast<std::size_t>(D));
    std::vector<float> gate(static_cast<std::size_t>(I)), up(static_cast<std::size_t>(I));

    for (std::int64_t l = 0; l < c.num_layers; ++l) {
        const Layer& L = layers_[static_cast<std::size_t>(l)];

        for (std::int64_t t = 0; t < T; ++t) {
            rms_norm(h.row(t).data(), L.input_norm, c.norm_eps, xn.row(t).data());
            matvec(L.q, Q, D, xn.row(t).data(), q.row(t).data());
            matvec(L.k, KV, D, xn.row(t).data(), k.row(t).data());
            matvec(L.v, KV, D, xn.row(t).data(), v.row(t).data());
            if (!L.q_bias.empty()) {
                for (std::int64_t i = 0; i < Q; ++i) q.row(t)[i] += L.q_bias[static_cast<std::size_t>(i)];
                for (std::int64_t i = 0; i < KV; ++i) k.row(t)[i] += L.k_bias[static_cast<std::size_t>(i)];
                for (std::int64_t i = 0; i < KV; ++i) v.row(t)[i] += L.v_bias[static_cast<std::size_t>(i)];
            }
            for (std::int64_t head = 0; head < nh; ++head) rope(q.row(t).data() + head * hd, t);
            for (std::int64_t head = 0; head < c.num_kv_heads; ++head) rope(k.row(t).data() + head * hd, t);
        }

        for (std::int64_t t = 0; t < T; ++t) {
            for (std::int64_t head = 0; head < nh; ++head) {
                const float* qh = q.row(t).data() + head * hd;
                const std::int64_t kvh = head / group;
                float max_s = -INFINITY;
                for (std::int64_t s = 0; s <= t; ++s) {
                    const float* kh = k.row(s).data() + kvh * hd;
                    float dot = 0.0f;
                    for (std::int64_t d = 0; d < hd; ++d) dot += qh[d] * kh[d];
                    scores[static_cast<std::size_t>(s)] = dot * scale;
                    max_s = std::max(max_s, scores[static_cast<std::size_t>(s)]);
                }
                double denom = 0.0;
                for (std::int64_t s = 0; s <= t; ++s) {
                    auto& e = scores[static_cast<std::size_t>(s)];
                    e = std::exp(e - max_s);
                    denom += e;
                }
                float* out = attn.row(t).data() + head * hd;
                std::fill_n(out, hd, 0.0f);
                for (std::int64_t s = 0; s <= t; ++s) {
                    const float p = static_cast<float>(scores[static_cast<std::size_t>(s)] / denom);
                    const float* vh = v.row(s).data() + kvh * hd;
                    for (std::int64_t d = 0; d < hd; ++d) out[d] += p * vh[d];
                }
            }
        }

        for (std::int64_t t = 0; t < T; ++t) {
            matvec(L.o, D, Q, attn.row(t).data(), proj.data());
            auto ht = h.row(t);
            for (std::int64_t d = 0; d < D; ++d) ht[d] += proj[static_cast<std::size_t>(d)];

            rms_norm(ht.data(), L.post_norm, c.norm_eps, xn.row(t).data());
            matvec(L.gate, I, D, xn.row(t).data(), gate.data());
            matvec(L.up, I, D, xn.row(t).data(), up.data());
            for (std::int64_t i = 0; i < I; ++i) {
                gate[static_cast<std::size_t>(i)] = silu(gate[static_cast<std::size_t>(i)]) * up[static_cast<std::size_t>(i)];
            }
            tap(l, t, std::span<const float>(gate));
            matvec(L.down, D, I, gate.data(), proj.data());
            for (std::int64_t d = 0; d < D; ++d) ht[d] += proj[static_cast<std::size_t>(d)];
        }
        check_finite(h.data, "hidden state", l);
    }

    if (!logits) return;
    *logits = Matrix(T, V);
    const std::vector<float>& head = c.tied ? embedding_ : lm_head_;
    for (std::int64_t t = 0; t < T; ++t) {
        rms_norm(h.row(t).data(), final_norm_, c.norm_eps, xn.row(t).data());
        matvec(head, V, D, xn.row(t).data(), logits->row(t).data());
    }
    check_finite(logits->data, "logits", c.num_layers);
}

Matrix ForwardModel::logits(std::span<const TokenId> ids) const {
    Matrix out;
    run(ids, [](std::int64_t, std::int64_t, std::span<const float>) {}, &out);
    return out;
}

std::vector<Matrix> ForwardModel::activations(std::span<const TokenId> ids) const {
    const auto T = static_cast<std::int64_t>(ids.size());
    std::vector<Matrix> out(static_cast<std::size_t>(config_.num_layers), Matrix(T, config_.intermediate_size));
    run(
        ids,
        [&](std::int64_t l, std::int64_t t, std::span<const float> a) {
            std::copy(a.begin(), a.end(), out[static_cast<std::size_t>(l)].row(t).begin());
        },
        nullptr);
    return out;
}

void ForwardModel::accumulate(std::span<const TokenId> ids, std::span<const double> weights, Reduction reduction,
                              ChannelAccumulator& acc) const {
    if (weights.size() != ids.size()) {
        throw Error(ErrorKind::InvalidArgument, "token weight count does not match sequence length");
    }
    if (acc.size() != static_cast<std::size_t>(config_.num_layers)) acc = zero_accumulator();
    run(
        ids,
        [&](std::int64_t l, std::int64_t t, std::span<const float> a) {
            const double w = weights[static_cast<std::size_t>(t)];
            if (w == 0.0) return;
            auto& row = acc[static_cast<std::size_t>(l)];
            if (reduction == Reduction::Squared) {
                for (std::size_t k = 0; k < a.size(); ++k) {
                    const double x = a[k];
                    row[k] += w * (x * x);
                }
            } else {
                for (std::size_t k = 0; k < a.size(); ++k) row[k] += w * std::fabs(static_cast<double>(a[k]));
            }
        },
        nullptr);
}

Matrix forward_logits(const WeightMap& weights, const ModelConfig& config, std::span<const TokenId> ids) {
    return ForwardModel(weights, config).logits(ids);
}

std::vector<Matrix> forward_activations(const WeightMap& weights, const ModelConfig& config,
                                        std::span<const TokenId> ids) {
    return ForwardModel(weights, config).activations(ids);
}

ChannelAccumulator forward_collect(const WeightMap& weights, const ModelConfig& config,
                                   const CalibrationBatch& batch, std::span<const double> token_weights,
                                   Reduction reduction) {
    if (static_cast<std::int64_t>(token_weights.size()) != batch.positions()) {
        throw Error(ErrorKind::InvalidArgument, "token weights must cover every batch position");
    }
    const ForwardModel model(weights, config);
    ChannelAccumulator acc = model.zero_accumulator();
    std::size_t offset = 0;
    for (const auto& seq : batch.sequences) {
        model.accumulate(seq, token_weights.subspan(offset, seq.size()), reduction, acc);
        offset += seq.size();
    }
    return acc;
}

}  // namespace compact
