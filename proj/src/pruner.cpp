#include "compact/pruner.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>

#include "compact/corpus.hpp"
#include "compact/error.hpp"

namespace compact {

namespace {

void check_bounds(const ModelConfig& c, std::int64_t v_prime, std::int64_t i_prime) {
    if (v_prime < 1 || v_prime > c.vocab_size) {
        throw Error(ErrorKind::InvalidArgument,
                    "V' = " + std::to_string(v_prime) + " outside [1, " + std::to_string(c.vocab_size) + "]");
    }
    if (i_prime < 1 || i_prime > c.intermediate_size) {
        throw Error(ErrorKind::InvalidArgument,
                    "I' = " + std::to_string(i_prime) + " outside [1, " + std::to_string(c.intermediate_size) + "]");
    }
}

std::int64_t elements(const WeightMap& w, const std::string& name) {
    const auto* t = w.find(name);
    return t ? t->numel() : 0;
}

void write_json(const nlohmann::json& j, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw Error(ErrorKind::Io, "cannot open '" + path.string() + "' for writing");
    out << j.dump(2) << '\n';
    if (!out) throw Error(ErrorKind::Io, "write to '" + path.string() + "' failed");
}

}  // namespace

nlohmann::json ParamCensus::to_json() const {
    return {{"vocab", vocab},
            {"ffn", ffn},
            {"attention", attention},
            {"other", other},
            {"total", total},
            {"proportions",
             {{"vocab", vocab_fraction()},
              {"ffn", ffn_fraction()},
              {"attention", attention_fraction()},
              {"other", other_fraction()}}}};
}

ParamCensus param_counts(const ModelConfig& c) {
    c.validate();
    const std::int64_t V = c.vocab_size, D = c.hidden_size, I = c.intermediate_size, L = c.num_layers;
    ParamCensus p;
    p.vocab = (c.tied ? 1 : 2) * V * D;
    p.ffn = 3 * L * D * I;
    // 2 L D^2 (1 + 1/H): q and o are D x D, k and v are (D/H) x D with D/H = kv_dim.
    p.attention = 2 * L * D * D + 2 * L * D * c.kv_dim();
    p.other = (2 * L + 1) * D + (c.attention_bias ? L * (D + 2 * c.kv_dim()) : 0);
    p.total = p.vocab + p.ffn + p.attention + p.other;
    return p;
}

ParamCensus param_counts(const ModelConfig& c, const WeightMap& w) {
    ParamCensus p;
    p.vocab = elements(w, names::embedding()) + elements(w, names::lm_head());
    for (std::int64_t l = 0; l < c.num_layers; ++l) {
        p.ffn += elements(w, names::ffn_gate(l)) + elements(w, names::ffn_up(l)) + elements(w, names::ffn_down(l));
        p.attention += elements(w, names::attn_q(l)) + elements(w, names::attn_k(l)) + elements(w, names::attn_v(l)) +
                       elements(w, names::attn_o(l));
    }
    p.total = w.total_elements();
    p.other = p.total - p.vocab - p.ffn - p.attention;
    return p;
}

double pruning_ratio(const ModelConfig& c, std::int64_t v_prime, std::int64_t i_prime) {
    check_bounds(c, v_prime, i_prime);
    const ParamCensus p = param_counts(c);
    const std::int64_t removed = (c.tied ? 1 : 2) * (c.vocab_size - v_prime) * c.hidden_size +
                                 3 * c.num_layers * c.hidden_size * (c.intermediate_size - i_prime);
    return static_cast<double>(removed) / static_cast<double>(p.total);
}

std::vector<PlanRow> enumerate_configs(const ModelConfig& c, double target, std::int64_t vocab_step,
                                       std::int64_t inter_step, double tolerance, std::int64_t vocab_floor) {
    if (vocab_step < 1 || inter_step < 1) throw Error(ErrorKind::InvalidArgument, "sweep steps must be >= 1");
    if (!(target >= 0.0 && target < 1.0)) throw Error(ErrorKind::InvalidArgument, "target ratio must be in [0, 1)");
    if (!(tolerance >= 0.0)) throw Error(ErrorKind::InvalidArgument, "tolerance must be >= 0");
    vocab_floor = std::max<std::int64_t>(vocab_floor, 1);

    std::vector<PlanRow> rows;
    for (std::int64_t v = c.vocab_size; v >= vocab_floor; v -= vocab_step) {
        for (std::int64_t i = c.intermediate_size; i >= 1; i -= inter_step) {
            const double r = pruning_ratio(c, v, i);
            if (std::fabs(r - target) <= tolerance) rows.push_back({v, i, r});
        }
    }
    return rows;
}

nlohmann::json plan_to_json(const std::vector<PlanRow>& rows) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& r : rows) arr.push_back({{"V_prime", r.v_prime}, {"I_prime", r.i_prime}, {"ratio", r.ratio}});
    return arr;
}

ModelConfig shrink_config(const ModelConfig& c, std::int64_t v_prime, std::int64_t i_prime) {
    check_bounds(c, v_prime, i_prime);
    ModelConfig out = c;
    out.vocab_size = v_prime;
    out.intermediate_size = i_prime;
    return out;
}

WeightMap prune_ffn(const WeightMap& weights, const ModelConfig& c, const ChannelSelection& sel) {
    if (sel.retained.size() != static_cast<std::size_t>(c.num_layers) || sel.pruned.size() != sel.retained.size()) {
        throw Error(ErrorKind::InvalidArgument, "channel selection covers " + std::to_string(sel.retained.size()) +
                                                    " layers, model has " + std::to_string(c.num_layers));
    }
    WeightMap out = weights;
    for (std::int64_t l = 0; l < c.num_layers; ++l) {
        const auto& keep = sel.retained[static_cast<std::size_t>(l)];
        const auto& drop = sel.pruned[static_cast<std::size_t>(l)];
        if (static_cast<std::int64_t>(keep.size() + drop.size()) != c.intermediate_size ||
            keep.size() != sel.retained.front().size()) {
            throw Error(ErrorKind::InvalidArgument,
                        "channel selection of layer " + std::to_string(l) + " does not partition the FFN width");
        }
        if (drop.empty()) continue;
        out.insert(take_rows(weights.at(names::ffn_gate(l)), keep));
        out.insert(take_rows(weights.at(names::ffn_up(l)), keep));
        out.insert(take_cols(weights.at(names::ffn_down(l)), keep));
    }
    return out;
}

WeightMap prune_vocab(const WeightMap& weights, const ModelConfig& c, std::int64_t v_prime) {
    check_bounds(c, v_prime, c.intermediate_size);
    if (v_prime == c.vocab_size) return weights;
    const IndexSet keep = iota_indices(0, v_prime);
    WeightMap out = weights;
    out.insert(take_rows(weights.at(names::embedding()), keep));
    if (!c.tied) out.insert(take_rows(weights.at(names::lm_head()), keep));
    return out;
}

nlohmann::json PruneReport::to_json() const {
    return {{"achieved_ratio", achieved_ratio},
            {"V_prime", v_prime},
            {"I_prime", i_prime},
            {"scorer", scorer_name(scorer)},
            {"n_samples", n_samples},
            {"seq_len", seq_len},
            {"positions_used", positions_used},
            {"positions_total", positions_total},
            {"params_before", params_before},
            {"params_after", params_after},
            {"calibration", calibration},
            {"elapsed_seconds", elapsed_seconds},
            {"warnings", warnings}};
}

PruneResult compact(const WeightMap& weights, const ModelConfig& config, const BpeTokenizer& tokenizer,
                    const CalibrationBatch& batch, const PruneSpec& spec) {
    const auto start = std::chrono::steady_clock::now();
    check_bounds(config, spec.v_prime, spec.i_prime);
    if (static_cast<std::int64_t>(tokenizer.size()) > config.vocab_size) {
        throw Error(ErrorKind::InvalidArgument, "tokenizer has more tokens than the model vocabulary");
    }
    // A tokenizer that no longer holds the rare tokens cannot mask them.
    if (spec.v_prime < config.vocab_size && static_cast<std::int64_t>(tokenizer.size()) <= spec.v_prime) {
        throw Error(ErrorKind::InvalidArgument,
                    "calibration tokenizer has only " + std::to_string(tokenizer.size()) +
                        " tokens; scoring needs the unpruned tokenizer");
    }

    const RareTokenSet rare = rare_set(tokenizer, spec.v_prime, config.vocab_size);

    const ForwardModel model(weights, config);
    ImportanceTable importance = score(model, batch, rare, spec.scorer, spec.threads);
    ChannelSelection selection = select_pruned_channels(importance, spec.i_prime);

    WeightMap pruned = prune_ffn(weights, config, selection);
    pruned = prune_vocab(pruned, config, spec.v_prime);
    BpeTokenizer pruned_tok = prune_tokenizer(tokenizer, rare);
    ModelConfig pruned_cfg = shrink_config(config, spec.v_prime, spec.i_prime);

    const auto check = validate(pruned, pruned_cfg);
    if (!check.ok()) {
        throw Error(ErrorKind::Validation, "pruned model failed validation: " + check.findings.front().tensor);
    }

    PruneReport report;
    report.params_before = weights.total_elements();
    report.params_after = pruned.total_elements();
    report.achieved_ratio = static_cast<double>(report.params_before - report.params_after) /
                            static_cast<double>(report.params_before);
    report.v_prime = spec.v_prime;
    report.i_prime = spec.i_prime;
    report.scorer = spec.scorer;
    report.n_samples = static_cast<std::int64_t>(batch.sequences.size());
    report.seq_len = spec.seq_len;
    report.positions_used = importance.positions_used;
    report.positions_total = batch.positions();
    report.calibration = spec.calibration;
    if (report.positions_used * 100 < report.positions_total) {
        report.warnings.push_back("only " + std::to_string(report.positions_used) + " of " +
                                  std::to_string(report.positions_total) +
                                  " calibration positions carry common tokens; scores are statistically weak");
    }
    report.elapsed_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

    return PruneResult{std::move(pruned),  std::move(pruned_cfg), std::move(pruned_tok),
                       std::move(importance), std::move(selection), std::move(report)};
}

PruneResult compact(const WeightMap& weights, const ModelConfig& config, const BpeTokenizer& tokenizer,
                    const std::vector<std::string>& documents, const PruneSpec& spec) {
    const auto batch = sample_calibration(documents, tokenizer, spec.n_samples, spec.seq_len, spec.seed);
    return compact(weights, config, tokenizer, batch, spec);
}

void write_prune_dir(const PruneResult& result, const std::filesystem::path& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw Error(ErrorKind::Io, "cannot create '" + dir.string() + "': " + ec.message());
    save_container(result.weights, dir / layout::kModel);
    save_tokenizer(result.tokenizer, dir / layout::kTokenizer);
    save_config(result.config, dir / layout::kConfig);
    write_json(result.report.to_json(), dir / layout::kReport);
    write_json(result.importance.to_json(), dir / layout::kImportance);
}

nlohmann::json VerifyReport::to_json() const { return {{"ok", ok()}, {"findings", findings}}; }

VerifyReport verify_dir(const std::filesystem::path& dir) {
    VerifyReport out;
    auto finding = [&](std::string msg) { out.findings.push_back(std::move(msg)); };

    Model model = load_model(dir / layout::kConfig, dir / layout::kModel);
    for (const auto& f : validate(model.weights, model.config).findings) {
        finding(std::string(finding_kind_name(f.kind)) + " tensor " + f.tensor + ": " + f.detail);
    }

    std::optional<BpeTokenizer> tok;
    try {
        tok = load_tokenizer(dir / layout::kTokenizer);
    } catch (const Error& e) {
        if (e.kind() == ErrorKind::Io) throw;
        finding(std::string("tokenizer: ") + e.what());
    }
    if (tok && static_cast<std::int64_t>(tok->size()) > model.config.vocab_size) {
        finding("tokenizer has " + std::to_string(tok->size()) + " tokens but the model vocabulary is " +
                std::to_string(model.config.vocab_size));
    }

    const auto report_path = dir / layout::kReport;
    if (std::filesystem::exists(report_path)) {
        try {
            std::ifstream in(report_path);
            const auto j = nlohmann::json::parse(in);
            if (j.at("V_prime").get<std::int64_t>() != model.config.vocab_size) {
                finding("report V_prime does not match config vocab_size");
            }
            if (j.at("I_prime").get<std::int64_t>() != model.config.intermediate_size) {
                finding("report I_prime does not match config intermediate_size");
            }
            const auto before = j.at("params_before").get<std::int64_t>();
            const auto after = j.at("params_after").get<std::int64_t>();
            if (after != model.weights.total_elements()) finding("report params_after does not match the container");
            const double ratio = j.at("achieved_ratio").get<double>();
            if (before <= 0 || std::fabs(ratio - static_cast<double>(before - after) / before) > 1e-9) {
                finding("report achieved_ratio is inconsistent with its parameter counts");
            }
        } catch (const nlohmann::json::exception& e) {
            finding(std::string("report.json: ") + e.what());
        }
    }

    const auto importance_path = dir / layout::kImportance;
    if (std::filesystem::exists(importance_path)) {
        try {
            std::ifstream in(importance_path);
            const auto table = ImportanceTable::from_json(nlohmann::json::parse(in));
            if (static_cast<std::int64_t>(table.layers.size()) != model.config.num_layers) {
                finding("importance table layer count does not match the model");
            }
            for (const auto& layer : table.layers) {
                if (std::any_of(layer.begin(), layer.end(), [](double s) { return !(s >= 0.0); })) {
                    finding("importance table holds a negative or non-finite score");
                    break;
                }
            }
        } catch (const std::exception& e) {
            finding(std::string("importance.json: ") + e.what());
        }
    }

    if (out.ok()) {
        try {
            TokenSequence probe;
            for (std::int64_t i = 0; i < std::min<std::int64_t>(8, model.config.vocab_size); ++i) {
                probe.push_back(static_cast<TokenId>(i));
            }
            forward_logits(model.weights, model.config, probe);
        } catch (const Error& e) {
            finding(std::string("forward pass: ") + e.what());
        }
    }
    return out;
}

}  // namespace compact
