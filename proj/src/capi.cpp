#include "compact/compact.h"

#include <cmath>
#include <cstdlib>
#include <cstring>
#include <new>
#include <optional>
#include <string>

#include "compact/corpus.hpp"
#include "compact/error.hpp"
#include "compact/forward.hpp"
#include "compact/pruner.hpp"
#include "compact/scoring.hpp"
#include "compact/synth.hpp"
#include "compact/tensorstore.hpp"
#include "compact/tokenizer.hpp"

struct compact_config {
    compact::ModelConfig config;
};

struct compact_model {
    compact::Model model;
    compact_config config_handle;
};

struct compact_tokenizer {
    compact::BpeTokenizer tok;
};

struct compact_corpus {
    compact::CalibrationBatch batch;
    std::string source;
    std::int64_t seq_len;
};

namespace {

thread_local std::string g_last_error;

compact_status status_of(compact::ErrorKind kind) {
    switch (kind) {
        case compact::ErrorKind::InvalidArgument: return COMPACT_ERR_INVALID_ARGUMENT;
        case compact::ErrorKind::Io: return COMPACT_ERR_IO;
        case compact::ErrorKind::Format: return COMPACT_ERR_FORMAT;
        case compact::ErrorKind::Validation: return COMPACT_ERR_VALIDATION;
        case compact::ErrorKind::Numeric: return COMPACT_ERR_NUMERIC;
    }
    return COMPACT_ERR_INTERNAL;
}

compact_status fail(compact_status status, std::string message) {
    g_last_error = std::move(message);
    return status;
}

template <typename F>
compact_status guarded(F&& body) {
    try {
        g_last_error.clear();
        return body();
    } catch (const compact::Error& e) {
        return fail(status_of(e.kind()), e.what());
    } catch (const std::bad_alloc&) {
        return fail(COMPACT_ERR_INTERNAL, "out of memory");
    } catch (const std::exception& e) {
        return fail(COMPACT_ERR_INTERNAL, e.what());
    }
}

char* dup_string(const std::string& s) {
    char* out = static_cast<char*>(std::malloc(s.size() + 1));
    if (!out) throw std::bad_alloc();
    std::memcpy(out, s.data(), s.size());
    out[s.size()] = '\0';
    return out;
}

compact_status emit_json(const nlohmann::json& j, char** out_json) {
    *out_json = dup_string(j.dump(2));
    return COMPACT_OK;
}

compact::Scorer to_scorer(compact_scorer s) {
    switch (s) {
        case COMPACT_SCORER_COMMON_ACT2: return compact::Scorer::CommonAct2;
        case COMPACT_SCORER_ACT2: return compact::Scorer::Act2;
        case COMPACT_SCORER_ABS_ACT: return compact::Scorer::AbsAct;
    }
    throw compact::Error(compact::ErrorKind::InvalidArgument, "unknown scorer");
}

#define COMPACT_REQUIRE(cond)                                                              \
    do {                                                                                   \
        if (!(cond)) return fail(COMPACT_ERR_INVALID_ARGUMENT, "null argument: " #cond);   \
    } while (0)

}  // namespace

extern "C" {

const char* compact_version(void) { return "0.1.0"; }

const char* compact_last_error(void) { return g_last_error.c_str(); }

const char* compact_status_string(compact_status status) {
    switch (status) {
        case COMPACT_OK: return "ok";
        case COMPACT_ERR_INVALID_ARGUMENT: return "invalid argument";
        case COMPACT_ERR_IO: return "i/o error";
        case COMPACT_ERR_FORMAT: return "format error";
        case COMPACT_ERR_VALIDATION: return "validation error";
        case COMPACT_ERR_NUMERIC: return "numeric error";
        case COMPACT_ERR_BUFFER_TOO_SMALL: return "buffer too small";
        case COMPACT_ERR_INTERNAL: return "internal error";
    }
    return "unknown status";
}

void compact_string_free(char* str) { std::free(str); }

// --- config -----------------------------------------------------------------

compact_status compact_config_load(const char* path, compact_config** out) {
    COMPACT_REQUIRE(path && out);
    return guarded([&] {
        *out = new compact_config{compact::load_config(path)};
        return COMPACT_OK;
    });
}

void compact_config_free(compact_config* cfg) { delete cfg; }

int64_t compact_config_vocab_size(const compact_config* cfg) { return cfg ? cfg->config.vocab_size : 0; }

int64_t compact_config_inter_size(const compact_config* cfg) { return cfg ? cfg->config.intermediate_size : 0; }

compact_status compact_config_census_json(const compact_config* cfg, char** out_json) {
    COMPACT_REQUIRE(cfg && out_json);
    return guarded([&] { return emit_json(compact::param_counts(cfg->config).to_json(), out_json); });
}

compact_status compact_pruning_ratio(const compact_config* cfg, int64_t vocab_size, int64_t inter_size,
                                     double* out_ratio) {
    COMPACT_REQUIRE(cfg && out_ratio);
    return guarded([&] {
        *out_ratio = compact::pruning_ratio(cfg->config, vocab_size, inter_size);
        return COMPACT_OK;
    });
}

compact_status compact_sweep_json(const compact_config* cfg, double target_ratio, int64_t vocab_step,
                                  int64_t inter_step, double tolerance, int64_t vocab_floor, char** out_json) {
    COMPACT_REQUIRE(cfg && out_json);
    return guarded([&] {
        const auto rows =
            compact::enumerate_configs(cfg->config, target_ratio, vocab_step, inter_step, tolerance, vocab_floor);
        return emit_json(compact::plan_to_json(rows), out_json);
    });
}

compact_status compact_plan(const compact_config* cfg, double target_ratio, int64_t vocab_step, int64_t inter_step,
                            double tolerance, int64_t vocab_floor, int64_t* out_vocab_size,
                            int64_t* out_inter_size) {
    COMPACT_REQUIRE(cfg && out_vocab_size && out_inter_size);
    return guarded([&] {
        const auto rows =
            compact::enumerate_configs(cfg->config, target_ratio, vocab_step, inter_step, tolerance, vocab_floor);
        if (rows.empty()) {
            return fail(COMPACT_ERR_INVALID_ARGUMENT, "no (V', I') grid point lies within tolerance of the target");
        }
        const compact::PlanRow* best = &rows.front();
        for (const auto& r : rows) {
            if (std::fabs(r.ratio - target_ratio) < std::fabs(best->ratio - target_ratio)) best = &r;
        }
        *out_vocab_size = best->v_prime;
        *out_inter_size = best->i_prime;
        return COMPACT_OK;
    });
}

// --- model ------------------------------------------------------------------

compact_status compact_model_load(const char* config_path, const char* weights_path, compact_model** out) {
    COMPACT_REQUIRE(config_path && weights_path && out);
    return guarded([&] {
        auto* m = new compact_model{compact::load_model(config_path, weights_path), {}};
        m->config_handle.config = m->model.config;
        *out = m;
        return COMPACT_OK;
    });
}

void compact_model_free(compact_model* model) { delete model; }

const compact_config* compact_model_config(const compact_model* model) {
    return model ? &model->config_handle : nullptr;
}

compact_status compact_model_census_json(const compact_model* model, char** out_json) {
    COMPACT_REQUIRE(model && out_json);
    return guarded([&] {
        const auto formula = compact::param_counts(model->model.config);
        const auto actual = compact::param_counts(model->model.config, model->model.weights);
        nlohmann::json j = formula.to_json();
        j["from_weights"] = actual.to_json();
        return emit_json(j, out_json);
    });
}

compact_status compact_model_validate_json(const compact_model* model, size_t* out_findings, char** out_json) {
    COMPACT_REQUIRE(model && out_findings && out_json);
    return guarded([&] {
        const auto report = compact::validate(model->model.weights, model->model.config);
        *out_findings = report.findings.size();
        return emit_json(report.to_json(), out_json);
    });
}

compact_status compact_model_forward_logits(const compact_model* model, const int32_t* ids, size_t n_ids, float* out,
                                            size_t capacity) {
    COMPACT_REQUIRE(model && (ids || n_ids == 0) && (out || capacity == 0));
    return guarded([&] {
        const auto need = n_ids * static_cast<size_t>(model->model.config.vocab_size);
        if (capacity < need) return fail(COMPACT_ERR_BUFFER_TOO_SMALL, "logit buffer needs " + std::to_string(need));
        const auto logits = compact::forward_logits(model->model.weights, model->model.config, {ids, n_ids});
        std::copy(logits.data.begin(), logits.data.end(), out);
        return COMPACT_OK;
    });
}

// --- tokenizer --------------------------------------------------------------

compact_status compact_tokenizer_load(const char* path, compact_tokenizer** out) {
    COMPACT_REQUIRE(path && out);
    return guarded([&] {
        *out = new compact_tokenizer{compact::load_tokenizer(path)};
        return COMPACT_OK;
    });
}

void compact_tokenizer_free(compact_tokenizer* tok) { delete tok; }

compact_status compact_tokenizer_save(const compact_tokenizer* tok, const char* path) {
    COMPACT_REQUIRE(tok && path);
    return guarded([&] {
        compact::save_tokenizer(tok->tok, path);
        return COMPACT_OK;
    });
}

size_t compact_tokenizer_size(const compact_tokenizer* tok) { return tok ? tok->tok.size() : 0; }

int64_t compact_tokenizer_alphabet_floor(const compact_tokenizer* tok) {
    return tok ? tok->tok.alphabet_floor() : 0;
}

compact_status compact_tokenizer_encode(const compact_tokenizer* tok, const char* text, size_t len, int32_t* out,
                                        size_t capacity, size_t* out_len) {
    COMPACT_REQUIRE(tok && (text || len == 0) && out_len && (out || capacity == 0));
    return guarded([&] {
        const auto ids = tok->tok.encode({text ? text : "", len});
        *out_len = ids.size();
        if (ids.size() > capacity) return fail(COMPACT_ERR_BUFFER_TOO_SMALL, "token buffer too small");
        std::copy(ids.begin(), ids.end(), out);
        return COMPACT_OK;
    });
}

compact_status compact_tokenizer_decode(const compact_tokenizer* tok, const int32_t* ids, size_t n_ids,
                                        char** out_bytes, size_t* out_len) {
    COMPACT_REQUIRE(tok && (ids || n_ids == 0) && out_bytes && out_len);
    return guarded([&] {
        const auto bytes = tok->tok.decode({ids, n_ids});
        *out_bytes = dup_string(bytes);
        *out_len = bytes.size();
        return COMPACT_OK;
    });
}

compact_status compact_tokenizer_prune(const compact_tokenizer* tok, int64_t vocab_size, compact_tokenizer** out) {
    COMPACT_REQUIRE(tok && out);
    return guarded([&] {
        const auto rare = compact::rare_set(tok->tok, vocab_size);
        *out = new compact_tokenizer{compact::prune_tokenizer(tok->tok, rare)};
        return COMPACT_OK;
    });
}

compact_status compact_retok_stats_json(const compact_tokenizer* original, const compact_tokenizer* pruned,
                                        const char* const* corpus_paths, size_t n_paths, char** out_json) {
    COMPACT_REQUIRE(original && pruned && corpus_paths && out_json);
    return guarded([&] {
        std::vector<compact::CorpusSource> sources;
        for (size_t i = 0; i < n_paths; ++i) {
            COMPACT_REQUIRE(corpus_paths[i]);
            sources.push_back({corpus_paths[i], compact::read_documents(corpus_paths[i])});
        }
        const auto report = compact::retok_stats(original->tok, pruned->tok, sources);
        nlohmann::json j = report.to_json();
        j["vocab_original"] = original->tok.size();
        j["vocab_pruned"] = pruned->tok.size();
        return emit_json(j, out_json);
    });
}

// --- corpus / scoring / pipeline ----------------------------------------------

compact_status compact_corpus_load(const char* path, const compact_tokenizer* tok, int64_t n_samples,
                                   int64_t seq_len, uint64_t seed, compact_corpus** out) {
    COMPACT_REQUIRE(path && tok && out);
    return guarded([&] {
        *out = new compact_corpus{compact::load_corpus(path, tok->tok, n_samples, seq_len, seed), path, seq_len};
        return COMPACT_OK;
    });
}

void compact_corpus_free(compact_corpus* corpus) { delete corpus; }

size_t compact_corpus_num_sequences(const compact_corpus* corpus) {
    return corpus ? corpus->batch.sequences.size() : 0;
}

size_t compact_corpus_num_positions(const compact_corpus* corpus) {
    return corpus ? static_cast<size_t>(corpus->batch.positions()) : 0;
}

compact_status compact_score_json(const compact_model* model, const compact_tokenizer* tok,
                                  const compact_corpus* corpus, int64_t vocab_size, compact_scorer scorer,
                                  unsigned threads, char** out_json) {
    COMPACT_REQUIRE(model && tok && corpus && out_json);
    return guarded([&] {
        const auto rare = compact::rare_set(tok->tok, vocab_size, model->model.config.vocab_size);
        const auto table = compact::score(model->model.weights, model->model.config, corpus->batch, rare,
                                          to_scorer(scorer), threads);
        return emit_json(table.to_json(), out_json);
    });
}

compact_status compact_prune(const compact_model* model, const compact_tokenizer* tok, const compact_corpus* corpus,
                             const compact_prune_options* options, const char* out_dir, char** out_report_json) {
    COMPACT_REQUIRE(model && tok && corpus && options && out_dir && out_report_json);
    return guarded([&] {
        compact::PruneSpec spec;
        spec.v_prime = options->vocab_size;
        spec.i_prime = options->inter_size;
        spec.scorer = to_scorer(options->scorer);
        spec.calibration = options->calibration ? options->calibration : corpus->source;
        spec.n_samples = options->n_samples;
        spec.seq_len = options->seq_len > 0 ? options->seq_len : corpus->seq_len;
        spec.seed = options->seed;
        spec.threads = options->threads;
        const auto result = compact::compact(model->model.weights, model->model.config, tok->tok, corpus->batch, spec);
        compact::write_prune_dir(result, out_dir);
        return emit_json(result.report.to_json(), out_report_json);
    });
}

compact_status compact_verify_dir(const char* dir, size_t* out_findings, char** out_json) {
    COMPACT_REQUIRE(dir && out_findings && out_json);
    return guarded([&] {
        const auto report = compact::verify_dir(dir);
        *out_findings = report.findings.size();
        return emit_json(report.to_json(), out_json);
    });
}

compact_status compact_write_tiny_model(const char* dir, uint64_t seed, size_t n_docs) {
    COMPACT_REQUIRE(dir);
    return guarded([&] {
        compact::synth::write_tiny_model(dir, seed, n_docs);
        return COMPACT_OK;
    });
}

}  // extern "C"
