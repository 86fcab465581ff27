// Command-line front end. Talks to the toolkit only through compact.h.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "compact/compact.h"
#include "json.hpp"

namespace fs = std::filesystem;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitFindings = 1;
constexpr int kExitError = 2;

struct CliError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

void check(compact_status st) {
    if (st != COMPACT_OK) {
        const std::string msg = compact_last_error();
        throw CliError(msg.empty() ? compact_status_string(st) : msg);
    }
}

struct OwnedString {
    char* ptr = nullptr;
    ~OwnedString() { compact_string_free(ptr); }
    nlohmann::json json() const { return nlohmann::json::parse(ptr); }
};

template <typename T, void (*Free)(T*)>
struct Deleter {
    void operator()(T* p) const { Free(p); }
};
using ConfigPtr = std::unique_ptr<compact_config, Deleter<compact_config, compact_config_free>>;
using ModelPtr = std::unique_ptr<compact_model, Deleter<compact_model, compact_model_free>>;
using TokenizerPtr = std::unique_ptr<compact_tokenizer, Deleter<compact_tokenizer, compact_tokenizer_free>>;
using CorpusPtr = std::unique_ptr<compact_corpus, Deleter<compact_corpus, compact_corpus_free>>;

// RunConfig: every flag any subcommand accepts.
struct RunConfig {
    std::string model;
    std::string tokenizer;
    std::string config;
    std::string out;
    std::string report;
    std::vector<std::string> calib;
    std::optional<std::int64_t> vocab_size;
    std::optional<std::int64_t> inter_size;
    std::optional<double> target_ratio;
    std::string scorer = "common-act2";
    std::int64_t samples = 256;
    std::int64_t seq_len = 2048;
    std::uint64_t seed = 0;
    std::optional<unsigned> threads;
    std::int64_t vocab_step = 256;
    std::int64_t inter_step = 128;
    double tolerance = 0.005;
    std::string dir;
};

// --model may name a directory holding model.safetensors, config.json, tokenizer.json.
void resolve_paths(RunConfig& rc) {
    if (!rc.model.empty() && fs::is_directory(rc.model)) {
        const fs::path dir = rc.model;
        rc.model = (dir / "model.safetensors").string();
        if (rc.config.empty()) rc.config = (dir / "config.json").string();
        if (rc.tokenizer.empty() && fs::exists(dir / "tokenizer.json")) rc.tokenizer = (dir / "tokenizer.json").string();
        if (rc.calib.empty() && fs::exists(dir / "corpus.txt")) rc.calib.push_back((dir / "corpus.txt").string());
    }
}

void require(bool cond, const std::string& what) {
    if (!cond) throw CliError(what);
}

compact_scorer scorer_of(const std::string& name) {
    if (name == "common-act2") return COMPACT_SCORER_COMMON_ACT2;
    if (name == "act2") return COMPACT_SCORER_ACT2;
    if (name == "abs-act") return COMPACT_SCORER_ABS_ACT;
    throw CliError("unknown scorer '" + name + "' (expected common-act2, act2 or abs-act)");
}

unsigned thread_count(const RunConfig& rc) {
    if (rc.threads) return std::max(1u, *rc.threads);
    if (const char* env = std::getenv("COMPACT_THREADS")) {
        try {
            return static_cast<unsigned>(std::max(1, std::stoi(env)));
        } catch (const std::exception&) {
            throw CliError(std::string("COMPACT_THREADS is not a number: ") + env);
        }
    }
    return 1;
}

void write_report(const RunConfig& rc, const nlohmann::json& j) {
    if (rc.report.empty()) return;
    std::ofstream out(rc.report, std::ios::trunc);
    out << j.dump(2) << '\n';
    if (!out) throw CliError("cannot write report '" + rc.report + "'");
}

ConfigPtr load_config(const std::string& path) {
    require(!path.empty(), "--config is required");
    compact_config* cfg = nullptr;
    check(compact_config_load(path.c_str(), &cfg));
    return ConfigPtr(cfg);
}

ModelPtr load_model(const RunConfig& rc) {
    require(!rc.model.empty(), "--model is required");
    require(!rc.config.empty(), "--config is required");
    compact_model* m = nullptr;
    check(compact_model_load(rc.config.c_str(), rc.model.c_str(), &m));
    return ModelPtr(m);
}

TokenizerPtr load_tokenizer(const RunConfig& rc) {
    require(!rc.tokenizer.empty(), "--tokenizer is required");
    compact_tokenizer* t = nullptr;
    check(compact_tokenizer_load(rc.tokenizer.c_str(), &t));
    return TokenizerPtr(t);
}

CorpusPtr load_corpus(const RunConfig& rc, const compact_tokenizer* tok) {
    require(rc.calib.size() == 1, "exactly one --calib corpus is required");
    compact_corpus* c = nullptr;
    check(compact_corpus_load(rc.calib.front().c_str(), tok, rc.samples, rc.seq_len, rc.seed, &c));
    return CorpusPtr(c);
}

void print_census(const nlohmann::json& census) {
    std::printf("%-10s %16s %10s\n", "group", "parameters", "fraction");
    for (const char* group : {"vocab", "ffn", "attention", "other"}) {
        std::printf("%-10s %16lld %10.4f\n", group, census[group].get<long long>(),
                    census["proportions"][group].get<double>());
    }
    std::printf("%-10s %16lld %10.4f\n", "total", census["total"].get<long long>(), 1.0);
}

int cmd_analyze(RunConfig rc) {
    resolve_paths(rc);
    OwnedString js;
    if (!rc.model.empty()) {
        const auto model = load_model(rc);
        check(compact_model_census_json(model.get(), &js.ptr));
    } else {
        const auto cfg = load_config(rc.config);
        check(compact_config_census_json(cfg.get(), &js.ptr));
    }
    const auto census = js.json();
    print_census(census);
    write_report(rc, census);
    return kExitOk;
}

std::int64_t vocab_floor_of(const RunConfig& rc) {
    if (rc.tokenizer.empty()) return 1;
    const auto tok = load_tokenizer(rc);
    return compact_tokenizer_alphabet_floor(tok.get());
}

int cmd_sweep(RunConfig rc) {
    resolve_paths(rc);
    require(rc.target_ratio.has_value(), "--target-ratio is required");
    const auto cfg = load_config(rc.config);
    OwnedString js;
    check(compact_sweep_json(cfg.get(), *rc.target_ratio, rc.vocab_step, rc.inter_step, rc.tolerance,
                             vocab_floor_of(rc), &js.ptr));
    const auto rows = js.json();
    std::printf("%12s %12s %10s\n", "V'", "I'", "ratio");
    for (const auto& r : rows) {
        std::printf("%12lld %12lld %9.2f%%\n", r["V_prime"].get<long long>(), r["I_prime"].get<long long>(),
                    100.0 * r["ratio"].get<double>());
    }
    if (rows.empty()) std::fprintf(stderr, "compact: no grid point within tolerance of the target\n");
    write_report(rc, rows);
    return kExitOk;
}

int cmd_prune(RunConfig rc) {
    resolve_paths(rc);
    require(!rc.out.empty(), "--out is required");
    const bool explicit_sizes = rc.vocab_size || rc.inter_size;
    require(explicit_sizes != rc.target_ratio.has_value(),
            "give either --vocab-size/--inter-size or --target-ratio, not both");

    const auto model = load_model(rc);
    const auto tok = load_tokenizer(rc);
    const compact_config* cfg = compact_model_config(model.get());

    std::int64_t v_prime = rc.vocab_size.value_or(compact_config_vocab_size(cfg));
    std::int64_t i_prime = rc.inter_size.value_or(compact_config_inter_size(cfg));
    if (rc.target_ratio) {
        check(compact_plan(cfg, *rc.target_ratio, rc.vocab_step, rc.inter_step, rc.tolerance,
                           compact_tokenizer_alphabet_floor(tok.get()), &v_prime, &i_prime));
    }

    const auto corpus = load_corpus(rc, tok.get());

    const std::string calib = rc.calib.front();
    compact_prune_options opts{};
    opts.vocab_size = v_prime;
    opts.inter_size = i_prime;
    opts.scorer = scorer_of(rc.scorer);
    opts.n_samples = rc.samples;
    opts.seq_len = rc.seq_len;
    opts.seed = rc.seed;
    opts.threads = thread_count(rc);
    opts.calibration = calib.c_str();

    OwnedString js;
    check(compact_prune(model.get(), tok.get(), corpus.get(), &opts, rc.out.c_str(), &js.ptr));
    const auto report = js.json();
    std::printf("V' = %lld, I' = %lld, removed %.2f%% of parameters (%lld -> %lld)\n",
                report["V_prime"].get<long long>(), report["I_prime"].get<long long>(),
                100.0 * report["achieved_ratio"].get<double>(), report["params_before"].get<long long>(),
                report["params_after"].get<long long>());
    std::printf("calibration: %lld sequences, %lld of %lld positions used\n", report["n_samples"].get<long long>(),
                report["positions_used"].get<long long>(), report["positions_total"].get<long long>());
    for (const auto& w : report["warnings"]) std::fprintf(stderr, "compact: warning: %s\n", w.get<std::string>().c_str());
    std::printf("wrote %s\n", rc.out.c_str());
    write_report(rc, report);
    return kExitOk;
}

int cmd_score(RunConfig rc) {
    resolve_paths(rc);
    const auto model = load_model(rc);
    const auto tok = load_tokenizer(rc);
    const auto corpus = load_corpus(rc, tok.get());
    const std::int64_t v_prime = rc.vocab_size.value_or(compact_config_vocab_size(compact_model_config(model.get())));
    OwnedString js;
    check(compact_score_json(model.get(), tok.get(), corpus.get(), v_prime, scorer_of(rc.scorer), thread_count(rc),
                             &js.ptr));
    const auto table = js.json();
    if (rc.report.empty() && !rc.out.empty()) {
        fs::create_directories(rc.out);
        rc.report = (fs::path(rc.out) / "importance.json").string();
    }
    if (rc.report.empty()) {
        std::cout << table.dump(2) << '\n';
    } else {
        write_report(rc, table);
        std::printf("scored %zu layers over %lld positions -> %s\n", table["layers"].size(),
                    table["positions_used"].get<long long>(), rc.report.c_str());
    }
    return kExitOk;
}

int cmd_retok(RunConfig rc) {
    resolve_paths(rc);
    require(rc.vocab_size.has_value(), "--vocab-size is required");
    require(!rc.calib.empty(), "at least one --calib corpus is required");
    const auto orig = load_tokenizer(rc);
    compact_tokenizer* pruned_raw = nullptr;
    check(compact_tokenizer_prune(orig.get(), *rc.vocab_size, &pruned_raw));
    const TokenizerPtr pruned(pruned_raw);

    std::vector<const char*> paths;
    for (const auto& p : rc.calib) paths.push_back(p.c_str());
    OwnedString js;
    check(compact_retok_stats_json(orig.get(), pruned.get(), paths.data(), paths.size(), &js.ptr));
    const auto report = js.json();
    std::printf("%-40s %10s %10s %10s\n", "source", "words", "changed", "inflation");
    auto row = [](const nlohmann::json& s) {
        std::printf("%-40s %10lld %9.2f%% %10.4f\n", s["name"].get<std::string>().c_str(), s["words"].get<long long>(),
                    100.0 * s["changed_fraction"].get<double>(), s["inflation"].get<double>());
    };
    for (const auto& s : report["sources"]) row(s);
    if (report["sources"].size() > 1) row(report["overall"]);
    write_report(rc, report);
    return kExitOk;
}

int cmd_verify(RunConfig rc) {
    std::string dir = !rc.dir.empty() ? rc.dir : rc.out;
    require(!dir.empty(), "verify needs a directory");
    size_t findings = 0;
    OwnedString js;
    check(compact_verify_dir(dir.c_str(), &findings, &js.ptr));
    const auto report = js.json();
    for (const auto& f : report["findings"]) std::printf("finding: %s\n", f.get<std::string>().c_str());
    std::printf("%s: %s\n", dir.c_str(), findings == 0 ? "ok" : "FAILED");
    write_report(rc, report);
    return findings == 0 ? kExitOk : kExitFindings;
}

int cmd_make_tiny(const RunConfig& rc) {
    require(!rc.out.empty(), "--out is required");
    check(compact_write_tiny_model(rc.out.c_str(), rc.seed, static_cast<size_t>(rc.samples)));
    std::printf("wrote tiny model to %s\n", rc.out.c_str());
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"compact: joint vocabulary and FFN pruning for decoder-only transformers"};
    app.require_subcommand(1);
    RunConfig rc;

    auto add_model = [&](CLI::App* sub) {
        sub->add_option("--model", rc.model, "tensor container, or a directory holding model files");
        sub->add_option("--config", rc.config, "config.json");
        sub->add_option("--tokenizer", rc.tokenizer, "tokenizer.json");
    };
    auto add_calib = [&](CLI::App* sub) {
        sub->add_option("--calib", rc.calib, "calibration corpus, one document per line");
        sub->add_option("--samples", rc.samples, "calibration documents to sample")->capture_default_str();
        sub->add_option("--seq-len", rc.seq_len, "tokens kept per document")->capture_default_str();
        sub->add_option("--seed", rc.seed, "sampling seed")->capture_default_str();
        sub->add_option("--threads", rc.threads, "scoring workers (default: $COMPACT_THREADS or 1)");
        sub->add_option("--scorer", rc.scorer, "common-act2 | act2 | abs-act")->capture_default_str();
    };
    auto add_grid = [&](CLI::App* sub) {
        sub->add_option("--target-ratio", rc.target_ratio, "fraction of parameters to remove");
        sub->add_option("--vocab-step", rc.vocab_step, "V' grid step")->capture_default_str();
        sub->add_option("--inter-step", rc.inter_step, "I' grid step")->capture_default_str();
        sub->add_option("--tolerance", rc.tolerance, "accepted |ratio - target|")->capture_default_str();
    };

    auto* analyze = app.add_subcommand("analyze", "parameter census by group");
    add_model(analyze);
    analyze->add_option("--report", rc.report, "write the census as JSON");

    auto* sweep = app.add_subcommand("sweep", "enumerate (V', I') pairs near a target ratio");
    add_model(sweep);
    add_grid(sweep);
    sweep->add_option("--report", rc.report, "write the rows as JSON");

    auto* prune = app.add_subcommand("prune", "prune vocabulary and FFN channels");
    add_model(prune);
    add_calib(prune);
    add_grid(prune);
    prune->add_option("--vocab-size", rc.vocab_size, "V'");
    prune->add_option("--inter-size", rc.inter_size, "I'");
    prune->add_option("--out", rc.out, "output directory");
    prune->add_option("--report", rc.report, "also copy the run report here");

    auto* score = app.add_subcommand("score", "write the channel importance table");
    add_model(score);
    add_calib(score);
    score->add_option("--vocab-size", rc.vocab_size, "V' defining the rare-token mask");
    score->add_option("--out", rc.out, "directory for importance.json");
    score->add_option("--report", rc.report, "importance table path");

    auto* retok = app.add_subcommand("retok-stats", "words retokenized after vocabulary pruning");
    retok->add_option("--tokenizer", rc.tokenizer, "original tokenizer.json");
    retok->add_option("--model", rc.model, "directory holding tokenizer.json");
    retok->add_option("--vocab-size", rc.vocab_size, "V'");
    retok->add_option("--calib", rc.calib, "text corpus (repeatable, one source per file)");
    retok->add_option("--report", rc.report, "write the churn report as JSON");

    auto* verify = app.add_subcommand("verify", "check a pruned output directory");
    verify->add_option("dir", rc.dir, "pruned directory");
    verify->add_option("--out", rc.out, "pruned directory");
    verify->add_option("--report", rc.report, "write findings as JSON");

    auto* tiny = app.add_subcommand("make-tiny", "write the seeded tiny demo model");
    tiny->add_option("--out", rc.out, "output directory");
    tiny->add_option("--seed", rc.seed, "weight seed")->capture_default_str();
    tiny->add_option("--samples", rc.samples, "corpus documents")->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::fprintf(stderr, "compact: error: %s\n", e.what());
        return kExitError;
    }

    try {
        if (*analyze) return cmd_analyze(rc);
        if (*sweep) return cmd_sweep(rc);
        if (*prune) return cmd_prune(rc);
        if (*score) return cmd_score(rc);
        if (*retok) return cmd_retok(rc);
        if (*verify) return cmd_verify(rc);
        if (*tiny) return cmd_make_tiny(rc);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "compact: error: %s\n", e.what());
        return kExitError;
    }
    return kExitError;
}
