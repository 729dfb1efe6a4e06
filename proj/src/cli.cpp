#include "textdistill/cli.hpp"

#include <charconv>
#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>

#include "textdistill/common.hpp"
#include "textdistill/rng.hpp"

namespace fs = std::filesystem;

namespace textdistill {

namespace {

// ---- value parsing ----

[[noreturn]] void bad_value(const std::string& key, const std::string& value,
                            const char* want) {
    throw ArgumentError("config key '" + key + "': cannot read '" + value +
                        "' as " + want);
}

int parse_int(const std::string& key, const std::string& value) {
    int v = 0;
    auto [p, ec] = std::from_chars(value.data(), value.data() + value.size(), v);
    if (ec != std::errc() || p != value.data() + value.size())
        bad_value(key, value, "an integer");
    return v;
}

uint64_t parse_u64(const std::string& key, const std::string& value) {
    uint64_t v = 0;
    auto [p, ec] = std::from_chars(value.data(), value.data() + value.size(), v);
    if (ec != std::errc() || p != value.data() + value.size())
        bad_value(key, value, "an unsigned integer");
    return v;
}

double parse_double(const std::string& key, const std::string& value) {
    double v = 0.0;
    auto [p, ec] = std::from_chars(value.data(), value.data() + value.size(), v);
    if (ec != std::errc() || p != value.data() + value.size())
        bad_value(key, value, "a number");
    return v;
}

bool parse_bool(const std::string& key, const std::string& value) {
    if (value == "1" || value == "true") return true;
    if (value == "0" || value == "false") return false;
    bad_value(key, value, "a boolean (true/false/1/0)");
}

std::string format_double(double v) {
    char buf[64];
    auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
    (void)ec;
    return std::string(buf, p);
}

std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    size_t b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

// ---- config assembly ----

void apply_kv(RunConfig& cfg, const std::string& key, const std::string& value) {
    if (key == "seed") cfg.seed = parse_u64(key, value);
    else if (key == "threads") cfg.threads = parse_int(key, value);
    else if (key == "out") cfg.out_dir = value;
    else if (key == "corpus") cfg.corpus_path = value;
    else if (key == "embeddings") cfg.embed_path = value;
    else if (key == "ctx") cfg.ctx = value;
    else if (key == "strategy") cfg.distill.strategy = strategy_from_string(value);
    else if (key == "per_class") cfg.distill.samples_per_class = parse_int(key, value);
    else if (key == "s") cfg.distill.s = parse_int(key, value);
    else if (key == "d") cfg.distill.d = parse_int(key, value);
    else if (key == "alpha") cfg.distill.alpha = parse_double(key, value);
    else if (key == "batch") cfg.distill.batch = parse_int(key, value);
    else if (key == "steps") cfg.distill.steps = parse_int(key, value);
    else if (key == "inits") cfg.distill.inits_per_step = parse_int(key, value);
    else if (key == "init") cfg.distill.init.mode = init_mode_from_string(value);
    else if (key == "eta0") cfg.distill.eta0 = parse_double(key, value);
    else if (key == "tau") cfg.distill.tau = parse_double(key, value);
    else if (key == "anneal_tau") cfg.distill.anneal_tau = parse_bool(key, value);
    else if (key == "learn_labels") cfg.distill.learn_labels = parse_bool(key, value);
    else if (key == "learn_eta") cfg.distill.learn_eta = parse_bool(key, value);
    else if (key == "adaptive_outer") cfg.distill.adaptive_outer = parse_bool(key, value);
    else if (key == "filters") cfg.arch.filters_per_height = parse_int(key, value);
    else if (key == "extra_fc") cfg.arch.extra_fc_layers = parse_int(key, value);
    else if (key == "fc_hidden") cfg.arch.fc_hidden = parse_int(key, value);
    else if (key == "epochs") cfg.epochs = parse_int(key, value);
    else if (key == "lr") cfg.lr = parse_double(key, value);
    else if (key == "eval_batch") cfg.eval_batch = parse_int(key, value);
    else if (key == "eval_steps") cfg.eval_steps = parse_int(key, value);
    else if (key == "source") cfg.source = value;
    else if (key == "full_score") cfg.full_score = parse_double(key, value);
    else if (key == "langs") cfg.synth.languages = parse_int(key, value);
    else if (key == "classes") cfg.synth.classes = parse_int(key, value);
    else if (key == "train_per_lang") cfg.synth.train_per_lang = parse_int(key, value);
    else if (key == "dev_per_lang") cfg.synth.dev_per_lang = parse_int(key, value);
    else if (key == "test_per_lang") cfg.synth.test_per_lang = parse_int(key, value);
    else if (key == "embed_dim") cfg.synth.d = parse_int(key, value);
    else if (key == "indicative") cfg.synth.indicative_per_class = parse_int(key, value);
    else if (key == "neutral") cfg.synth.neutral_per_lang = parse_int(key, value);
    else if (key == "min_len") cfg.synth.min_sentence_len = parse_int(key, value);
    else if (key == "max_len") cfg.synth.max_sentence_len = parse_int(key, value);
    else if (key == "p_indicative") cfg.synth.p_indicative = parse_double(key, value);
    else throw ArgumentError("unknown config key '" + key + "'");
}

} // namespace

std::map<std::string, std::string> parse_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config file: " + path);
    std::map<std::string, std::string> kv;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (auto hash = line.find('#'); hash != std::string::npos)
            line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ParseError(path + ":" + std::to_string(lineno) +
                             ": expected 'key = value'");
        std::string key = trim(line.substr(0, eq));
        std::string value = trim(line.substr(eq + 1));
        if (key.empty())
            throw ParseError(path + ":" + std::to_string(lineno) + ": empty key");
        if (kv.count(key))
            throw ParseError(path + ":" + std::to_string(lineno) +
                             ": duplicate key '" + key + "'");
        kv[key] = value;
    }
    return kv;
}

RunConfig make_run_config(const std::map<std::string, std::string>& file_kv,
                          const std::map<std::string, std::string>& flag_kv) {
    RunConfig cfg;
    for (const auto& [k, v] : file_kv) {
        apply_kv(cfg, k, v);
        cfg.explicit_keys.insert(k);
    }
    for (const auto& [k, v] : flag_kv) {
        apply_kv(cfg, k, v);
        cfg.explicit_keys.insert(k);
    }
    if (cfg.threads < 1) throw ArgumentError("config key 'threads': must be >= 1");
    if (cfg.ctx != "identity" && cfg.ctx != "attention")
        throw ArgumentError("config key 'ctx': want 'identity' or 'attention', got '" +
                            cfg.ctx + "'");
    if (cfg.source != "full" && cfg.source != "distilled")
        throw ArgumentError("config key 'source': want 'full' or 'distilled', got '" +
                            cfg.source + "'");
    if (cfg.out_dir.empty()) throw ArgumentError("config key 'out': empty path");
    return cfg;
}

std::string config_snapshot(const RunConfig& cfg) {
    std::ostringstream out;
    auto put = [&](const char* key, const std::string& value) {
        out << key << " = " << value << "\n";
    };
    put("seed", std::to_string(cfg.seed));
    put("threads", std::to_string(cfg.threads));
    put("out", cfg.out_dir);
    put("corpus", cfg.corpus_path);
    put("embeddings", cfg.embed_path);
    put("ctx", cfg.ctx);
    put("strategy", to_string(cfg.distill.strategy));
    put("per_class", std::to_string(cfg.distill.samples_per_class));
    put("s", std::to_string(cfg.distill.s));
    put("d", std::to_string(cfg.distill.d));
    put("alpha", format_double(cfg.distill.alpha));
    put("batch", std::to_string(cfg.distill.batch));
    put("steps", std::to_string(cfg.distill.steps));
    put("inits", std::to_string(cfg.distill.inits_per_step));
    put("init", to_string(cfg.distill.init.mode));
    put("eta0", format_double(cfg.distill.eta0));
    put("tau", format_double(cfg.distill.tau));
    put("anneal_tau", cfg.distill.anneal_tau ? "true" : "false");
    put("learn_labels", cfg.distill.learn_labels ? "true" : "false");
    put("learn_eta", cfg.distill.learn_eta ? "true" : "false");
    put("adaptive_outer", cfg.distill.adaptive_outer ? "true" : "false");
    put("filters", std::to_string(cfg.arch.filters_per_height));
    put("extra_fc", std::to_string(cfg.arch.extra_fc_layers));
    put("fc_hidden", std::to_string(cfg.arch.fc_hidden));
    put("epochs", std::to_string(cfg.epochs));
    put("lr", format_double(cfg.lr));
    put("eval_batch", std::to_string(cfg.eval_batch));
    put("eval_steps", std::to_string(cfg.eval_steps));
    put("source", cfg.source);
    put("full_score", format_double(cfg.full_score));
    put("langs", std::to_string(cfg.synth.languages));
    put("classes", std::to_string(cfg.synth.classes));
    put("train_per_lang", std::to_string(cfg.synth.train_per_lang));
    put("dev_per_lang", std::to_string(cfg.synth.dev_per_lang));
    put("test_per_lang", std::to_string(cfg.synth.test_per_lang));
    put("embed_dim", std::to_string(cfg.synth.d));
    put("indicative", std::to_string(cfg.synth.indicative_per_class));
    put("neutral", std::to_string(cfg.synth.neutral_per_lang));
    put("min_len", std::to_string(cfg.synth.min_sentence_len));
    put("max_len", std::to_string(cfg.synth.max_sentence_len));
    put("p_indicative", format_double(cfg.synth.p_indicative));
    return out.str();
}

void write_config_snapshot(const std::string& path, const RunConfig& cfg) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open " + path + " for writing");
    out << config_snapshot(cfg);
    if (!out) throw IoError("failed writing " + path);
}

namespace {

// ---- shared command plumbing ----

fs::path out_file(const RunConfig& cfg, const char* name) {
    return fs::path(cfg.out_dir) / name;
}

void ensure_out_dir(const RunConfig& cfg) {
    std::error_code ec;
    fs::create_directories(cfg.out_dir, ec);
    if (ec)
        throw IoError("cannot create output directory " + cfg.out_dir + ": " +
                      ec.message());
    // create_directories reports success on an existing entry of any kind,
    // so probe writability directly via the log file.
    std::ofstream probe(out_file(cfg, "run.log"), std::ios::app);
    if (!probe) throw IoError("output directory " + cfg.out_dir + " is not writable");
}

// The one place wall-clock time is allowed to appear.
void append_log(const RunConfig& cfg, const std::string& line) {
    std::ofstream log(out_file(cfg, "run.log"), std::ios::app);
    if (!log) return; // logging must never fail the run
    auto now = std::chrono::system_clock::now();
    std::time_t t = std::chrono::system_clock::to_time_t(now);
    std::tm tm{};
    gmtime_r(&t, &tm);
    char stamp[32];
    std::strftime(stamp, sizeof stamp, "%FT%TZ", &tm);
    log << stamp << " " << line << "\n";
}

int run_guarded(std::ostream& err, const std::function<void()>& body) {
    try {
        body();
        return 0;
    } catch (const NumericalError& e) {
        err << "error: " << e.what() << "\n";
        return 3;
    } catch (const Error& e) {
        err << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return 2;
    }
}

Corpus load_corpus_checked(const RunConfig& cfg) {
    if (cfg.corpus_path.empty())
        throw ArgumentError("no corpus file configured (key 'corpus')");
    return load_jsonl(cfg.corpus_path);
}

Encoder load_encoder_checked(const RunConfig& cfg) {
    if (cfg.embed_path.empty())
        throw ArgumentError("no embedding file configured (key 'embeddings')");
    CtxKind kind = cfg.ctx == "identity" ? CtxKind::identity : CtxKind::attention;
    uint64_t ctx_seed = RngStream(cfg.seed).child("ctx").key();
    return load_embedding_file(cfg.embed_path, kind, ctx_seed);
}

// Global seed fan-out: every consumer gets its own child stream, so no two
// commands or modules ever share generator state.
DistillConfig effective_distill_config(const RunConfig& cfg) {
    DistillConfig dc = cfg.distill;
    dc.seed = RngStream(cfg.seed).child("distill").key();
    dc.init.seed = RngStream(cfg.seed).child("init").key();
    dc.threads = cfg.threads;
    return dc;
}

std::string fixed6(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    return buf;
}

double wall_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
        .count();
}

} // namespace

int cmd_synth_data(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
    return run_guarded(err, [&] {
        ensure_out_dir(cfg);
        append_log(cfg, "synth-data start");
        SyntheticConfig sc = cfg.synth;
        sc.seed = RngStream(cfg.seed).child("synth").key();
        auto data = generate_synthetic(sc);
        auto corpus_path = out_file(cfg, "corpus.jsonl");
        auto embed_path = out_file(cfg, "embeddings.txt");
        write_corpus_jsonl(corpus_path.string(), data.corpus);
        write_embedding_file(embed_path.string(), data.vocab, data.table);
        write_config_snapshot(out_file(cfg, "config.snapshot").string(), cfg);
        out << "wrote " << corpus_path.string() << " ("
            << data.corpus.train().size() << " train / "
            << data.corpus.dev().size() << " dev / " << data.corpus.test().size()
            << " test)\n";
        out << "wrote " << embed_path.string() << " (V=" << data.table.V()
            << ", d=" << data.table.d() << ")\n";
        append_log(cfg, "synth-data done");
    });
}

int cmd_distill(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
    return run_guarded(err, [&] {
        ensure_out_dir(cfg);
        append_log(cfg, "distill start");
        auto t0 = std::chrono::steady_clock::now();
        Corpus corpus = load_corpus_checked(cfg);
        Encoder enc = load_encoder_checked(cfg);
        ArchSpec arch = cfg.arch;
        arch.classes = corpus.classes();
        DistillConfig dc = effective_distill_config(cfg);
        auto [dd, rec] = distill(dc, corpus, enc, arch);
        save_distilled(out_file(cfg, "distilled.bin").string(), dd, dc.init);
        write_run_record(out_file(cfg, "record.json").string(), rec);
        write_config_snapshot(out_file(cfg, "config.snapshot").string(), cfg);
        out << "final meta-loss " << fixed6(rec.meta_loss.back()) << ", eta "
            << fixed6(dd.eta) << "\n";
        append_log(cfg, "distill done in " + fixed6(wall_since(t0)) + "s");
    });
}

namespace {

struct DistilledArtifact {
    DistilledData dd;
    InitSpec init;
};

DistilledArtifact load_distilled_checked(const RunConfig& cfg) {
    auto path = out_file(cfg, "distilled.bin");
    auto [dd, init] = load_distilled(path.string());
    // eval-time --init overrides the init spec stored with the artifact
    if (cfg.explicit_keys.count("init")) {
        init.mode = cfg.distill.init.mode;
        init.seed = RngStream(cfg.seed).child("init").key();
    }
    return {std::move(dd), init};
}

} // namespace

int cmd_eval(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
    return run_guarded(err, [&] {
        ensure_out_dir(cfg);
        append_log(cfg, "eval start");
        auto t0 = std::chrono::steady_clock::now();
        Corpus corpus = load_corpus_checked(cfg);
        Encoder enc = load_encoder_checked(cfg);

        EvalReport report;
        report.arch = cfg.arch;
        report.arch.classes = corpus.classes();
        TextCnnParams params;
        int s = cfg.distill.s;
        if (cfg.source == "full") {
            report.source = "full_data";
            uint64_t train_seed = RngStream(cfg.seed).child("train").key();
            params = train_full(report.arch, corpus, enc, s, cfg.epochs, cfg.lr,
                                train_seed, cfg.eval_batch);
        } else {
            auto art = load_distilled_checked(cfg);
            if (art.dd.C != corpus.classes())
                throw ArgumentError("distilled.bin has " + std::to_string(art.dd.C) +
                                    " classes, corpus has " +
                                    std::to_string(corpus.classes()));
            report.source = "distilled(" + to_string(art.dd.kind) + ")";
            s = art.dd.s;
            params = train_from_distilled(report.arch, art.dd, enc, art.init,
                                          cfg.eval_steps);
        }
        report.f1 = evaluate_split(params, corpus.test(), enc, s, corpus.classes());
        if (cfg.full_score > 0.0)
            report.ratio = distillation_ratio(report.f1, cfg.full_score);
        report.per_language = per_language_f1(params, corpus, enc, s, &err);

        write_report_json(out_file(cfg, "report.json").string(), report);
        write_report_csv(out_file(cfg, "report.csv").string(), report);
        write_config_snapshot(out_file(cfg, "config.snapshot").string(), cfg);
        out << "source=" << report.source << " f1_macro=" << fixed6(report.f1);
        if (report.ratio) out << " r_n=" << fixed6(*report.ratio);
        out << "\n";
        append_log(cfg, "eval done in " + fixed6(wall_since(t0)) + "s");
    });
}

int cmd_xarch(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
    return run_guarded(err, [&] {
        ensure_out_dir(cfg);
        append_log(cfg, "xarch start");
        auto t0 = std::chrono::steady_clock::now();
        Corpus corpus = load_corpus_checked(cfg);
        Encoder enc = load_encoder_checked(cfg);
        auto art = load_distilled_checked(cfg);
        ArchSpec base = cfg.arch;
        base.classes = corpus.classes();
        auto table =
            cross_arch_eval(art.dd, enc, base, art.init, corpus, cfg.eval_steps);

        auto path = out_file(cfg, "report.csv");
        std::ofstream csv(path);
        if (!csv) throw IoError("cannot open " + path.string() + " for writing");
        csv << "extra_fc_layers,f1_macro\n";
        for (const auto& [k, f1] : table) {
            csv << k << ',' << fixed6(f1) << '\n';
            out << "extra_fc=" << k << " f1_macro=" << fixed6(f1) << "\n";
        }
        if (!csv) throw IoError("failed writing " + path.string());
        write_config_snapshot(out_file(cfg, "config.snapshot").string(), cfg);
        append_log(cfg, "xarch done in " + fixed6(wall_since(t0)) + "s");
    });
}

int cmd_decode(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
    return run_guarded(err, [&] {
        ensure_out_dir(cfg);
        append_log(cfg, "decode start");
        Encoder enc = load_encoder_checked(cfg);
        auto art = load_distilled_checked(cfg);
        if (cfg.explicit_keys.count("strategy") &&
            cfg.distill.strategy != art.dd.kind)
            throw ArgumentError("distilled.bin holds a " + to_string(art.dd.kind) +
                                " artifact, not " + to_string(cfg.distill.strategy));
        auto summary = decode(art.dd, enc);
        write_decoded_jsonl(out_file(cfg, "decoded.jsonl").string(), summary,
                            enc.vocab());

        auto txt_path = out_file(cfg, "decoded.txt");
        std::ofstream txt(txt_path);
        if (!txt) throw IoError("cannot open " + txt_path.string() + " for writing");
        for (const auto& sent : summary.sentences) {
            txt << sent.index << "\tlabel=" << sent.label << "\t";
            for (size_t i = 0; i < sent.token_ids.size(); ++i) {
                if (i) txt << ' ';
                txt << enc.vocab().token(sent.token_ids[i]);
            }
            txt << '\n';
        }
        if (!txt) throw IoError("failed writing " + txt_path.string());
        write_config_snapshot(out_file(cfg, "config.snapshot").string(), cfg);
        out << "decoded " << summary.sentences.size() << " sentences ("
            << to_string(summary.kind) << ")\n";
        append_log(cfg, "decode done");
    });
}

int cmd_langstats(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
    return run_guarded(err, [&] {
        ensure_out_dir(cfg);
        append_log(cfg, "langstats start");
        Corpus corpus = load_corpus_checked(cfg);
        Encoder enc = load_encoder_checked(cfg);
        auto art = load_distilled_checked(cfg);
        auto original = corpus_language_proportion(corpus, enc);
        auto distilled = language_proportion(decode(art.dd, enc), enc.vocab());

        std::map<std::string, std::pair<double, double>> rows;
        for (const auto& [lang, p] : original) rows[lang].first = p;
        for (const auto& [lang, p] : distilled) rows[lang].second = p;

        auto path = out_file(cfg, "langstats.csv");
        std::ofstream csv(path);
        if (!csv) throw IoError("cannot open " + path.string() + " for writing");
        csv << "language,original,distilled\n";
        for (const auto& [lang, p] : rows)
            csv << lang << ',' << fixed6(p.first) << ',' << fixed6(p.second) << '\n';
        if (!csv) throw IoError("failed writing " + path.string());
        write_config_snapshot(out_file(cfg, "config.snapshot").string(), cfg);
        out << "wrote " << path.string() << " (" << rows.size() << " languages)\n";
        append_log(cfg, "langstats done");
    });
}

} // namespace textdistill
