#include "textdistill/evalsuite.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <numeric>
#include <sstream>

#include "textdistill/common.hpp"
#include "textdistill/rng.hpp"

namespace textdistill {

namespace {

// Fisher-Yates with the raw engine, not std::shuffle: the standard leaves
// shuffle's draw sequence implementation-defined and we promise bytewise
// reruns.
void shuffle_indices(std::vector<size_t>& idx, std::mt19937_64& eng) {
    for (size_t i = idx.size(); i > 1; --i) {
        size_t j = static_cast<size_t>(eng() % i);
        std::swap(idx[i - 1], idx[j]);
    }
}

int argmax_lowest(const Tensor& t) {
    int best = 0;
    for (int i = 1; i < static_cast<int>(t.values.size()); ++i)
        if (t.values[static_cast<size_t>(i)] > t.values[static_cast<size_t>(best)])
            best = i;
    return best;
}

std::string fixed6(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    return buf;
}

} // namespace

TextCnnParams train_full(const ArchSpec& arch, const Corpus& corpus,
                         const Encoder& enc, int s, int epochs, double lr,
                         uint64_t seed, int batch) {
    arch.validate();
    if (arch.classes != corpus.classes())
        throw ArgumentError("train_full: arch expects " +
                            std::to_string(arch.classes) + " classes, corpus has " +
                            std::to_string(corpus.classes()));
    if (epochs < 0) throw ArgumentError("train_full: epochs must be >= 0");
    if (lr < 0.0) throw ArgumentError("train_full: lr must be >= 0");
    if (batch < 1) throw ArgumentError("train_full: batch must be positive");

    TextCnnParams params =
        init(arch, enc.d(), InitSpec{InitMode::random, seed}, 0);
    if (epochs == 0) return params;

    RealBatch all = encode_batch(corpus.train(), enc, s, corpus.classes());
    const size_t n = all.xs.size();
    auto eng = RngStream(seed).child("order").engine();
    std::vector<size_t> order(n);
    std::iota(order.begin(), order.end(), size_t{0});

    for (int epoch = 0; epoch < epochs; ++epoch) {
        shuffle_indices(order, eng);
        for (size_t pos = 0; pos < n; pos += static_cast<size_t>(batch)) {
            size_t take = std::min(static_cast<size_t>(batch), n - pos);
            std::vector<Tensor> xs, ys;
            xs.reserve(take);
            ys.reserve(take);
            for (size_t k = 0; k < take; ++k) {
                xs.push_back(all.xs[order[pos + k]]);
                ys.push_back(all.ys[order[pos + k]]);
            }
            auto grads = loss_grads(params, xs, ys);
            params = sgd_step(params, grads, lr);
        }
    }
    return params;
}

TextCnnParams train_from_distilled(const ArchSpec& arch, const DistilledData& dd,
                                   const Encoder& enc, const InitSpec& init_spec,
                                   int steps) {
    arch.validate();
    validate_distilled(dd);
    if (arch.classes != dd.C)
        throw ArgumentError("train_from_distilled: arch expects " +
                            std::to_string(arch.classes) +
                            " classes, distilled data has " + std::to_string(dd.C));
    if (steps < 0) throw ArgumentError("train_from_distilled: steps must be >= 0");

    TextCnnParams params = init(arch, enc.d(), init_spec, 0);
    if (steps == 0) return params;

    Tensor block = materialize(dd, enc);
    const size_t row = static_cast<size_t>(dd.s) * static_cast<size_t>(enc.d());
    std::vector<Tensor> xs, ys;
    xs.reserve(static_cast<size_t>(dd.M));
    ys.reserve(static_cast<size_t>(dd.M));
    for (int i = 0; i < dd.M; ++i) {
        auto x0 = block.values.begin() + static_cast<int64_t>(i) * static_cast<int64_t>(row);
        xs.emplace_back(std::vector<int>{dd.s, enc.d()},
                        std::vector<double>(x0, x0 + static_cast<int64_t>(row)));
        auto y0 = dd.labels.values.begin() + static_cast<int64_t>(i) * dd.C;
        ys.emplace_back(std::vector<int>{dd.C}, std::vector<double>(y0, y0 + dd.C));
    }
    for (int t = 0; t < steps; ++t) {
        auto grads = loss_grads(params, xs, ys);
        params = sgd_step(params, grads, dd.eta);
    }
    return params;
}

std::vector<int> predict(const TextCnnParams& params,
                         const std::vector<Tensor>& xs) {
    std::vector<int> out;
    out.reserve(xs.size());
    for (const auto& x : xs) out.push_back(argmax_lowest(forward(params, x)));
    return out;
}

double f1_macro(std::span<const int> preds, std::span<const int> labels, int C) {
    if (C < 1) throw ArgumentError("f1_macro: class count must be positive");
    if (preds.size() != labels.size())
        throw ArgumentError("f1_macro: " + std::to_string(preds.size()) +
                            " predictions against " + std::to_string(labels.size()) +
                            " labels");
    if (preds.empty()) throw ArgumentError("f1_macro: empty prediction set");

    std::vector<int64_t> tp(static_cast<size_t>(C), 0),
        fp(static_cast<size_t>(C), 0), fn(static_cast<size_t>(C), 0);
    for (size_t i = 0; i < preds.size(); ++i) {
        int p = preds[i], l = labels[i];
        if (p < 0 || p >= C || l < 0 || l >= C)
            throw ArgumentError("f1_macro: class id out of range at index " +
                                std::to_string(i));
        if (p == l) {
            ++tp[static_cast<size_t>(p)];
        } else {
            ++fp[static_cast<size_t>(p)];
            ++fn[static_cast<size_t>(l)];
        }
    }
    // 2tp / (2tp + fp + fn) equals 2PR / (P + R) wherever the latter is
    // defined, and gives the 0 convention for classes never seen.
    double total = 0.0;
    for (int c = 0; c < C; ++c) {
        auto s = static_cast<size_t>(c);
        int64_t denom = 2 * tp[s] + fp[s] + fn[s];
        if (denom > 0)
            total += 2.0 * static_cast<double>(tp[s]) / static_cast<double>(denom);
    }
    return total / static_cast<double>(C);
}

double distillation_ratio(double distilled_score, double full_score) {
    if (!(full_score > 0.0))
        throw ArgumentError("distillation_ratio: full-data score must be positive");
    // Divide first: equal scores then give exactly 100.
    return 100.0 * (distilled_score / full_score);
}

double evaluate_split(const TextCnnParams& params,
                      std::span<const Example> examples, const Encoder& enc,
                      int s, int C) {
    if (examples.empty()) throw ArgumentError("evaluate_split: empty example set");
    std::vector<Tensor> xs;
    std::vector<int> labels;
    xs.reserve(examples.size());
    labels.reserve(examples.size());
    for (const auto& ex : examples) {
        xs.push_back(enc.encode(ex.text, ex.label, s, C).embeddings);
        labels.push_back(ex.label);
    }
    return f1_macro(predict(params, xs), labels, C);
}

std::map<int, double> cross_arch_eval(const DistilledData& dd,
                                      const Encoder& enc,
                                      const ArchSpec& base_arch,
                                      const InitSpec& init_spec,
                                      const Corpus& corpus, int steps) {
    if (dd.C != corpus.classes())
        throw ArgumentError("cross_arch_eval: distilled data has " +
                            std::to_string(dd.C) + " classes, corpus has " +
                            std::to_string(corpus.classes()));
    std::map<int, double> out;
    for (int k = 0; k <= 3; ++k) {
        ArchSpec variant = base_arch;
        variant.extra_fc_layers = k;
        TextCnnParams params =
            train_from_distilled(variant, dd, enc, init_spec, steps);
        out[k] = evaluate_split(params, corpus.test(), enc, dd.s, dd.C);
    }
    return out;
}

std::map<std::string, double> per_language_f1(const TextCnnParams& params,
                                              const Corpus& corpus,
                                              const Encoder& enc, int s,
                                              std::ostream* warnings) {
    std::ostream& warn = warnings ? *warnings : std::cerr;
    std::map<std::string, double> out;
    for (const auto& lang : corpus.languages()) {
        std::vector<Example> slice;
        for (const auto& ex : corpus.test())
            if (ex.lang == lang) slice.push_back(ex);
        if (slice.empty()) {
            warn << "warning: no test examples for language '" << lang
                 << "', skipping\n";
            continue;
        }
        out[lang] = evaluate_split(params, slice, enc, s, corpus.classes());
    }
    return out;
}

std::map<std::string, double> language_proportion(const DecodedSummary& summary,
                                                  const Vocabulary& vocab) {
    if (summary.sentences.empty())
        throw ArgumentError("language_proportion: empty summary");
    std::map<std::string, int64_t> counts;
    int64_t total = 0;
    for (const auto& sent : summary.sentences) {
        for (int id : sent.token_ids) {
            if (id < 0 || id >= vocab.size())
                throw ArgumentError("language_proportion: token id " +
                                    std::to_string(id) + " outside the vocabulary");
            if (id == Vocabulary::kPadId) continue;
            ++counts[vocab.lang_tag(id)];
            ++total;
        }
    }
    if (total == 0)
        throw ArgumentError("language_proportion: every decoded token is pad");
    std::map<std::string, double> out;
    for (const auto& [lang, count] : counts)
        out[lang] = 100.0 * static_cast<double>(count) / static_cast<double>(total);
    return out;
}

std::map<std::string, double> corpus_language_proportion(const Corpus& corpus,
                                                         const Encoder& enc) {
    DecodedSummary sum;
    int idx = 0;
    for (const auto& ex : corpus.train()) {
        DecodedSentence s;
        s.index = idx++;
        s.label = ex.label;
        s.token_ids = enc.tokenize(ex.text);
        s.similarities.assign(s.token_ids.size(), 1.0);
        sum.sentences.push_back(std::move(s));
    }
    return language_proportion(sum, enc.vocab());
}

nlohmann::json report_to_json(const EvalReport& report) {
    nlohmann::json arch;
    arch["filter_heights"] = report.arch.filter_heights;
    arch["filters_per_height"] = report.arch.filters_per_height;
    arch["extra_fc_layers"] = report.arch.extra_fc_layers;
    arch["fc_hidden"] = report.arch.fc_hidden;
    arch["classes"] = report.arch.classes;

    nlohmann::json j;
    j["source"] = report.source;
    j["arch"] = arch;
    j["f1_macro"] = report.f1;
    j["r_n"] = report.ratio ? nlohmann::json(*report.ratio) : nlohmann::json();
    j["per_language_f1"] = nlohmann::json(report.per_language);
    j["language_proportion"] = nlohmann::json(report.proportion);
    return j;
}

void write_report_json(const std::string& path, const EvalReport& report) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open " + path + " for writing");
    out << report_to_json(report).dump(2) << '\n';
    if (!out) throw IoError("failed writing " + path);
}

void write_report_csv(const std::string& path, const EvalReport& report) {
    std::ostringstream head, row;
    head << "source,extra_fc_layers,f1_macro,r_n";
    row << report.source << ',' << report.arch.extra_fc_layers << ','
        << fixed6(report.f1) << ',';
    if (report.ratio) row << fixed6(*report.ratio);
    for (const auto& [lang, v] : report.per_language) {
        head << ",f1[" << lang << ']';
        row << ',' << fixed6(v);
    }
    for (const auto& [lang, v] : report.proportion) {
        head << ",prop[" << lang << ']';
        row << ',' << fixed6(v);
    }
    std::ofstream out(path);
    if (!out) throw IoError("cannot open " + path + " for writing");
    out << head.str() << '\n' << row.str() << '\n';
    if (!out) throw IoError("failed writing " + path);
}

} // namespace textdistill
