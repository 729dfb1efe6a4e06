#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>
#include "support.hpp"
#include "textdistill/distiller.hpp"
#include "textdistill/evalsuite.hpp"

using namespace textdistill;
using tdtest::temp_file;
using tdtest::tiny_encoder;
using tdtest::tiny_table;

namespace {

// Independent scorer: full confusion matrix, precision and recall computed
// separately, then harmonically combined. Classes absent from both sides
// score zero.
double oracle_macro_f1(const std::vector<int>& preds,
                       const std::vector<int>& labels, int C) {
    double total = 0.0;
    for (int c = 0; c < C; ++c) {
        long tp = 0, pred_c = 0, true_c = 0;
        for (size_t i = 0; i < preds.size(); ++i) {
            if (preds[i] == c) ++pred_c;
            if (labels[i] == c) ++true_c;
            if (preds[i] == c && labels[i] == c) ++tp;
        }
        double prec = pred_c ? static_cast<double>(tp) / static_cast<double>(pred_c) : 0.0;
        double rec = true_c ? static_cast<double>(tp) / static_cast<double>(true_c) : 0.0;
        if (prec + rec > 0.0) total += 2.0 * prec * rec / (prec + rec);
    }
    return total / static_cast<double>(C);
}

struct EvalSetup {
    Corpus corpus;
    Encoder enc;
    ArchSpec arch;
};

EvalSetup small_setup() {
    SyntheticConfig cfg;
    cfg.languages = 2;
    cfg.classes = 2;
    cfg.train_per_lang = 40;
    cfg.dev_per_lang = 8;
    cfg.test_per_lang = 30;
    cfg.d = 8;
    cfg.seed = 3;
    auto data = generate_synthetic(cfg);
    ArchSpec arch;
    arch.filters_per_height = 4;
    arch.fc_hidden = 16;
    arch.classes = 2;
    return {std::move(data.corpus),
            Encoder(std::move(data.vocab), std::move(data.table),
                    Contextualizer::identity(cfg.d)),
            arch};
}

bool params_equal(const TextCnnParams& a, const TextCnnParams& b) {
    if (a.values.size() != b.values.size()) return false;
    for (size_t i = 0; i < a.values.size(); ++i) {
        if (a.values[i].shape != b.values[i].shape) return false;
        if (a.values[i].values != b.values[i].values) return false;
    }
    return true;
}

} // namespace

TEST_CASE("f1_macro matches the hand confusion matrix") {
    std::vector<int> labels{0, 0, 1, 1, 2, 2};
    std::vector<int> preds{0, 1, 1, 1, 2, 0};
    double f1 = f1_macro(preds, labels, 3);
    CHECK(f1 == doctest::Approx((0.5 + 0.8 + 2.0 / 3.0) / 3.0).epsilon(1e-12));
    CHECK(std::abs(f1 - 0.6556) < 5e-5);
    CHECK(f1_macro(labels, labels, 3) == 1.0);
}

TEST_CASE("f1_macro agrees with the confusion oracle on random sets") {
    auto eng = RngStream(402).engine();
    for (int trial = 0; trial < 100; ++trial) {
        int C = 2 + static_cast<int>(eng() % 5);
        int n = 1 + static_cast<int>(eng() % 60);
        std::vector<int> preds(static_cast<size_t>(n)),
            labels(static_cast<size_t>(n));
        for (int i = 0; i < n; ++i) {
            preds[static_cast<size_t>(i)] = static_cast<int>(eng() % C);
            labels[static_cast<size_t>(i)] = static_cast<int>(eng() % C);
        }
        double mine = f1_macro(preds, labels, C);
        double ref = oracle_macro_f1(preds, labels, C);
        CHECK(std::abs(mine - ref) < 1e-12);
        CHECK(mine >= 0.0);
        CHECK(mine <= 1.0);
    }
}

TEST_CASE("f1_macro on an all-one-class predictor") {
    std::vector<int> labels{0, 0, 1, 1, 2, 2};
    std::vector<int> preds(6, 0);
    double f1 = f1_macro(preds, labels, 3);
    // class 0: P = 1/3, R = 1; the other two never predicted
    CHECK(f1 == doctest::Approx(0.5 / 3.0).epsilon(1e-12));
    CHECK(std::abs(f1 - oracle_macro_f1(preds, labels, 3)) < 1e-12);
}

TEST_CASE("f1_macro ignores example order") {
    auto eng = RngStream(77).engine();
    std::vector<int> preds, labels;
    for (int i = 0; i < 40; ++i) {
        preds.push_back(static_cast<int>(eng() % 4));
        labels.push_back(static_cast<int>(eng() % 4));
    }
    double before = f1_macro(preds, labels, 4);
    std::vector<size_t> order(preds.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    for (size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[eng() % i]);
    std::vector<int> p2, l2;
    for (size_t i : order) {
        p2.push_back(preds[i]);
        l2.push_back(labels[i]);
    }
    CHECK(f1_macro(p2, l2, 4) == before);
}

TEST_CASE("f1_macro scores a class absent from both sides as zero") {
    std::vector<int> preds{0, 1}, labels{0, 1};
    CHECK(f1_macro(preds, labels, 3) == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
}

TEST_CASE("f1_macro rejects bad input") {
    std::vector<int> empty;
    std::vector<int> ok{0, 1};
    CHECK_THROWS_AS(f1_macro(empty, empty, 2), ArgumentError);
    CHECK_THROWS_AS(f1_macro(ok, empty, 2), ArgumentError);
    CHECK_THROWS_AS(f1_macro(ok, ok, 0), ArgumentError);
    std::vector<int> high{0, 2};
    CHECK_THROWS_AS(f1_macro(high, ok, 2), ArgumentError);
    std::vector<int> neg{0, -1};
    CHECK_THROWS_AS(f1_macro(ok, neg, 2), ArgumentError);
}

TEST_CASE("distillation ratio") {
    CHECK(std::abs(distillation_ratio(54.84, 57.65) - 95.13) < 0.005);
    CHECK(distillation_ratio(0.731, 0.731) == 100.0);
    CHECK(distillation_ratio(0.0, 0.5) == 0.0);
    CHECK(distillation_ratio(60.0, 50.0) == doctest::Approx(120.0).epsilon(1e-12));
    CHECK_THROWS_AS(distillation_ratio(0.5, 0.0), ArgumentError);
    CHECK_THROWS_AS(distillation_ratio(0.5, -1.0), ArgumentError);
}

TEST_CASE("train_full with zero epochs returns the seeded init") {
    auto setup = small_setup();
    auto params = train_full(setup.arch, setup.corpus, setup.enc, 10, 0, 0.05, 33);
    auto expected = init(setup.arch, setup.enc.d(), InitSpec{InitMode::random, 33}, 0);
    CHECK(params_equal(params, expected));
}

TEST_CASE("train_full is reproducible under a fixed seed") {
    auto setup = small_setup();
    auto a = train_full(setup.arch, setup.corpus, setup.enc, 10, 1, 0.05, 33);
    auto b = train_full(setup.arch, setup.corpus, setup.enc, 10, 1, 0.05, 33);
    CHECK(params_equal(a, b));
    auto c = train_full(setup.arch, setup.corpus, setup.enc, 10, 1, 0.05, 34);
    CHECK_FALSE(params_equal(a, c));
}

TEST_CASE("train_full rejects bad arguments") {
    auto setup = small_setup();
    CHECK_THROWS_AS(train_full(setup.arch, setup.corpus, setup.enc, 10, -1, 0.05, 0),
                    ArgumentError);
    CHECK_THROWS_AS(train_full(setup.arch, setup.corpus, setup.enc, 10, 1, -0.05, 0),
                    ArgumentError);
    CHECK_THROWS_AS(
        train_full(setup.arch, setup.corpus, setup.enc, 10, 1, 0.05, 0, 0),
        ArgumentError);
    ArchSpec wrong = setup.arch;
    wrong.classes = 5;
    CHECK_THROWS_AS(train_full(wrong, setup.corpus, setup.enc, 10, 1, 0.05, 0),
                    ArgumentError);
}

TEST_CASE("full-data training clears the majority baseline") {
    SyntheticConfig cfg;
    cfg.seed = 17;
    auto data = generate_synthetic(cfg);
    Encoder enc(std::move(data.vocab), std::move(data.table),
                Contextualizer::identity(cfg.d));
    ArchSpec arch;
    arch.classes = data.corpus.classes();

    std::vector<int> labels;
    for (const auto& ex : data.corpus.test()) labels.push_back(ex.label);
    std::vector<int> freq(static_cast<size_t>(arch.classes), 0);
    for (int l : labels) ++freq[static_cast<size_t>(l)];
    int majority = static_cast<int>(
        std::max_element(freq.begin(), freq.end()) - freq.begin());
    double baseline =
        f1_macro(std::vector<int>(labels.size(), majority), labels, arch.classes);

    auto params = train_full(arch, data.corpus, enc, 12, 1, 0.05, 17);
    double f1 = evaluate_split(params, data.corpus.test(), enc, 12, arch.classes);
    CHECK(f1 <= 1.0);
    CHECK(f1 >= baseline + 0.20);
}

TEST_CASE("one distilled step equals a manual gradient step") {
    auto setup = small_setup();
    auto dd = init_distilled(StrategyKind::vanilla, 4, 10, setup.enc.table(), 2,
                             0.3, 0.5, 21);
    InitSpec is{InitMode::random, 9};

    auto zero = train_from_distilled(setup.arch, dd, setup.enc, is, 0);
    CHECK(params_equal(zero, init(setup.arch, setup.enc.d(), is, 0)));

    Tensor block = materialize(dd, setup.enc);
    std::vector<Tensor> xs, ys;
    for (int i = 0; i < dd.M; ++i) {
        size_t row = static_cast<size_t>(dd.s) * static_cast<size_t>(setup.enc.d());
        auto x0 = block.values.begin() + static_cast<int64_t>(i * row);
        xs.emplace_back(std::vector<int>{dd.s, setup.enc.d()},
                        std::vector<double>(x0, x0 + static_cast<int64_t>(row)));
        auto y0 = dd.labels.values.begin() + i * dd.C;
        ys.emplace_back(std::vector<int>{dd.C}, std::vector<double>(y0, y0 + dd.C));
    }
    auto manual = sgd_step(zero, loss_grads(zero, xs, ys), dd.eta);
    auto one = train_from_distilled(setup.arch, dd, setup.enc, is, 1);
    CHECK(params_equal(one, manual));

    CHECK_THROWS_AS(train_from_distilled(setup.arch, dd, setup.enc, is, -1),
                    ArgumentError);
    ArchSpec wrong = setup.arch;
    wrong.classes = 3;
    CHECK_THROWS_AS(train_from_distilled(wrong, dd, setup.enc, is, 1),
                    ArgumentError);
}

TEST_CASE("training on distilled data lifts a fresh init") {
    auto setup = small_setup();
    DistillConfig dc;
    dc.strategy = StrategyKind::vanilla;
    dc.samples_per_class = 2;
    dc.s = 10;
    dc.alpha = 0.02;
    dc.batch = 32;
    dc.steps = 100;
    dc.inits_per_step = 4;
    dc.init = InitSpec{InitMode::random, 7};
    dc.eta0 = 0.1;
    dc.adaptive_outer = true;
    dc.seed = 5;
    auto [dd, rec] = distill(dc, setup.corpus, setup.enc, setup.arch);

    for (uint64_t eval_seed : {42ull, 99ull, 123ull}) {
        InitSpec is{InitMode::random, eval_seed};
        auto before = train_from_distilled(setup.arch, dd, setup.enc, is, 0);
        auto after = train_from_distilled(setup.arch, dd, setup.enc, is, 1);
        double f0 = evaluate_split(before, setup.corpus.test(), setup.enc, dd.s, 2);
        double f1 = evaluate_split(after, setup.corpus.test(), setup.enc, dd.s, 2);
        CHECK(f1 >= f0 + 0.15);
    }
}

TEST_CASE("cross-arch evaluation covers the four depth variants") {
    auto setup = small_setup();
    auto dd = init_distilled(StrategyKind::vanilla, 4, 10, setup.enc.table(), 2,
                             0.3, 0.5, 21);
    InitSpec is{InitMode::fixed, 6};
    auto table = cross_arch_eval(dd, setup.enc, setup.arch, is, setup.corpus);
    REQUIRE(table.size() == 4);
    for (int k = 0; k <= 3; ++k) {
        REQUIRE(table.count(k) == 1);
        CHECK(table.at(k) >= 0.0);
        CHECK(table.at(k) <= 1.0);
    }

    // depth-0 row must be the plain single-arch result, bit for bit
    auto params = train_from_distilled(setup.arch, dd, setup.enc, is, 1);
    double single = evaluate_split(params, setup.corpus.test(), setup.enc, dd.s, 2);
    CHECK(table.at(0) == single);
}

TEST_CASE("per-language F1 matches slice oracles") {
    auto setup = small_setup();
    auto params = train_full(setup.arch, setup.corpus, setup.enc, 10, 1, 0.05, 33);
    std::ostringstream warnings;
    auto by_lang = per_language_f1(params, setup.corpus, setup.enc, 10, &warnings);
    REQUIRE(by_lang.size() == setup.corpus.languages().size());
    CHECK(warnings.str().empty());

    for (const auto& lang : setup.corpus.languages()) {
        std::vector<Tensor> xs;
        std::vector<int> labels;
        for (const auto& ex : setup.corpus.test()) {
            if (ex.lang != lang) continue;
            xs.push_back(setup.enc.encode(ex.text, ex.label, 10, 2).embeddings);
            labels.push_back(ex.label);
        }
        double ref = oracle_macro_f1(predict(params, xs), labels, 2);
        CHECK(std::abs(by_lang.at(lang) - ref) < 1e-12);
        CHECK(by_lang.at(lang) >= 0.0);
        CHECK(by_lang.at(lang) <= 1.0);
    }
}

TEST_CASE("single-language corpus gives one entry equal to the overall score") {
    SyntheticConfig cfg;
    cfg.languages = 2;
    cfg.classes = 2;
    cfg.train_per_lang = 20;
    cfg.dev_per_lang = 4;
    cfg.test_per_lang = 16;
    cfg.d = 8;
    cfg.seed = 12;
    auto data = generate_synthetic(cfg);
    Encoder enc(std::move(data.vocab), std::move(data.table),
                Contextualizer::identity(cfg.d));
    auto keep = [](const std::vector<Example>& xs) {
        std::vector<Example> out;
        for (const auto& ex : xs)
            if (ex.lang == "ar") out.push_back(ex);
        return out;
    };
    Corpus corpus(keep(data.corpus.train()), keep(data.corpus.dev()),
                  keep(data.corpus.test()), 2, {"ar"});
    ArchSpec arch;
    arch.filters_per_height = 4;
    arch.fc_hidden = 16;
    arch.classes = 2;
    auto params = train_full(arch, corpus, enc, 10, 1, 0.05, 2);

    std::ostringstream warnings;
    auto by_lang = per_language_f1(params, corpus, enc, 10, &warnings);
    REQUIRE(by_lang.size() == 1);
    double overall = evaluate_split(params, corpus.test(), enc, 10, 2);
    CHECK(by_lang.begin()->second == overall);
}

TEST_CASE("per-language F1 skips languages without test rows") {
    Encoder enc = tiny_encoder(8, 4, 40);
    std::vector<Example> train{{"w1 w2", 0, "aa"}, {"w3 w4", 1, "bb"}};
    std::vector<Example> test{{"w1 w5", 0, "aa"}, {"w2 w6", 1, "aa"}};
    Corpus corpus(train, {}, test, 2, {"aa", "bb"});
    ArchSpec arch;
    arch.filters_per_height = 2;
    arch.fc_hidden = 8;
    arch.classes = 2;
    auto params = init(arch, enc.d(), InitSpec{InitMode::fixed, 1}, 0);

    std::ostringstream warnings;
    auto by_lang = per_language_f1(params, corpus, enc, 6, &warnings);
    REQUIRE(by_lang.size() == 1);
    CHECK(by_lang.count("aa") == 1);
    CHECK(by_lang.count("bb") == 0);
    CHECK(warnings.str().find("bb") != std::string::npos);
}

TEST_CASE("language proportions count non-pad tokens by tag") {
    // ids 1..7 alternate tags aa, bb, aa, ...
    auto [vocab, table] = tiny_table(8, 4, 50);
    DecodedSummary sum;
    sum.kind = StrategyKind::skip_lookup;
    DecodedSentence a;
    a.index = 0;
    a.label = 0;
    a.token_ids = {1, 3, 5, 2}; // aa, aa, aa, bb
    a.similarities = {1.0, 1.0, 1.0, 1.0};
    sum.sentences.push_back(a);

    auto prop = language_proportion(sum, vocab);
    REQUIRE(prop.size() == 2);
    CHECK(prop.at("aa") == doctest::Approx(75.0).epsilon(1e-12));
    CHECK(prop.at("bb") == doctest::Approx(25.0).epsilon(1e-12));

    // pad ids drop out of the denominator
    DecodedSentence b = a;
    b.index = 1;
    b.token_ids = {1, 0, 0, 0};
    sum.sentences.push_back(b);
    prop = language_proportion(sum, vocab);
    CHECK(prop.at("aa") == doctest::Approx(80.0).epsilon(1e-12));
    CHECK(prop.at("bb") == doctest::Approx(20.0).epsilon(1e-12));
    double total = 0.0;
    for (const auto& [lang, p] : prop) total += p;
    CHECK(total == doctest::Approx(100.0).epsilon(1e-9));
}

TEST_CASE("language proportions reject degenerate summaries") {
    auto [vocab, table] = tiny_table(8, 4, 50);
    DecodedSummary empty;
    empty.kind = StrategyKind::vanilla;
    CHECK_THROWS_AS(language_proportion(empty, vocab), ArgumentError);

    DecodedSummary all_pad;
    all_pad.kind = StrategyKind::vanilla;
    DecodedSentence s;
    s.token_ids = {0, 0, 0};
    s.similarities = {1.0, 1.0, 1.0};
    all_pad.sentences.push_back(s);
    CHECK_THROWS_AS(language_proportion(all_pad, vocab), ArgumentError);

    DecodedSummary bad_id = all_pad;
    bad_id.sentences[0].token_ids = {1, 99};
    CHECK_THROWS_AS(language_proportion(bad_id, vocab), ArgumentError);
}

TEST_CASE("synthetic corpus proportions are near uniform") {
    SyntheticConfig cfg;
    cfg.seed = 0;
    auto data = generate_synthetic(cfg);
    Encoder enc(data.vocab, std::move(data.table),
                Contextualizer::identity(cfg.d));

    DecodedSummary sum;
    sum.kind = StrategyKind::vanilla;
    std::map<std::string, int64_t> counts;
    int64_t total = 0;
    int idx = 0;
    for (const auto& ex : data.corpus.train()) {
        DecodedSentence s;
        s.index = idx++;
        s.label = ex.label;
        s.token_ids = enc.tokenize(ex.text);
        s.similarities.assign(s.token_ids.size(), 1.0);
        for (int id : s.token_ids) {
            if (id == Vocabulary::kPadId) continue;
            ++counts[data.vocab.lang_tag(id)];
            ++total;
        }
        sum.sentences.push_back(std::move(s));
    }

    auto prop = language_proportion(sum, data.vocab);
    REQUIRE(prop.size() == 8);
    double total_pct = 0.0;
    for (const auto& [lang, pct] : prop) {
        double ref = 100.0 * static_cast<double>(counts.at(lang)) /
                     static_cast<double>(total);
        CHECK(std::abs(pct - ref) < 1e-9);
        CHECK(pct > 11.5);
        CHECK(pct < 13.5);
        total_pct += pct;
    }
    CHECK(std::abs(total_pct - 100.0) < 0.01);
}

TEST_CASE("evaluation reports serialize to JSON and CSV") {
    EvalReport report;
    report.source = "distilled(vanilla)";
    report.arch.classes = 3;
    report.f1 = 0.5484;
    report.ratio = 95.13;
    report.per_language = {{"de", 0.51}, {"en", 0.62}};
    report.proportion = {{"de", 48.0}, {"en", 52.0}};

    auto j = report_to_json(report);
    CHECK(j["source"] == "distilled(vanilla)");
    CHECK(j["f1_macro"] == 0.5484);
    CHECK(j["r_n"] == 95.13);
    CHECK(j["arch"]["classes"] == 3);
    CHECK(j["per_language_f1"]["en"] == 0.62);
    CHECK(j["language_proportion"]["de"] == 48.0);

    auto json_path = temp_file("td_report.json");
    write_report_json(json_path.string(), report);
    std::ifstream in(json_path);
    auto parsed = nlohmann::json::parse(in);
    CHECK(parsed == j);

    auto csv_path = temp_file("td_report.csv");
    write_report_csv(csv_path.string(), report);
    std::ifstream csv_in(csv_path);
    std::string header, row, extra;
    REQUIRE(std::getline(csv_in, header));
    REQUIRE(std::getline(csv_in, row));
    CHECK_FALSE(std::getline(csv_in, extra));
    CHECK(header == "source,extra_fc_layers,f1_macro,r_n,f1[de],f1[en],prop[de],prop[en]");
    CHECK(row == "distilled(vanilla),0,0.548400,95.130000,0.510000,0.620000,48.000000,52.000000");

    // absent ratio: null in JSON, empty cell in CSV
    report.ratio.reset();
    CHECK(report_to_json(report)["r_n"].is_null());
    write_report_csv(csv_path.string(), report);
    std::ifstream csv_in2(csv_path);
    REQUIRE(std::getline(csv_in2, header));
    REQUIRE(std::getline(csv_in2, row));
    CHECK(row.find(",,") != std::string::npos);

    // rewrites are byte-stable
    write_report_json(json_path.string(), report);
    std::stringstream first, second;
    first << std::ifstream(json_path).rdbuf();
    write_report_json(json_path.string(), report);
    second << std::ifstream(json_path).rdbuf();
    CHECK(first.str() == second.str());
}
