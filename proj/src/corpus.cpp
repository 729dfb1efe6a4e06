#include "textdistill/corpus.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"
#include "textdistill/common.hpp"
#include "textdistill/rng.hpp"

namespace textdistill {

using nlohmann::json;

Corpus::Corpus(std::vector<Example> train, std::vector<Example> dev,
               std::vector<Example> test, int classes,
               std::vector<std::string> languages)
    : train_(std::move(train)), dev_(std::move(dev)), test_(std::move(test)),
      classes_(classes), languages_(std::move(languages)) {
    if (classes_ < 2) throw SchemaError("corpus: need at least 2 classes");
    if (languages_.empty()) throw SchemaError("corpus: no languages declared");
    std::set<std::string> langset(languages_.begin(), languages_.end());
    auto check = [&](const std::vector<Example>& xs, const char* split) {
        for (const Example& e : xs) {
            if (e.label < 0 || e.label >= classes_)
                throw SchemaError("corpus: label " + std::to_string(e.label) +
                                  " out of range in " + split + " split");
            if (!langset.count(e.lang))
                throw SchemaError("corpus: undeclared language \"" + e.lang +
                                  "\" in " + split + " split");
        }
    };
    check(train_, "train");
    check(dev_, "dev");
    check(test_, "test");
}

Corpus load_jsonl(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open corpus file: " + path);

    std::vector<Example> train, dev, test;
    std::set<std::string> langs;
    int max_label = -1;
    std::vector<bool> seen_label;

    std::string line;
    long long lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception& e) {
            throw ParseError(path + ":" + std::to_string(lineno) + ": " + e.what());
        }
        auto where = path + ":" + std::to_string(lineno);
        if (!j.is_object() || !j.contains("text") || !j.contains("label") ||
            !j.contains("lang") || !j.contains("split"))
            throw SchemaError(where + ": need fields text, label, lang, split");
        if (!j["text"].is_string() || !j["label"].is_number_integer() ||
            !j["lang"].is_string() || !j["split"].is_string())
            throw SchemaError(where + ": wrong field types");

        Example e;
        e.text = j["text"].get<std::string>();
        e.label = j["label"].get<int>();
        e.lang = j["lang"].get<std::string>();
        if (e.label < 0)
            throw SchemaError(where + ": negative label " + std::to_string(e.label));
        if (e.lang.empty()) throw SchemaError(where + ": empty language tag");
        if (e.label > max_label) {
            max_label = e.label;
            seen_label.resize(static_cast<size_t>(max_label) + 1, false);
        }
        seen_label[static_cast<size_t>(e.label)] = true;
        langs.insert(e.lang);

        std::string split = j["split"].get<std::string>();
        if (split == "train") train.push_back(std::move(e));
        else if (split == "dev") dev.push_back(std::move(e));
        else if (split == "test") test.push_back(std::move(e));
        else throw SchemaError(where + ": unknown split \"" + split + "\"");
    }

    if (max_label < 0) throw SchemaError(path + ": no classes found");
    for (int c = 0; c <= max_label; ++c)
        if (!seen_label[static_cast<size_t>(c)])
            throw SchemaError(path + ": class " + std::to_string(c) +
                              " has no examples");

    return Corpus(std::move(train), std::move(dev), std::move(test), max_label + 1,
                  std::vector<std::string>(langs.begin(), langs.end()));
}

void write_corpus_jsonl(const std::string& path, const Corpus& corpus) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write corpus file: " + path);
    auto dump = [&](const std::vector<Example>& xs, const char* split) {
        for (const Example& e : xs) {
            json j;
            j["text"] = e.text;
            j["label"] = e.label;
            j["lang"] = e.lang;
            j["split"] = split;
            out << j.dump() << '\n';
        }
    };
    dump(corpus.train(), "train");
    dump(corpus.dev(), "dev");
    dump(corpus.test(), "test");
    if (!out) throw IoError("failed while writing corpus file: " + path);
}

std::vector<Example> sample_batch(const Corpus& corpus, int n, std::mt19937_64& rng) {
    if (n < 1) throw ArgumentError("sample_batch: batch size must be positive");
    const std::vector<Example>& train = corpus.train();
    if (train.empty()) throw ArgumentError("sample_batch: train split is empty");
    std::vector<Example> out;
    out.reserve(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i)
        out.push_back(train[static_cast<size_t>(bounded(rng, train.size()))]);
    return out;
}

namespace {

const char* kLangNames[] = {"ar", "en", "fr", "de", "hi", "it", "pt", "es"};

std::string lang_name(int l) {
    if (l < 8) return kLangNames[l];
    return "x" + std::to_string(l + 1);
}

} // namespace

SyntheticData generate_synthetic(const SyntheticConfig& cfg) {
    if (cfg.languages < 2) throw ArgumentError("generate_synthetic: need >= 2 languages");
    if (cfg.classes < 2) throw ArgumentError("generate_synthetic: need >= 2 classes");
    if (cfg.d < 2) throw ArgumentError("generate_synthetic: embedding size too small");
    if (cfg.indicative_per_class < 1 || cfg.neutral_per_lang < 1)
        throw ArgumentError("generate_synthetic: token pools must be nonempty");
    if (cfg.min_sentence_len < 1 || cfg.max_sentence_len < cfg.min_sentence_len)
        throw ArgumentError("generate_synthetic: bad sentence length range");
    if (cfg.train_per_lang < cfg.classes || cfg.dev_per_lang < cfg.classes ||
        cfg.test_per_lang < cfg.classes)
        throw ArgumentError(
            "generate_synthetic: split sizes too small to cover every (lang, class) cell");

    const int L = cfg.languages, C = cfg.classes, d = cfg.d;
    const int ind = cfg.indicative_per_class, neu = cfg.neutral_per_lang;
    const int per_lang = C * ind + neu;
    const int V = 1 + L * per_lang;

    RngStream root(cfg.seed);
    auto emb_eng = root.child("embeddings").engine();
    auto txt_eng = root.child("sentences").engine();

    // Shared class directions and per-language offsets; every token embedding
    // is cluster center + private noise. Scales chosen so classes separate
    // but neutral tokens stay uninformative.
    double unit = 1.0 / std::sqrt(static_cast<double>(d));
    auto gaussian = [&](double scale) {
        Tensor t = Tensor::zeros({d});
        for (double& v : t.values) v = normal_unit(emb_eng) * scale * unit;
        return t;
    };
    std::vector<Tensor> class_dir, lang_dir;
    for (int c = 0; c < C; ++c) class_dir.push_back(gaussian(1.0));
    for (int l = 0; l < L; ++l) lang_dir.push_back(gaussian(0.6));

    std::vector<std::string> tokens{"<pad>"}, tags{"none"};
    Tensor matrix = Tensor::zeros({V, d});

    // token id layout: 1 + l*per_lang + (c*ind + k) for indicative,
    //                  1 + l*per_lang + C*ind + k for neutral
    auto indicative_id = [&](int l, int c, int k) { return 1 + l * per_lang + c * ind + k; };
    auto neutral_id = [&](int l, int k) { return 1 + l * per_lang + C * ind + k; };

    for (int l = 0; l < L; ++l) {
        std::string lname = lang_name(l);
        for (int c = 0; c < C; ++c) {
            for (int k = 0; k < ind; ++k) {
                int id = indicative_id(l, c, k);
                tokens.push_back(lname + ".c" + std::to_string(c) + ".w" + std::to_string(k));
                tags.push_back(lname);
                for (int j = 0; j < d; ++j)
                    matrix.values[static_cast<size_t>(id) * d + j] =
                        class_dir[static_cast<size_t>(c)].values[static_cast<size_t>(j)] +
                        lang_dir[static_cast<size_t>(l)].values[static_cast<size_t>(j)] +
                        normal_unit(emb_eng) * 0.25 * unit;
            }
        }
        for (int k = 0; k < neu; ++k) {
            int id = neutral_id(l, k);
            tokens.push_back(lname + ".n" + std::to_string(k));
            tags.push_back(lname);
            for (int j = 0; j < d; ++j)
                matrix.values[static_cast<size_t>(id) * d + j] =
                    lang_dir[static_cast<size_t>(l)].values[static_cast<size_t>(j)] +
                    normal_unit(emb_eng) * 0.25 * unit;
        }
    }

    Vocabulary vocab(tokens, tags);
    check_embedding_rows(matrix);
    EmbeddingTable table(std::move(matrix), V);

    // Position 0 always carries a class-indicative token so every sentence is
    // classifiable; the rest mix indicative and neutral words.
    auto make_sentence = [&](int l, int c) {
        int len = cfg.min_sentence_len +
                  static_cast<int>(bounded(txt_eng, static_cast<uint64_t>(
                                                        cfg.max_sentence_len -
                                                        cfg.min_sentence_len + 1)));
        std::string text;
        for (int i = 0; i < len; ++i) {
            int id;
            if (i == 0 || uniform_unit(txt_eng) < cfg.p_indicative)
                id = indicative_id(l, c, static_cast<int>(bounded(txt_eng, ind)));
            else
                id = neutral_id(l, static_cast<int>(bounded(txt_eng, neu)));
            if (i) text += ' ';
            text += vocab.token(id);
        }
        return text;
    };

    auto fill_split = [&](int count_per_lang) {
        std::vector<Example> xs;
        xs.reserve(static_cast<size_t>(count_per_lang) * L);
        for (int l = 0; l < L; ++l)
            for (int i = 0; i < count_per_lang; ++i) {
                int c = i % C;
                xs.push_back({make_sentence(l, c), c, lang_name(l)});
            }
        return xs;
    };
    std::vector<Example> train = fill_split(cfg.train_per_lang);
    std::vector<Example> dev = fill_split(cfg.dev_per_lang);
    std::vector<Example> test = fill_split(cfg.test_per_lang);

    std::vector<std::string> languages;
    for (int l = 0; l < L; ++l) languages.push_back(lang_name(l));

    return SyntheticData{
        Corpus(std::move(train), std::move(dev), std::move(test), C, std::move(languages)),
        std::move(vocab), std::move(table)};
}

} // namespace textdistill
