#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "textdistill/encoder.hpp"

namespace textdistill {

struct Example {
    std::string text;
    int label = 0;
    std::string lang;
};

class Corpus {
public:
    Corpus(std::vector<Example> train, std::vector<Example> dev,
           std::vector<Example> test, int classes,
           std::vector<std::string> languages);

    const std::vector<Example>& train() const { return train_; }
    const std::vector<Example>& dev() const { return dev_; }
    const std::vector<Example>& test() const { return test_; }
    int classes() const { return classes_; }
    const std::vector<std::string>& languages() const { return languages_; }

private:
    std::vector<Example> train_, dev_, test_;
    int classes_ = 0;
    std::vector<std::string> languages_;
};

// One JSON object per line with fields text, label, lang, split.
Corpus load_jsonl(const std::string& path);
void write_corpus_jsonl(const std::string& path, const Corpus& corpus);

// Uniform over the train split, with replacement.
std::vector<Example> sample_batch(const Corpus& corpus, int n, std::mt19937_64& rng);

// Desk-scale stand-in for a multilingual sentiment corpus: class-indicative
// and neutral tokens per language, embeddings drawn from per-class Gaussian
// clusters with per-language offsets.
struct SyntheticConfig {
    int languages = 8;
    int classes = 3;
    int train_per_lang = 184;
    int dev_per_lang = 32;
    int test_per_lang = 87;
    int d = 16;
    int indicative_per_class = 8;
    int neutral_per_lang = 25;
    int min_sentence_len = 6;
    int max_sentence_len = 14;
    double p_indicative = 0.55;
    uint64_t seed = 0;
};

struct SyntheticData {
    Corpus corpus;
    Vocabulary vocab;
    EmbeddingTable table;
};

SyntheticData generate_synthetic(const SyntheticConfig& cfg);

} // namespace textdistill
