#pragma once

#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "textdistill/classifier.hpp"
#include "textdistill/corpus.hpp"
#include "textdistill/distiller.hpp"
#include "textdistill/encoder.hpp"
#include "textdistill/strategies.hpp"

namespace textdistill {

// Mini-batch SGD over the encoded train split; epochs = 0 returns the init.
TextCnnParams train_full(const ArchSpec& arch, const Corpus& corpus,
                         const Encoder& enc, int s, int epochs, double lr,
                         uint64_t seed, int batch = 32);

// Fresh init, then full-batch GD steps on the materialized block at the
// block's own learned rate. One step by default: that is the horizon the
// distillation optimized.
TextCnnParams train_from_distilled(const ArchSpec& arch, const DistilledData& dd,
                                   const Encoder& enc, const InitSpec& init_spec,
                                   int steps = 1);

std::vector<int> predict(const TextCnnParams& params,
                         const std::vector<Tensor>& xs);

double f1_macro(std::span<const int> preds, std::span<const int> labels, int C);

// Score of a model trained on distilled data as a percent of the full-data
// model's score.
double distillation_ratio(double distilled_score, double full_score);

double evaluate_split(const TextCnnParams& params,
                      std::span<const Example> examples, const Encoder& enc,
                      int s, int C);

// Test macro-F1 of a model trained from dd on each width-preserving variant
// of the base architecture (0..3 extra hidden layers).
std::map<int, double> cross_arch_eval(const DistilledData& dd,
                                      const Encoder& enc,
                                      const ArchSpec& base_arch,
                                      const InitSpec& init_spec,
                                      const Corpus& corpus, int steps = 1);

// Macro-F1 over each language's slice of the test split. Languages with no
// test examples are left out with a warning (std::cerr unless a stream is
// given).
std::map<std::string, double> per_language_f1(const TextCnnParams& params,
                                              const Corpus& corpus,
                                              const Encoder& enc, int s,
                                              std::ostream* warnings = nullptr);

// Share of non-pad decoded tokens per language tag, in percent.
std::map<std::string, double> language_proportion(const DecodedSummary& summary,
                                                  const Vocabulary& vocab);

// Same counting rule applied to the original training text.
std::map<std::string, double> corpus_language_proportion(const Corpus& corpus,
                                                         const Encoder& enc);

struct EvalReport {
    std::string source; // "full_data" or "distilled(<kind>)"
    ArchSpec arch;
    double f1 = 0.0;
    std::optional<double> ratio; // only when a full-data score is on record
    std::map<std::string, double> per_language;
    std::map<std::string, double> proportion; // empty unless decoded data exists
};

nlohmann::json report_to_json(const EvalReport& report);
void write_report_json(const std::string& path, const EvalReport& report);
// One header line and one value row; map-valued fields become f1[lang] /
// prop[lang] columns in key order.
void write_report_csv(const std::string& path, const EvalReport& report);

} // namespace textdistill
