#pragma once

#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "textdistill/classifier.hpp"
#include "textdistill/encoder.hpp"

namespace textdistill {

// Where the learnable summary lives and how it reaches the classifier:
//   vanilla       - learned s x d blocks fed to the classifier as-is
//   skip_lookup   - learned s x d blocks passed through the contextualizer
//   vocab_softmax - learned s x V logits, softmax-mixed over the embedding table
//   vocab_gumbel  - like vocab_softmax but with a gumbel-softmax relaxation
enum class StrategyKind { vanilla, skip_lookup, vocab_softmax, vocab_gumbel };

std::string to_string(StrategyKind kind);
StrategyKind strategy_from_string(const std::string& name);
bool is_vocab_kind(StrategyKind kind);

// The learned rate is kept strictly positive; updates clamp to this floor.
inline constexpr double kEtaFloor = 1e-6;

struct DistilledData {
    StrategyKind kind = StrategyKind::vanilla;
    int M = 0;     // distilled sentences, a multiple of C
    int s = 0;     // sentence length
    int width = 0; // d for embedding kinds, V for vocab kinds
    int C = 0;
    Tensor inputs;      // M x s x width
    Tensor labels;      // M x C, rows on the simplex
    double eta = 0.0;   // learned inner-step rate
    double tau = 0.5;   // gumbel temperature
};

void validate_distilled(const DistilledData& dd);

// Class of sample i is i % C; labels start one-hot on that class. Embedding
// kinds start at the table's row-norm scale, vocab logits near-uniform.
DistilledData init_distilled(StrategyKind kind, int M, int s,
                             const EmbeddingTable& table, int C, double eta0,
                             double tau, uint64_t seed);

Tensor gumbel_noise(int s, int V, std::mt19937_64& rng); // -log(-log u)
Tensor gumbel_softmax(const Tensor& logits, double tau, std::mt19937_64& rng);
// Test and evaluation hook: explicit noise, zero tensor for the noise-free path.
Tensor gumbel_softmax_with_noise(const Tensor& logits, double tau,
                                 const Tensor& noise);

// Classifier-ready s x d blocks, one per distilled sentence, differentiable
// w.r.t. x. `x` is the full M x s x width block; gumbel_draws holds one s x V
// noise tensor per sentence (empty span: noise-free relaxation).
template <class B>
std::vector<typename B::V> materialize_on(const B& b, const DistilledData& dd,
                                          const Encoder& enc, typename B::V x,
                                          std::span<const Tensor> gumbel_draws) {
    const int M = dd.M, s = dd.s, w = dd.width;
    auto flat = b.reshape(x, {M * s * w});
    std::vector<typename B::V> out;
    out.reserve(static_cast<size_t>(M));
    typename B::V table{};
    if (is_vocab_kind(dd.kind)) table = b.constant(enc.table().matrix());
    for (int i = 0; i < M; ++i) {
        auto block = b.reshape(b.slice(flat, i * s * w, s * w), {s, w});
        switch (dd.kind) {
        case StrategyKind::vanilla:
            out.push_back(block);
            break;
        case StrategyKind::skip_lookup:
            out.push_back(enc.ctx().apply_on(b, block));
            break;
        case StrategyKind::vocab_softmax: {
            auto mix = b.softmax(block, 1);
            out.push_back(enc.ctx().apply_on(b, b.matmul(mix, table)));
            break;
        }
        case StrategyKind::vocab_gumbel: {
            auto noisy = gumbel_draws.empty()
                             ? block
                             : b.add(block, b.constant(gumbel_draws[static_cast<size_t>(i)]));
            auto mix = b.softmax(b.scale(noisy, 1.0 / dd.tau), 1);
            out.push_back(enc.ctx().apply_on(b, b.matmul(mix, table)));
            break;
        }
        }
    }
    return out;
}

// Eager form, stacked to M x s x d.
Tensor materialize(const DistilledData& dd, const Encoder& enc,
                   std::span<const Tensor> gumbel_draws = {});

struct DecodedSentence {
    int index = 0;
    int label = 0;
    std::vector<int> token_ids;        // length s
    std::vector<double> similarities;  // cosine for embedding kinds, prob for vocab
};

struct DecodedSummary {
    StrategyKind kind = StrategyKind::vanilla;
    std::vector<DecodedSentence> sentences;
};

DecodedSummary decode(const DistilledData& dd, const Encoder& enc);

void write_decoded_jsonl(const std::string& path, const DecodedSummary& summary,
                         const Vocabulary& vocab);

// Key-value header plus little-endian 64-bit float payloads for inputs and
// labels; carries the init spec so later runs can reuse the same fixed init.
void save_distilled(const std::string& path, const DistilledData& dd,
                    const InitSpec& init);
std::pair<DistilledData, InitSpec> load_distilled(const std::string& path);

} // namespace textdistill
