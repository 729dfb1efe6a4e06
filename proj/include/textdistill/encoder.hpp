#pragma once

#include <cstdint>
#include <map>
#include <mutex>
#include <memory>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "textdistill/backend.hpp"
#include "textdistill/tensor.hpp"

namespace textdistill {

// Token inventory. Index 0 is always the pad token, tagged "none".
class Vocabulary {
public:
    static constexpr int kPadId = 0;

    Vocabulary(std::vector<std::string> tokens, std::vector<std::string> lang_tags);

    int size() const { return static_cast<int>(tokens_.size()); }
    const std::string& token(int id) const;
    const std::string& lang_tag(int id) const;
    const std::vector<std::string>& tokens() const { return tokens_; }
    // -1 when the token is unknown
    int id_of(const std::string& token) const;

private:
    std::vector<std::string> tokens_;
    std::vector<std::string> lang_tags_;
    std::unordered_map<std::string, int> index_;
};

// Frozen V x d lookup matrix; row 0 (pad) is all zeros.
class EmbeddingTable {
public:
    EmbeddingTable(Tensor matrix, int vocab_size);

    int V() const { return matrix_.dim(0); }
    int d() const { return matrix_.dim(1); }
    const Tensor& matrix() const { return matrix_; }
    Tensor row(int id) const;
    uint64_t checksum() const; // over the raw bit patterns

private:
    Tensor matrix_;
};

enum class CtxKind { identity, attention };

// Frozen stand-in for a pretrained language-model body: either the identity
// or one residual self-attention layer with seeded, never-trained weights.
class Contextualizer {
public:
    static Contextualizer identity(int d);
    static Contextualizer attention(int d, uint64_t seed);
    static Contextualizer attention_from(Tensor wq, Tensor wk, Tensor wv, Tensor wo);

    CtxKind kind() const { return kind_; }
    int d() const { return d_; }

    Tensor apply(const Tensor& x) const;
    Var apply(Graph& g, Var x) const;

    template <class B>
    typename B::V apply_on(const B& b, typename B::V x) const {
        if (kind_ == CtxKind::identity) return x;
        auto wq = b.constant(wq_), wk = b.constant(wk_), wv = b.constant(wv_),
             wo = b.constant(wo_);
        auto q = b.matmul(x, wq);
        auto k = b.matmul(x, wk);
        auto v = b.matmul(x, wv);
        auto scores = b.scale(b.matmul(q, b.transpose(k)), inv_sqrt_d_);
        auto attn = b.softmax(scores, 1);
        return b.add(x, b.matmul(b.matmul(attn, v), wo));
    }

private:
    Contextualizer() = default;
    CtxKind kind_ = CtxKind::identity;
    int d_ = 0;
    double inv_sqrt_d_ = 0.0;
    Tensor wq_, wk_, wv_, wo_;
};

enum class Metric { cosine, l2 };

struct NearestHit {
    int id = 0;
    double similarity = 0.0;
};

// Closest reference row to the query, skipping the pad row. Cosine by
// default; ties go to the lowest id; a zero-norm query falls back to L2.
NearestHit nearest_embed(const Tensor& query, const Tensor& reference,
                         Metric metric = Metric::cosine);

struct EncodedExample {
    std::vector<int> token_ids; // length s
    Tensor embeddings;          // s x d, contextualized
    Tensor label_onehot;        // length C
};

// Everything frozen that turns text into classifier input.
class Encoder {
public:
    Encoder(Vocabulary vocab, EmbeddingTable table, Contextualizer ctx);

    const Vocabulary& vocab() const { return vocab_; }
    const EmbeddingTable& table() const { return table_; }
    const Contextualizer& ctx() const { return ctx_; }
    int V() const { return table_.V(); }
    int d() const { return table_.d(); }

    // Whitespace split + ASCII lowercase; unknown tokens map to pad.
    std::vector<int> tokenize(const std::string& text) const;

    static std::vector<int> pad_or_truncate(std::vector<int> ids, int s);

    Tensor embed(std::span<const int> ids) const; // s x d

    Tensor contextualize(const Tensor& x) const { return ctx_.apply(x); }
    Var contextualize(Graph& g, Var x) const { return ctx_.apply(g, x); }

    static Tensor one_hot(int label, int C);

    EncodedExample encode(const std::string& text, int label, int s, int C) const;

    // Row v: token v encoded alone (padded to length s), output position 0.
    // Computed once per s, then served from the cache.
    const Tensor& per_word_reference_table(int s) const;

private:
    // Behind a pointer so the encoder stays movable despite the lock.
    struct RefCache {
        std::mutex mutex;
        std::map<int, Tensor> by_length;
    };

    Vocabulary vocab_;
    EmbeddingTable table_;
    Contextualizer ctx_;
    std::unique_ptr<RefCache> ref_cache_;
};

// Rejects zero-norm non-pad rows and pairs of rows that are positive scalar
// multiples of each other (tolerance 1e-9 on the normalized rows); either
// would make nearest-embedding decoding ambiguous.
void check_embedding_rows(const Tensor& matrix);

// Text format: header "V d", then V lines "token<TAB>lang<TAB>v1 v2 ... vd".
Encoder load_embedding_file(const std::string& path, CtxKind ctx_kind,
                            uint64_t ctx_seed);
void write_embedding_file(const std::string& path, const Vocabulary& vocab,
                          const EmbeddingTable& table);

} // namespace textdistill
