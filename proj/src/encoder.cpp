#include "textdistill/encoder.hpp"

#include <bit>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <unordered_set>

#include "textdistill/common.hpp"
#include "textdistill/rng.hpp"

namespace textdistill {

namespace {

bool has_space(const std::string& s) {
    for (unsigned char c : s)
        if (std::isspace(c)) return true;
    return false;
}

} // namespace

Vocabulary::Vocabulary(std::vector<std::string> tokens,
                       std::vector<std::string> lang_tags)
    : tokens_(std::move(tokens)), lang_tags_(std::move(lang_tags)) {
    if (tokens_.size() != lang_tags_.size())
        throw VocabularyError("vocabulary: " + std::to_string(tokens_.size()) +
                              " tokens vs " + std::to_string(lang_tags_.size()) +
                              " language tags");
    if (tokens_.size() < 2)
        throw VocabularyError("vocabulary: need at least the pad token and one word");
    if (lang_tags_[0] != "none")
        throw VocabularyError("vocabulary: pad token must carry language tag \"none\"");
    for (size_t i = 0; i < tokens_.size(); ++i) {
        const std::string& t = tokens_[i];
        if (t.empty() || has_space(t))
            throw VocabularyError("vocabulary: token " + std::to_string(i) +
                                  " is empty or contains whitespace");
        auto [it, inserted] = index_.emplace(t, static_cast<int>(i));
        if (!inserted)
            throw VocabularyError("vocabulary: duplicate token \"" + t + "\"");
    }
}

const std::string& Vocabulary::token(int id) const {
    if (id < 0 || id >= size())
        throw VocabularyError("token id " + std::to_string(id) + " out of range");
    return tokens_[static_cast<size_t>(id)];
}

const std::string& Vocabulary::lang_tag(int id) const {
    if (id < 0 || id >= size())
        throw VocabularyError("token id " + std::to_string(id) + " out of range");
    return lang_tags_[static_cast<size_t>(id)];
}

int Vocabulary::id_of(const std::string& token) const {
    auto it = index_.find(token);
    return it == index_.end() ? -1 : it->second;
}

EmbeddingTable::EmbeddingTable(Tensor matrix, int vocab_size)
    : matrix_(std::move(matrix)) {
    if (matrix_.rank() != 2)
        throw DimensionError("embedding table must be rank-2, got " +
                             shape_str(matrix_.shape));
    if (matrix_.dim(0) != vocab_size)
        throw VocabularyError("embedding table has " + std::to_string(matrix_.dim(0)) +
                              " rows for a vocabulary of " + std::to_string(vocab_size));
    if (matrix_.dim(1) < 1)
        throw DimensionError("embedding table needs at least one column");
    for (int j = 0; j < matrix_.dim(1); ++j)
        if (matrix_.values[static_cast<size_t>(j)] != 0.0)
            throw VocabularyError("pad row of the embedding table must be all zeros");
}

Tensor EmbeddingTable::row(int id) const {
    if (id < 0 || id >= V())
        throw VocabularyError("embedding row " + std::to_string(id) + " out of range");
    Tensor out = Tensor::zeros({d()});
    const double* src = matrix_.values.data() + static_cast<size_t>(id) * d();
    std::copy(src, src + d(), out.values.begin());
    return out;
}

uint64_t EmbeddingTable::checksum() const {
    uint64_t h = 1469598103934665603ull;
    for (double v : matrix_.values) {
        uint64_t bits = std::bit_cast<uint64_t>(v);
        for (int i = 0; i < 8; ++i) {
            h ^= (bits >> (8 * i)) & 0xffu;
            h *= 1099511628211ull;
        }
    }
    return h;
}

Contextualizer Contextualizer::identity(int d) {
    Contextualizer c;
    c.kind_ = CtxKind::identity;
    c.d_ = d;
    return c;
}

Contextualizer Contextualizer::attention(int d, uint64_t seed) {
    if (d < 1) throw ArgumentError("contextualizer: embedding size must be positive");
    Contextualizer c;
    c.kind_ = CtxKind::attention;
    c.d_ = d;
    c.inv_sqrt_d_ = 1.0 / std::sqrt(static_cast<double>(d));
    RngStream root = RngStream(seed).child("ctx");
    auto draw = [&](std::string_view tag) {
        auto eng = root.child(tag).engine();
        Tensor w = Tensor::zeros({d, d});
        double s = 1.0 / std::sqrt(static_cast<double>(d));
        for (double& v : w.values) v = normal_unit(eng) * s;
        return w;
    };
    c.wq_ = draw("wq");
    c.wk_ = draw("wk");
    c.wv_ = draw("wv");
    c.wo_ = draw("wo");
    return c;
}

Contextualizer Contextualizer::attention_from(Tensor wq, Tensor wk, Tensor wv,
                                              Tensor wo) {
    if (wq.rank() != 2 || wq.dim(0) != wq.dim(1) || !wq.same_shape(wk) ||
        !wq.same_shape(wv) || !wq.same_shape(wo))
        throw DimensionError("contextualizer: projections must be equal square matrices");
    Contextualizer c;
    c.kind_ = CtxKind::attention;
    c.d_ = wq.dim(0);
    c.inv_sqrt_d_ = 1.0 / std::sqrt(static_cast<double>(c.d_));
    c.wq_ = std::move(wq);
    c.wk_ = std::move(wk);
    c.wv_ = std::move(wv);
    c.wo_ = std::move(wo);
    return c;
}

Tensor Contextualizer::apply(const Tensor& x) const {
    EagerOps b;
    return apply_on(b, x);
}

Var Contextualizer::apply(Graph& g, Var x) const {
    GraphOps b{g};
    return apply_on(b, x);
}

NearestHit nearest_embed(const Tensor& query, const Tensor& reference, Metric metric) {
    if (reference.rank() != 2 || reference.dim(0) < 2)
        throw ArgumentError("nearest_embed: reference must be a table with a non-pad row");
    if (query.rank() != 1 || query.dim(0) != reference.dim(1))
        throw DimensionError("nearest_embed: query shape " + shape_str(query.shape) +
                             " vs reference " + shape_str(reference.shape));
    int V = reference.dim(0), d = reference.dim(1);

    if (metric == Metric::cosine) {
        double qq = 0.0;
        for (double v : query.values) qq += v * v;
        double qn = std::sqrt(qq);
        if (qn <= 1e-12) {
            metric = Metric::l2; // cosine undefined for a zero query
        } else {
            NearestHit best{0, -2.0};
            for (int r = 1; r < V; ++r) {
                const double* row = reference.values.data() + static_cast<size_t>(r) * d;
                double dot = 0.0, rr = 0.0;
                for (int j = 0; j < d; ++j) {
                    dot += query.values[static_cast<size_t>(j)] * row[j];
                    rr += row[j] * row[j];
                }
                double rn = std::sqrt(rr);
                if (rn <= 1e-12) continue;
                double sim = std::clamp(dot / (qn * rn), -1.0, 1.0);
                if (sim > best.similarity) best = {r, sim};
            }
            if (best.similarity <= -2.0)
                throw ArgumentError("nearest_embed: no usable reference row");
            return best;
        }
    }

    NearestHit best{0, -std::numeric_limits<double>::infinity()};
    for (int r = 1; r < V; ++r) {
        const double* row = reference.values.data() + static_cast<size_t>(r) * d;
        double dist2 = 0.0;
        for (int j = 0; j < d; ++j) {
            double diff = query.values[static_cast<size_t>(j)] - row[j];
            dist2 += diff * diff;
        }
        double sim = -std::sqrt(dist2);
        if (sim > best.similarity) best = {r, sim};
    }
    return best;
}

Encoder::Encoder(Vocabulary vocab, EmbeddingTable table, Contextualizer ctx)
    : vocab_(std::move(vocab)), table_(std::move(table)), ctx_(std::move(ctx)),
      ref_cache_(std::make_unique<RefCache>()) {
    if (vocab_.size() != table_.V())
        throw VocabularyError("encoder: vocabulary size " + std::to_string(vocab_.size()) +
                              " vs table rows " + std::to_string(table_.V()));
    if (ctx_.kind() == CtxKind::attention && ctx_.d() != table_.d())
        throw DimensionError("encoder: contextualizer width " + std::to_string(ctx_.d()) +
                             " vs embedding size " + std::to_string(table_.d()));
}

std::vector<int> Encoder::tokenize(const std::string& text) const {
    std::vector<int> ids;
    std::string word;
    auto flush = [&] {
        if (word.empty()) return;
        int id = vocab_.id_of(word);
        ids.push_back(id < 0 ? Vocabulary::kPadId : id);
        word.clear();
    };
    for (unsigned char c : text) {
        if (std::isspace(c)) {
            flush();
        } else {
            word.push_back(static_cast<char>(std::tolower(c)));
        }
    }
    flush();
    return ids;
}

std::vector<int> Encoder::pad_or_truncate(std::vector<int> ids, int s) {
    if (s < 1) throw ArgumentError("pad_or_truncate: length must be at least 1");
    ids.resize(static_cast<size_t>(s), Vocabulary::kPadId);
    return ids;
}

Tensor Encoder::embed(std::span<const int> ids) const {
    int s = static_cast<int>(ids.size());
    int dd = d();
    Tensor out = Tensor::zeros({s, dd});
    for (int i = 0; i < s; ++i) {
        int id = ids[static_cast<size_t>(i)];
        if (id < 0 || id >= V())
            throw VocabularyError("embed: token id " + std::to_string(id) +
                                  " out of range [0," + std::to_string(V()) + ")");
        const double* src = table_.matrix().values.data() + static_cast<size_t>(id) * dd;
        std::copy(src, src + dd, out.values.begin() + static_cast<size_t>(i) * dd);
    }
    return out;
}

Tensor Encoder::one_hot(int label, int C) {
    if (C < 1) throw ArgumentError("one_hot: class count must be positive");
    if (label < 0 || label >= C)
        throw LabelError("one_hot: label " + std::to_string(label) +
                         " out of range [0," + std::to_string(C) + ")");
    Tensor out = Tensor::zeros({C});
    out.values[static_cast<size_t>(label)] = 1.0;
    return out;
}

EncodedExample Encoder::encode(const std::string& text, int label, int s, int C) const {
    EncodedExample ex;
    ex.token_ids = pad_or_truncate(tokenize(text), s);
    ex.embeddings = contextualize(embed(ex.token_ids));
    ex.label_onehot = one_hot(label, C);
    return ex;
}

const Tensor& Encoder::per_word_reference_table(int s) const {
    if (s < 1) throw ArgumentError("per_word_reference_table: length must be at least 1");
    std::lock_guard<std::mutex> lock(ref_cache_->mutex);
    auto it = ref_cache_->by_length.find(s);
    if (it != ref_cache_->by_length.end()) return it->second;

    Tensor table = Tensor::zeros({V(), d()});
    std::vector<int> ids(static_cast<size_t>(s), Vocabulary::kPadId);
    for (int v = 0; v < V(); ++v) {
        ids[0] = v;
        Tensor enc = contextualize(embed(ids));
        std::copy(enc.values.begin(), enc.values.begin() + d(),
                  table.values.begin() + static_cast<size_t>(v) * d());
    }
    return ref_cache_->by_length.emplace(s, std::move(table)).first->second;
}

void check_embedding_rows(const Tensor& matrix) {
    int V = matrix.dim(0), d = matrix.dim(1);
    std::vector<double> unit(static_cast<size_t>(V) * d, 0.0);
    for (int r = 1; r < V; ++r) {
        const double* row = matrix.values.data() + static_cast<size_t>(r) * d;
        double rr = 0.0;
        for (int j = 0; j < d; ++j) rr += row[j] * row[j];
        double rn = std::sqrt(rr);
        if (rn <= 1e-12)
            throw VocabularyError("embedding row " + std::to_string(r) +
                                  " has zero norm and cannot be decoded");
        for (int j = 0; j < d; ++j)
            unit[static_cast<size_t>(r) * d + j] = row[j] / rn;
    }
    for (int i = 1; i < V; ++i) {
        for (int j = i + 1; j < V; ++j) {
            double maxdiff = 0.0;
            for (int k = 0; k < d; ++k) {
                double diff = std::abs(unit[static_cast<size_t>(i) * d + k] -
                                       unit[static_cast<size_t>(j) * d + k]);
                if (diff > maxdiff) maxdiff = diff;
            }
            if (maxdiff <= 1e-9)
                throw VocabularyError("embedding rows " + std::to_string(i) + " and " +
                                      std::to_string(j) +
                                      " are positive scalar multiples of each other");
        }
    }
}

Encoder load_embedding_file(const std::string& path, CtxKind ctx_kind,
                            uint64_t ctx_seed) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open embedding file: " + path);

    std::string line;
    if (!std::getline(in, line))
        throw ParseError(path + ":1: missing header line");
    std::istringstream header(line);
    long long V = 0, d = 0;
    if (!(header >> V >> d) || V < 2 || d < 1)
        throw ParseError(path + ":1: header must be \"V d\" with V >= 2, d >= 1");
    std::string trailing;
    if (header >> trailing)
        throw ParseError(path + ":1: unexpected trailing content in header");

    std::vector<std::string> tokens, langs;
    tokens.reserve(static_cast<size_t>(V));
    langs.reserve(static_cast<size_t>(V));
    Tensor matrix = Tensor::zeros({static_cast<int>(V), static_cast<int>(d)});

    for (long long r = 0; r < V; ++r) {
        long long lineno = r + 2;
        if (!std::getline(in, line))
            throw ParseError(path + ":" + std::to_string(lineno) +
                             ": expected " + std::to_string(V) + " rows, file ended");
        size_t t1 = line.find('\t');
        size_t t2 = t1 == std::string::npos ? std::string::npos : line.find('\t', t1 + 1);
        if (t1 == std::string::npos || t2 == std::string::npos)
            throw ParseError(path + ":" + std::to_string(lineno) +
                             ": expected token<TAB>lang<TAB>values");
        tokens.push_back(line.substr(0, t1));
        langs.push_back(line.substr(t1 + 1, t2 - t1 - 1));
        std::istringstream vals(line.substr(t2 + 1));
        for (long long j = 0; j < d; ++j) {
            double v = 0.0;
            if (!(vals >> v))
                throw ParseError(path + ":" + std::to_string(lineno) + ": expected " +
                                 std::to_string(d) + " values, got " + std::to_string(j));
            matrix.values[static_cast<size_t>(r * d + j)] = v;
        }
        if (vals >> trailing)
            throw ParseError(path + ":" + std::to_string(lineno) +
                             ": unexpected trailing content");
    }

    Vocabulary vocab(std::move(tokens), std::move(langs));
    check_embedding_rows(matrix);
    EmbeddingTable table(std::move(matrix), vocab.size());
    Contextualizer ctx = ctx_kind == CtxKind::identity
                             ? Contextualizer::identity(table.d())
                             : Contextualizer::attention(table.d(), ctx_seed);
    return Encoder(std::move(vocab), std::move(table), std::move(ctx));
}

void write_embedding_file(const std::string& path, const Vocabulary& vocab,
                          const EmbeddingTable& table) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write embedding file: " + path);
    out << table.V() << ' ' << table.d() << '\n';
    out << std::setprecision(17);
    for (int r = 0; r < table.V(); ++r) {
        out << vocab.token(r) << '\t' << vocab.lang_tag(r) << '\t';
        const double* row = table.matrix().values.data() + static_cast<size_t>(r) * table.d();
        for (int j = 0; j < table.d(); ++j) {
            if (j) out << ' ';
            out << row[j];
        }
        out << '\n';
    }
    if (!out) throw IoError("failed while writing embedding file: " + path);
}

} // namespace textdistill
