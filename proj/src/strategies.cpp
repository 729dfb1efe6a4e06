#include "textdistill/strategies.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include "json.hpp"
#include "textdistill/bytes.hpp"
#include "textdistill/rng.hpp"

namespace textdistill {

std::string to_string(StrategyKind kind) {
    switch (kind) {
    case StrategyKind::vanilla: return "vanilla";
    case StrategyKind::skip_lookup: return "skip_lookup";
    case StrategyKind::vocab_softmax: return "vocab_softmax";
    case StrategyKind::vocab_gumbel: return "vocab_gumbel";
    }
    throw ArgumentError("bad strategy kind value");
}

StrategyKind strategy_from_string(const std::string& name) {
    if (name == "vanilla") return StrategyKind::vanilla;
    if (name == "skip_lookup") return StrategyKind::skip_lookup;
    if (name == "vocab_softmax") return StrategyKind::vocab_softmax;
    if (name == "vocab_gumbel") return StrategyKind::vocab_gumbel;
    throw ArgumentError("unknown strategy: " + name);
}

bool is_vocab_kind(StrategyKind kind) {
    return kind == StrategyKind::vocab_softmax || kind == StrategyKind::vocab_gumbel;
}

void validate_distilled(const DistilledData& dd) {
    if (dd.M < 1 || dd.s < 1 || dd.width < 1)
        throw ArgumentError("distilled block has empty dimensions");
    if (dd.C < 2) throw ArgumentError("distilled data needs at least 2 classes");
    if (dd.M % dd.C != 0)
        throw ArgumentError("distilled count " + std::to_string(dd.M) +
                            " is not a multiple of " + std::to_string(dd.C) +
                            " classes");
    std::vector<int> want_x{dd.M, dd.s, dd.width};
    if (dd.inputs.shape != want_x)
        throw ArgumentError("distilled inputs shaped " + shape_str(dd.inputs.shape) +
                            ", expected " + shape_str(want_x));
    std::vector<int> want_y{dd.M, dd.C};
    if (dd.labels.shape != want_y)
        throw ArgumentError("distilled labels shaped " + shape_str(dd.labels.shape) +
                            ", expected " + shape_str(want_y));
    if (!dd.inputs.all_finite() || !dd.labels.all_finite())
        throw ArgumentError("distilled data holds non-finite values");
    for (int i = 0; i < dd.M; ++i) {
        double sum = 0.0;
        for (int c = 0; c < dd.C; ++c) {
            double v = dd.labels.values[static_cast<size_t>(i * dd.C + c)];
            if (v < -1e-9)
                throw ArgumentError("distilled label row " + std::to_string(i) +
                                    " has a negative entry");
            sum += v;
        }
        if (std::abs(sum - 1.0) > 1e-6)
            throw ArgumentError("distilled label row " + std::to_string(i) +
                                " sums to " + std::to_string(sum));
    }
    if (!(dd.eta >= kEtaFloor))
        throw ArgumentError("distilled rate must be at least 1e-6");
    if (!(dd.tau > 0.0)) throw ArgumentError("temperature must be positive");
}

DistilledData init_distilled(StrategyKind kind, int M, int s,
                             const EmbeddingTable& table, int C, double eta0,
                             double tau, uint64_t seed) {
    if (M < 1 || s < 1) throw ArgumentError("distilled block has empty dimensions");
    if (C < 2) throw ArgumentError("distilled data needs at least 2 classes");
    if (M % C != 0)
        throw ArgumentError("distilled count " + std::to_string(M) +
                            " is not a multiple of " + std::to_string(C) + " classes");
    if (!(eta0 >= kEtaFloor)) throw ArgumentError("starting rate must be at least 1e-6");
    if (!(tau > 0.0)) throw ArgumentError("temperature must be positive");

    const int V = table.V();
    const int d = table.d();

    DistilledData dd;
    dd.kind = kind;
    dd.M = M;
    dd.s = s;
    dd.C = C;
    dd.eta = eta0;
    dd.tau = tau;

    double scale;
    if (is_vocab_kind(kind)) {
        dd.width = V;
        scale = 0.01; // near-uniform mixing at the start
    } else {
        dd.width = d;
        // Start at the scale of real rows so early steps are well-conditioned.
        double norm_sum = 0.0;
        for (int t = 1; t < V; ++t) {
            double sq = 0.0;
            for (int k = 0; k < d; ++k) {
                double v = table.matrix().values[static_cast<size_t>(t * d + k)];
                sq += v * v;
            }
            norm_sum += std::sqrt(sq);
        }
        scale = norm_sum / static_cast<double>(V - 1) / std::sqrt(static_cast<double>(d));
    }

    auto eng = RngStream(seed).child("distilled").child("inputs").engine();
    dd.inputs = Tensor::zeros({M, s, dd.width});
    for (double& v : dd.inputs.values) v = normal_unit(eng) * scale;

    dd.labels = Tensor::zeros({M, C});
    for (int i = 0; i < M; ++i)
        dd.labels.values[static_cast<size_t>(i * C + i % C)] = 1.0;

    validate_distilled(dd);
    return dd;
}

Tensor gumbel_noise(int s, int V, std::mt19937_64& rng) {
    if (s < 1 || V < 1) throw ArgumentError("gumbel noise needs positive dimensions");
    Tensor g = Tensor::zeros({s, V});
    for (double& v : g.values) v = -std::log(-std::log(uniform_unit(rng)));
    return g;
}

Tensor gumbel_softmax_with_noise(const Tensor& logits, double tau,
                                 const Tensor& noise) {
    if (!(tau > 0.0)) throw ArgumentError("temperature must be positive");
    if (!logits.same_shape(noise))
        throw DimensionError("gumbel noise shaped " + shape_str(noise.shape) +
                             " does not match logits " + shape_str(logits.shape));
    int axis = logits.rank() - 1;
    if (axis < 0) throw ArgumentError("gumbel softmax needs at least rank 1");
    return kernels::softmax(kernels::scale(kernels::add(logits, noise), 1.0 / tau),
                            axis);
}

Tensor gumbel_softmax(const Tensor& logits, double tau, std::mt19937_64& rng) {
    if (!(tau > 0.0)) throw ArgumentError("temperature must be positive");
    Tensor g = logits;
    for (double& v : g.values) v = -std::log(-std::log(uniform_unit(rng)));
    return gumbel_softmax_with_noise(logits, tau, g);
}

Tensor materialize(const DistilledData& dd, const Encoder& enc,
                   std::span<const Tensor> gumbel_draws) {
    validate_distilled(dd);
    const int d = enc.table().d();
    if (is_vocab_kind(dd.kind)) {
        if (dd.width != enc.table().V())
            throw DimensionError("distilled logits cover " + std::to_string(dd.width) +
                                 " tokens, table has " +
                                 std::to_string(enc.table().V()));
    } else if (dd.width != d) {
        throw DimensionError("distilled width " + std::to_string(dd.width) +
                             " does not match embedding width " + std::to_string(d));
    }
    if (!gumbel_draws.empty() &&
        gumbel_draws.size() != static_cast<size_t>(dd.M))
        throw ArgumentError("expected one gumbel draw per distilled sentence");

    EagerOps b;
    auto rows = materialize_on(b, dd, enc, dd.inputs, gumbel_draws);
    std::vector<Tensor> flat;
    flat.reserve(rows.size());
    for (auto& r : rows) flat.push_back(kernels::reshape(r, {dd.s * d}));
    return kernels::reshape(b.concat(flat), {dd.M, dd.s, d});
}

namespace {

int argmax_lowest(const double* row, int n) {
    int best = 0;
    for (int i = 1; i < n; ++i)
        if (row[i] > row[best]) best = i;
    return best;
}

} // namespace

DecodedSummary decode(const DistilledData& dd, const Encoder& enc) {
    validate_distilled(dd);
    DecodedSummary out;
    out.kind = dd.kind;
    out.sentences.reserve(static_cast<size_t>(dd.M));

    const Tensor* reference = nullptr;
    if (dd.kind == StrategyKind::vanilla)
        reference = &enc.per_word_reference_table(dd.s);
    else if (dd.kind == StrategyKind::skip_lookup)
        reference = &enc.table().matrix();

    for (int i = 0; i < dd.M; ++i) {
        DecodedSentence sent;
        sent.index = i;
        sent.label = argmax_lowest(dd.labels.values.data() + i * dd.C, dd.C);
        sent.token_ids.reserve(static_cast<size_t>(dd.s));
        sent.similarities.reserve(static_cast<size_t>(dd.s));
        for (int t = 0; t < dd.s; ++t) {
            const double* row =
                dd.inputs.values.data() + (static_cast<size_t>(i) * dd.s + t) * dd.width;
            if (reference) {
                double sq = 0.0;
                for (int k = 0; k < dd.width; ++k) sq += row[k] * row[k];
                if (std::sqrt(sq) <= 1e-12) {
                    // A silent position; the pad row can't win a cosine scan.
                    sent.token_ids.push_back(Vocabulary::kPadId);
                    sent.similarities.push_back(1.0);
                    continue;
                }
                Tensor q{{dd.width}, std::vector<double>(row, row + dd.width)};
                NearestHit hit = nearest_embed(q, *reference, Metric::cosine);
                sent.token_ids.push_back(hit.id);
                sent.similarities.push_back(hit.similarity);
            } else {
                int id = argmax_lowest(row, dd.width);
                Tensor probs = kernels::softmax(
                    Tensor{{dd.width}, std::vector<double>(row, row + dd.width)}, 0);
                sent.token_ids.push_back(id);
                sent.similarities.push_back(probs.values[static_cast<size_t>(id)]);
            }
        }
        out.sentences.push_back(std::move(sent));
    }
    return out;
}

void write_decoded_jsonl(const std::string& path, const DecodedSummary& summary,
                         const Vocabulary& vocab) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open decoded file for writing: " + path);
    for (const auto& sent : summary.sentences) {
        nlohmann::json line;
        line["index"] = sent.index;
        line["label"] = sent.label;
        auto tokens = nlohmann::json::array();
        for (int id : sent.token_ids) tokens.push_back(vocab.token(id));
        line["tokens"] = std::move(tokens);
        line["similarities"] = sent.similarities;
        out << line.dump() << "\n";
    }
    if (!out) throw IoError("failed while writing decoded file: " + path);
}

namespace {

std::string fmt_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

} // namespace

void save_distilled(const std::string& path, const DistilledData& dd,
                    const InitSpec& init) {
    validate_distilled(dd);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open distilled file for writing: " + path);
    out << "distilled v1\n";
    out << "kind=" << to_string(dd.kind) << "\n";
    out << "M=" << dd.M << "\n";
    out << "s=" << dd.s << "\n";
    out << "d=" << (is_vocab_kind(dd.kind) ? 0 : dd.width) << "\n";
    out << "V=" << (is_vocab_kind(dd.kind) ? dd.width : 0) << "\n";
    out << "C=" << dd.C << "\n";
    out << "tau=" << fmt_double(dd.tau) << "\n";
    out << "eta=" << fmt_double(dd.eta) << "\n";
    out << "init_mode=" << to_string(init.mode) << "\n";
    out << "init_seed=" << init.seed << "\n";
    out << "end\n";
    for (double v : dd.inputs.values) put_f64(out, v);
    for (double v : dd.labels.values) put_f64(out, v);
    if (!out) throw IoError("failed while writing distilled file: " + path);
}

std::pair<DistilledData, InitSpec> load_distilled(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open distilled file: " + path);
    std::string line;
    if (!std::getline(in, line) || line != "distilled v1")
        throw ParseError(path + ": not a distilled data file");

    std::map<std::string, std::string> fields;
    while (std::getline(in, line)) {
        if (line == "end") break;
        auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ParseError(path + ": malformed header line: " + line);
        fields[line.substr(0, eq)] = line.substr(eq + 1);
    }
    if (line != "end") throw ParseError(path + ": header is missing its end marker");

    auto need = [&](const std::string& key) -> const std::string& {
        auto it = fields.find(key);
        if (it == fields.end())
            throw ParseError(path + ": header is missing key " + key);
        return it->second;
    };
    auto to_int = [&](const std::string& key) {
        try {
            return std::stoi(need(key));
        } catch (const std::exception&) {
            throw ParseError(path + ": bad integer for key " + key);
        }
    };
    auto to_double = [&](const std::string& key) {
        try {
            return std::stod(need(key));
        } catch (const std::exception&) {
            throw ParseError(path + ": bad number for key " + key);
        }
    };

    DistilledData dd;
    try {
        dd.kind = strategy_from_string(need("kind"));
    } catch (const ArgumentError& e) {
        throw ParseError(path + ": " + e.what());
    }
    dd.M = to_int("M");
    dd.s = to_int("s");
    dd.C = to_int("C");
    dd.width = is_vocab_kind(dd.kind) ? to_int("V") : to_int("d");
    dd.tau = to_double("tau");
    dd.eta = to_double("eta");
    if (dd.M < 1 || dd.s < 1 || dd.width < 1 || dd.C < 1)
        throw ParseError(path + ": header describes an empty block");

    InitSpec init;
    try {
        init.mode = init_mode_from_string(need("init_mode"));
    } catch (const ArgumentError& e) {
        throw ParseError(path + ": " + e.what());
    }
    try {
        init.seed = std::stoull(need("init_seed"));
    } catch (const std::exception&) {
        throw ParseError(path + ": bad integer for key init_seed");
    }

    dd.inputs = Tensor::zeros({dd.M, dd.s, dd.width});
    dd.labels = Tensor::zeros({dd.M, dd.C});
    for (double& v : dd.inputs.values) v = get_f64(in);
    for (double& v : dd.labels.values) v = get_f64(in);
    if (!in) throw ParseError(path + ": payload is truncated");

    try {
        validate_distilled(dd);
    } catch (const ArgumentError& e) {
        throw ParseError(path + ": " + e.what());
    }
    return {std::move(dd), init};
}

} // namespace textdistill
