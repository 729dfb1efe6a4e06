#pragma once

// Shared helpers for the test binaries: seeded tensors, an L2 relative-error
// metric, and a finite-difference gradient checker.

#include <cmath>
#include <filesystem>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "doctest.h"
#include "textdistill/encoder.hpp"
#include "textdistill/graph.hpp"
#include "textdistill/rng.hpp"
#include "textdistill/tensor.hpp"

namespace tdtest {

using textdistill::Graph;
using textdistill::Tensor;
using textdistill::Var;

inline std::filesystem::path temp_file(const std::string& name) {
    return std::filesystem::temp_directory_path() / name;
}

// Gaussian rows, pad row zero. Random directions are never collinear.
inline std::pair<textdistill::Vocabulary, textdistill::EmbeddingTable>
tiny_table(int V, int d, uint64_t seed) {
    auto eng = textdistill::RngStream(seed).engine();
    std::vector<std::string> tokens{"<pad>"}, tags{"none"};
    Tensor m = Tensor::zeros({V, d});
    for (int r = 1; r < V; ++r) {
        tokens.push_back("w" + std::to_string(r));
        tags.push_back(r % 2 ? "aa" : "bb");
        for (int j = 0; j < d; ++j)
            m.values[static_cast<size_t>(r) * d + j] = textdistill::normal_unit(eng);
    }
    textdistill::check_embedding_rows(m);
    return {textdistill::Vocabulary(tokens, tags),
            textdistill::EmbeddingTable(std::move(m), V)};
}

inline textdistill::Encoder
tiny_encoder(int V, int d, uint64_t seed,
             textdistill::CtxKind kind = textdistill::CtxKind::identity) {
    auto [vocab, table] = tiny_table(V, d, seed);
    textdistill::Contextualizer ctx =
        kind == textdistill::CtxKind::identity
            ? textdistill::Contextualizer::identity(d)
            : textdistill::Contextualizer::attention(d, seed);
    return textdistill::Encoder(std::move(vocab), std::move(table), std::move(ctx));
}

inline Tensor random_tensor(std::mt19937_64& eng, std::vector<int> shape,
                            double lo = -1.0, double hi = 1.0) {
    Tensor t = Tensor::zeros(std::move(shape));
    for (double& v : t.values) v = textdistill::uniform_in(eng, lo, hi);
    return t;
}

// Values bounded away from zero, for ops that are non-differentiable at 0.
inline Tensor random_tensor_off_zero(std::mt19937_64& eng, std::vector<int> shape) {
    Tensor t = Tensor::zeros(std::move(shape));
    for (double& v : t.values) {
        double m = textdistill::uniform_in(eng, 0.2, 1.0);
        v = (textdistill::uniform_unit(eng) < 0.5) ? -m : m;
    }
    return t;
}

using Builder = std::function<Var(Graph&, std::span<const Var>)>;

inline double eval_scalar(const Builder& f, const std::vector<Tensor>& at) {
    Graph g;
    std::vector<Var> ins;
    ins.reserve(at.size());
    for (const Tensor& t : at) ins.push_back(g.input(t));
    Var loss = f(g, ins);
    return g.value(loss).item();
}

inline double l2_rel_err(const Tensor& got, const Tensor& want) {
    REQUIRE(got.shape == want.shape);
    double num = 0.0, den = 0.0;
    for (size_t i = 0; i < want.values.size(); ++i) {
        double d = got.values[i] - want.values[i];
        num += d * d;
        den += want.values[i] * want.values[i];
    }
    return std::sqrt(num) / std::max(std::sqrt(den), 1e-12);
}

// Central finite differences against the reverse-mode gradients, per input.
inline void check_grads(const Builder& f, const std::vector<Tensor>& at,
                        double tol = 1e-4, double h = 1e-5) {
    Graph g;
    std::vector<Var> ins;
    for (const Tensor& t : at) ins.push_back(g.input(t));
    Var loss = f(g, ins);
    REQUIRE(g.value(loss).is_scalar());
    std::vector<Var> grads = g.gradients(loss, ins);

    for (size_t p = 0; p < at.size(); ++p) {
        Tensor fd = Tensor::zeros(at[p].shape);
        for (size_t k = 0; k < fd.values.size(); ++k) {
            std::vector<Tensor> hi = at, lo = at;
            hi[p].values[k] += h;
            lo[p].values[k] -= h;
            fd.values[k] = (eval_scalar(f, hi) - eval_scalar(f, lo)) / (2.0 * h);
        }
        INFO("input ", p);
        CHECK(l2_rel_err(g.value(grads[p]), fd) < tol);
    }
}

} // namespace tdtest
