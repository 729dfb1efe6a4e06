#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "textdistill/backend.hpp"
#include "textdistill/common.hpp"
#include "textdistill/tensor.hpp"

namespace textdistill {

// Text CNN: one conv per filter height across the full embedding width,
// ReLU, max-over-time pooling, concatenation, then an FC stack.
struct ArchSpec {
    std::vector<int> filter_heights{3, 4, 5};
    int filters_per_height = 8;
    int extra_fc_layers = 0; // 0..3 hidden layers before the output layer
    int fc_hidden = 32;
    int classes = 0;

    void validate() const;
    int pooled_width() const {
        return filters_per_height * static_cast<int>(filter_heights.size());
    }
};

enum class InitMode { random, fixed };

struct InitSpec {
    InitMode mode = InitMode::random;
    uint64_t seed = 0;
};

std::string to_string(InitMode mode);
InitMode init_mode_from_string(const std::string& name);

// Parameter tensors in a fixed order: per height (filters [f,h,d], bias [f]),
// then per FC layer (W [in,out], b [1,out]).
struct TextCnnParams {
    ArchSpec arch;
    int d = 0;
    std::vector<Tensor> values;
};

std::vector<std::vector<int>> param_shapes(const ArchSpec& arch, int d);
int64_t parameter_count(const ArchSpec& arch, int d);

// Xavier-uniform weights, zero biases. Fixed mode ignores draw_index and
// always regenerates the same values for a seed; random mode gives an
// independent draw per (seed, draw_index).
TextCnnParams init(const ArchSpec& arch, int d, const InitSpec& spec,
                   uint64_t draw_index);

// Forward pass over one s x d input, yielding a length-C logits row {1,C}.
// Written against a backend so the eager and recorded paths share arithmetic.
template <class B>
typename B::V forward_on(const B& b, const ArchSpec& arch,
                         std::span<const typename B::V> params,
                         typename B::V x) {
    size_t p = 0;
    std::vector<typename B::V> pooled;
    pooled.reserve(arch.filter_heights.size());
    for (size_t h = 0; h < arch.filter_heights.size(); ++h) {
        auto conv = b.conv_text(x, params[p], params[p + 1]);
        p += 2;
        pooled.push_back(b.max_over_time(b.relu(conv)));
    }
    auto z = b.reshape(b.concat(pooled), {1, arch.pooled_width()});
    for (int layer = 0; layer < arch.extra_fc_layers; ++layer) {
        z = b.relu(b.add(b.matmul(z, params[p]), params[p + 1]));
        p += 2;
    }
    return b.add(b.matmul(z, params[p]), params[p + 1]);
}

// Mean cross-entropy of soft labels against log-softmax logits. Performs no
// label validation; the public loss() below is the checked entry point.
template <class B>
typename B::V loss_on(const B& b, const ArchSpec& arch,
                      std::span<const typename B::V> params,
                      std::span<const typename B::V> xs,
                      std::span<const typename B::V> ys) {
    std::vector<typename B::V> terms;
    terms.reserve(xs.size());
    for (size_t i = 0; i < xs.size(); ++i) {
        auto logits = forward_on(b, arch, params, xs[i]);
        auto logp = b.log_softmax(logits, 1);
        auto y = b.reshape(ys[i], {1, arch.classes});
        terms.push_back(b.scale(b.sum(b.mul(y, logp)), -1.0));
    }
    return b.scale(b.add_n(terms), 1.0 / static_cast<double>(xs.size()));
}

Tensor forward(const TextCnnParams& params, const Tensor& x); // length C

// Checked batch loss: batch nonempty, every label row sums to 1 within 1e-6.
double loss(const TextCnnParams& params, const std::vector<Tensor>& xs,
            const std::vector<Tensor>& ys);

// Loss and its gradients w.r.t. the parameters, via the recorded graph.
std::vector<Tensor> loss_grads(const TextCnnParams& params,
                               const std::vector<Tensor>& xs,
                               const std::vector<Tensor>& ys,
                               double* loss_out = nullptr);

TextCnnParams sgd_step(const TextCnnParams& params,
                       const std::vector<Tensor>& grads, double eta);

// Key-value header plus little-endian 64-bit float payload.
void save_params(const std::string& path, const TextCnnParams& params);
TextCnnParams load_params(const std::string& path);

} // namespace textdistill
