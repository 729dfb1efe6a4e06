#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "textdistill/tensor.hpp"

namespace textdistill {

class Graph;

// Handle to a node in one Graph. Cheap to copy; valid for the graph's lifetime.
struct Var {
    Graph* graph = nullptr;
    int id = -1;
    bool valid() const { return graph != nullptr && id >= 0; }
};

// Reverse-mode autodiff over eagerly evaluated ops. The backward pass emits
// ordinary graph nodes, so gradients are themselves differentiable; that is
// what lets a one-step parameter update be unrolled and differentiated again.
//
// Node ids increase in creation order, which is also a topological order, so
// the backward sweep and all gradient accumulation happen in one fixed order
// regardless of graph shape. Single writer during construction and backward.
class Graph {
public:
    explicit Graph(bool check_finite = true);

    // Leaves. input() participates in differentiation, constant() does not
    // and the backward sweep stops at it.
    Var input(Tensor v);
    Var constant(Tensor v);

    const Tensor& value(Var v) const;
    bool requires_grad(Var v) const;
    size_t size() const { return nodes_.size(); }
    bool check_finite() const { return check_finite_; }

    Var add(Var a, Var b);
    Var sub(Var a, Var b);
    Var mul(Var a, Var b);
    Var scale(Var a, double c);
    Var add_n(std::span<const Var> xs);
    Var matmul(Var a, Var b);
    Var transpose(Var a);
    Var conv_text(Var x, Var filters, Var bias);
    Var relu(Var a);
    Var max_over_time(Var a); // max over the last axis
    Var softmax(Var a, int axis);
    Var log_softmax(Var a, int axis);
    Var sum_axis(Var a, int axis);
    Var broadcast_axis(Var a, int axis, int n);
    Var sum(Var a); // all elements -> scalar
    Var concat(std::span<const Var> parts);
    Var slice(Var a, int start, int len);
    Var reshape(Var a, std::vector<int> shape);

    // Exact reverse-mode gradients of a scalar loss. Result i matches the
    // shape of params[i]; a param the loss does not depend on gets zeros.
    // The returned Vars are graph nodes and may be differentiated further.
    std::vector<Var> gradients(Var loss, std::span<const Var> params);

    // True if `target` is reachable from `from` by following inputs.
    bool depends_on(Var from, Var target) const;

private:
    enum class Op : uint8_t {
        leaf, add, sub, mul, scale, add_n, matmul, transpose,
        conv, conv_gx, conv_gf, relu, relu_mask, max_last, argmax_mask,
        softmax, log_softmax, sum_axis_, broadcast_axis_, sum_all,
        concat_, slice_, pad_, reshape_
    };

    struct Node {
        Op op;
        bool requires_grad;
        std::vector<int> inputs;
        Tensor value;
        double daux = 0.0;          // scale factor
        std::vector<int> iaux;      // axis / sizes / offsets
    };

    Var emit(Op op, std::vector<int> inputs, Tensor value, bool requires_grad,
             double daux = 0.0, std::vector<int> iaux = {});
    Var emit_auto(Op op, std::vector<int> inputs, Tensor value,
                  double daux = 0.0, std::vector<int> iaux = {});
    int check(Var v, const char* who) const;
    bool any_requires(const std::vector<int>& ids) const;
    Var relu_mask(Var a);
    Var argmax_mask(Var a);
    Var conv_gx(Var gout, Var filters);
    Var conv_gf(Var gout, Var x);
    Var pad(Var a, int start, int total);
    // Reshapes/reduces an adjoint so its shape matches the target input.
    Var fit_shape(Var adj, std::vector<int> target);
    void backward_into(int node_id, Var adj, std::vector<Var>& slots);
    void accumulate(std::vector<Var>& slots, int input_id, Var contribution);

    std::vector<Node> nodes_;
    bool check_finite_;
};

// Builds the unrolled one-step update and differentiates the meta-loss
// through it. Given a recorded inner loss and the inner parameters it was
// built from, forms updated_params[i] = inner_params[i] - eta * d inner_loss
// / d inner_params[i] (all as graph nodes, so second-order terms are kept),
// calls meta_loss_builder on the updated parameters, and returns the exact
// gradients of that meta-loss with respect to `distilled_inputs`.
struct UnrolledStep {
    Var meta_loss;
    std::vector<Var> updated_params;
    std::vector<Var> grads; // one per distilled input
};

UnrolledStep grad_through_step(
    Graph& g, Var inner_loss, std::span<const Var> inner_params, Var eta,
    const std::function<Var(std::span<const Var>)>& meta_loss_builder,
    std::span<const Var> distilled_inputs);

} // namespace textdistill
