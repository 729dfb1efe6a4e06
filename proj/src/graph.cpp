#include "textdistill/graph.hpp"

#include <algorithm>
#include <string>
#include <utility>

#include "textdistill/common.hpp"

namespace textdistill {

namespace {

const char* op_name(int op) {
    static const char* names[] = {
        "leaf", "add", "sub", "mul", "scale", "add_n", "matmul", "transpose",
        "conv_text", "conv_grad_input", "conv_grad_filters", "relu",
        "relu_mask", "max_over_time", "argmax_mask", "softmax", "log_softmax",
        "sum_axis", "broadcast_axis", "sum", "concat", "slice", "pad",
        "reshape"};
    return names[op];
}

} // namespace

Graph::Graph(bool check_finite) : check_finite_(check_finite) {
    nodes_.reserve(256);
}

int Graph::check(Var v, const char* who) const {
    if (v.graph != this)
        throw DependencyError(std::string(who) + ": var does not belong to this graph");
    if (v.id < 0 || v.id >= static_cast<int>(nodes_.size()))
        throw DependencyError(std::string(who) + ": stale var id " + std::to_string(v.id));
    return v.id;
}

bool Graph::any_requires(const std::vector<int>& ids) const {
    for (int id : ids)
        if (nodes_[id].requires_grad) return true;
    return false;
}

Var Graph::emit(Op op, std::vector<int> inputs, Tensor value, bool requires_grad,
                double daux, std::vector<int> iaux) {
    if (check_finite_ && !value.all_finite())
        throw NumericalError(std::string("non-finite value produced by '") +
                             op_name(static_cast<int>(op)) + "'");
    Node n;
    n.op = op;
    n.requires_grad = requires_grad;
    n.inputs = std::move(inputs);
    n.value = std::move(value);
    n.daux = daux;
    n.iaux = std::move(iaux);
    nodes_.push_back(std::move(n));
    return Var{this, static_cast<int>(nodes_.size()) - 1};
}

Var Graph::emit_auto(Op op, std::vector<int> inputs, Tensor value,
                     double daux, std::vector<int> iaux) {
    bool rg = any_requires(inputs);
    return emit(op, std::move(inputs), std::move(value), rg, daux, std::move(iaux));
}

Var Graph::input(Tensor v) {
    return emit(Op::leaf, {}, std::move(v), true);
}

Var Graph::constant(Tensor v) {
    return emit(Op::leaf, {}, std::move(v), false);
}

const Tensor& Graph::value(Var v) const { return nodes_[check(v, "value")].value; }

bool Graph::requires_grad(Var v) const {
    return nodes_[check(v, "requires_grad")].requires_grad;
}

Var Graph::add(Var a, Var b) {
    int ia = check(a, "add"), ib = check(b, "add");
    return emit_auto(Op::add, {ia, ib}, kernels::add(nodes_[ia].value, nodes_[ib].value));
}

Var Graph::sub(Var a, Var b) {
    int ia = check(a, "sub"), ib = check(b, "sub");
    return emit_auto(Op::sub, {ia, ib}, kernels::sub(nodes_[ia].value, nodes_[ib].value));
}

Var Graph::mul(Var a, Var b) {
    int ia = check(a, "mul"), ib = check(b, "mul");
    return emit_auto(Op::mul, {ia, ib}, kernels::mul(nodes_[ia].value, nodes_[ib].value));
}

Var Graph::scale(Var a, double c) {
    int ia = check(a, "scale");
    return emit_auto(Op::scale, {ia}, kernels::scale(nodes_[ia].value, c), c);
}

Var Graph::add_n(std::span<const Var> xs) {
    if (xs.empty()) throw ArgumentError("add_n: empty operand list");
    std::vector<int> ids;
    std::vector<const Tensor*> vals;
    ids.reserve(xs.size());
    vals.reserve(xs.size());
    for (Var x : xs) {
        ids.push_back(check(x, "add_n"));
        vals.push_back(&nodes_[ids.back()].value);
    }
    return emit_auto(Op::add_n, std::move(ids), kernels::add_n(vals));
}

Var Graph::matmul(Var a, Var b) {
    int ia = check(a, "matmul"), ib = check(b, "matmul");
    return emit_auto(Op::matmul, {ia, ib},
                     kernels::matmul(nodes_[ia].value, nodes_[ib].value));
}

Var Graph::transpose(Var a) {
    int ia = check(a, "transpose");
    return emit_auto(Op::transpose, {ia}, kernels::transpose(nodes_[ia].value));
}

Var Graph::conv_text(Var x, Var filters, Var bias) {
    int ix = check(x, "conv_text"), ifl = check(filters, "conv_text"),
        ib = check(bias, "conv_text");
    return emit_auto(Op::conv, {ix, ifl, ib},
                     kernels::conv_text(nodes_[ix].value, nodes_[ifl].value,
                                        nodes_[ib].value));
}

Var Graph::conv_gx(Var gout, Var filters) {
    int ig = check(gout, "conv_grad_input"), ifl = check(filters, "conv_grad_input");
    return emit_auto(Op::conv_gx, {ig, ifl},
                     kernels::conv_grad_input(nodes_[ig].value, nodes_[ifl].value));
}

Var Graph::conv_gf(Var gout, Var x) {
    int ig = check(gout, "conv_grad_filters"), ix = check(x, "conv_grad_filters");
    return emit_auto(Op::conv_gf, {ig, ix},
                     kernels::conv_grad_filters(nodes_[ig].value, nodes_[ix].value));
}

Var Graph::relu(Var a) {
    int ia = check(a, "relu");
    return emit_auto(Op::relu, {ia}, kernels::relu(nodes_[ia].value));
}

Var Graph::relu_mask(Var a) {
    int ia = check(a, "relu_mask");
    return emit(Op::relu_mask, {ia}, kernels::relu_mask(nodes_[ia].value), false);
}

Var Graph::max_over_time(Var a) {
    int ia = check(a, "max_over_time");
    return emit_auto(Op::max_last, {ia}, kernels::max_last(nodes_[ia].value));
}

Var Graph::argmax_mask(Var a) {
    int ia = check(a, "argmax_mask");
    return emit(Op::argmax_mask, {ia}, kernels::argmax_mask_last(nodes_[ia].value), false);
}

Var Graph::softmax(Var a, int axis) {
    int ia = check(a, "softmax");
    return emit_auto(Op::softmax, {ia}, kernels::softmax(nodes_[ia].value, axis),
                     0.0, {axis});
}

Var Graph::log_softmax(Var a, int axis) {
    int ia = check(a, "log_softmax");
    return emit_auto(Op::log_softmax, {ia},
                     kernels::log_softmax(nodes_[ia].value, axis), 0.0, {axis});
}

Var Graph::sum_axis(Var a, int axis) {
    int ia = check(a, "sum_axis");
    return emit_auto(Op::sum_axis_, {ia}, kernels::sum_axis(nodes_[ia].value, axis),
                     0.0, {axis});
}

Var Graph::broadcast_axis(Var a, int axis, int n) {
    int ia = check(a, "broadcast_axis");
    return emit_auto(Op::broadcast_axis_, {ia},
                     kernels::broadcast_axis(nodes_[ia].value, axis, n), 0.0,
                     {axis, n});
}

Var Graph::sum(Var a) {
    int ia = check(a, "sum");
    return emit_auto(Op::sum_all, {ia}, kernels::sum_all(nodes_[ia].value));
}

Var Graph::concat(std::span<const Var> parts) {
    if (parts.empty()) throw ArgumentError("concat: empty operand list");
    std::vector<int> ids;
    std::vector<const Tensor*> vals;
    std::vector<int> offsets; // start offset of each part, then total length
    int off = 0;
    for (Var p : parts) {
        ids.push_back(check(p, "concat"));
        vals.push_back(&nodes_[ids.back()].value);
        offsets.push_back(off);
        off += static_cast<int>(vals.back()->numel());
    }
    offsets.push_back(off);
    return emit_auto(Op::concat_, std::move(ids), kernels::concat(vals), 0.0,
                     std::move(offsets));
}

Var Graph::slice(Var a, int start, int len) {
    int ia = check(a, "slice");
    return emit_auto(Op::slice_, {ia}, kernels::slice1d(nodes_[ia].value, start, len),
                     0.0, {start, len});
}

Var Graph::pad(Var a, int start, int total) {
    int ia = check(a, "pad");
    return emit_auto(Op::pad_, {ia}, kernels::pad1d(nodes_[ia].value, start, total),
                     0.0, {start, total});
}

Var Graph::reshape(Var a, std::vector<int> shape) {
    int ia = check(a, "reshape");
    Tensor v = kernels::reshape(nodes_[ia].value, shape);
    return emit_auto(Op::reshape_, {ia}, std::move(v), 0.0, std::move(shape));
}

// target is taken by value on purpose: emitting the reshape below can
// reallocate nodes_, so a reference into a node's shape would dangle here.
Var Graph::fit_shape(Var adj, std::vector<int> target) {
    if (nodes_[adj.id].value.shape == target) return adj;
    if (shape_numel(target) == 1) return reshape(sum(adj), target);
    throw DimensionError("cannot fit adjoint of shape " +
                         shape_str(nodes_[adj.id].value.shape) + " to " +
                         shape_str(target));
}

void Graph::accumulate(std::vector<Var>& slots, int input_id, Var contribution) {
    if (!nodes_[input_id].requires_grad) return;
    if (nodes_[contribution.id].value.shape != nodes_[input_id].value.shape)
        throw DimensionError("adjoint for node " + std::to_string(input_id) +
                             " has shape " +
                             shape_str(nodes_[contribution.id].value.shape) +
                             ", node has " +
                             shape_str(nodes_[input_id].value.shape));
    if (slots[input_id].valid())
        slots[input_id] = add(slots[input_id], contribution);
    else
        slots[input_id] = contribution;
}

void Graph::backward_into(int node_id, Var adj, std::vector<Var>& slots) {
    // Copy what we need up front: emitting contribution nodes reallocates
    // nodes_ and would invalidate a held reference.
    const Op op = nodes_[node_id].op;
    const std::vector<int> in = nodes_[node_id].inputs;
    const double daux = nodes_[node_id].daux;
    const std::vector<int> iaux = nodes_[node_id].iaux;
    Var self{this, node_id};

    auto var = [this](int id) { return Var{this, id}; };
    // Returns a copy, not a reference: the contribution expressions emit
    // nodes, and growing nodes_ would invalidate anything pointing into it.
    auto in_shape = [this](int id) { return nodes_[id].value.shape; };

    switch (op) {
    case Op::leaf:
        break;
    case Op::add:
        accumulate(slots, in[0], fit_shape(adj, in_shape(in[0])));
        accumulate(slots, in[1], fit_shape(adj, in_shape(in[1])));
        break;
    case Op::sub:
        accumulate(slots, in[0], fit_shape(adj, in_shape(in[0])));
        accumulate(slots, in[1], fit_shape(scale(adj, -1.0), in_shape(in[1])));
        break;
    case Op::mul:
        if (nodes_[in[0]].requires_grad)
            accumulate(slots, in[0], fit_shape(mul(adj, var(in[1])), in_shape(in[0])));
        if (nodes_[in[1]].requires_grad)
            accumulate(slots, in[1], fit_shape(mul(adj, var(in[0])), in_shape(in[1])));
        break;
    case Op::scale:
        accumulate(slots, in[0], scale(adj, daux));
        break;
    case Op::add_n:
        for (int id : in) accumulate(slots, id, adj);
        break;
    case Op::matmul:
        if (nodes_[in[0]].requires_grad)
            accumulate(slots, in[0], matmul(adj, transpose(var(in[1]))));
        if (nodes_[in[1]].requires_grad)
            accumulate(slots, in[1], matmul(transpose(var(in[0])), adj));
        break;
    case Op::transpose:
        accumulate(slots, in[0], transpose(adj));
        break;
    case Op::conv:
        if (nodes_[in[0]].requires_grad)
            accumulate(slots, in[0], conv_gx(adj, var(in[1])));
        if (nodes_[in[1]].requires_grad)
            accumulate(slots, in[1], conv_gf(adj, var(in[0])));
        if (nodes_[in[2]].requires_grad)
            accumulate(slots, in[2], sum_axis(adj, 1));
        break;
    case Op::conv_gx: {
        // node = conv_grad_input(G, F); both contributions are themselves
        // convolution-family ops, so second derivatives keep flowing.
        if (nodes_[in[0]].requires_grad) {
            int fcount = in_shape(in[1])[0];
            Var zb = constant(Tensor::zeros({fcount}));
            accumulate(slots, in[0], conv_text(adj, var(in[1]), zb));
        }
        if (nodes_[in[1]].requires_grad)
            accumulate(slots, in[1], conv_gf(var(in[0]), adj));
        break;
    }
    case Op::conv_gf: {
        // node = conv_grad_filters(G, X)
        if (nodes_[in[0]].requires_grad) {
            int fcount = in_shape(in[0])[0];
            Var zb = constant(Tensor::zeros({fcount}));
            accumulate(slots, in[0], conv_text(var(in[1]), adj, zb));
        }
        if (nodes_[in[1]].requires_grad)
            accumulate(slots, in[1], conv_gx(var(in[0]), adj));
        break;
    }
    case Op::relu:
        accumulate(slots, in[0], mul(adj, relu_mask(var(in[0]))));
        break;
    case Op::max_last: {
        const std::vector<int>& xs = in_shape(in[0]);
        int axis = static_cast<int>(xs.size()) - 1;
        Var spread = broadcast_axis(adj, axis, xs[axis]);
        accumulate(slots, in[0], mul(spread, argmax_mask(var(in[0]))));
        break;
    }
    case Op::softmax: {
        int axis = iaux[0];
        int n = nodes_[node_id].value.shape[axis];
        Var gy = mul(adj, self);
        Var inner = broadcast_axis(sum_axis(gy, axis), axis, n);
        accumulate(slots, in[0], mul(self, sub(adj, inner)));
        break;
    }
    case Op::log_softmax: {
        int axis = iaux[0];
        int n = nodes_[node_id].value.shape[axis];
        Var sm = softmax(var(in[0]), axis);
        Var inner = broadcast_axis(sum_axis(adj, axis), axis, n);
        accumulate(slots, in[0], sub(adj, mul(sm, inner)));
        break;
    }
    case Op::sum_axis_: {
        int axis = iaux[0];
        accumulate(slots, in[0], broadcast_axis(adj, axis, in_shape(in[0])[axis]));
        break;
    }
    case Op::broadcast_axis_:
        accumulate(slots, in[0], sum_axis(adj, iaux[0]));
        break;
    case Op::sum_all: {
        Var ones = constant(Tensor::full(in_shape(in[0]), 1.0));
        accumulate(slots, in[0], mul(ones, adj));
        break;
    }
    case Op::concat_:
        for (size_t i = 0; i < in.size(); ++i) {
            if (!nodes_[in[i]].requires_grad) continue;
            int len = iaux[i + 1] - iaux[i];
            accumulate(slots, in[static_cast<int>(i)], slice(adj, iaux[i], len));
        }
        break;
    case Op::slice_: {
        int total = static_cast<int>(nodes_[in[0]].value.numel());
        accumulate(slots, in[0], pad(adj, iaux[0], total));
        break;
    }
    case Op::pad_:
        accumulate(slots, in[0], slice(adj, iaux[0],
                                       static_cast<int>(nodes_[in[0]].value.numel())));
        break;
    case Op::reshape_:
        accumulate(slots, in[0], reshape(adj, in_shape(in[0])));
        break;
    case Op::relu_mask:
    case Op::argmax_mask:
        // gradient-free by construction
        break;
    }
}

std::vector<Var> Graph::gradients(Var loss, std::span<const Var> params) {
    int loss_id = check(loss, "gradients");
    if (!nodes_[loss_id].value.is_scalar())
        throw ArgumentError("gradients: loss must be scalar, got shape " +
                            shape_str(nodes_[loss_id].value.shape));
    for (Var p : params) check(p, "gradients");

    // Adjoint slot per pre-existing node, indexed by node id. Backward emits
    // new nodes, but only nodes at or below the loss ever receive adjoints.
    std::vector<Var> slots(static_cast<size_t>(loss_id) + 1);
    slots[loss_id] = constant(Tensor::scalar(1.0));

    for (int id = loss_id; id >= 0; --id) {
        if (!slots[id].valid()) continue;
        if (!nodes_[id].requires_grad) continue;
        backward_into(id, slots[id], slots);
    }

    std::vector<Var> out;
    out.reserve(params.size());
    for (Var p : params) {
        if (p.id <= loss_id && slots[p.id].valid())
            out.push_back(slots[p.id]);
        else
            out.push_back(constant(Tensor::zeros(nodes_[p.id].value.shape)));
    }
    return out;
}

bool Graph::depends_on(Var from, Var target) const {
    int start = check(from, "depends_on");
    int goal = check(target, "depends_on");
    if (start == goal) return true;
    std::vector<char> seen(static_cast<size_t>(start) + 1, 0);
    std::vector<int> stack{start};
    seen[start] = 1;
    while (!stack.empty()) {
        int id = stack.back();
        stack.pop_back();
        for (int in : nodes_[id].inputs) {
            if (in == goal) return true;
            if (in < goal) continue; // ids are topological; can't reach goal from below
            if (!seen[in]) {
                seen[in] = 1;
                stack.push_back(in);
            }
        }
    }
    return false;
}

UnrolledStep grad_through_step(
    Graph& g, Var inner_loss, std::span<const Var> inner_params, Var eta,
    const std::function<Var(std::span<const Var>)>& meta_loss_builder,
    std::span<const Var> distilled_inputs) {
    if (!g.value(inner_loss).is_scalar())
        throw ArgumentError("grad_through_step: inner loss must be scalar");
    if (!g.value(eta).is_scalar())
        throw ArgumentError("grad_through_step: eta must be scalar");

    std::vector<Var> inner_grads = g.gradients(inner_loss, inner_params);

    UnrolledStep step;
    step.updated_params.reserve(inner_params.size());
    for (size_t i = 0; i < inner_params.size(); ++i)
        step.updated_params.push_back(
            g.sub(inner_params[i], g.mul(inner_grads[i], eta)));

    step.meta_loss = meta_loss_builder(step.updated_params);
    if (!g.value(step.meta_loss).is_scalar())
        throw ArgumentError("grad_through_step: meta loss must be scalar");

    bool touched = false;
    for (const Var& up : step.updated_params)
        if (g.depends_on(step.meta_loss, up)) { touched = true; break; }
    if (!touched)
        throw DependencyError(
            "grad_through_step: meta loss does not depend on the updated parameters");

    step.grads = g.gradients(step.meta_loss, distilled_inputs);
    return step;
}

} // namespace textdistill
