#pragma once

#include <vector>

#include "textdistill/graph.hpp"
#include "textdistill/tensor.hpp"

namespace textdistill {

// Forward passes are written once against one of these two backends.
// EagerOps computes plain tensors; GraphOps records differentiable nodes.
// Both run the same kernel sequence, so their values agree bitwise, which is
// what lets evaluation reuse the exact arithmetic of the distillation path.
struct EagerOps {
    using V = Tensor;
    Tensor constant(Tensor t) const { return t; }
    const Tensor& value(const Tensor& v) const { return v; }
    Tensor add(const Tensor& a, const Tensor& b) const { return kernels::add(a, b); }
    Tensor sub(const Tensor& a, const Tensor& b) const { return kernels::sub(a, b); }
    Tensor mul(const Tensor& a, const Tensor& b) const { return kernels::mul(a, b); }
    Tensor scale(const Tensor& a, double c) const { return kernels::scale(a, c); }
    Tensor add_n(const std::vector<Tensor>& xs) const {
        std::vector<const Tensor*> ps;
        ps.reserve(xs.size());
        for (const Tensor& x : xs) ps.push_back(&x);
        return kernels::add_n(ps);
    }
    Tensor matmul(const Tensor& a, const Tensor& b) const { return kernels::matmul(a, b); }
    Tensor transpose(const Tensor& a) const { return kernels::transpose(a); }
    Tensor conv_text(const Tensor& x, const Tensor& f, const Tensor& b) const {
        return kernels::conv_text(x, f, b);
    }
    Tensor relu(const Tensor& a) const { return kernels::relu(a); }
    Tensor max_over_time(const Tensor& a) const { return kernels::max_last(a); }
    Tensor softmax(const Tensor& a, int axis) const { return kernels::softmax(a, axis); }
    Tensor log_softmax(const Tensor& a, int axis) const { return kernels::log_softmax(a, axis); }
    Tensor sum(const Tensor& a) const { return kernels::sum_all(a); }
    Tensor sum_axis(const Tensor& a, int axis) const { return kernels::sum_axis(a, axis); }
    Tensor broadcast_axis(const Tensor& a, int axis, int n) const {
        return kernels::broadcast_axis(a, axis, n);
    }
    Tensor concat(const std::vector<Tensor>& parts) const {
        std::vector<const Tensor*> ps;
        ps.reserve(parts.size());
        for (const Tensor& p : parts) ps.push_back(&p);
        return kernels::concat(ps);
    }
    Tensor slice(const Tensor& a, int start, int len) const {
        return kernels::slice1d(a, start, len);
    }
    Tensor reshape(const Tensor& a, std::vector<int> shape) const {
        return kernels::reshape(a, std::move(shape));
    }
};

struct GraphOps {
    Graph& g;
    using V = Var;
    Var constant(Tensor t) const { return g.constant(std::move(t)); }
    const Tensor& value(Var v) const { return g.value(v); }
    Var add(Var a, Var b) const { return g.add(a, b); }
    Var sub(Var a, Var b) const { return g.sub(a, b); }
    Var mul(Var a, Var b) const { return g.mul(a, b); }
    Var scale(Var a, double c) const { return g.scale(a, c); }
    Var add_n(const std::vector<Var>& xs) const { return g.add_n(xs); }
    Var matmul(Var a, Var b) const { return g.matmul(a, b); }
    Var transpose(Var a) const { return g.transpose(a); }
    Var conv_text(Var x, Var f, Var b) const { return g.conv_text(x, f, b); }
    Var relu(Var a) const { return g.relu(a); }
    Var max_over_time(Var a) const { return g.max_over_time(a); }
    Var softmax(Var a, int axis) const { return g.softmax(a, axis); }
    Var log_softmax(Var a, int axis) const { return g.log_softmax(a, axis); }
    Var sum(Var a) const { return g.sum(a); }
    Var sum_axis(Var a, int axis) const { return g.sum_axis(a, axis); }
    Var broadcast_axis(Var a, int axis, int n) const { return g.broadcast_axis(a, axis, n); }
    Var concat(const std::vector<Var>& parts) const { return g.concat(parts); }
    Var slice(Var a, int start, int len) const { return g.slice(a, start, len); }
    Var reshape(Var a, std::vector<int> shape) const { return g.reshape(a, std::move(shape)); }
};

} // namespace textdistill
