#include "textdistill/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "textdistill/common.hpp"

namespace textdistill {

int64_t shape_numel(const std::vector<int>& shape) {
    int64_t n = 1;
    for (int d : shape) {
        if (d < 0) throw DimensionError("negative dimension in shape " + shape_str(shape));
        n *= d;
    }
    return n;
}

std::string shape_str(const std::vector<int>& shape) {
    std::string s = "[";
    for (size_t i = 0; i < shape.size(); ++i) {
        if (i) s += ",";
        s += std::to_string(shape[i]);
    }
    return s + "]";
}

Tensor::Tensor(std::vector<int> shape_in, std::vector<double> values_in)
    : shape(std::move(shape_in)), values(std::move(values_in)) {
    if (shape_numel(shape) != static_cast<int64_t>(values.size())) {
        throw DimensionError("tensor shape " + shape_str(shape) + " does not match " +
                             std::to_string(values.size()) + " values");
    }
}

Tensor Tensor::zeros(std::vector<int> shape) {
    auto n = shape_numel(shape);
    return Tensor(std::move(shape), std::vector<double>(static_cast<size_t>(n), 0.0));
}

Tensor Tensor::full(std::vector<int> shape, double v) {
    auto n = shape_numel(shape);
    return Tensor(std::move(shape), std::vector<double>(static_cast<size_t>(n), v));
}

Tensor Tensor::scalar(double v) { return Tensor({}, {v}); }

double Tensor::item() const {
    if (values.size() != 1) {
        throw DimensionError("item() on non-scalar tensor of shape " + shape_str(shape));
    }
    return values[0];
}

bool Tensor::all_finite() const {
    for (double v : values) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

namespace kernels {

namespace {

void require(bool cond, const std::string& msg) {
    if (!cond) throw DimensionError(msg);
}

// Resolves the broadcast pattern of a binary elementwise op: both sides equal
// shape, or one side is a single element.
enum class Bcast { none, left_scalar, right_scalar };

Bcast binary_mode(const Tensor& a, const Tensor& b, const char* op) {
    if (a.same_shape(b)) return Bcast::none;
    // Checked right first so that when both sides hold a single element the
    // left operand's shape wins; backward passes count on that.
    if (b.is_scalar()) return Bcast::right_scalar;
    if (a.is_scalar()) return Bcast::left_scalar;
    throw DimensionError(std::string(op) + ": incompatible shapes " + shape_str(a.shape) +
                         " vs " + shape_str(b.shape));
}

template <class F>
Tensor binary(const Tensor& a, const Tensor& b, const char* op, F f) {
    switch (binary_mode(a, b, op)) {
        case Bcast::none: {
            Tensor out = a;
            for (size_t i = 0; i < out.values.size(); ++i) out.values[i] = f(a.values[i], b.values[i]);
            return out;
        }
        case Bcast::left_scalar: {
            Tensor out = b;
            double av = a.values[0];
            for (size_t i = 0; i < out.values.size(); ++i) out.values[i] = f(av, b.values[i]);
            return out;
        }
        case Bcast::right_scalar: {
            Tensor out = a;
            double bv = b.values[0];
            for (size_t i = 0; i < out.values.size(); ++i) out.values[i] = f(a.values[i], bv);
            return out;
        }
    }
    throw DimensionError("unreachable");
}

// outer * n * inner decomposition around `axis`.
struct AxisSplit {
    int64_t outer = 1;
    int64_t n = 1;
    int64_t inner = 1;
};

AxisSplit split_axis(const std::vector<int>& shape, int axis, const char* op) {
    if (axis < 0 || axis >= static_cast<int>(shape.size())) {
        throw DimensionError(std::string(op) + ": axis " + std::to_string(axis) +
                             " out of range for shape " + shape_str(shape));
    }
    AxisSplit s;
    for (int i = 0; i < axis; ++i) s.outer *= shape[static_cast<size_t>(i)];
    s.n = shape[static_cast<size_t>(axis)];
    for (size_t i = static_cast<size_t>(axis) + 1; i < shape.size(); ++i) s.inner *= shape[i];
    if (s.n == 0) throw DimensionError(std::string(op) + ": empty axis in shape " + shape_str(shape));
    return s;
}

} // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    return binary(a, b, "add", [](double x, double y) { return x + y; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    return binary(a, b, "sub", [](double x, double y) { return x - y; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    return binary(a, b, "mul", [](double x, double y) { return x * y; });
}

Tensor scale(const Tensor& a, double c) {
    Tensor out = a;
    for (double& v : out.values) v *= c;
    return out;
}

Tensor add_n(const std::vector<const Tensor*>& xs) {
    if (xs.empty()) throw DimensionError("add_n: no inputs");
    Tensor out = *xs[0];
    for (size_t k = 1; k < xs.size(); ++k) {
        require(xs[k]->same_shape(out), "add_n: shape mismatch at input " + std::to_string(k));
        for (size_t i = 0; i < out.values.size(); ++i) out.values[i] += xs[k]->values[i];
    }
    return out;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    require(a.rank() == 2 && b.rank() == 2,
            "matmul: expects rank-2 operands, got " + shape_str(a.shape) + " and " + shape_str(b.shape));
    int m = a.dim(0), k = a.dim(1), k2 = b.dim(0), p = b.dim(1);
    require(k == k2, "matmul: inner dimensions " + std::to_string(k) + " vs " + std::to_string(k2));
    Tensor out = Tensor::zeros({m, p});
    for (int i = 0; i < m; ++i) {
        const double* arow = a.values.data() + static_cast<size_t>(i) * k;
        double* orow = out.values.data() + static_cast<size_t>(i) * p;
        for (int l = 0; l < k; ++l) {
            double av = arow[l];
            if (av == 0.0) continue;
            const double* brow = b.values.data() + static_cast<size_t>(l) * p;
            for (int j = 0; j < p; ++j) orow[j] += av * brow[j];
        }
    }
    return out;
}

Tensor transpose(const Tensor& a) {
    require(a.rank() == 2, "transpose: expects rank-2, got " + shape_str(a.shape));
    int m = a.dim(0), n = a.dim(1);
    Tensor out = Tensor::zeros({n, m});
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j)
            out.values[static_cast<size_t>(j) * m + i] = a.values[static_cast<size_t>(i) * n + j];
    return out;
}

Tensor conv_text(const Tensor& x, const Tensor& filters, const Tensor& bias) {
    require(x.rank() == 2, "conv_text: input must be rank-2, got " + shape_str(x.shape));
    require(filters.rank() == 3, "conv_text: filters must be rank-3, got " + shape_str(filters.shape));
    int s = x.dim(0), d = x.dim(1);
    int f = filters.dim(0), h = filters.dim(1), fd = filters.dim(2);
    require(fd == d, "conv_text: filter width " + std::to_string(fd) + " vs embedding dim " + std::to_string(d));
    require(bias.rank() == 1 && bias.dim(0) == f, "conv_text: bias shape " + shape_str(bias.shape));
    if (h > s) {
        throw DimensionError("conv_text: filter height " + std::to_string(h) +
                             " exceeds sequence length " + std::to_string(s));
    }
    int t_out = s - h + 1;
    Tensor out = Tensor::zeros({f, t_out});
    for (int i = 0; i < f; ++i) {
        const double* filt = filters.values.data() + static_cast<size_t>(i) * h * d;
        for (int t = 0; t < t_out; ++t) {
            double acc = bias.values[static_cast<size_t>(i)];
            const double* win = x.values.data() + static_cast<size_t>(t) * d;
            for (int j = 0; j < h * d; ++j) acc += filt[j] * win[j];
            out.values[static_cast<size_t>(i) * t_out + t] = acc;
        }
    }
    return out;
}

Tensor conv_grad_input(const Tensor& gout, const Tensor& filters) {
    require(gout.rank() == 2 && filters.rank() == 3, "conv_grad_input: bad ranks");
    int f = filters.dim(0), h = filters.dim(1), d = filters.dim(2);
    require(gout.dim(0) == f, "conv_grad_input: filter count mismatch");
    int t_out = gout.dim(1);
    int s = t_out + h - 1;
    Tensor gx = Tensor::zeros({s, d});
    for (int i = 0; i < f; ++i) {
        const double* filt = filters.values.data() + static_cast<size_t>(i) * h * d;
        for (int t = 0; t < t_out; ++t) {
            double g = gout.values[static_cast<size_t>(i) * t_out + t];
            if (g == 0.0) continue;
            double* win = gx.values.data() + static_cast<size_t>(t) * d;
            for (int j = 0; j < h * d; ++j) win[j] += g * filt[j];
        }
    }
    return gx;
}

Tensor conv_grad_filters(const Tensor& gout, const Tensor& x) {
    require(gout.rank() == 2 && x.rank() == 2, "conv_grad_filters: bad ranks");
    int f = gout.dim(0), t_out = gout.dim(1);
    int s = x.dim(0), d = x.dim(1);
    int h = s - t_out + 1;
    require(h >= 1, "conv_grad_filters: inconsistent widths");
    Tensor gf = Tensor::zeros({f, h, d});
    for (int i = 0; i < f; ++i) {
        double* filt = gf.values.data() + static_cast<size_t>(i) * h * d;
        for (int t = 0; t < t_out; ++t) {
            double g = gout.values[static_cast<size_t>(i) * t_out + t];
            if (g == 0.0) continue;
            const double* win = x.values.data() + static_cast<size_t>(t) * d;
            for (int j = 0; j < h * d; ++j) filt[j] += g * win[j];
        }
    }
    return gf;
}

Tensor relu(const Tensor& a) {
    Tensor out = a;
    for (double& v : out.values) v = v > 0.0 ? v : 0.0;
    return out;
}

Tensor relu_mask(const Tensor& a) {
    Tensor out = a;
    for (double& v : out.values) v = v > 0.0 ? 1.0 : 0.0;
    return out;
}

Tensor max_last(const Tensor& a) {
    require(a.rank() >= 1, "max_last: needs rank >= 1");
    auto sp = split_axis(a.shape, a.rank() - 1, "max_last");
    std::vector<int> oshape(a.shape.begin(), a.shape.end() - 1);
    Tensor out = Tensor::zeros(oshape);
    for (int64_t r = 0; r < sp.outer; ++r) {
        const double* row = a.values.data() + r * sp.n;
        double m = row[0];
        for (int64_t i = 1; i < sp.n; ++i) m = std::max(m, row[i]);
        out.values[static_cast<size_t>(r)] = m;
    }
    return out;
}

Tensor argmax_mask_last(const Tensor& a) {
    require(a.rank() >= 1, "argmax_mask_last: needs rank >= 1");
    auto sp = split_axis(a.shape, a.rank() - 1, "argmax_mask_last");
    Tensor out = Tensor::zeros(a.shape);
    for (int64_t r = 0; r < sp.outer; ++r) {
        const double* row = a.values.data() + r * sp.n;
        int64_t best = 0;
        for (int64_t i = 1; i < sp.n; ++i)
            if (row[i] > row[best]) best = i;
        out.values[static_cast<size_t>(r * sp.n + best)] = 1.0;
    }
    return out;
}

Tensor softmax(const Tensor& a, int axis) {
    auto sp = split_axis(a.shape, axis, "softmax");
    Tensor out = a;
    for (int64_t o = 0; o < sp.outer; ++o) {
        for (int64_t in = 0; in < sp.inner; ++in) {
            double* base = out.values.data() + o * sp.n * sp.inner + in;
            double m = -std::numeric_limits<double>::infinity();
            for (int64_t i = 0; i < sp.n; ++i) m = std::max(m, base[i * sp.inner]);
            double z = 0.0;
            for (int64_t i = 0; i < sp.n; ++i) {
                double e = std::exp(base[i * sp.inner] - m);
                base[i * sp.inner] = e;
                z += e;
            }
            for (int64_t i = 0; i < sp.n; ++i) base[i * sp.inner] /= z;
        }
    }
    return out;
}

Tensor log_softmax(const Tensor& a, int axis) {
    auto sp = split_axis(a.shape, axis, "log_softmax");
    Tensor out = a;
    for (int64_t o = 0; o < sp.outer; ++o) {
        for (int64_t in = 0; in < sp.inner; ++in) {
            double* base = out.values.data() + o * sp.n * sp.inner + in;
            double m = -std::numeric_limits<double>::infinity();
            for (int64_t i = 0; i < sp.n; ++i) m = std::max(m, base[i * sp.inner]);
            double z = 0.0;
            for (int64_t i = 0; i < sp.n; ++i) z += std::exp(base[i * sp.inner] - m);
            double lz = m + std::log(z);
            for (int64_t i = 0; i < sp.n; ++i) base[i * sp.inner] -= lz;
        }
    }
    return out;
}

Tensor sum_axis(const Tensor& a, int axis) {
    auto sp = split_axis(a.shape, axis, "sum_axis");
    std::vector<int> oshape = a.shape;
    oshape.erase(oshape.begin() + axis);
    Tensor out = Tensor::zeros(oshape);
    for (int64_t o = 0; o < sp.outer; ++o)
        for (int64_t i = 0; i < sp.n; ++i)
            for (int64_t in = 0; in < sp.inner; ++in)
                out.values[static_cast<size_t>(o * sp.inner + in)] +=
                    a.values[static_cast<size_t>((o * sp.n + i) * sp.inner + in)];
    return out;
}

Tensor broadcast_axis(const Tensor& a, int axis, int n) {
    if (axis < 0 || axis > a.rank()) {
        throw DimensionError("broadcast_axis: axis " + std::to_string(axis) + " out of range");
    }
    if (n <= 0) throw DimensionError("broadcast_axis: non-positive size");
    std::vector<int> oshape = a.shape;
    oshape.insert(oshape.begin() + axis, n);
    int64_t outer = 1, inner = 1;
    for (int i = 0; i < axis; ++i) outer *= a.shape[static_cast<size_t>(i)];
    for (size_t i = static_cast<size_t>(axis); i < a.shape.size(); ++i) inner *= a.shape[i];
    Tensor out = Tensor::zeros(oshape);
    for (int64_t o = 0; o < outer; ++o)
        for (int64_t i = 0; i < n; ++i)
            for (int64_t in = 0; in < inner; ++in)
                out.values[static_cast<size_t>((o * n + i) * inner + in)] =
                    a.values[static_cast<size_t>(o * inner + in)];
    return out;
}

Tensor sum_all(const Tensor& a) {
    double acc = 0.0;
    for (double v : a.values) acc += v;
    return Tensor::scalar(acc);
}

Tensor concat(const std::vector<const Tensor*>& parts) {
    if (parts.empty()) throw DimensionError("concat: no inputs");
    int64_t total = 0;
    for (const Tensor* p : parts) {
        require(p->rank() == 1, "concat: all parts must be rank-1");
        total += p->numel();
    }
    Tensor out = Tensor::zeros({static_cast<int>(total)});
    size_t off = 0;
    for (const Tensor* p : parts) {
        std::copy(p->values.begin(), p->values.end(), out.values.begin() + off);
        off += p->values.size();
    }
    return out;
}

Tensor slice1d(const Tensor& a, int start, int len) {
    require(a.rank() == 1, "slice1d: rank-1 only");
    require(start >= 0 && len >= 0 && start + len <= a.dim(0), "slice1d: range out of bounds");
    return Tensor({len}, std::vector<double>(a.values.begin() + start, a.values.begin() + start + len));
}

Tensor pad1d(const Tensor& a, int start, int total) {
    require(a.rank() == 1, "pad1d: rank-1 only");
    require(start >= 0 && start + a.dim(0) <= total, "pad1d: range out of bounds");
    Tensor out = Tensor::zeros({total});
    std::copy(a.values.begin(), a.values.end(), out.values.begin() + start);
    return out;
}

Tensor reshape(const Tensor& a, std::vector<int> shape) {
    if (shape_numel(shape) != a.numel()) {
        throw DimensionError("reshape: " + shape_str(a.shape) + " to " + shape_str(shape));
    }
    return Tensor(std::move(shape), a.values);
}

} // namespace kernels

} // namespace textdistill
