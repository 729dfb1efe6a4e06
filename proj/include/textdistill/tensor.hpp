#pragma once

#include <cstdint>
#include <initializer_list>
#include <string>
#include <vector>

namespace textdistill {

// Dense row-major tensor of 64-bit floats. Rank 0 (empty shape, one value)
// is the canonical scalar.
struct Tensor {
    std::vector<int> shape;
    std::vector<double> values;

    Tensor() = default;
    Tensor(std::vector<int> shape_in, std::vector<double> values_in);

    static Tensor zeros(std::vector<int> shape);
    static Tensor full(std::vector<int> shape, double v);
    static Tensor scalar(double v);

    int64_t numel() const { return static_cast<int64_t>(values.size()); }
    int rank() const { return static_cast<int>(shape.size()); }
    int dim(int i) const { return shape[static_cast<size_t>(i)]; }
    bool same_shape(const Tensor& o) const { return shape == o.shape; }
    bool is_scalar() const { return values.size() == 1; }
    double item() const;

    bool all_finite() const;
};

int64_t shape_numel(const std::vector<int>& shape);
std::string shape_str(const std::vector<int>& shape);

// Value-level kernels. The graph wraps these into differentiable nodes; eager
// code paths (evaluation, encoding) call them directly.
namespace kernels {

// Elementwise; a single-element operand broadcasts against any shape.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);
Tensor add_n(const std::vector<const Tensor*>& xs);

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

// Text convolution: x[s,d], filters[f,h,d], bias[f] -> out[f, s-h+1],
// out[i][t] = bias[i] + sum_{j,k} filters[i][j][k] * x[t+j][k].
Tensor conv_text(const Tensor& x, const Tensor& filters, const Tensor& bias);
// Adjoints of conv_text; both are again bilinear, so their own gradients
// close over {conv_text, conv_grad_input, conv_grad_filters}.
Tensor conv_grad_input(const Tensor& gout, const Tensor& filters);
Tensor conv_grad_filters(const Tensor& gout, const Tensor& x);

Tensor relu(const Tensor& a);
Tensor relu_mask(const Tensor& a);          // 1 where a > 0
Tensor max_last(const Tensor& a);           // max over the last axis
Tensor argmax_mask_last(const Tensor& a);   // one-hot of first max per row

Tensor softmax(const Tensor& a, int axis);
Tensor log_softmax(const Tensor& a, int axis);
Tensor sum_axis(const Tensor& a, int axis);
Tensor broadcast_axis(const Tensor& a, int axis, int n);
Tensor sum_all(const Tensor& a);

Tensor concat(const std::vector<const Tensor*>& parts); // 1-D
Tensor slice1d(const Tensor& a, int start, int len);
Tensor pad1d(const Tensor& a, int start, int total);
Tensor reshape(const Tensor& a, std::vector<int> shape);

} // namespace kernels

} // namespace textdistill
