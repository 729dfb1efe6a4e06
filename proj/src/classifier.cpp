#include "textdistill/classifier.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <sstream>

#include "textdistill/bytes.hpp"
#include "textdistill/graph.hpp"
#include "textdistill/rng.hpp"

namespace textdistill {

void ArchSpec::validate() const {
    if (filter_heights.empty())
        throw ArgumentError("arch: need at least one filter height");
    for (int h : filter_heights)
        if (h < 1) throw ArgumentError("arch: filter heights must be positive");
    if (filters_per_height < 1)
        throw ArgumentError("arch: filters_per_height must be positive");
    if (extra_fc_layers < 0 || extra_fc_layers > 3)
        throw ArgumentError("arch: extra_fc_layers must be in 0..3");
    if (fc_hidden < 1) throw ArgumentError("arch: fc_hidden must be positive");
    if (classes < 1) throw ArgumentError("arch: classes must be positive");
}

std::vector<std::vector<int>> param_shapes(const ArchSpec& arch, int d) {
    arch.validate();
    if (d < 1) throw ArgumentError("arch: embedding size must be positive");
    std::vector<std::vector<int>> shapes;
    for (int h : arch.filter_heights) {
        shapes.push_back({arch.filters_per_height, h, d});
        shapes.push_back({arch.filters_per_height});
    }
    int in = arch.pooled_width();
    for (int layer = 0; layer < arch.extra_fc_layers; ++layer) {
        shapes.push_back({in, arch.fc_hidden});
        shapes.push_back({1, arch.fc_hidden});
        in = arch.fc_hidden;
    }
    shapes.push_back({in, arch.classes});
    shapes.push_back({1, arch.classes});
    return shapes;
}

int64_t parameter_count(const ArchSpec& arch, int d) {
    int64_t total = 0;
    for (const auto& s : param_shapes(arch, d)) total += shape_numel(s);
    return total;
}

namespace {

// Xavier-uniform bound for a weight tensor; biases are zeroed.
double xavier_bound(const std::vector<int>& shape) {
    int fan_in, fan_out;
    if (shape.size() == 3) { // conv filters [f, h, d]
        fan_in = shape[1] * shape[2];
        fan_out = shape[0];
    } else { // fc weight [in, out]
        fan_in = shape[0];
        fan_out = shape[1];
    }
    return std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
}

bool is_bias(const std::vector<int>& shape) {
    return shape.size() == 1 || (shape.size() == 2 && shape[0] == 1);
}

} // namespace

std::string to_string(InitMode mode) {
    return mode == InitMode::fixed ? "fixed" : "random";
}

InitMode init_mode_from_string(const std::string& name) {
    if (name == "fixed") return InitMode::fixed;
    if (name == "random") return InitMode::random;
    throw ArgumentError("unknown init mode: " + name);
}

TextCnnParams init(const ArchSpec& arch, int d, const InitSpec& spec,
                   uint64_t draw_index) {
    auto shapes = param_shapes(arch, d);
    uint64_t draw = spec.mode == InitMode::fixed ? 0 : draw_index;
    RngStream stream = RngStream(spec.seed).child("init").child(draw);

    TextCnnParams params;
    params.arch = arch;
    params.d = d;
    params.values.reserve(shapes.size());
    for (size_t i = 0; i < shapes.size(); ++i) {
        Tensor t = Tensor::zeros(shapes[i]);
        if (!is_bias(shapes[i])) {
            double a = xavier_bound(shapes[i]);
            auto eng = stream.child(i).engine();
            for (double& v : t.values) v = uniform_in(eng, -a, a);
        }
        params.values.push_back(std::move(t));
    }
    return params;
}

Tensor forward(const TextCnnParams& params, const Tensor& x) {
    EagerOps b;
    Tensor logits = forward_on(b, params.arch, params.values, x);
    return kernels::reshape(logits, {params.arch.classes});
}

namespace {

void check_batch(const TextCnnParams& params, const std::vector<Tensor>& xs,
                 const std::vector<Tensor>& ys) {
    if (xs.empty()) throw ArgumentError("loss: empty batch");
    if (xs.size() != ys.size())
        throw ArgumentError("loss: " + std::to_string(xs.size()) + " inputs vs " +
                            std::to_string(ys.size()) + " labels");
    for (const Tensor& y : ys) {
        if (static_cast<int>(y.numel()) != params.arch.classes)
            throw DimensionError("loss: label row shape " + shape_str(y.shape));
        double s = 0.0;
        for (double v : y.values) s += v;
        if (std::abs(s - 1.0) > 1e-6)
            throw LabelError("loss: label row sums to " + std::to_string(s) +
                             ", expected 1");
    }
}

} // namespace

double loss(const TextCnnParams& params, const std::vector<Tensor>& xs,
            const std::vector<Tensor>& ys) {
    check_batch(params, xs, ys);
    EagerOps b;
    return loss_on(b, params.arch, params.values, xs, ys).item();
}

std::vector<Tensor> loss_grads(const TextCnnParams& params,
                               const std::vector<Tensor>& xs,
                               const std::vector<Tensor>& ys, double* loss_out) {
    check_batch(params, xs, ys);
    Graph g;
    std::vector<Var> pvars;
    pvars.reserve(params.values.size());
    for (const Tensor& t : params.values) pvars.push_back(g.input(t));
    std::vector<Var> xvars, yvars;
    xvars.reserve(xs.size());
    yvars.reserve(ys.size());
    for (const Tensor& t : xs) xvars.push_back(g.constant(t));
    for (const Tensor& t : ys) yvars.push_back(g.constant(t));

    GraphOps b{g};
    Var l = loss_on(b, params.arch, std::span<const Var>(pvars),
                    std::span<const Var>(xvars), std::span<const Var>(yvars));
    if (loss_out) *loss_out = g.value(l).item();

    std::vector<Var> gvars = g.gradients(l, pvars);
    std::vector<Tensor> grads;
    grads.reserve(gvars.size());
    for (Var v : gvars) grads.push_back(g.value(v));
    return grads;
}

TextCnnParams sgd_step(const TextCnnParams& params,
                       const std::vector<Tensor>& grads, double eta) {
    if (eta < 0.0) throw ArgumentError("sgd_step: negative learning rate");
    if (grads.size() != params.values.size())
        throw DimensionError("sgd_step: " + std::to_string(grads.size()) +
                             " gradients for " + std::to_string(params.values.size()) +
                             " parameter tensors");
    TextCnnParams out = params;
    for (size_t i = 0; i < grads.size(); ++i) {
        if (!grads[i].same_shape(params.values[i]))
            throw DimensionError("sgd_step: gradient shape " + shape_str(grads[i].shape) +
                                 " vs parameter " + shape_str(params.values[i].shape));
        for (size_t k = 0; k < grads[i].values.size(); ++k)
            out.values[i].values[k] -= eta * grads[i].values[k];
    }
    return out;
}

namespace {

std::string join_ints(const std::vector<int>& xs) {
    std::string out;
    for (size_t i = 0; i < xs.size(); ++i) {
        if (i) out += ',';
        out += std::to_string(xs[i]);
    }
    return out;
}

std::vector<int> split_ints(const std::string& s) {
    std::vector<int> out;
    std::istringstream in(s);
    std::string part;
    while (std::getline(in, part, ',')) out.push_back(std::stoi(part));
    return out;
}

} // namespace

void save_params(const std::string& path, const TextCnnParams& params) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write params file: " + path);
    out << "textcnn v1\n"
        << "heights=" << join_ints(params.arch.filter_heights) << '\n'
        << "filters=" << params.arch.filters_per_height << '\n'
        << "extra_fc=" << params.arch.extra_fc_layers << '\n'
        << "fc_hidden=" << params.arch.fc_hidden << '\n'
        << "classes=" << params.arch.classes << '\n'
        << "d=" << params.d << '\n'
        << "end\n";
    for (const Tensor& t : params.values)
        for (double v : t.values) put_f64(out, v);
    if (!out) throw IoError("failed while writing params file: " + path);
}

TextCnnParams load_params(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open params file: " + path);
    std::string line;
    if (!std::getline(in, line) || line != "textcnn v1")
        throw ParseError(path + ": not a params file");

    ArchSpec arch;
    int d = 0;
    while (std::getline(in, line) && line != "end") {
        size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw ParseError(path + ": malformed header line \"" + line + "\"");
        std::string key = line.substr(0, eq), val = line.substr(eq + 1);
        try {
            if (key == "heights") arch.filter_heights = split_ints(val);
            else if (key == "filters") arch.filters_per_height = std::stoi(val);
            else if (key == "extra_fc") arch.extra_fc_layers = std::stoi(val);
            else if (key == "fc_hidden") arch.fc_hidden = std::stoi(val);
            else if (key == "classes") arch.classes = std::stoi(val);
            else if (key == "d") d = std::stoi(val);
            else throw ParseError(path + ": unknown header key \"" + key + "\"");
        } catch (const std::invalid_argument&) {
            throw ParseError(path + ": bad value for \"" + key + "\"");
        }
    }
    if (line != "end") throw ParseError(path + ": header not terminated");

    TextCnnParams params;
    params.arch = arch;
    params.d = d;
    for (const auto& shape : param_shapes(arch, d)) {
        Tensor t = Tensor::zeros(shape);
        for (double& v : t.values) v = get_f64(in);
        params.values.push_back(std::move(t));
    }
    if (!in) throw ParseError(path + ": truncated payload");
    return params;
}

} // namespace textdistill
