#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <functional>
#include <vector>

#include "support.hpp"
#include "textdistill/common.hpp"
#include "textdistill/graph.hpp"
#include "textdistill/rng.hpp"
#include "textdistill/tensor.hpp"

using namespace textdistill;
using tdtest::check_grads;
using tdtest::eval_scalar;
using tdtest::l2_rel_err;
using tdtest::random_tensor;
using tdtest::random_tensor_off_zero;

namespace {

// Weighted sum with a fixed constant, so the loss sees every output element.
Var weighted_sum(Graph& g, Var y, const Tensor& w) {
    return g.sum(g.mul(y, g.constant(w)));
}

} // namespace

TEST_CASE("tensor basics") {
    Tensor t = Tensor::zeros({2, 3});
    CHECK(t.numel() == 6);
    CHECK(t.rank() == 2);
    CHECK_FALSE(t.is_scalar());
    CHECK(Tensor::scalar(4.5).item() == 4.5);
    CHECK(Tensor::full({2}, 3.0).values[1] == 3.0);
    CHECK_THROWS_AS((void)kernels::reshape(t, {4, 2}), DimensionError);
    CHECK_THROWS_AS((void)t.item(), DimensionError);
}

TEST_CASE("matmul matches naive oracle") {
    auto eng = RngStream(11).engine();
    Tensor a = random_tensor(eng, {3, 4});
    Tensor b = random_tensor(eng, {4, 5});
    Tensor got = kernels::matmul(a, b);
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 5; ++j) {
            double acc = 0.0;
            for (int l = 0; l < 4; ++l)
                acc += a.values[i * 4 + l] * b.values[l * 5 + j];
            CHECK(got.values[i * 5 + j] == acc);
        }
    CHECK_THROWS_AS((void)kernels::matmul(a, a), DimensionError);
}

TEST_CASE("conv_text matches nested-loop oracle") {
    auto eng = RngStream(12).engine();
    Tensor x = random_tensor(eng, {7, 4});
    Tensor filters = random_tensor(eng, {2, 3, 4});
    Tensor bias = random_tensor(eng, {2});
    Tensor got = kernels::conv_text(x, filters, bias);
    REQUIRE(got.shape == std::vector<int>{2, 5});
    for (int f = 0; f < 2; ++f)
        for (int t = 0; t < 5; ++t) {
            double acc = bias.values[f];
            for (int i = 0; i < 3; ++i)
                for (int j = 0; j < 4; ++j)
                    acc += filters.values[(f * 3 + i) * 4 + j] * x.values[(t + i) * 4 + j];
            CHECK(got.values[f * 5 + t] == acc);
        }

    Tensor tall = random_tensor(eng, {2, 8, 4});
    CHECK_THROWS_AS((void)kernels::conv_text(x, tall, bias), DimensionError);
}

TEST_CASE("softmax rows sum to one and stay stable") {
    auto eng = RngStream(13).engine();
    Tensor a = random_tensor(eng, {4, 6}, -50.0, 50.0);
    Tensor sm = kernels::softmax(a, 1);
    Tensor rows = kernels::sum_axis(sm, 1);
    for (double v : rows.values) CHECK(v == doctest::Approx(1.0).epsilon(1e-12));

    Tensor huge = Tensor::full({1, 3}, 1000.0);
    huge.values[0] = 1001.0;
    CHECK(kernels::softmax(huge, 1).all_finite());
    CHECK(kernels::log_softmax(huge, 1).all_finite());
}

TEST_CASE("gradients match finite differences for every primitive") {
    auto eng = RngStream(21).engine();

    SUBCASE("add, sub with scalar broadcast") {
        Tensor a = random_tensor(eng, {2, 3});
        Tensor s = random_tensor(eng, {1});
        Tensor w = random_tensor(eng, {2, 3});
        check_grads([&](Graph& g, std::span<const Var> in) {
            return weighted_sum(g, g.add(in[0], in[1]), w);
        }, {a, s});
        check_grads([&](Graph& g, std::span<const Var> in) {
            return weighted_sum(g, g.sub(in[1], in[0]), w);
        }, {a, s});
    }

    SUBCASE("mul elementwise and scalar broadcast") {
        Tensor a = random_tensor(eng, {3, 2});
        Tensor b = random_tensor(eng, {3, 2});
        Tensor s = Tensor::scalar(uniform_in(eng, 0.5, 2.0));
        Tensor w = random_tensor(eng, {3, 2});
        check_grads([&](Graph& g, std::span<const Var> in) {
            return weighted_sum(g, g.mul(in[0], in[1]), w);
        }, {a, b});
        check_grads([&](Graph& g, std::span<const Var> in) {
            return weighted_sum(g, g.mul(in[0], in[1]), w);
        }, {a, s});
    }

    SUBCASE("scale and add_n") {
        Tensor a = random_tensor(eng, {4});
        Tensor b = random_tensor(eng, {4});
        Tensor c = random_tensor(eng, {4});
        Tensor w = random_tensor(eng, {4});
        check_grads([&](Graph& g, std::span<const Var> in) {
            std::vector<Var> xs{in[0], in[1], in[2], in[0]};
            return weighted_sum(g, g.scale(g.add_n(xs), -1.7), w);
        }, {a, b, c});
    }

    SUBCASE("matmul and transpose") {
        Tensor a = random_tensor(eng, {3, 4});
        Tensor b = random_tensor(eng, {4, 2});
        Tensor w = random_tensor(eng, {3, 2});
        check_grads([&](Graph& g, std::span<const Var> in) {
            return weighted_sum(g, g.matmul(in[0], in[1]), w);
        }, {a, b});
        Tensor wt = random_tensor(eng, {4, 3});
        check_grads([&](Graph& g, std::span<const Var> in) {
            return weighted_sum(g, g.transpose(in[0]), wt);
        }, {a});
    }

    SUBCASE("conv_text wrt input, filters, bias") {
        Tensor x = random_tensor(eng, {6, 3});
        Tensor f = random_tensor(eng, {2, 3, 3});
        Tensor b = random_tensor(eng, {2});
        Tensor w = random_tensor(eng, {2, 4});
        check_grads([&](Graph& g, std::span<const Var> in) {
            return weighted_sum(g, g.conv_text(in[0], in[1], in[2]), w);
        }, {x, f, b});
    }

    SUBCASE("relu away from the kink") {
        Tensor a = random_tensor_off_zero(eng, {3, 4});
        Tensor w = random_tensor(eng, {3, 4});
        check_grads([&](Graph& g, std::span<const Var> in) {
            return weighted_sum(g, g.relu(in[0]), w);
        }, {a});
    }

    SUBCASE("max_over_time with well-separated values") {
        Tensor a = Tensor::zeros({2, 5});
        for (size_t k = 0; k < a.values.size(); ++k)
            a.values[k] = 0.1 * static_cast<double>((k * 7) % 10) - 0.45;
        Tensor w = random_tensor(eng, {2});
        check_grads([&](Graph& g, std::span<const Var> in) {
            return weighted_sum(g, g.max_over_time(in[0]), w);
        }, {a});
    }

    SUBCASE("softmax and log_softmax over both axes") {
        Tensor a = random_tensor(eng, {3, 4});
        Tensor w = random_tensor(eng, {3, 4});
        for (int axis : {0, 1}) {
            check_grads([&](Graph& g, std::span<const Var> in) {
                return weighted_sum(g, g.softmax(in[0], axis), w);
            }, {a});
            check_grads([&](Graph& g, std::span<const Var> in) {
                return weighted_sum(g, g.log_softmax(in[0], axis), w);
            }, {a});
        }
    }

    SUBCASE("sum_axis, broadcast_axis, sum") {
        Tensor a = random_tensor(eng, {3, 4});
        Tensor w0 = random_tensor(eng, {4});
        Tensor w1 = random_tensor(eng, {2, 3, 4});
        check_grads([&](Graph& g, std::span<const Var> in) {
            return weighted_sum(g, g.sum_axis(in[0], 0), w0);
        }, {a});
        check_grads([&](Graph& g, std::span<const Var> in) {
            return weighted_sum(g, g.broadcast_axis(in[0], 0, 2), w1);
        }, {a});
        check_grads([&](Graph& g, std::span<const Var> in) {
            return g.sum(g.mul(in[0], in[0]));
        }, {a});
    }

    SUBCASE("concat, slice, reshape") {
        Tensor a = random_tensor(eng, {3});
        Tensor b = random_tensor(eng, {4});
        Tensor w = random_tensor(eng, {5});
        check_grads([&](Graph& g, std::span<const Var> in) {
            std::vector<Var> parts{in[0], in[1]};
            Var cat = g.concat(parts);
            return weighted_sum(g, g.slice(cat, 1, 5), w);
        }, {a, b});
        Tensor w2 = random_tensor(eng, {2, 6});
        Tensor m = random_tensor(eng, {3, 4});
        check_grads([&](Graph& g, std::span<const Var> in) {
            return weighted_sum(g, g.reshape(in[0], {2, 6}), w2);
        }, {m});
    }
}

TEST_CASE("composite graph gradient matches finite differences tightly") {
    auto eng = RngStream(25).engine();
    Tensor x = random_tensor(eng, {6, 4});
    Tensor f = random_tensor(eng, {3, 3, 4});
    Tensor b = random_tensor(eng, {3});
    Tensor w = random_tensor(eng, {3, 4});
    Tensor v = random_tensor(eng, {4, 2});
    check_grads([&](Graph& g, std::span<const Var> in) {
        Var pooled = g.max_over_time(g.relu(g.conv_text(in[0], in[1], in[2])));
        Var hidden = g.relu(g.matmul(g.reshape(pooled, {1, 3}), g.matmul(in[3], in[4])));
        Var probs = g.log_softmax(hidden, 1);
        return g.sum(g.mul(probs, probs));
    }, {x, f, b, w, v}, 1e-5);
}

TEST_CASE("shared subexpressions accumulate") {
    Graph g;
    auto eng = RngStream(31).engine();
    Tensor xt = random_tensor(eng, {5});
    Var x = g.input(xt);
    Var t = g.mul(x, x);
    Var loss = g.sum(g.add(t, t));
    Tensor grad = g.value(g.gradients(loss, std::vector<Var>{x})[0]);
    for (int i = 0; i < 5; ++i)
        CHECK(grad.values[i] == doctest::Approx(4.0 * xt.values[i]).epsilon(1e-12));
}

TEST_CASE("gradients are differentiable again") {
    // f(x) = x^3, f' = 3x^2, f'' = 6x, all from the same graph
    Graph g;
    Var x = g.input(Tensor::scalar(1.7));
    Var loss = g.mul(g.mul(x, x), x);
    Var d1 = g.gradients(loss, std::vector<Var>{x})[0];
    CHECK(g.value(d1).item() == doctest::Approx(3 * 1.7 * 1.7).epsilon(1e-12));
    Var d2 = g.gradients(d1, std::vector<Var>{x})[0];
    CHECK(g.value(d2).item() == doctest::Approx(6 * 1.7).epsilon(1e-12));
}

TEST_CASE("max gradient flows to the first of tied maxima") {
    Graph g;
    Tensor xt = Tensor::zeros({1, 4});
    xt.values = {1.0, 3.0, 3.0, 2.0};
    Var x = g.input(xt);
    Var loss = g.sum(g.max_over_time(x));
    Tensor grad = g.value(g.gradients(loss, std::vector<Var>{x})[0]);
    CHECK(grad.values == std::vector<double>{0.0, 1.0, 0.0, 0.0});
}

TEST_CASE("unreachable params get zero gradients, foreign vars are rejected") {
    Graph g;
    Var x = g.input(Tensor::scalar(2.0));
    Var y = g.input(Tensor::zeros({3}));
    Var loss = g.mul(x, x);
    auto grads = g.gradients(loss, std::vector<Var>{x, y});
    CHECK(g.value(grads[0]).item() == doctest::Approx(4.0));
    CHECK(g.value(grads[1]).shape == std::vector<int>{3});
    for (double v : g.value(grads[1]).values) CHECK(v == 0.0);

    Graph other;
    Var z = other.input(Tensor::scalar(1.0));
    CHECK_THROWS_AS((void)g.gradients(loss, std::vector<Var>{z}), DependencyError);
    CHECK_THROWS_AS((void)g.add(x, z), DependencyError);
}

TEST_CASE("non-finite values are caught when checking is on") {
    Graph g;
    Var x = g.input(Tensor::scalar(1e308));
    CHECK_THROWS_AS((void)g.scale(g.scale(x, 1e10), 1e10), NumericalError);

    Graph loose(false);
    Var y = loose.input(Tensor::scalar(1e308));
    Var z = loose.scale(loose.scale(y, 1e10), 1e10);
    CHECK_FALSE(loose.value(z).all_finite());
}

TEST_CASE("loss must be scalar") {
    Graph g;
    Var x = g.input(Tensor::zeros({2}));
    CHECK_THROWS_AS((void)g.gradients(x, std::vector<Var>{x}), ArgumentError);
}

TEST_CASE("grad_through_step differentiates through the inner update") {
    auto eng = RngStream(41).engine();
    Tensor w0 = random_tensor(eng, {2, 2});
    Tensor b0 = random_tensor(eng, {2, 1});
    Tensor xd = random_tensor(eng, {2, 1});
    Tensor eta0 = Tensor::scalar(0.05);
    Tensor real = random_tensor(eng, {2, 1});

    // Builds the full unrolled pipeline and returns (meta_loss, grads).
    auto run = [&](const Tensor& xt, const Tensor& et) {
        Graph g;
        Var w = g.input(w0);
        Var b = g.input(b0);
        Var x = g.input(xt);
        Var eta = g.input(et);
        Var pred = g.add(g.matmul(w, x), b);
        Var inner = g.sum(g.mul(pred, pred));
        std::vector<Var> params{w, b};
        std::vector<Var> wanted{x, eta};
        UnrolledStep step = grad_through_step(
            g, inner, params, eta,
            [&](std::span<const Var> up) {
                Var rp = g.add(g.matmul(up[0], g.constant(real)), up[1]);
                return g.sum(g.mul(rp, rp));
            },
            wanted);
        Tensor gx = g.value(step.grads[0]);
        Tensor ge = g.value(step.grads[1]);
        return std::tuple<double, Tensor, Tensor>{g.value(step.meta_loss).item(), gx, ge};
    };

    auto [metav, gx, ge] = run(xd, eta0);
    CHECK(std::isfinite(metav));

    const double h = 1e-5;
    Tensor fd_x = Tensor::zeros({2, 1});
    for (size_t k = 0; k < 2; ++k) {
        Tensor hi = xd, lo = xd;
        hi.values[k] += h;
        lo.values[k] -= h;
        fd_x.values[k] = (std::get<0>(run(hi, eta0)) - std::get<0>(run(lo, eta0))) / (2 * h);
    }
    CHECK(l2_rel_err(gx, fd_x) < 1e-3);

    Tensor ehi = eta0, elo = eta0;
    ehi.values[0] += h;
    elo.values[0] -= h;
    double fd_eta = (std::get<0>(run(xd, ehi)) - std::get<0>(run(xd, elo))) / (2 * h);
    CHECK(std::abs(fd_eta) > 1e-8); // eta actually matters here
    CHECK(std::abs(ge.item() - fd_eta) / std::max(std::abs(fd_eta), 1e-12) < 1e-3);
}

TEST_CASE("grad_through_step rejects a meta loss detached from the update") {
    Graph g;
    Var w = g.input(Tensor::scalar(1.0));
    Var eta = g.input(Tensor::scalar(0.1));
    Var inner = g.mul(w, w);
    std::vector<Var> params{w};
    std::vector<Var> wanted{eta};
    CHECK_THROWS_AS(
        (void)grad_through_step(g, inner, params, eta,
                                [&](std::span<const Var>) {
                                    return g.mul(eta, eta);
                                },
                                wanted),
        DependencyError);
}

TEST_CASE("rng streams are deterministic and well-behaved") {
    RngStream root(42);
    CHECK(root.child(3).key() == RngStream(42).child(3).key());
    CHECK(root.child(3).key() != root.child(4).key());
    CHECK(root.child("gumbel").key() != root.child("init").key());

    auto e1 = root.child(7).engine();
    auto e2 = root.child(7).engine();
    for (int i = 0; i < 100; ++i) {
        double u = uniform_unit(e1);
        CHECK(u > 0.0);
        CHECK(u < 1.0);
        CHECK(u == uniform_unit(e2));
    }
    auto e3 = root.child(9).engine();
    for (int i = 0; i < 100; ++i) CHECK(bounded(e3, 17) < 17);
    auto e4 = root.child(10).engine();
    double acc = 0.0;
    for (int i = 0; i < 1000; ++i) {
        double n = normal_unit(e4);
        CHECK(std::isfinite(n));
        acc += n;
    }
    CHECK(std::abs(acc / 1000.0) < 0.2);
}
