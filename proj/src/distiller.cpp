#include "textdistill/distiller.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>
#include <ostream>
#include <thread>

#include "textdistill/graph.hpp"
#include "textdistill/rng.hpp"

namespace textdistill {

void validate_config(const DistillConfig& config) {
    if (config.samples_per_class < 1)
        throw ArgumentError("samples_per_class must be at least 1");
    if (config.s < 1) throw ArgumentError("sentence length must be at least 1");
    if (config.d < 0) throw ArgumentError("width must be nonnegative");
    // alpha = 0 is allowed: it runs the loop without moving the data, which
    // is useful as a baseline.
    if (config.alpha < 0.0) throw ArgumentError("outer step size must be nonnegative");
    if (config.batch < 1) throw ArgumentError("real batch size must be at least 1");
    if (config.steps < 1) throw ArgumentError("need at least one outer step");
    if (config.inits_per_step < 1)
        throw ArgumentError("need at least one learner draw per step");
    if (!(config.eta0 >= kEtaFloor))
        throw ArgumentError("starting rate must be at least 1e-6");
    if (!(config.tau > 0.0)) throw ArgumentError("temperature must be positive");
    if (config.threads < 1) throw ArgumentError("thread count must be at least 1");
}

RealBatch encode_batch(const std::vector<Example>& batch, const Encoder& enc,
                       int s, int C) {
    RealBatch out;
    out.xs.reserve(batch.size());
    out.ys.reserve(batch.size());
    for (const Example& ex : batch) {
        EncodedExample enc_ex = enc.encode(ex.text, ex.label, s, C);
        out.xs.push_back(std::move(enc_ex.embeddings));
        out.ys.push_back(std::move(enc_ex.label_onehot));
    }
    return out;
}

namespace {

// Contribution of one learner draw: meta-loss value plus gradients w.r.t.
// the distilled block, its labels, and the inner rate.
struct DrawResult {
    double loss = 0.0;
    Tensor gx;
    Tensor gy;
    double geta = 0.0;
};

DrawResult run_draw(const DistilledData& dd, const Encoder& enc,
                    const ArchSpec& arch, const RealBatch& batch,
                    const TextCnnParams& start,
                    std::span<const Tensor> gumbel_draws) {
    Graph g;
    GraphOps b{g};

    Var x = g.input(dd.inputs);
    Var y = g.input(dd.labels);
    Var eta = g.input(Tensor::scalar(dd.eta));

    std::vector<Var> params;
    params.reserve(start.values.size());
    for (const Tensor& t : start.values) params.push_back(g.input(t));

    auto rows = materialize_on(b, dd, enc, x, gumbel_draws);
    std::vector<Var> label_rows;
    label_rows.reserve(static_cast<size_t>(dd.M));
    Var y_flat = g.reshape(y, {dd.M * dd.C});
    for (int i = 0; i < dd.M; ++i)
        label_rows.push_back(g.slice(y_flat, i * dd.C, dd.C));

    Var inner_loss = loss_on(b, arch, std::span<const Var>(params), rows, label_rows);

    std::vector<Var> real_xs, real_ys;
    real_xs.reserve(batch.xs.size());
    real_ys.reserve(batch.ys.size());
    for (const Tensor& t : batch.xs) real_xs.push_back(g.constant(t));
    for (const Tensor& t : batch.ys) real_ys.push_back(g.constant(t));

    auto meta_builder = [&](std::span<const Var> updated) {
        return loss_on(b, arch, updated, std::span<const Var>(real_xs),
                       std::span<const Var>(real_ys));
    };
    std::vector<Var> leaves{x, y, eta};
    UnrolledStep step = grad_through_step(g, inner_loss, params, eta,
                                          meta_builder, leaves);

    DrawResult out;
    out.loss = g.value(step.meta_loss).item();
    out.gx = g.value(step.grads[0]);
    out.gy = g.value(step.grads[1]);
    out.geta = g.value(step.grads[2]).item();
    return out;
}

} // namespace

MetaGrads meta_step(const DistilledData& dd, const Encoder& enc,
                    const ArchSpec& arch, const RealBatch& batch,
                    const std::vector<TextCnnParams>& inits,
                    std::span<const Tensor> gumbel_draws, int threads) {
    if (inits.empty()) throw ArgumentError("need at least one learner draw");
    if (batch.xs.empty() || batch.xs.size() != batch.ys.size())
        throw ArgumentError("real batch is empty or misaligned");

    const size_t J = inits.size();
    std::vector<DrawResult> results(J);
    if (threads <= 1 || J == 1) {
        for (size_t j = 0; j < J; ++j)
            results[j] = run_draw(dd, enc, arch, batch, inits[j], gumbel_draws);
    } else {
        size_t workers = std::min<size_t>(static_cast<size_t>(threads), J);
        std::vector<std::thread> pool;
        std::vector<std::exception_ptr> failures(workers);
        std::atomic<size_t> next{0};
        for (size_t w = 0; w < workers; ++w)
            pool.emplace_back([&, w] {
                try {
                    for (size_t j = next.fetch_add(1); j < J; j = next.fetch_add(1))
                        results[j] =
                            run_draw(dd, enc, arch, batch, inits[j], gumbel_draws);
                } catch (...) {
                    failures[w] = std::current_exception();
                }
            });
        for (auto& t : pool) t.join();
        for (auto& f : failures)
            if (f) std::rethrow_exception(f);
    }

    // Summed in draw order, so any thread count reproduces sequential sums.
    MetaGrads out;
    out.inputs = Tensor::zeros(dd.inputs.shape);
    out.labels = Tensor::zeros(dd.labels.shape);
    for (size_t j = 0; j < J; ++j) {
        out.loss += results[j].loss;
        out.eta += results[j].geta;
        for (size_t k = 0; k < out.inputs.values.size(); ++k)
            out.inputs.values[k] += results[j].gx.values[k];
        for (size_t k = 0; k < out.labels.values.size(); ++k)
            out.labels.values[k] += results[j].gy.values[k];
    }
    return out;
}

void project_rows_to_simplex(Tensor& rows) {
    if (rows.rank() != 2) throw DimensionError("simplex projection needs a matrix");
    const int n = rows.dim(0), c = rows.dim(1);
    std::vector<double> u(static_cast<size_t>(c));
    for (int i = 0; i < n; ++i) {
        double* row = rows.values.data() + static_cast<size_t>(i) * c;
        std::copy(row, row + c, u.begin());
        std::sort(u.begin(), u.end(), std::greater<>());
        double running = 0.0, lambda = 0.0;
        for (int k = 0; k < c; ++k) {
            running += u[static_cast<size_t>(k)];
            double candidate = (1.0 - running) / (k + 1);
            if (u[static_cast<size_t>(k)] + candidate > 0.0) lambda = candidate;
        }
        for (int k = 0; k < c; ++k) row[k] = std::max(row[k] + lambda, 0.0);
    }
}

namespace {

struct MomentState {
    Tensor m, v;
    double m_eta = 0.0, v_eta = 0.0;
    int t = 0;
};

double moment_update(double& m, double& v, double g, int t, double alpha) {
    const double b1 = 0.9, b2 = 0.999, eps = 1e-8;
    m = b1 * m + (1.0 - b1) * g;
    v = b2 * v + (1.0 - b2) * g * g;
    double mhat = m / (1.0 - std::pow(b1, t));
    double vhat = v / (1.0 - std::pow(b2, t));
    return alpha * mhat / (std::sqrt(vhat) + eps);
}

} // namespace

std::pair<DistilledData, DistillRunRecord>
distill(const DistillConfig& config, const Corpus& corpus, const Encoder& enc,
        const ArchSpec& arch, std::ostream* progress) {
    validate_config(config);
    arch.validate();
    if (corpus.train().empty()) throw ArgumentError("train split is empty");
    if (config.d != 0 && config.d != enc.d())
        throw ArgumentError("configured width " + std::to_string(config.d) +
                            " does not match the embedding width " +
                            std::to_string(enc.d()));
    const int C = corpus.classes();
    if (arch.classes != C)
        throw ArgumentError("classifier emits " + std::to_string(arch.classes) +
                            " classes, corpus has " + std::to_string(C));

    const int M = config.samples_per_class * C;
    RngStream root(config.seed);
    DistilledData dd = init_distilled(config.strategy, M, config.s, enc.table(),
                                      C, config.eta0, config.tau,
                                      root.child("dd").key());

    auto batch_eng = root.child("batch").engine();
    auto gumbel_eng = root.child("gumbel").engine();

    DistillRunRecord record;
    record.config = config;
    record.meta_loss.reserve(static_cast<size_t>(config.steps));
    record.eta.reserve(static_cast<size_t>(config.steps));

    MomentState mom;
    if (config.adaptive_outer) {
        mom.m = Tensor::zeros(dd.inputs.shape);
        mom.v = Tensor::zeros(dd.inputs.shape);
    }
    Tensor mom_y_m, mom_y_v;
    if (config.adaptive_outer && config.learn_labels) {
        mom_y_m = Tensor::zeros(dd.labels.shape);
        mom_y_v = Tensor::zeros(dd.labels.shape);
    }

    auto started = std::chrono::steady_clock::now();
    for (int t = 0; t < config.steps; ++t) {
        if (config.anneal_tau && config.steps > 1)
            dd.tau = config.tau +
                     (0.1 - config.tau) * static_cast<double>(t) /
                         static_cast<double>(config.steps - 1);

        RealBatch batch =
            encode_batch(sample_batch(corpus, config.batch, batch_eng), enc,
                         config.s, C);

        std::vector<TextCnnParams> inits;
        inits.reserve(static_cast<size_t>(config.inits_per_step));
        for (int j = 0; j < config.inits_per_step; ++j)
            inits.push_back(init(arch, enc.d(), config.init,
                                 static_cast<uint64_t>(t) *
                                         static_cast<uint64_t>(config.inits_per_step) +
                                     static_cast<uint64_t>(j)));

        std::vector<Tensor> draws;
        if (config.strategy == StrategyKind::vocab_gumbel) {
            draws.reserve(static_cast<size_t>(M));
            for (int i = 0; i < M; ++i)
                draws.push_back(gumbel_noise(config.s, dd.width, gumbel_eng));
        }

        MetaGrads grads;
        try {
            grads = meta_step(dd, enc, arch, batch, inits, draws, config.threads);
        } catch (const NumericalError& e) {
            throw NumericalError("aborted at step " + std::to_string(t) + ": " +
                                 e.what() + "\nconfig: " +
                                 config_to_json(config).dump());
        }
        if (!std::isfinite(grads.loss) || !grads.inputs.all_finite() ||
            !grads.labels.all_finite() || !std::isfinite(grads.eta))
            throw NumericalError("meta-loss became non-finite at step " +
                                 std::to_string(t) + "\nconfig: " +
                                 config_to_json(config).dump());

        mom.t = t + 1;
        if (config.adaptive_outer) {
            const double b1 = 0.9, b2 = 0.999, eps = 1e-8;
            double c1 = 1.0 - std::pow(b1, mom.t), c2 = 1.0 - std::pow(b2, mom.t);
            for (size_t k = 0; k < dd.inputs.values.size(); ++k) {
                double g = grads.inputs.values[k];
                mom.m.values[k] = b1 * mom.m.values[k] + (1.0 - b1) * g;
                mom.v.values[k] = b2 * mom.v.values[k] + (1.0 - b2) * g * g;
                dd.inputs.values[k] -= config.alpha * (mom.m.values[k] / c1) /
                                       (std::sqrt(mom.v.values[k] / c2) + eps);
            }
        } else {
            for (size_t k = 0; k < dd.inputs.values.size(); ++k)
                dd.inputs.values[k] -= config.alpha * grads.inputs.values[k];
        }

        if (config.learn_labels) {
            if (config.adaptive_outer) {
                const double b1 = 0.9, b2 = 0.999, eps = 1e-8;
                double c1 = 1.0 - std::pow(b1, mom.t), c2 = 1.0 - std::pow(b2, mom.t);
                for (size_t k = 0; k < dd.labels.values.size(); ++k) {
                    double g = grads.labels.values[k];
                    mom_y_m.values[k] = b1 * mom_y_m.values[k] + (1.0 - b1) * g;
                    mom_y_v.values[k] = b2 * mom_y_v.values[k] + (1.0 - b2) * g * g;
                    dd.labels.values[k] -= config.alpha * (mom_y_m.values[k] / c1) /
                                           (std::sqrt(mom_y_v.values[k] / c2) + eps);
                }
            } else {
                for (size_t k = 0; k < dd.labels.values.size(); ++k)
                    dd.labels.values[k] -= config.alpha * grads.labels.values[k];
            }
            project_rows_to_simplex(dd.labels);
        }

        if (config.learn_eta) {
            if (config.adaptive_outer)
                dd.eta -= moment_update(mom.m_eta, mom.v_eta, grads.eta, mom.t,
                                        config.alpha);
            else
                dd.eta -= config.alpha * grads.eta;
            dd.eta = std::max(dd.eta, kEtaFloor);
        }

        record.meta_loss.push_back(grads.loss);
        record.eta.push_back(dd.eta);
        if (progress)
            *progress << t << ", " << grads.loss << ", " << dd.eta << "\n";
    }
    record.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - started)
            .count();

    record.final_data = dd;
    return {std::move(dd), std::move(record)};
}

nlohmann::json config_to_json(const DistillConfig& config) {
    nlohmann::json j;
    j["strategy"] = to_string(config.strategy);
    j["samples_per_class"] = config.samples_per_class;
    j["s"] = config.s;
    j["d"] = config.d;
    j["alpha"] = config.alpha;
    j["batch"] = config.batch;
    j["steps"] = config.steps;
    j["inits_per_step"] = config.inits_per_step;
    j["init_mode"] = to_string(config.init.mode);
    j["init_seed"] = config.init.seed;
    j["eta0"] = config.eta0;
    j["tau"] = config.tau;
    j["anneal_tau"] = config.anneal_tau;
    j["learn_labels"] = config.learn_labels;
    j["learn_eta"] = config.learn_eta;
    j["adaptive_outer"] = config.adaptive_outer;
    j["seed"] = config.seed;
    j["threads"] = config.threads;
    return j;
}

void write_run_record(const std::string& path, const DistillRunRecord& record) {
    nlohmann::json j;
    j["config"] = config_to_json(record.config);
    j["meta_loss"] = record.meta_loss;
    j["eta"] = record.eta;
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open record file for writing: " + path);
    out << j.dump(2) << "\n";
    if (!out) throw IoError("failed while writing record file: " + path);
}

} // namespace textdistill
