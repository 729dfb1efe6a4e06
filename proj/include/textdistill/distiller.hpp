#pragma once

#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "textdistill/classifier.hpp"
#include "textdistill/corpus.hpp"
#include "textdistill/encoder.hpp"
#include "textdistill/strategies.hpp"

namespace textdistill {

struct DistillConfig {
    StrategyKind strategy = StrategyKind::vanilla;
    int samples_per_class = 10;
    int s = 12;
    int d = 0;              // 0: take the encoder's width
    double alpha = 0.01;    // outer step size
    int batch = 64;         // real examples scored per step
    int steps = 2000;       // outer iterations
    int inits_per_step = 4; // fresh learner draws averaged per step
    InitSpec init;
    double eta0 = 0.1;
    double tau = 0.5;
    bool anneal_tau = false; // linear slide to 0.1 over the run
    bool learn_labels = false;
    bool learn_eta = true;
    bool adaptive_outer = false; // moment-tracked outer updates
    uint64_t seed = 0;
    int threads = 1;
};

void validate_config(const DistillConfig& config);

struct DistillRunRecord {
    std::vector<double> meta_loss; // summed over the step's learner draws
    std::vector<double> eta;       // value after each step's update
    double wall_seconds = 0.0;     // never serialized into the record file
    DistillConfig config;
    DistilledData final_data;
};

struct RealBatch {
    std::vector<Tensor> xs; // contextualized s x d blocks
    std::vector<Tensor> ys; // one-hot rows, length C
};

RealBatch encode_batch(const std::vector<Example>& batch, const Encoder& enc,
                       int s, int C);

struct MetaGrads {
    Tensor inputs;      // shape of dd.inputs
    Tensor labels;      // shape of dd.labels
    double eta = 0.0;
    double loss = 0.0;  // summed over draws
};

// One outer-step evaluation: for each starting parameter draw, take a single
// inner GD step on the distilled block and differentiate the real-batch loss
// back through it. Gradients are summed over draws in draw order regardless
// of thread count, so results never depend on scheduling.
MetaGrads meta_step(const DistilledData& dd, const Encoder& enc,
                    const ArchSpec& arch, const RealBatch& batch,
                    const std::vector<TextCnnParams>& inits,
                    std::span<const Tensor> gumbel_draws, int threads = 1);

std::pair<DistilledData, DistillRunRecord>
distill(const DistillConfig& config, const Corpus& corpus, const Encoder& enc,
        const ArchSpec& arch, std::ostream* progress = nullptr);

// In place, one row at a time: nearest point on the probability simplex.
void project_rows_to_simplex(Tensor& rows);

nlohmann::json config_to_json(const DistillConfig& config);
void write_run_record(const std::string& path, const DistillRunRecord& record);

} // namespace textdistill
