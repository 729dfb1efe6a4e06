// Thin argument layer: every flag is funneled into the same key-value
// channel a config file uses, so precedence lives in one place
// (make_run_config) and the command functions stay testable in-process.

#include <iostream>
#include <map>
#include <string>

#include "CLI11.hpp"
#include "textdistill/cli.hpp"

namespace {

struct FlagBag {
    std::string config_path;
    std::map<std::string, std::string> values;
};

void add_common(CLI::App* cmd, FlagBag& bag) {
    cmd->add_option("--config", bag.config_path, "flat key = value config file");
    auto opt = [cmd, &bag](const std::string& flag, const std::string& key,
                           const std::string& help) {
        cmd->add_option_function<std::string>(
            flag, [&bag, key](const std::string& v) { bag.values[key] = v; }, help);
    };
    opt("--seed", "seed", "global seed; every module draws from its own child stream");
    opt("--out", "out", "output directory (default: out)");
    opt("--threads", "threads", "worker threads (default: 1)");
}

void add_data_flags(CLI::App* cmd, FlagBag& bag) {
    auto opt = [cmd, &bag](const std::string& flag, const std::string& key,
                           const std::string& help) {
        cmd->add_option_function<std::string>(
            flag, [&bag, key](const std::string& v) { bag.values[key] = v; }, help);
    };
    opt("--corpus", "corpus", "corpus JSONL path");
    opt("--embeddings", "embeddings", "embedding table path");
    opt("--ctx", "ctx", "contextualizer: identity or attention");
    opt("--s", "s", "sentence length in tokens");
}

void add_model_flags(CLI::App* cmd, FlagBag& bag) {
    auto opt = [cmd, &bag](const std::string& flag, const std::string& key,
                           const std::string& help) {
        cmd->add_option_function<std::string>(
            flag, [&bag, key](const std::string& v) { bag.values[key] = v; }, help);
    };
    opt("--filters", "filters", "conv filters per height");
    opt("--extra-fc", "extra_fc", "extra hidden FC layers (0-3)");
    opt("--fc-hidden", "fc_hidden", "hidden FC width");
    opt("--init", "init", "classifier init mode: random or fixed");
}

void add_distill_flags(CLI::App* cmd, FlagBag& bag) {
    auto opt = [cmd, &bag](const std::string& flag, const std::string& key,
                           const std::string& help) {
        cmd->add_option_function<std::string>(
            flag, [&bag, key](const std::string& v) { bag.values[key] = v; }, help);
    };
    opt("--strategy", "strategy",
        "vanilla, skip_lookup, vocab_softmax, or vocab_gumbel");
    opt("--per-class", "per_class", "distilled samples per class");
    opt("--d", "d", "distilled embedding width (0: encoder width)");
    opt("--alpha", "alpha", "outer learning rate");
    opt("--batch", "batch", "real batch size per outer step");
    opt("--steps", "steps", "outer steps");
    opt("--inits", "inits", "fresh inits averaged per outer step");
    opt("--eta0", "eta0", "initial learned inner rate");
    opt("--tau", "tau", "gumbel-softmax temperature");
    opt("--anneal-tau", "anneal_tau", "linearly anneal tau (true/false)");
    opt("--learn-labels", "learn_labels", "learn soft labels (true/false)");
    opt("--learn-eta", "learn_eta", "learn the inner rate (true/false)");
    opt("--adaptive", "adaptive_outer", "adaptive outer updates (true/false)");
}

void add_eval_flags(CLI::App* cmd, FlagBag& bag) {
    auto opt = [cmd, &bag](const std::string& flag, const std::string& key,
                           const std::string& help) {
        cmd->add_option_function<std::string>(
            flag, [&bag, key](const std::string& v) { bag.values[key] = v; }, help);
    };
    opt("--source", "source", "evaluate 'full' data or the 'distilled' artifact");
    opt("--epochs", "epochs", "full-data training epochs");
    opt("--lr", "lr", "full-data learning rate");
    opt("--eval-batch", "eval_batch", "full-data batch size");
    opt("--eval-steps", "eval_steps", "GD steps on the distilled block");
    opt("--full-score", "full_score",
        "full-data F1 to report the distillation ratio against");
}

void add_synth_flags(CLI::App* cmd, FlagBag& bag) {
    auto opt = [cmd, &bag](const std::string& flag, const std::string& key,
                           const std::string& help) {
        cmd->add_option_function<std::string>(
            flag, [&bag, key](const std::string& v) { bag.values[key] = v; }, help);
    };
    opt("--langs", "langs", "number of languages");
    opt("--classes", "classes", "number of classes");
    opt("--train-per-lang", "train_per_lang", "train sentences per language");
    opt("--dev-per-lang", "dev_per_lang", "dev sentences per language");
    opt("--test-per-lang", "test_per_lang", "test sentences per language");
    opt("--embed-dim", "embed_dim", "embedding width");
    opt("--min-len", "min_len", "shortest sentence");
    opt("--max-len", "max_len", "longest sentence");
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{
        "text dataset distillation: compress a labeled corpus into a handful "
        "of learned sentences.\nPrecedence: flags override --config file "
        "entries, which override built-in defaults."};
    app.require_subcommand(1);

    FlagBag bag;
    using Cmd = int (*)(const textdistill::RunConfig&, std::ostream&, std::ostream&);
    std::map<std::string, Cmd> dispatch;

    auto* synth = app.add_subcommand("synth-data",
                                     "generate a synthetic corpus + embeddings");
    add_common(synth, bag);
    add_synth_flags(synth, bag);
    dispatch["synth-data"] = &textdistill::cmd_synth_data;

    auto* dist = app.add_subcommand("distill", "learn a distilled dataset");
    add_common(dist, bag);
    add_data_flags(dist, bag);
    add_model_flags(dist, bag);
    add_distill_flags(dist, bag);
    dispatch["distill"] = &textdistill::cmd_distill;

    auto* eval = app.add_subcommand("eval", "train per config and score test F1");
    add_common(eval, bag);
    add_data_flags(eval, bag);
    add_model_flags(eval, bag);
    add_eval_flags(eval, bag);
    dispatch["eval"] = &textdistill::cmd_eval;

    auto* xarch = app.add_subcommand("xarch",
                                     "score the artifact across classifier depths");
    add_common(xarch, bag);
    add_data_flags(xarch, bag);
    add_model_flags(xarch, bag);
    add_eval_flags(xarch, bag);
    dispatch["xarch"] = &textdistill::cmd_xarch;

    auto* dec = app.add_subcommand("decode",
                                   "map the artifact back to nearest real tokens");
    add_common(dec, bag);
    add_data_flags(dec, bag);
    dec->add_option_function<std::string>(
        "--strategy",
        [&bag](const std::string& v) { bag.values["strategy"] = v; },
        "expected artifact strategy; mismatch is an error");
    dispatch["decode"] = &textdistill::cmd_decode;

    auto* stats = app.add_subcommand(
        "langstats", "language proportions, original vs distilled");
    add_common(stats, bag);
    add_data_flags(stats, bag);
    dispatch["langstats"] = &textdistill::cmd_langstats;

    CLI11_PARSE(app, argc, argv);

    try {
        std::map<std::string, std::string> file_kv;
        if (!bag.config_path.empty())
            file_kv = textdistill::parse_config_file(bag.config_path);
        auto cfg = textdistill::make_run_config(file_kv, bag.values);
        return dispatch.at(app.get_subcommands().front()->get_name())(
            cfg, std::cout, std::cerr);
    } catch (const textdistill::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
}
