#pragma once

#include <map>
#include <set>
#include <string>

#include "textdistill/distiller.hpp"
#include "textdistill/evalsuite.hpp"

namespace textdistill {

// Effective settings for one command invocation. Precedence: built-in
// defaults, then the config file, then flags. Whatever a command ends up
// using is written back to <out>/config.snapshot.
struct RunConfig {
    uint64_t seed = 0;
    int threads = 1;
    std::string out_dir = "out";
    std::string corpus_path;
    std::string embed_path;
    std::string ctx = "identity"; // or "attention"

    DistillConfig distill; // seed, init seed, and threads are derived at run time
    ArchSpec arch;         // classes always come from the corpus

    // full-data training and evaluation
    int epochs = 4;
    double lr = 0.05;
    int eval_batch = 32;
    int eval_steps = 1;
    std::string source = "distilled"; // eval target: "full" or "distilled"
    double full_score = 0.0;          // > 0 adds the ratio column to reports

    SyntheticConfig synth;

    // keys the file or a flag actually set, for "was this asked for" checks
    std::set<std::string> explicit_keys;
};

// Flat `key = value` lines; blank lines and everything after '#' are
// ignored. Duplicate keys are an error.
std::map<std::string, std::string> parse_config_file(const std::string& path);

RunConfig make_run_config(const std::map<std::string, std::string>& file_kv,
                          const std::map<std::string, std::string>& flag_kv);

// The full effective config in file syntax, key order fixed. Feeding it
// back through parse_config_file + make_run_config reproduces the config.
std::string config_snapshot(const RunConfig& cfg);
void write_config_snapshot(const std::string& path, const RunConfig& cfg);

// Commands return a process exit code: 0 done, 2 bad input or config,
// 3 numerical failure. Messages go to err; results and file paths to out.
// Timestamps only ever land in <out>/run.log, keeping every other output
// byte-stable across reruns.
int cmd_synth_data(const RunConfig& cfg, std::ostream& out, std::ostream& err);
int cmd_distill(const RunConfig& cfg, std::ostream& out, std::ostream& err);
int cmd_eval(const RunConfig& cfg, std::ostream& out, std::ostream& err);
int cmd_xarch(const RunConfig& cfg, std::ostream& out, std::ostream& err);
int cmd_decode(const RunConfig& cfg, std::ostream& out, std::ostream& err);
int cmd_langstats(const RunConfig& cfg, std::ostream& out, std::ostream& err);

} // namespace textdistill
