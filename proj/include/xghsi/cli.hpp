#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

#include "xghsi/explainer.hpp"
#include "xghsi/graph.hpp"
#include "xghsi/model.hpp"
#include "xghsi/trainer.hpp"

namespace xghsi {

enum ExitCode : int {
    kExitOk = 0,
    kExitInvalid = 1,
    kExitIo = 2,
    kExitDiverged = 3,
};

/// Everything a command may need. `seed` feeds the split shuffle, the
/// model initialisation and the explainer; the per-module seed fields are
/// overwritten with it.
struct RunConfig {
    std::uint64_t seed = 0;
    double threshold = kDefaultSimilarityThreshold;
    unsigned threads = 1;
    ModelConfig model;
    TrainConfig train;
    ExplainerConfig explainer;

    std::string corpus;
    std::string graph;
    std::string checkpoint;
    std::string out;
};

/// JSON document with optional sections; unknown keys are a ConfigError.
///   {"seed": 0,
///    "graph": {"threshold", "threads"},
///    "model": {"hidden_dim", "leaky_slope"},
///    "train": {"epochs", "learning_rate", "beta1", "beta2", "epsilon", "split_ratios", "precision"},
///    "explainer": {"epochs", "learning_rate", "edge_size", "edge_entropy", "feature_size",
///                  "feature_entropy", "top_k"},
///    "paths": {"corpus", "graph", "checkpoint", "out"}}
RunConfig parse_run_config(std::string_view text, RunConfig base = {});
RunConfig load_run_config(const std::string& path, RunConfig base = {});
std::string dump_run_config(const RunConfig& cfg);

/// Runs one subcommand; args exclude the program name. Returns an ExitCode.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

} // namespace xghsi
