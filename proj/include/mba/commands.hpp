#pragma once

#include <string>

#include "mba/config.hpp"
#include "mba/evaluation.hpp"

// Command implementations behind the CLI, callable directly from tests.

namespace mba {

IdentityDataset build_dataset(const RunConfig& cfg);

struct TrainSummary {
    TrainResult result;
    std::string config_echo_path;
    int num_identities = 0;
};

TrainSummary cmd_train(RunConfig cfg, const std::string& out_dir);

struct EvalSummary {
    EvalReport report;
    std::string csv_path;
    std::string json_path;
};

EvalSummary cmd_eval(RunConfig cfg, const std::string& out_dir);

struct AblationRow {
    std::string label;
    double rank1 = 0.0;
    double map = 0.0;
};

// The four cumulative configurations: global trunk only, plus spatial
// attention without positional encodings, plus channel attention, plus the
// relative positional encodings.
std::vector<AblationRow> cmd_ablate(RunConfig cfg, const std::string& out_dir);

void cmd_export_split(RunConfig cfg, int repetition, const std::string& out_path);

// Runs every self-check category, printing one line each; returns the number
// of failed categories. corrupt selects a fault-injection hook by name
// (currently "softmax") to prove the checks can fail.
int run_selfcheck(const std::string& corrupt = "");

}  // namespace mba
