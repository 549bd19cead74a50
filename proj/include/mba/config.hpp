#pragma once

#include <string>
#include <vector>

#include "mba/data.hpp"
#include "mba/network.hpp"
#include "mba/training.hpp"

// Flat key=value run configuration shared by all CLI commands. Every knob is
// one line in the file or one --set override; the resolved configuration is
// echoed next to every run's artifacts so a run can be reproduced exactly.

namespace mba {

struct RunConfig {
    TrainConfig train;
    NetworkConfig network;
    AugmentationConfig aug;

    std::string dataset_root;
    std::string layout = "folder";  // folder | manifest
    bool toy = false;
    int toy_identities = 10;
    int toy_images = 10;
    int toy_size = 64;
    bool self_test_split = false;   // test half equals train half (sanity runs)
    std::string distractor_root;
    int repetitions = 10;
    int cmc_k = 10;
    int num_identities = 0;  // 0: derive from the split
    std::string checkpoint;
    std::string foreign_root;  // cross-domain eval: gallery/query from this dataset
    std::string backbone_import;

    // Toy defaults: small trunk, 30 epochs, 72->64 augmentation.
    void apply_toy_defaults();
};

// Known keys, their current values, one per line.
std::string dump_config(const RunConfig& cfg);

// key=value application; throws UsageError on unknown keys or bad values.
void apply_override(RunConfig& cfg, const std::string& key, const std::string& value);

// Loads a config file (blank lines and # comments ignored), then applies
// overrides in order.
RunConfig load_config(const std::string& path, const std::vector<std::string>& overrides);

}  // namespace mba
