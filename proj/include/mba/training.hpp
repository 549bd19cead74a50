#pragma once

#include <string>
#include <utility>
#include <vector>

#include "mba/data.hpp"
#include "mba/network.hpp"
#include "mba/ops.hpp"

// Training recipe: sum of per-branch label-smoothed cross-entropies, Adam
// with L2 decay folded into the gradients, linear warmup followed by step
// decays, and a reduced learning rate for the trunk parameters.

namespace mba {

struct TrainConfig {
    int epochs = 70;
    int batch_size = 20;
    float base_lr = 8e-4f;
    float warmup_start_lr = 8e-6f;
    int warmup_epochs = 10;
    std::vector<std::pair<int, float>> decays = {{40, 4e-4f}, {60, 2e-4f}};
    float weight_decay = 5e-4f;
    float label_smoothing = 0.1f;
    SmoothingVariant smoothing_variant = SmoothingVariant::UniformAll;
    float backbone_lr_ratio = 0.1f;
    uint64_t seed = 1;
    int checkpoint_every = 0;  // epochs between checkpoints; 0 = final only

    void validate() const;
};

struct LearningRates {
    float new_layers = 0.f;
    float backbone = 0.f;
};

// Piecewise schedule: epochs [0, warmup) interpolate linearly from
// warmup_start_lr towards base_lr (reaching it exactly at epoch == warmup),
// then the step decays apply from their epoch onward.
LearningRates lr_at(int epoch, const TrainConfig& cfg);

// Unweighted sum of the smoothed cross-entropies of the present branches.
TensorPtr total_loss(const std::vector<TensorPtr>& branch_logits, const std::vector<int>& labels, float epsilon,
                     SmoothingVariant variant = SmoothingVariant::UniformAll);

// Adam with bias correction; weight decay enters through the gradient, so a
// zero learning rate leaves parameters untouched regardless of decay.
class Adam {
public:
    Adam(std::vector<NamedParam> params, float beta1 = 0.9f, float beta2 = 0.999f, float eps = 1e-8f);
    void step(const LearningRates& lr, float weight_decay);
    const std::vector<NamedParam>& params() const { return params_; }

private:
    std::vector<NamedParam> params_;
    std::vector<std::vector<float>> m_, v_;
    float beta1_, beta2_, eps_;
    long t_ = 0;
};

struct EpochStats {
    int epoch = 0;
    float train_loss = 0.f;
    float val_acc = 0.f;
    LearningRates lr;
    std::vector<float> gammas;
};

struct TrainResult {
    std::vector<EpochStats> history;
    float final_loss = 0.f;       // mean batch loss of the last epoch
    float final_train_acc = 0.f;  // eval-mode classification accuracy on the train stream
    std::string checkpoint_path;  // final checkpoint
    std::string metrics_path;     // CSV log
};

// Runs the full recipe; writes metrics.csv and checkpoints under out_dir.
// Deterministic for a fixed config seed.
TrainResult train_loop(Network& net, const IdentityDataset& ds, const RetrievalSplit& split, const TrainConfig& cfg,
                       const AugmentationConfig& aug, const std::string& out_dir);

// Eval-mode classification accuracy (argmax over the summed branch logits).
float classification_accuracy(Network& net, const IdentityDataset& ds, const std::vector<int>& records,
                              const AugmentationConfig& aug, int batch_size);

}  // namespace mba
