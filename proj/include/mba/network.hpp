#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "mba/attention.hpp"
#include "mba/ops.hpp"

// The three-branch network: a shared convolutional trunk up to the split
// point, then a global branch, a spatial-attention branch and a
// channel-attention branch, each with its own copy of the final stage and
// its own classifier head. Retrieval descriptors are the concatenated
// post-pooling branch embeddings in the fixed order [spatial, global,
// channel]; the heads exist only to feed the classifiers during training.

namespace mba {

struct BackboneConfig {
    enum class Kind { Toy, External };
    Kind kind = Kind::Toy;
    std::vector<int> stage_widths = {16, 32, 64, 64};  // channels after each stage
    int last_stride = 1;                               // stride of the final stage
    int split_point = 3;                               // branches fork after this many stages
    int input_channels = 3;
    int image_size = 64;  // square input extent
};

struct NetworkConfig {
    BackboneConfig backbone;
    int num_identities = 0;
    int head_dim = 512;
    float lrelu_slope = 0.1f;
    float dropout_p = 0.5f;
    bool share_stage4 = false;  // ablation: tie the three final-stage copies
    bool enable_spatial = true;
    bool enable_channel = true;
    bool enable_rpe = true;
    RpeVariant rpe_variant = RpeVariant::Paper;
    uint64_t init_seed = 1;
};

// conv3x3 + batch norm + relu
struct ConvStage {
    TensorPtr w;  // [Cout,Cin,3,3]
    BatchNormState bn;
    int stride = 1;
};

struct BranchHead {
    TensorPtr fc_w;  // [Cemb, head_dim]
    TensorPtr fc_b;
    BatchNormState bn;
    TensorPtr cls_w;  // [head_dim, num_identities]
    TensorPtr cls_b;
};

struct NamedParam {
    std::string name;
    TensorPtr tensor;
    bool backbone_group = false;  // true: trunk + final-stage copies (reduced learning rate)
};

struct TrainForward {
    // slots follow the descriptor order [spatial, global, channel];
    // disabled branches hold null logits/embeddings
    std::vector<TensorPtr> logits;
    std::vector<TensorPtr> embeddings;
};

class Network {
public:
    explicit Network(const NetworkConfig& cfg);

    // per-branch classifier logits and post-pooling embeddings
    TrainForward forward_branches(const TensorPtr& images, Mode mode, Rng& rng);
    // training pass (dropout active, batch statistics)
    TrainForward forward_train(const TensorPtr& images, Rng& rng) { return forward_branches(images, Mode::Train, rng); }

    // deterministic eval pass: concatenated descriptor [B, n_branches * Cemb]
    TensorPtr forward_embed(const TensorPtr& images);

    std::vector<NamedParam> named_params() const;
    // non-trainable state (batch norm running statistics)
    std::vector<std::pair<std::string, std::vector<float>*>> named_buffers();

    const NetworkConfig& config() const { return cfg_; }
    int embedding_dim() const { return embed_dim_; }
    int descriptor_dim() const;
    int num_branches() const;

    // gammas in the order S3, S4, C3, C4 (zero placeholder when disabled)
    std::vector<float> gammas() const;

    // test/ablation support: copy the global final stage into the other copies
    void tie_final_stages();

    std::vector<ConvStage> shared;             // stages before the split
    ConvStage stage4_g, stage4_s, stage4_c;    // per-branch copies of the final stage
    std::optional<SamRpeState> s3, s4;
    std::optional<CamState> c3, c4;
    std::optional<BranchHead> head_s;
    BranchHead head_g;
    std::optional<BranchHead> head_c;

private:
    TensorPtr run_stage(ConvStage& st, const TensorPtr& x, Mode mode);
    TensorPtr run_shared(const TensorPtr& images, Mode mode);
    NetworkConfig cfg_;
    int embed_dim_ = 0;
    int split_hw_ = 0;   // spatial extent after the split point
    int final_hw_ = 0;   // spatial extent after the final stage
};

// Spatial extents of the toy trunk: every stage halves the map except the
// last, which uses last_stride.
std::vector<int> toy_stage_extents(const BackboneConfig& cfg);

}  // namespace mba
