#include "mba/network.hpp"

#include <cmath>

namespace mba {

namespace {

TensorPtr conv_init(int cout, int cin, int k, Rng& rng) {
    float stddev = std::sqrt(2.0f / float(cin * k * k));
    if (k == 1) return Tensor::randn({cout, cin}, rng, stddev, true);
    return Tensor::randn({cout, cin, k, k}, rng, stddev, true);
}

ConvStage make_stage(int cin, int cout, int stride, Rng& rng) {
    ConvStage st;
    st.w = conv_init(cout, cin, 3, rng);
    st.bn = BatchNormState::make(cout);
    st.stride = stride;
    return st;
}

ConvStage clone_stage(const ConvStage& src) {
    ConvStage st;
    st.w = Tensor::from(src.w->shape, src.w->data, true);
    st.bn = BatchNormState::make(src.bn.channels());
    st.bn.scale->data = src.bn.scale->data;
    st.bn.shift->data = src.bn.shift->data;
    st.bn.running_mean = src.bn.running_mean;
    st.bn.running_var = src.bn.running_var;
    st.stride = src.stride;
    return st;
}

BranchHead make_head(int cemb, int head_dim, int num_ids, Rng& rng) {
    BranchHead h;
    h.fc_w = Tensor::randn({cemb, head_dim}, rng, 1.0f / std::sqrt(float(cemb)), true);
    h.fc_b = Tensor::create({head_dim}, true);
    h.bn = BatchNormState::make(head_dim);
    h.cls_w = Tensor::randn({head_dim, num_ids}, rng, 1.0f / std::sqrt(float(head_dim)), true);
    h.cls_b = Tensor::create({num_ids}, true);
    return h;
}

void head_params(const BranchHead& h, const std::string& p, std::vector<NamedParam>& out) {
    out.push_back({p + ".fc_w", h.fc_w, false});
    out.push_back({p + ".fc_b", h.fc_b, false});
    out.push_back({p + ".bn.scale", h.bn.scale, false});
    out.push_back({p + ".bn.shift", h.bn.shift, false});
    out.push_back({p + ".cls_w", h.cls_w, false});
    out.push_back({p + ".cls_b", h.cls_b, false});
}

}  // namespace

std::vector<int> toy_stage_extents(const BackboneConfig& cfg) {
    std::vector<int> extents;
    int e = cfg.image_size;
    int n = int(cfg.stage_widths.size());
    for (int i = 0; i < n; ++i) {
        int stride = (i == n - 1) ? cfg.last_stride : 2;
        e = (e + 2 - 3) / stride + 1;
        extents.push_back(e);
    }
    return extents;
}

Network::Network(const NetworkConfig& cfg) : cfg_(cfg) {
    const auto& bb = cfg.backbone;
    int nstages = int(bb.stage_widths.size());
    if (bb.split_point < 1 || bb.split_point >= nstages + 1)
        throw ShapeError("split_point must be in [1, #stages]");
    if (bb.split_point != nstages - 1)
        throw ShapeError("toy trunk expects the split before the final stage");
    if (bb.last_stride != 1 && bb.last_stride != 2) throw ShapeError("last_stride must be 1 or 2");
    int split_c = bb.stage_widths[std::size_t(bb.split_point) - 1];
    if (split_c % 8 != 0)
        throw ShapeError("stage width at the split point must be a multiple of 8, got " + std::to_string(split_c));
    if (cfg.num_identities < 1) throw ShapeError("network needs at least one identity class");

    Rng rng(cfg.init_seed);
    int cin = bb.input_channels;
    for (int i = 0; i < bb.split_point; ++i) {
        shared.push_back(make_stage(cin, bb.stage_widths[std::size_t(i)], 2, rng));
        cin = bb.stage_widths[std::size_t(i)];
    }
    int final_c = bb.stage_widths.back();
    stage4_g = make_stage(cin, final_c, bb.last_stride, rng);
    if (cfg.share_stage4) {
        stage4_s = stage4_g;
        stage4_c = stage4_g;
    } else {
        stage4_s = make_stage(cin, final_c, bb.last_stride, rng);
        stage4_c = make_stage(cin, final_c, bb.last_stride, rng);
    }

    auto extents = toy_stage_extents(bb);
    split_hw_ = extents[std::size_t(bb.split_point) - 1];
    final_hw_ = extents.back();
    embed_dim_ = final_c;

    if (cfg.enable_spatial) {
        s3.emplace(SamRpeState::make(split_c, split_hw_, split_hw_, rng, cfg.rpe_variant));
        s4.emplace(SamRpeState::make(final_c, final_hw_, final_hw_, rng, cfg.rpe_variant));
        s3->use_rpe = cfg.enable_rpe;
        s4->use_rpe = cfg.enable_rpe;
        head_s.emplace(make_head(embed_dim_, cfg.head_dim, cfg.num_identities, rng));
    }
    head_g = make_head(embed_dim_, cfg.head_dim, cfg.num_identities, rng);
    if (cfg.enable_channel) {
        c3.emplace(CamState::make());
        c4.emplace(CamState::make());
        head_c.emplace(make_head(embed_dim_, cfg.head_dim, cfg.num_identities, rng));
    }
}

int Network::num_branches() const { return 1 + (cfg_.enable_spatial ? 1 : 0) + (cfg_.enable_channel ? 1 : 0); }

int Network::descriptor_dim() const { return num_branches() * embed_dim_; }

TensorPtr Network::run_stage(ConvStage& st, const TensorPtr& x, Mode mode) {
    return relu(batch_norm(conv3x3(x, st.w, st.stride), st.bn, mode));
}

TensorPtr Network::run_shared(const TensorPtr& images, Mode mode) {
    if (images->ndim() != 4 || images->shape[1] != cfg_.backbone.input_channels ||
        images->shape[2] != cfg_.backbone.image_size || images->shape[3] != cfg_.backbone.image_size)
        throw ShapeError("network expects [B," + std::to_string(cfg_.backbone.input_channels) + "," +
                         std::to_string(cfg_.backbone.image_size) + "," + std::to_string(cfg_.backbone.image_size) +
                         "], got " + shape_str(images->shape));
    TensorPtr x = images;
    for (auto& st : shared) x = run_stage(st, x, mode);
    return x;
}

namespace {

TensorPtr run_head(BranchHead& h, const TensorPtr& emb, float slope, float dropout_p, Mode mode, Rng& rng) {
    auto z = dense(emb, h.fc_w, h.fc_b);
    z = batch_norm(z, h.bn, mode);
    z = leaky_relu(z, slope);
    z = dropout(z, dropout_p, mode, rng);
    return dense(z, h.cls_w, h.cls_b);
}

}  // namespace

TrainForward Network::forward_branches(const TensorPtr& images, Mode mode, Rng& rng) {
    auto trunk = run_shared(images, mode);

    TrainForward out;
    out.logits.assign(3, nullptr);
    out.embeddings.assign(3, nullptr);

    if (cfg_.enable_spatial) {
        auto t = sam_rpe_forward(trunk, *s3, mode);
        t = run_stage(stage4_s, t, mode);
        t = sam_rpe_forward(t, *s4, mode);
        out.embeddings[0] = global_average_pool(t);
        out.logits[0] = run_head(*head_s, out.embeddings[0], cfg_.lrelu_slope, cfg_.dropout_p, mode, rng);
    }
    {
        auto t = run_stage(stage4_g, trunk, mode);
        out.embeddings[1] = global_average_pool(t);
        out.logits[1] = run_head(head_g, out.embeddings[1], cfg_.lrelu_slope, cfg_.dropout_p, mode, rng);
    }
    if (cfg_.enable_channel) {
        auto t = cam_forward(trunk, *c3);
        t = run_stage(stage4_c, t, mode);
        t = cam_forward(t, *c4);
        out.embeddings[2] = global_average_pool(t);
        out.logits[2] = run_head(*head_c, out.embeddings[2], cfg_.lrelu_slope, cfg_.dropout_p, mode, rng);
    }
    return out;
}

TensorPtr Network::forward_embed(const TensorPtr& images) {
    Mode mode = Mode::Eval;
    auto trunk = run_shared(images, mode);
    std::vector<TensorPtr> parts;
    if (cfg_.enable_spatial) {
        auto t = sam_rpe_forward(trunk, *s3, mode);
        t = run_stage(stage4_s, t, mode);
        t = sam_rpe_forward(t, *s4, mode);
        parts.push_back(global_average_pool(t));
    }
    {
        auto t = run_stage(stage4_g, trunk, mode);
        parts.push_back(global_average_pool(t));
    }
    if (cfg_.enable_channel) {
        auto t = cam_forward(trunk, *c3);
        t = run_stage(stage4_c, t, mode);
        t = cam_forward(t, *c4);
        parts.push_back(global_average_pool(t));
    }
    return concat_last(parts);
}

std::vector<NamedParam> Network::named_params() const {
    std::vector<NamedParam> out;
    for (std::size_t i = 0; i < shared.size(); ++i) {
        std::string p = "backbone.stage" + std::to_string(i + 1);
        out.push_back({p + ".w", shared[i].w, true});
        out.push_back({p + ".bn.scale", shared[i].bn.scale, true});
        out.push_back({p + ".bn.shift", shared[i].bn.shift, true});
    }
    auto add_stage4 = [&](const char* name, const ConvStage& st) {
        std::string p = std::string("backbone.") + name;
        out.push_back({p + ".w", st.w, true});
        out.push_back({p + ".bn.scale", st.bn.scale, true});
        out.push_back({p + ".bn.shift", st.bn.shift, true});
    };
    add_stage4("stage4_g", stage4_g);
    if (!cfg_.share_stage4) {
        if (cfg_.enable_spatial) add_stage4("stage4_s", stage4_s);
        if (cfg_.enable_channel) add_stage4("stage4_c", stage4_c);
    }
    if (s3)
        for (auto& [n, t] : s3->named_params("attn.s3")) out.push_back({n, t, false});
    if (s4)
        for (auto& [n, t] : s4->named_params("attn.s4")) out.push_back({n, t, false});
    if (c3)
        for (auto& [n, t] : c3->named_params("attn.c3")) out.push_back({n, t, false});
    if (c4)
        for (auto& [n, t] : c4->named_params("attn.c4")) out.push_back({n, t, false});
    if (head_s) head_params(*head_s, "head.spatial", out);
    head_params(head_g, "head.global", out);
    if (head_c) head_params(*head_c, "head.channel", out);
    return out;
}

std::vector<std::pair<std::string, std::vector<float>*>> Network::named_buffers() {
    std::vector<std::pair<std::string, std::vector<float>*>> out;
    auto add_bn = [&](const std::string& p, BatchNormState& bn) {
        out.emplace_back(p + ".running_mean", &bn.running_mean);
        out.emplace_back(p + ".running_var", &bn.running_var);
    };
    for (std::size_t i = 0; i < shared.size(); ++i)
        add_bn("backbone.stage" + std::to_string(i + 1) + ".bn", shared[i].bn);
    add_bn("backbone.stage4_g.bn", stage4_g.bn);
    if (!cfg_.share_stage4) {
        if (cfg_.enable_spatial) add_bn("backbone.stage4_s.bn", stage4_s.bn);
        if (cfg_.enable_channel) add_bn("backbone.stage4_c.bn", stage4_c.bn);
    }
    auto add_sam = [&](const std::string& p, SamRpeState& s) {
        add_bn(p + ".bn_k", s.bn_k);
        add_bn(p + ".bn_q", s.bn_q);
        add_bn(p + ".bn_v", s.bn_v);
        if (s.use_rpe) {
            add_bn(p + ".bn_h", s.bn_h);
            add_bn(p + ".bn_w", s.bn_w);
        }
    };
    if (s3) add_sam("attn.s3", *s3);
    if (s4) add_sam("attn.s4", *s4);
    if (head_s) add_bn("head.spatial.bn", head_s->bn);
    add_bn("head.global.bn", head_g.bn);
    if (head_c) add_bn("head.channel.bn", head_c->bn);
    return out;
}

std::vector<float> Network::gammas() const {
    return {s3 ? s3->gamma->data[0] : 0.f, s4 ? s4->gamma->data[0] : 0.f, c3 ? c3->gamma->data[0] : 0.f,
            c4 ? c4->gamma->data[0] : 0.f};
}

void Network::tie_final_stages() {
    if (!cfg_.share_stage4) {
        stage4_s = clone_stage(stage4_g);
        stage4_c = clone_stage(stage4_g);
    }
}

}  // namespace mba
