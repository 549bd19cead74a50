#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "mba/checkpoint.hpp"
#include "mba/network.hpp"
#include "mba/ops.hpp"

using namespace mba;

namespace {

NetworkConfig tiny_config(int num_ids = 5) {
    NetworkConfig cfg;
    cfg.backbone.stage_widths = {8, 8, 16, 16};
    cfg.backbone.image_size = 16;
    cfg.backbone.input_channels = 3;
    cfg.backbone.last_stride = 1;
    cfg.backbone.split_point = 3;
    cfg.num_identities = num_ids;
    cfg.head_dim = 12;
    cfg.init_seed = 7;
    return cfg;
}

TensorPtr random_images(Rng& rng, int batch, const NetworkConfig& cfg) {
    return Tensor::randn({batch, cfg.backbone.input_channels, cfg.backbone.image_size, cfg.backbone.image_size},
                         rng, 1.0f);
}

std::filesystem::path temp_file(const char* name) {
    return std::filesystem::temp_directory_path() / name;
}

}  // namespace

TEST_CASE("stage extents honor last_stride") {
    BackboneConfig bb;
    bb.stage_widths = {8, 8, 16, 16};
    bb.image_size = 64;
    bb.last_stride = 1;
    auto e1 = toy_stage_extents(bb);
    CHECK(e1 == std::vector<int>{32, 16, 8, 8});
    bb.last_stride = 2;
    auto e2 = toy_stage_extents(bb);
    CHECK(e2 == std::vector<int>{32, 16, 8, 4});
    CHECK(e1.back() == 2 * e2.back());
}

TEST_CASE("forward_train shape contract: logits [B,ids] x3, embeddings [B,Cemb] x3") {
    auto cfg = tiny_config(5);
    Network net(cfg);
    Rng rng(1);
    auto x = random_images(rng, 2, cfg);
    Rng drop_rng(2);
    auto out = net.forward_train(x, drop_rng);
    for (int i = 0; i < 3; ++i) {
        REQUIRE(out.logits[i] != nullptr);
        REQUIRE(out.embeddings[i] != nullptr);
        CHECK(out.logits[i]->shape == std::vector<int>{2, 5});
        CHECK(out.embeddings[i]->shape == std::vector<int>{2, 16});
    }
}

TEST_CASE("identity at init: tied final stages give identical branch embeddings") {
    auto cfg = tiny_config();
    Network net(cfg);
    net.tie_final_stages();
    Rng rng(3);
    auto x = random_images(rng, 2, cfg);
    auto desc = net.forward_embed(x);
    int d = net.embedding_dim();
    REQUIRE(desc->shape == std::vector<int>{2, 3 * d});
    for (int b = 0; b < 2; ++b)
        for (int j = 0; j < d; ++j) {
            float s = desc->data[std::size_t(b) * 3 * d + j];
            float g = desc->data[std::size_t(b) * 3 * d + d + j];
            float c = desc->data[std::size_t(b) * 3 * d + 2 * d + j];
            CHECK(std::abs(s - g) < 1e-6f);
            CHECK(std::abs(c - g) < 1e-6f);
        }
}

TEST_CASE("eval passes are bit-identical; train forward reproducible under a fixed seed") {
    auto cfg = tiny_config();
    Network net(cfg);
    Rng rng(5);
    auto x = random_images(rng, 2, cfg);
    auto d1 = net.forward_embed(x);
    auto d2 = net.forward_embed(x);
    CHECK(d1->data == d2->data);

    Network net2(cfg);  // same init seed -> same parameters
    Rng da(11), db(11);
    auto ta = net.forward_train(x, da);
    auto tb = net2.forward_train(x, db);
    CHECK(ta.logits[1]->data == tb.logits[1]->data);
}

TEST_CASE("descriptor width follows enabled branches") {
    auto cfg = tiny_config();
    cfg.enable_channel = false;
    Network net(cfg);
    CHECK(net.num_branches() == 2);
    CHECK(net.descriptor_dim() == 2 * net.embedding_dim());
    Rng rng(6);
    auto x = random_images(rng, 1, cfg);
    CHECK(net.forward_embed(x)->shape == std::vector<int>{1, 32});

    cfg.enable_spatial = false;
    Network global_only(cfg);
    CHECK(global_only.num_branches() == 1);
    CHECK(global_only.forward_embed(x)->shape == std::vector<int>{1, 16});
}

TEST_CASE("loss gradients reach the classifier weights of all three heads") {
    auto cfg = tiny_config(4);
    Network net(cfg);
    Rng rng(7);
    auto x = random_images(rng, 2, cfg);
    Rng drop_rng(8);
    auto out = net.forward_train(x, drop_rng);
    std::vector<int> labels = {1, 3};
    auto loss = add(add(smoothed_cross_entropy(out.logits[0], labels, 0.1f),
                        smoothed_cross_entropy(out.logits[1], labels, 0.1f)),
                    smoothed_cross_entropy(out.logits[2], labels, 0.1f));
    backward(loss);
    for (auto* head : {&*net.head_s, &net.head_g, &*net.head_c}) {
        REQUIRE(head->cls_w->grad.size() == head->cls_w->data.size());
        float norm = 0;
        for (float g : head->cls_w->grad) norm += g * g;
        CHECK(norm > 0.f);
    }
}

TEST_CASE("checkpoint round-trip restores every tensor bit-exactly") {
    auto cfg = tiny_config();
    Network net(cfg);
    auto path = temp_file("mba_test_ckpt.bin");
    // make running stats non-trivial first
    Rng rng(9);
    auto x = random_images(rng, 2, cfg);
    Rng drop_rng(10);
    net.forward_train(x, drop_rng);
    save_checkpoint(net, path.string());

    Network other(cfg);
    // perturb, then load
    for (auto& p : other.named_params())
        for (auto& v : p.tensor->data) v += 0.5f;
    load_checkpoint(other, path.string());
    auto a = net.named_params();
    auto b = other.named_params();
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i].tensor->data == b[i].tensor->data);
    auto ba = net.named_buffers();
    auto bb = other.named_buffers();
    for (std::size_t i = 0; i < ba.size(); ++i) CHECK(*ba[i].second == *bb[i].second);
    std::filesystem::remove(path);
}

TEST_CASE("truncated checkpoint is rejected without touching the network") {
    auto cfg = tiny_config();
    Network net(cfg);
    auto path = temp_file("mba_test_ckpt_trunc.bin");
    save_checkpoint(net, path.string());
    auto size = std::filesystem::file_size(path);
    std::filesystem::resize_file(path, size / 2);

    Network victim(cfg);
    auto before = victim.named_params();
    std::vector<std::vector<float>> snapshot;
    for (auto& p : before) snapshot.push_back(p.tensor->data);
    CHECK_THROWS_AS(load_checkpoint(victim, path.string()), DataError);
    auto after = victim.named_params();
    for (std::size_t i = 0; i < after.size(); ++i) CHECK(after[i].tensor->data == snapshot[i]);
    std::filesystem::remove(path);
}

TEST_CASE("checkpoint with a renamed tensor names the missing one") {
    auto cfg = tiny_config();
    Network net(cfg);
    auto entries_path = temp_file("mba_test_ckpt_renamed.bin");
    save_checkpoint(net, entries_path.string());
    auto entries = read_checkpoint(entries_path.string());
    entries[0].name = "definitely.not.a.network.tensor";
    write_checkpoint(entries, entries_path.string());
    try {
        load_checkpoint(net, entries_path.string());
        FAIL("expected DataError");
    } catch (const DataError& e) {
        std::string msg = e.what();
        CHECK(msg.find(net.named_params()[0].name) != std::string::npos);
    }
    std::filesystem::remove(entries_path);
}

TEST_CASE("bad header is rejected") {
    auto path = temp_file("mba_test_ckpt_bad.bin");
    std::ofstream(path) << "this is not a checkpoint";
    Network net(tiny_config());
    CHECK_THROWS_AS(load_checkpoint(net, path.string()), DataError);
    std::filesystem::remove(path);
}

TEST_CASE("backbone import accepts a matching trunk and rejects a missing one") {
    auto cfg = tiny_config();
    Network donor(cfg);
    auto path = temp_file("mba_test_backbone.bin");
    save_checkpoint(donor, path.string());

    auto cfg2 = cfg;
    cfg2.init_seed = 99;
    Network target(cfg2);
    import_backbone(target, path.string());
    CHECK(target.shared[0].w->data == donor.shared[0].w->data);

    std::vector<CheckpointEntry> none = {{"unrelated", {2}, {1.f, 2.f}}};
    write_checkpoint(none, path.string());
    CHECK_THROWS_AS(import_backbone(target, path.string()), DataError);
    std::filesystem::remove(path);
}
