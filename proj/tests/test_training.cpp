#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "mba/training.hpp"
#include "test_support.hpp"

using namespace mba;

namespace {

// direct-formula cross entropy against the smoothed target, long-double path
double ce_oracle(const std::vector<float>& logits, int batch, int nclass, const std::vector<int>& labels,
                 double eps, bool uniform_all) {
    long double total = 0;
    for (int b = 0; b < batch; ++b) {
        long double mx = logits[std::size_t(b) * nclass];
        for (int j = 1; j < nclass; ++j) mx = std::max(mx, (long double)(logits[std::size_t(b) * nclass + j]));
        long double acc = 0;
        for (int j = 0; j < nclass; ++j) acc += expl((long double)(logits[std::size_t(b) * nclass + j]) - mx);
        long double lse = mx + logl(acc);
        for (int j = 0; j < nclass; ++j) {
            long double t;
            if (uniform_all)
                t = (j == labels[std::size_t(b)] ? 1.0L - eps : 0.0L) + (long double)(eps) / nclass;
            else
                t = j == labels[std::size_t(b)] ? 1.0L - eps : (long double)(eps) / (nclass - 1);
            total -= t * ((long double)(logits[std::size_t(b) * nclass + j]) - lse);
        }
    }
    return double(total / batch);
}

NetworkConfig tiny_net_config(int ids, float dropout = 0.5f) {
    NetworkConfig cfg;
    cfg.backbone.stage_widths = {8, 8, 16, 16};
    cfg.backbone.image_size = 16;
    cfg.num_identities = ids;
    cfg.head_dim = 16;
    cfg.dropout_p = dropout;
    cfg.init_seed = 99;
    return cfg;
}

}  // namespace

TEST_CASE("learning-rate schedule reproduces the recipe checkpoints exactly") {
    TrainConfig cfg;
    CHECK(lr_at(0, cfg).new_layers == 8e-6f);
    CHECK(lr_at(0, cfg).backbone == 8e-6f * 0.1f);
    CHECK(lr_at(9, cfg).new_layers == doctest::Approx(8e-6 + (8e-4 - 8e-6) * 0.9).epsilon(1e-9));
    CHECK(lr_at(10, cfg).new_layers == 8e-4f);
    CHECK(lr_at(39, cfg).new_layers == 8e-4f);
    CHECK(lr_at(40, cfg).new_layers == 4e-4f);
    CHECK(lr_at(59, cfg).new_layers == 4e-4f);
    CHECK(lr_at(60, cfg).new_layers == 2e-4f);
    CHECK(lr_at(69, cfg).new_layers == 2e-4f);
    for (int e = 0; e < cfg.epochs; ++e) {
        auto lr = lr_at(e, cfg);
        CHECK(lr.backbone == lr.new_layers * 0.1f);
    }
    CHECK_THROWS_AS(lr_at(-1, cfg), DataError);
    CHECK_THROWS_AS(lr_at(70, cfg), DataError);
}

TEST_CASE("train config validation") {
    TrainConfig cfg;
    CHECK_NOTHROW(cfg.validate());
    cfg.warmup_epochs = 80;
    CHECK_THROWS_AS(cfg.validate(), DataError);
    cfg = TrainConfig{};
    cfg.decays = {{60, 4e-4f}, {40, 2e-4f}};
    CHECK_THROWS_AS(cfg.validate(), DataError);
    cfg = TrainConfig{};
    cfg.label_smoothing = 1.f;
    CHECK_THROWS_AS(cfg.validate(), DataError);
}

TEST_CASE("smoothed cross entropy: limits, oracle, symmetry point") {
    // eps=0 with huge aligned logits drives the loss to zero
    auto aligned = Tensor::from({1, 3}, {50.f, 0.f, 0.f});
    auto l0 = smoothed_cross_entropy(aligned, {0}, 0.f);
    CHECK(l0->data[0] == doctest::Approx(0.f).epsilon(1e-6));

    // eps=0 equals plain cross entropy
    Rng rng(3);
    auto logits = Tensor::randn({4, 6}, rng, 2.f);
    std::vector<int> labels = {0, 5, 2, 2};
    auto ce = smoothed_cross_entropy(logits, labels, 0.f);
    CHECK(double(ce->data[0]) == doctest::Approx(ce_oracle(logits->data, 4, 6, labels, 0.0, true)).epsilon(1e-6));

    // uniform logits make the smoothing irrelevant: loss = log 2
    auto uniform = Tensor::from({1, 2}, {0.f, 0.f});
    auto lu = smoothed_cross_entropy(uniform, {0}, 0.1f);
    CHECK(double(lu->data[0]) == doctest::Approx(std::log(2.0)).epsilon(1e-7));

    // both variants against the oracle
    auto lv1 = smoothed_cross_entropy(logits, labels, 0.1f, SmoothingVariant::UniformAll);
    CHECK(double(lv1->data[0]) == doctest::Approx(ce_oracle(logits->data, 4, 6, labels, 0.1, true)).epsilon(1e-6));
    auto lv2 = smoothed_cross_entropy(logits, labels, 0.1f, SmoothingVariant::Others);
    CHECK(double(lv2->data[0]) == doctest::Approx(ce_oracle(logits->data, 4, 6, labels, 0.1, false)).epsilon(1e-6));

    CHECK_THROWS_AS(smoothed_cross_entropy(logits, {0, 1, 2, 6}, 0.1f), DataError);
}

TEST_CASE("smoothed cross entropy is bounded below by the target entropy") {
    Rng rng(17);
    int nclass = 5;
    double eps = 0.1;
    double entropy = 0;
    for (int j = 0; j < nclass; ++j) {
        double t = (j == 0 ? 1.0 - eps : 0.0) + eps / nclass;
        entropy -= t * std::log(t);
    }
    for (int trial = 0; trial < 30; ++trial) {
        auto logits = Tensor::randn({1, nclass}, rng, 3.f);
        auto loss = smoothed_cross_entropy(logits, {0}, float(eps));
        CHECK(double(loss->data[0]) >= entropy - 1e-6);
    }
    // equality iff the prediction equals the smoothed target
    auto exact = Tensor::create({1, nclass});
    for (int j = 0; j < nclass; ++j) {
        double t = (j == 0 ? 1.0 - eps : 0.0) + eps / nclass;
        exact->data[std::size_t(j)] = float(std::log(t));
    }
    auto loss = smoothed_cross_entropy(exact, {0}, float(eps));
    CHECK(double(loss->data[0]) == doctest::Approx(entropy).epsilon(1e-6));
}

TEST_CASE("total_loss sums branches and is symmetric under branch permutation") {
    Rng rng(23);
    auto a = Tensor::randn({3, 4}, rng, 1.f);
    auto b = Tensor::randn({3, 4}, rng, 1.f);
    auto c = Tensor::randn({3, 4}, rng, 1.f);
    std::vector<int> labels = {1, 0, 3};

    auto same = total_loss({a, a, a}, labels, 0.1f);
    auto single = smoothed_cross_entropy(a, labels, 0.1f);
    CHECK(double(same->data[0]) == doctest::Approx(3.0 * double(single->data[0])).epsilon(1e-6));

    auto perm1 = total_loss({a, b, c}, labels, 0.1f);
    auto perm2 = total_loss({c, a, b}, labels, 0.1f);
    CHECK(double(perm1->data[0]) == doctest::Approx(double(perm2->data[0])).epsilon(1e-7));

    // one branch perfect at eps=0, the others exactly uniform
    int nclass = 4;
    auto perfect = Tensor::create({2, nclass});
    for (int r = 0; r < 2; ++r) perfect->data[std::size_t(r) * nclass + std::size_t(labels[std::size_t(r)])] = 60.f;
    auto uniform = Tensor::create({2, nclass});
    auto tl = total_loss({perfect, uniform, uniform}, {1, 0}, 0.f);
    CHECK(double(tl->data[0]) == doctest::Approx(2.0 * std::log(double(nclass))).epsilon(1e-5));

    // random case against three oracle evaluations
    auto tl2 = total_loss({a, b, c}, labels, 0.1f);
    double expect = ce_oracle(a->data, 3, 4, labels, 0.1, true) + ce_oracle(b->data, 3, 4, labels, 0.1, true) +
                    ce_oracle(c->data, 3, 4, labels, 0.1, true);
    CHECK(double(tl2->data[0]) == doctest::Approx(expect).epsilon(1e-6));
}

TEST_CASE("adam with zero learning rate leaves parameters unchanged despite decay") {
    Rng rng(29);
    auto p = Tensor::randn({4, 4}, rng, 1.f, true);
    auto before = p->data;
    Adam opt({{"p", p, false}});
    p->ensure_grad();
    for (auto& g : p->grad) g = 0.5f;
    opt.step({0.f, 0.f}, 0.7f);
    CHECK(p->data == before);
}

TEST_CASE("adam minimizes a quadratic") {
    auto p = Tensor::from({3}, {2.f, -3.f, 1.5f}, true);
    Adam opt({{"p", p, false}});
    for (int step = 0; step < 400; ++step) {
        p->zero_grad();
        p->detach();
        auto half = Tensor::full({3}, 0.5f);
        auto loss = sum_all(mul(mul(p, p), half));
        backward(loss);
        opt.step({0.05f, 0.05f}, 0.f);
    }
    for (float v : p->data) CHECK(std::abs(v) < 1e-2f);
}

TEST_CASE("repeated steps on one batch decrease the loss monotonically at first") {
    auto cfg = tiny_net_config(4, /*dropout=*/0.f);
    Network net(cfg);
    Rng rng(31);
    auto x = Tensor::randn({4, 3, 16, 16}, rng, 1.f);
    std::vector<int> labels = {0, 1, 2, 3};
    Adam opt(net.named_params());
    Rng drop(1);
    std::vector<float> losses;
    for (int step = 0; step < 11; ++step) {
        auto fwd = net.forward_train(x, drop);
        auto loss = total_loss(fwd.logits, labels, 0.f);
        losses.push_back(loss->data[0]);
        backward(loss);
        opt.step({3e-3f, 3e-4f}, 0.f);
        for (auto& p : opt.params()) p.tensor->zero_grad();
    }
    for (int i = 0; i + 1 < 11; ++i) CHECK(losses[std::size_t(i + 1)] < losses[std::size_t(i)]);
}

TEST_CASE("short training run is deterministic and improves the loss") {
    SyntheticSpec spec;
    spec.num_identities = 4;
    spec.images_per_identity = 4;
    spec.size = 20;
    auto ds = make_synthetic_dataset(spec);
    SplitOptions opt;
    opt.self_test = true;
    auto split = make_split(ds, 7, 0, opt);

    AugmentationConfig aug;
    aug.resize = 18;
    aug.crop = 16;

    TrainConfig tcfg;
    tcfg.epochs = 3;
    tcfg.batch_size = 6;
    tcfg.warmup_epochs = 1;
    tcfg.decays = {};
    tcfg.seed = 5;

    auto out1 = std::filesystem::temp_directory_path() / "mba_train_run1";
    auto out2 = std::filesystem::temp_directory_path() / "mba_train_run2";
    std::filesystem::remove_all(out1);
    std::filesystem::remove_all(out2);

    Network net1(tiny_net_config(4));
    auto res1 = train_loop(net1, ds, split, tcfg, aug, out1.string());
    Network net2(tiny_net_config(4));
    auto res2 = train_loop(net2, ds, split, tcfg, aug, out2.string());

    CHECK(res1.final_loss == res2.final_loss);
    CHECK(res1.history.size() == 3);
    CHECK(res1.history.back().train_loss < res1.history.front().train_loss);
    CHECK(std::filesystem::exists(res1.checkpoint_path));
    CHECK(std::filesystem::exists(res1.metrics_path));

    // CSV header contract
    std::ifstream csv(res1.metrics_path);
    std::string header;
    std::getline(csv, header);
    CHECK(header == "epoch,train_loss,val_acc,lr_new,lr_backbone,gamma_s3,gamma_s4,gamma_c3,gamma_c4");
    int rows = 0;
    std::string line;
    while (std::getline(csv, line))
        if (!line.empty()) ++rows;
    CHECK(rows == 3);

    std::filesystem::remove_all(out1);
    std::filesystem::remove_all(out2);
}

TEST_CASE("train_loop rejects a mismatched classifier width") {
    SyntheticSpec spec;
    spec.num_identities = 6;
    spec.images_per_identity = 2;
    spec.size = 20;
    auto ds = make_synthetic_dataset(spec);
    auto split = make_split(ds, 7, 0);  // 3 train identities
    AugmentationConfig aug;
    aug.resize = 18;
    aug.crop = 16;
    TrainConfig tcfg;
    tcfg.epochs = 1;
    tcfg.warmup_epochs = 0;
    Network net(tiny_net_config(5));  // classifier width 5 != 3
    auto out = std::filesystem::temp_directory_path() / "mba_train_bad";
    CHECK_THROWS_AS(train_loop(net, ds, split, tcfg, aug, out.string()), DataError);
    std::filesystem::remove_all(out);
}
