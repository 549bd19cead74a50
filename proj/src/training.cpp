#include "mba/training.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "mba/checkpoint.hpp"

namespace mba {

void TrainConfig::validate() const {
    if (epochs < 0) throw DataError("train config: epochs must be >= 0");
    if (batch_size < 1) throw DataError("train config: batch_size must be >= 1");
    if (epochs > 0 && (warmup_epochs < 0 || warmup_epochs >= epochs))
        throw DataError("train config: warmup_epochs must lie in [0, epochs)");
    if (label_smoothing < 0.f || label_smoothing >= 1.f)
        throw DataError("train config: label_smoothing must lie in [0,1)");
    int prev = -1;
    for (auto& [e, lr] : decays) {
        if (e <= prev) throw DataError("train config: decay epochs must be ascending");
        if (lr <= 0.f) throw DataError("train config: decay learning rates must be positive");
        prev = e;
    }
    if (base_lr <= 0.f || warmup_start_lr <= 0.f) throw DataError("train config: learning rates must be positive");
    if (backbone_lr_ratio <= 0.f) throw DataError("train config: backbone_lr_ratio must be positive");
}

LearningRates lr_at(int epoch, const TrainConfig& cfg) {
    if (epoch < 0 || epoch >= cfg.epochs)
        throw DataError("lr_at: epoch " + std::to_string(epoch) + " outside [0," + std::to_string(cfg.epochs) + ")");
    float lr;
    if (epoch < cfg.warmup_epochs) {
        lr = cfg.warmup_start_lr +
             (cfg.base_lr - cfg.warmup_start_lr) * (float(epoch) / float(cfg.warmup_epochs));
    } else {
        lr = cfg.base_lr;
        for (auto& [e, decayed] : cfg.decays)
            if (epoch >= e) lr = decayed;
    }
    return {lr, lr * cfg.backbone_lr_ratio};
}

TensorPtr total_loss(const std::vector<TensorPtr>& branch_logits, const std::vector<int>& labels, float epsilon,
                     SmoothingVariant variant) {
    TensorPtr sum;
    for (const auto& logits : branch_logits) {
        if (!logits) continue;
        auto term = smoothed_cross_entropy(logits, labels, epsilon, variant);
        sum = sum ? add(sum, term) : term;
    }
    if (!sum) throw ShapeError("total_loss: no branch logits present");
    return sum;
}

Adam::Adam(std::vector<NamedParam> params, float beta1, float beta2, float eps)
    : params_(std::move(params)), beta1_(beta1), beta2_(beta2), eps_(eps) {
    for (auto& p : params_) {
        m_.emplace_back(p.tensor->numel(), 0.f);
        v_.emplace_back(p.tensor->numel(), 0.f);
    }
}

void Adam::step(const LearningRates& lr, float weight_decay) {
    ++t_;
    float bc1 = 1.f - std::pow(beta1_, float(t_));
    float bc2 = 1.f - std::pow(beta2_, float(t_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
        auto& p = *params_[i].tensor;
        if (p.grad.size() != p.data.size()) p.ensure_grad();
        float rate = params_[i].backbone_group ? lr.backbone : lr.new_layers;
        auto& m = m_[i];
        auto& v = v_[i];
        for (std::size_t j = 0; j < p.data.size(); ++j) {
            float g = p.grad[j] + weight_decay * p.data[j];
            m[j] = beta1_ * m[j] + (1.f - beta1_) * g;
            v[j] = beta2_ * v[j] + (1.f - beta2_) * g * g;
            float mhat = m[j] / bc1;
            float vhat = v[j] / bc2;
            p.data[j] -= rate * mhat / (std::sqrt(vhat) + eps_);
        }
    }
}

namespace {

TensorPtr load_batch(const IdentityDataset& ds, const std::vector<int>& records, std::size_t lo, std::size_t hi,
                     const AugmentationConfig& aug, uint64_t seed, int epoch, bool train) {
    std::vector<TensorPtr> images(hi - lo);
    parallel_for(hi - lo, 2, [&](std::size_t a, std::size_t b) {
        for (std::size_t i = a; i < b; ++i) {
            const auto& rec = ds.records[std::size_t(records[lo + i])];
            RawImage raw = load_image(ds, rec);
            if (train) {
                Rng rng(mix64(seed, uint64_t(epoch), uint64_t(records[lo + i])));
                images[i] = augment_train(raw, aug, rng);
            } else {
                images[i] = prepare_eval(raw, aug);
            }
        }
    });
    return stack_batch(images);
}

std::vector<int> batch_labels(const IdentityDataset& ds, const std::vector<int>& records, std::size_t lo,
                              std::size_t hi) {
    std::vector<int> labels;
    labels.reserve(hi - lo);
    for (std::size_t i = lo; i < hi; ++i) labels.push_back(ds.records[std::size_t(records[i])].label);
    return labels;
}

}  // namespace

float classification_accuracy(Network& net, const IdentityDataset& ds, const std::vector<int>& records,
                              const AugmentationConfig& aug, int batch_size) {
    if (records.empty()) return 0.f;
    std::size_t hits = 0;
    Rng unused(0);
    for (std::size_t lo = 0; lo < records.size(); lo += std::size_t(batch_size)) {
        std::size_t hi = std::min(records.size(), lo + std::size_t(batch_size));
        auto x = load_batch(ds, records, lo, hi, aug, 0, 0, false);
        auto fwd = net.forward_branches(x, Mode::Eval, unused);
        std::vector<float> combined;
        int nclass = 0;
        for (auto& logits : fwd.logits) {
            if (!logits) continue;
            nclass = logits->shape[1];
            if (combined.empty()) combined.assign(logits->data.size(), 0.f);
            for (std::size_t i = 0; i < logits->data.size(); ++i) combined[i] += logits->data[i];
        }
        auto labels = batch_labels(ds, records, lo, hi);
        for (std::size_t r = 0; r < labels.size(); ++r) {
            int best = 0;
            for (int j = 1; j < nclass; ++j)
                if (combined[r * std::size_t(nclass) + std::size_t(j)] >
                    combined[r * std::size_t(nclass) + std::size_t(best)])
                    best = j;
            if (best == labels[r]) ++hits;
        }
    }
    return float(hits) / float(records.size());
}

TrainResult train_loop(Network& net, const IdentityDataset& ds, const RetrievalSplit& split, const TrainConfig& cfg,
                       const AugmentationConfig& aug, const std::string& out_dir) {
    cfg.validate();
    if (int(split.train_identities.size()) != net.config().num_identities)
        throw DataError("train_loop: split has " + std::to_string(split.train_identities.size()) +
                        " train identities but the network classifier is " +
                        std::to_string(net.config().num_identities) + " wide");
    if (aug.crop != net.config().backbone.image_size)
        throw DataError("train_loop: augmentation crop " + std::to_string(aug.crop) +
                        " does not match the network input size " +
                        std::to_string(net.config().backbone.image_size));

    std::filesystem::create_directories(out_dir);
    TrainResult result;
    result.metrics_path = (std::filesystem::path(out_dir) / "metrics.csv").string();
    std::ofstream csv(result.metrics_path);
    if (!csv) throw DataError("cannot open metrics log '" + result.metrics_path + "'");
    csv << "epoch,train_loss,val_acc,lr_new,lr_backbone,gamma_s3,gamma_s4,gamma_c3,gamma_c4\n";

    Adam opt(net.named_params());
    float best_val = -1.f;

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        auto lr = lr_at(epoch, cfg);
        std::vector<int> order = split.train_images;
        Rng shuffle_rng(mix64(cfg.seed, 0xe90c4ull, uint64_t(epoch)));
        for (std::size_t i = order.size(); i > 1; --i)
            std::swap(order[i - 1], order[std::size_t(shuffle_rng.below(i))]);

        double loss_acc = 0.0;
        std::size_t batches = 0;
        for (std::size_t lo = 0; lo < order.size(); lo += std::size_t(cfg.batch_size)) {
            std::size_t hi = std::min(order.size(), lo + std::size_t(cfg.batch_size));
            try {
                auto x = load_batch(ds, order, lo, hi, aug, cfg.seed, epoch, true);
                auto labels = batch_labels(ds, order, lo, hi);
                Rng dropout_rng(mix64(cfg.seed, 0xd409ull, uint64_t(epoch) * 1000000ull + batches));
                auto fwd = net.forward_train(x, dropout_rng);
                auto loss = total_loss(fwd.logits, labels, cfg.label_smoothing, cfg.smoothing_variant);
                backward(loss);
                opt.step(lr, cfg.weight_decay);
                for (auto& p : opt.params()) p.tensor->zero_grad();
                loss_acc += double(loss->data[0]);
                ++batches;
            } catch (const NumericError& e) {
                std::ostringstream os;
                os << "training aborted at epoch " << epoch << " batch " << batches << ": " << e.what()
                   << " (lr_new=" << lr.new_layers << " lr_backbone=" << lr.backbone << " gammas=[";
                auto g = net.gammas();
                for (std::size_t i = 0; i < g.size(); ++i) os << (i ? "," : "") << g[i];
                os << "])";
                throw NumericError(os.str());
            }
        }

        EpochStats stats;
        stats.epoch = epoch;
        stats.train_loss = batches ? float(loss_acc / double(batches)) : 0.f;
        stats.val_acc = classification_accuracy(net, ds, split.validation_images, aug, cfg.batch_size);
        stats.lr = lr;
        stats.gammas = net.gammas();
        result.history.push_back(stats);
        csv << epoch << ',' << stats.train_loss << ',' << stats.val_acc << ',' << lr.new_layers << ','
            << lr.backbone << ',' << stats.gammas[0] << ',' << stats.gammas[1] << ',' << stats.gammas[2] << ','
            << stats.gammas[3] << '\n';
        csv.flush();

        if (stats.val_acc > best_val) {
            best_val = stats.val_acc;
            save_checkpoint(net, (std::filesystem::path(out_dir) / "checkpoint_best.bin").string());
        }
        if (cfg.checkpoint_every > 0 && (epoch + 1) % cfg.checkpoint_every == 0)
            save_checkpoint(net,
                            (std::filesystem::path(out_dir) / ("checkpoint_epoch" + std::to_string(epoch) + ".bin"))
                                .string());
    }

    result.final_loss = result.history.empty() ? 0.f : result.history.back().train_loss;
    result.checkpoint_path = (std::filesystem::path(out_dir) / "checkpoint_final.bin").string();
    save_checkpoint(net, result.checkpoint_path);
    result.final_train_acc = classification_accuracy(net, ds, split.train_images, aug, cfg.batch_size);
    return result;
}

}  // namespace mba
