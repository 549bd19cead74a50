#include "mba/commands.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "mba/checkpoint.hpp"

namespace fs = std::filesystem;

namespace mba {

IdentityDataset build_dataset(const RunConfig& cfg) {
    if (cfg.toy) {
        SyntheticSpec spec;
        spec.num_identities = cfg.toy_identities;
        spec.images_per_identity = cfg.toy_images;
        spec.size = cfg.toy_size;
        spec.seed = mix64(cfg.train.seed, 0x70ull);
        return make_synthetic_dataset(spec);
    }
    if (cfg.dataset_root.empty()) throw DataError("no dataset: pass --dataset-root or --toy");
    return scan_dataset(cfg.dataset_root,
                        cfg.layout == "manifest" ? DatasetLayout::Manifest : DatasetLayout::FolderPerIdentity);
}

namespace {

void echo_config(const RunConfig& cfg, const std::string& out_dir, const std::string& name = "config_resolved.txt") {
    fs::create_directories(out_dir);
    std::ofstream os(fs::path(out_dir) / name);
    os << dump_config(cfg);
}

Network build_network(RunConfig& cfg, int num_identities) {
    cfg.network.num_identities = num_identities;
    cfg.network.backbone.image_size = cfg.aug.crop;
    cfg.network.backbone.input_channels = 3;
    Network net(cfg.network);
    if (!cfg.backbone_import.empty()) import_backbone(net, cfg.backbone_import);
    return net;
}

int identities_in_checkpoint(const std::string& path) {
    for (const auto& e : read_checkpoint(path))
        if (e.name == "head.global.cls_b") return e.shape.at(0);
    throw DataError("checkpoint '" + path + "' lacks head.global.cls_b; cannot infer the identity count");
}

std::optional<IdentityDataset> load_distractors(const RunConfig& cfg) {
    if (cfg.distractor_root.empty()) return std::nullopt;
    return scan_dataset(cfg.distractor_root, DatasetLayout::FolderPerIdentity);
}

}  // namespace

TrainSummary cmd_train(RunConfig cfg, const std::string& out_dir) {
    auto ds = build_dataset(cfg);
    SplitOptions so;
    so.self_test = cfg.self_test_split;
    auto split = make_split(ds, cfg.train.seed, 0, so);
    for (const auto& w : split.warnings) std::fprintf(stderr, "warning: %s\n", w.c_str());

    int num_ids = int(split.train_identities.size());
    cfg.num_identities = num_ids;
    Network net = build_network(cfg, num_ids);

    echo_config(cfg, out_dir);
    TrainSummary summary;
    summary.num_identities = num_ids;
    summary.config_echo_path = (fs::path(out_dir) / "config_resolved.txt").string();
    summary.result = train_loop(net, ds, split, cfg.train, cfg.aug, out_dir);
    return summary;
}

EvalSummary cmd_eval(RunConfig cfg, const std::string& out_dir) {
    if (cfg.checkpoint.empty()) throw DataError("eval needs --checkpoint");
    int num_ids = cfg.num_identities > 0 ? cfg.num_identities : identities_in_checkpoint(cfg.checkpoint);
    cfg.num_identities = num_ids;
    Network net = build_network(cfg, num_ids);
    load_checkpoint(net, cfg.checkpoint);

    IdentityDataset eval_ds;
    if (!cfg.foreign_root.empty()) {
        eval_ds = scan_dataset(cfg.foreign_root, DatasetLayout::FolderPerIdentity);
    } else {
        eval_ds = build_dataset(cfg);
    }
    auto distractors = load_distractors(cfg);

    std::vector<EvalScores> reps;
    for (int rep = 0; rep < cfg.repetitions; ++rep) {
        SplitOptions so;
        so.self_test = cfg.self_test_split;
        if (distractors) so.distractors = &*distractors;
        auto split = make_split(eval_ds, cfg.train.seed, rep, so);
        reps.push_back(evaluate(net, eval_ds, distractors ? &*distractors : nullptr, split, cfg.aug,
                                cfg.train.batch_size, cfg.cmc_k));
    }
    echo_config(cfg, out_dir);
    EvalSummary summary;
    summary.report = aggregate(reps);
    summary.csv_path = (fs::path(out_dir) / "report.csv").string();
    summary.json_path = (fs::path(out_dir) / "report.json").string();
    write_report_csv(summary.report, summary.csv_path);
    write_report_json(summary.report, summary.json_path);
    return summary;
}

std::vector<AblationRow> cmd_ablate(RunConfig cfg, const std::string& out_dir) {
    struct Variant {
        const char* label;
        bool spatial, channel, rpe;
    };
    const Variant variants[] = {
        {"global", false, false, false},
        {"+spatial-attention", true, false, false},
        {"+channel-attention", true, true, false},
        {"+relative-position", true, true, true},
    };

    auto ds = build_dataset(cfg);
    SplitOptions so;
    so.self_test = cfg.self_test_split;
    auto train_split = make_split(ds, cfg.train.seed, 0, so);
    int num_ids = int(train_split.train_identities.size());

    std::vector<AblationRow> rows;
    for (const auto& v : variants) {
        RunConfig vc = cfg;
        vc.network.enable_spatial = v.spatial;
        vc.network.enable_channel = v.channel;
        vc.network.enable_rpe = v.rpe;
        vc.num_identities = num_ids;
        Network net = build_network(vc, num_ids);
        std::string run_dir = (fs::path(out_dir) / v.label).string();
        train_loop(net, ds, train_split, vc.train, vc.aug, run_dir);

        std::vector<EvalScores> reps;
        for (int rep = 0; rep < cfg.repetitions; ++rep) {
            auto split = make_split(ds, cfg.train.seed, rep, so);
            reps.push_back(evaluate(net, ds, nullptr, split, vc.aug, vc.train.batch_size, vc.cmc_k));
        }
        auto report = aggregate(reps);
        rows.push_back({v.label, report.rank1_mean, report.map_mean});
    }

    echo_config(cfg, out_dir);
    std::ofstream os(fs::path(out_dir) / "ablation.csv");
    os << "configuration,rank1,mAP\n";
    for (const auto& r : rows) os << r.label << ',' << r.rank1 << ',' << r.map << '\n';
    return rows;
}

void cmd_export_split(RunConfig cfg, int repetition, const std::string& out_path) {
    auto ds = build_dataset(cfg);
    SplitOptions so;
    so.self_test = cfg.self_test_split;
    auto distractors = load_distractors(cfg);
    if (distractors) so.distractors = &*distractors;
    auto split = make_split(ds, cfg.train.seed, repetition, so);
    export_split(ds, split, out_path);
}

}  // namespace mba
