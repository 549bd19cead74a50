#include <CLI11.hpp>

#include <cstdio>
#include <exception>
#include <string>
#include <vector>

#include "mba/commands.hpp"

// Exit codes: 0 ok, 1 usage, 2 data error, 3 numeric failure.

namespace {

struct CommonArgs {
    std::string config_path;
    std::vector<std::string> overrides;
    std::string out_dir = "out";
    std::string dataset_root;
    bool toy = false;
    long long seed = -1;
    std::string checkpoint;
    std::string foreign_split;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
    cmd->add_option("--config", args.config_path, "config file of key=value lines");
    cmd->add_option("--set", args.overrides, "override a config key (repeatable)")->type_name("key=value");
    cmd->add_option("--out", args.out_dir, "output directory");
    cmd->add_option("--dataset-root", args.dataset_root, "dataset root (folder layout) or manifest path");
    cmd->add_flag("--toy", args.toy, "use the built-in synthetic toy dataset and its defaults");
    cmd->add_option("--seed", args.seed, "RNG seed (overrides the config)");
    cmd->add_option("--checkpoint", args.checkpoint, "checkpoint to evaluate");
    cmd->add_option("--foreign-split", args.foreign_split, "evaluate on this dataset root instead (cross-domain)");
}

mba::RunConfig resolve(const CommonArgs& args) {
    std::vector<std::string> overrides;
    if (args.toy) overrides.push_back("toy=1");
    for (const auto& ov : args.overrides) overrides.push_back(ov);
    if (!args.dataset_root.empty()) overrides.push_back("dataset_root=" + args.dataset_root);
    if (args.seed >= 0) overrides.push_back("seed=" + std::to_string(args.seed));
    if (!args.checkpoint.empty()) overrides.push_back("checkpoint=" + args.checkpoint);
    if (!args.foreign_split.empty()) overrides.push_back("foreign_root=" + args.foreign_split);
    return mba::load_config(args.config_path, overrides);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"multi-branch attention network: training, retrieval evaluation, ablation"};
    app.require_subcommand(1);

    CommonArgs train_args, eval_args, ablate_args, export_args;
    std::string corrupt;
    int export_repetition = 0;
    std::string export_path = "split.tsv";

    auto* train_cmd = app.add_subcommand("train", "train a model and write checkpoints plus a metrics CSV");
    add_common(train_cmd, train_args);
    auto* eval_cmd = app.add_subcommand("eval", "rank queries against the gallery over repeated splits");
    add_common(eval_cmd, eval_args);
    auto* ablate_cmd = app.add_subcommand("ablate", "train and score the four cumulative attention configurations");
    add_common(ablate_cmd, ablate_args);
    auto* selfcheck_cmd = app.add_subcommand("selfcheck", "run the built-in verification categories");
    selfcheck_cmd->add_option("--corrupt", corrupt, "fault-injection hook (testing)")->group("");
    auto* export_cmd = app.add_subcommand("export-split", "write the image-to-role assignment of one split");
    add_common(export_cmd, export_args);
    export_cmd->add_option("--repetition", export_repetition, "repetition index to export");
    export_cmd->add_option("--split-out", export_path, "output file");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        if (train_cmd->parsed()) {
            auto summary = mba::cmd_train(resolve(train_args), train_args.out_dir);
            std::printf("trained %d identities: final loss %.6f, train accuracy %.4f\n", summary.num_identities,
                        summary.result.final_loss, summary.result.final_train_acc);
            std::printf("checkpoint: %s\nmetrics:    %s\n", summary.result.checkpoint_path.c_str(),
                        summary.result.metrics_path.c_str());
        } else if (eval_cmd->parsed()) {
            auto summary = mba::cmd_eval(resolve(eval_args), eval_args.out_dir);
            for (const auto& r : summary.report.repetitions)
                std::printf("repetition %d: rank1 %.4f mAP %.4f\n", r.repetition, r.rank1, r.map);
            std::printf("mean: rank1 %.4f (+/- %.4f) mAP %.4f (+/- %.4f)\n", summary.report.rank1_mean,
                        summary.report.rank1_std, summary.report.map_mean, summary.report.map_std);
            std::printf("report: %s\n", summary.csv_path.c_str());
        } else if (ablate_cmd->parsed()) {
            auto rows = mba::cmd_ablate(resolve(ablate_args), ablate_args.out_dir);
            std::printf("%-24s %8s %8s\n", "configuration", "rank1", "mAP");
            for (const auto& r : rows) std::printf("%-24s %8.4f %8.4f\n", r.label.c_str(), r.rank1, r.map);
        } else if (selfcheck_cmd->parsed()) {
            int failures = mba::run_selfcheck(corrupt);
            return failures == 0 ? 0 : 3;
        } else if (export_cmd->parsed()) {
            mba::cmd_export_split(resolve(export_args), export_repetition, export_path);
            std::printf("split written to %s\n", export_path.c_str());
        }
    } catch (const mba::UsageError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    } catch (const mba::NumericError& e) {
        std::fprintf(stderr, "numeric failure: %s\n", e.what());
        return 3;
    } catch (const mba::DataError& e) {
        std::fprintf(stderr, "data error: %s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    }
    return 0;
}
