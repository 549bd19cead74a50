#include "mba/config.hpp"

#include <fstream>
#include <functional>
#include <map>
#include <sstream>

namespace mba {

namespace {

std::vector<std::string> split_commas(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(item);
    return out;
}

int to_int(const std::string& key, const std::string& v) {
    try {
        std::size_t pos = 0;
        int r = std::stoi(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return r;
    } catch (const std::exception&) {
        throw UsageError("config: key '" + key + "' expects an integer, got '" + v + "'");
    }
}

float to_float(const std::string& key, const std::string& v) {
    try {
        std::size_t pos = 0;
        float r = std::stof(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return r;
    } catch (const std::exception&) {
        throw UsageError("config: key '" + key + "' expects a number, got '" + v + "'");
    }
}

bool to_bool(const std::string& key, const std::string& v) {
    if (v == "1" || v == "true" || v == "yes" || v == "on") return true;
    if (v == "0" || v == "false" || v == "no" || v == "off") return false;
    throw UsageError("config: key '" + key + "' expects a boolean, got '" + v + "'");
}

uint64_t to_u64(const std::string& key, const std::string& v) {
    try {
        std::size_t pos = 0;
        unsigned long long r = std::stoull(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return uint64_t(r);
    } catch (const std::exception&) {
        throw UsageError("config: key '" + key + "' expects an unsigned integer, got '" + v + "'");
    }
}

}  // namespace

void RunConfig::apply_toy_defaults() {
    toy = true;
    self_test_split = true;
    train.epochs = 30;
    train.warmup_epochs = 3;
    train.decays = {{18, 4e-4f}, {26, 2e-4f}};
    train.checkpoint_every = 0;
    network.backbone.stage_widths = {16, 32, 64, 64};
    network.head_dim = 128;
    aug.resize = 72;
    aug.crop = 64;
    repetitions = 1;
}

std::string dump_config(const RunConfig& cfg) {
    std::ostringstream os;
    auto join_ints = [](const std::vector<int>& v) {
        std::string s;
        for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
        return s;
    };
    os << "# training\n";
    os << "epochs=" << cfg.train.epochs << '\n';
    os << "batch_size=" << cfg.train.batch_size << '\n';
    os << "base_lr=" << cfg.train.base_lr << '\n';
    os << "warmup_start_lr=" << cfg.train.warmup_start_lr << '\n';
    os << "warmup_epochs=" << cfg.train.warmup_epochs << '\n';
    {
        std::string es, ls;
        for (std::size_t i = 0; i < cfg.train.decays.size(); ++i) {
            es += (i ? "," : "") + std::to_string(cfg.train.decays[i].first);
            std::ostringstream lv;
            lv << cfg.train.decays[i].second;
            ls += (i ? "," : "") + lv.str();
        }
        os << "decay_epochs=" << es << '\n';
        os << "decay_lrs=" << ls << '\n';
    }
    os << "weight_decay=" << cfg.train.weight_decay << '\n';
    os << "label_smoothing=" << cfg.train.label_smoothing << '\n';
    os << "smoothing_variant=" << (cfg.train.smoothing_variant == SmoothingVariant::UniformAll ? "uniform" : "others")
       << '\n';
    os << "backbone_lr_ratio=" << cfg.train.backbone_lr_ratio << '\n';
    os << "seed=" << cfg.train.seed << '\n';
    os << "checkpoint_every=" << cfg.train.checkpoint_every << '\n';
    os << "# network\n";
    os << "stage_widths=" << join_ints(cfg.network.backbone.stage_widths) << '\n';
    os << "last_stride=" << cfg.network.backbone.last_stride << '\n';
    os << "split_point=" << cfg.network.backbone.split_point << '\n';
    os << "head_dim=" << cfg.network.head_dim << '\n';
    os << "lrelu_slope=" << cfg.network.lrelu_slope << '\n';
    os << "dropout=" << cfg.network.dropout_p << '\n';
    os << "share_stage4=" << (cfg.network.share_stage4 ? 1 : 0) << '\n';
    os << "enable_spatial=" << (cfg.network.enable_spatial ? 1 : 0) << '\n';
    os << "enable_channel=" << (cfg.network.enable_channel ? 1 : 0) << '\n';
    os << "enable_rpe=" << (cfg.network.enable_rpe ? 1 : 0) << '\n';
    os << "rpe_variant=" << (cfg.network.rpe_variant == RpeVariant::Paper ? "paper" : "rowwise") << '\n';
    os << "num_identities=" << cfg.num_identities << '\n';
    os << "# augmentation\n";
    os << "resize=" << cfg.aug.resize << '\n';
    os << "crop=" << cfg.aug.crop << '\n';
    os << "flip_prob=" << cfg.aug.flip_prob << '\n';
    os << "jitter_brightness=" << cfg.aug.jitter_brightness << '\n';
    os << "jitter_contrast=" << cfg.aug.jitter_contrast << '\n';
    os << "jitter_saturation=" << cfg.aug.jitter_saturation << '\n';
    os << "norm_mean=" << cfg.aug.mean[0] << ',' << cfg.aug.mean[1] << ',' << cfg.aug.mean[2] << '\n';
    os << "norm_std=" << cfg.aug.stddev[0] << ',' << cfg.aug.stddev[1] << ',' << cfg.aug.stddev[2] << '\n';
    os << "# data and evaluation\n";
    os << "dataset_root=" << cfg.dataset_root << '\n';
    os << "layout=" << cfg.layout << '\n';
    os << "toy=" << (cfg.toy ? 1 : 0) << '\n';
    os << "toy_identities=" << cfg.toy_identities << '\n';
    os << "toy_images=" << cfg.toy_images << '\n';
    os << "toy_size=" << cfg.toy_size << '\n';
    os << "self_test_split=" << (cfg.self_test_split ? 1 : 0) << '\n';
    os << "distractor_root=" << cfg.distractor_root << '\n';
    os << "repetitions=" << cfg.repetitions << '\n';
    os << "cmc_k=" << cfg.cmc_k << '\n';
    os << "checkpoint=" << cfg.checkpoint << '\n';
    os << "foreign_root=" << cfg.foreign_root << '\n';
    os << "backbone_import=" << cfg.backbone_import << '\n';
    return os.str();
}

void apply_override(RunConfig& cfg, const std::string& key, const std::string& value) {
    using Setter = std::function<void(RunConfig&, const std::string&)>;
    static const std::map<std::string, Setter> setters = {
        {"epochs", [](RunConfig& c, const std::string& v) { c.train.epochs = to_int("epochs", v); }},
        {"batch_size", [](RunConfig& c, const std::string& v) { c.train.batch_size = to_int("batch_size", v); }},
        {"base_lr", [](RunConfig& c, const std::string& v) { c.train.base_lr = to_float("base_lr", v); }},
        {"warmup_start_lr",
         [](RunConfig& c, const std::string& v) { c.train.warmup_start_lr = to_float("warmup_start_lr", v); }},
        {"warmup_epochs",
         [](RunConfig& c, const std::string& v) { c.train.warmup_epochs = to_int("warmup_epochs", v); }},
        {"decay_epochs",
         [](RunConfig& c, const std::string& v) {
             auto parts = split_commas(v);
             std::vector<std::pair<int, float>> decays;
             for (std::size_t i = 0; i < parts.size(); ++i)
                 decays.emplace_back(to_int("decay_epochs", parts[i]),
                                     i < c.train.decays.size() ? c.train.decays[i].second : 1e-4f);
             c.train.decays = decays;
         }},
        {"decay_lrs",
         [](RunConfig& c, const std::string& v) {
             auto parts = split_commas(v);
             if (parts.size() != c.train.decays.size())
                 throw UsageError("config: decay_lrs needs " + std::to_string(c.train.decays.size()) +
                                  " comma-separated values (set decay_epochs first)");
             for (std::size_t i = 0; i < parts.size(); ++i) c.train.decays[i].second = to_float("decay_lrs", parts[i]);
         }},
        {"weight_decay",
         [](RunConfig& c, const std::string& v) { c.train.weight_decay = to_float("weight_decay", v); }},
        {"label_smoothing",
         [](RunConfig& c, const std::string& v) { c.train.label_smoothing = to_float("label_smoothing", v); }},
        {"smoothing_variant",
         [](RunConfig& c, const std::string& v) {
             if (v == "uniform")
                 c.train.smoothing_variant = SmoothingVariant::UniformAll;
             else if (v == "others")
                 c.train.smoothing_variant = SmoothingVariant::Others;
             else
                 throw UsageError("config: smoothing_variant must be 'uniform' or 'others'");
         }},
        {"backbone_lr_ratio",
         [](RunConfig& c, const std::string& v) { c.train.backbone_lr_ratio = to_float("backbone_lr_ratio", v); }},
        {"seed",
         [](RunConfig& c, const std::string& v) {
             c.train.seed = to_u64("seed", v);
             c.network.init_seed = mix64(c.train.seed, 0x1417ull);
         }},
        {"checkpoint_every",
         [](RunConfig& c, const std::string& v) { c.train.checkpoint_every = to_int("checkpoint_every", v); }},
        {"stage_widths",
         [](RunConfig& c, const std::string& v) {
             std::vector<int> widths;
             for (auto& p : split_commas(v)) widths.push_back(to_int("stage_widths", p));
             if (widths.size() < 2) throw UsageError("config: stage_widths needs at least 2 stages");
             c.network.backbone.stage_widths = widths;
             c.network.backbone.split_point = int(widths.size()) - 1;
         }},
        {"last_stride",
         [](RunConfig& c, const std::string& v) { c.network.backbone.last_stride = to_int("last_stride", v); }},
        {"split_point",
         [](RunConfig& c, const std::string& v) { c.network.backbone.split_point = to_int("split_point", v); }},
        {"head_dim", [](RunConfig& c, const std::string& v) { c.network.head_dim = to_int("head_dim", v); }},
        {"lrelu_slope",
         [](RunConfig& c, const std::string& v) { c.network.lrelu_slope = to_float("lrelu_slope", v); }},
        {"dropout", [](RunConfig& c, const std::string& v) { c.network.dropout_p = to_float("dropout", v); }},
        {"share_stage4",
         [](RunConfig& c, const std::string& v) { c.network.share_stage4 = to_bool("share_stage4", v); }},
        {"enable_spatial",
         [](RunConfig& c, const std::string& v) { c.network.enable_spatial = to_bool("enable_spatial", v); }},
        {"enable_channel",
         [](RunConfig& c, const std::string& v) { c.network.enable_channel = to_bool("enable_channel", v); }},
        {"enable_rpe", [](RunConfig& c, const std::string& v) { c.network.enable_rpe = to_bool("enable_rpe", v); }},
        {"rpe_variant",
         [](RunConfig& c, const std::string& v) {
             if (v == "paper")
                 c.network.rpe_variant = RpeVariant::Paper;
             else if (v == "rowwise")
                 c.network.rpe_variant = RpeVariant::Rowwise;
             else
                 throw UsageError("config: rpe_variant must be 'paper' or 'rowwise'");
         }},
        {"num_identities",
         [](RunConfig& c, const std::string& v) { c.num_identities = to_int("num_identities", v); }},
        {"resize", [](RunConfig& c, const std::string& v) { c.aug.resize = to_int("resize", v); }},
        {"crop", [](RunConfig& c, const std::string& v) { c.aug.crop = to_int("crop", v); }},
        {"flip_prob", [](RunConfig& c, const std::string& v) { c.aug.flip_prob = to_float("flip_prob", v); }},
        {"jitter_brightness",
         [](RunConfig& c, const std::string& v) { c.aug.jitter_brightness = to_float("jitter_brightness", v); }},
        {"jitter_contrast",
         [](RunConfig& c, const std::string& v) { c.aug.jitter_contrast = to_float("jitter_contrast", v); }},
        {"jitter_saturation",
         [](RunConfig& c, const std::string& v) { c.aug.jitter_saturation = to_float("jitter_saturation", v); }},
        {"norm_mean",
         [](RunConfig& c, const std::string& v) {
             auto parts = split_commas(v);
             if (parts.size() != 3) throw UsageError("config: norm_mean needs 3 comma-separated values");
             for (int i = 0; i < 3; ++i) c.aug.mean[std::size_t(i)] = to_float("norm_mean", parts[std::size_t(i)]);
         }},
        {"norm_std",
         [](RunConfig& c, const std::string& v) {
             auto parts = split_commas(v);
             if (parts.size() != 3) throw UsageError("config: norm_std needs 3 comma-separated values");
             for (int i = 0; i < 3; ++i) c.aug.stddev[std::size_t(i)] = to_float("norm_std", parts[std::size_t(i)]);
         }},
        {"dataset_root", [](RunConfig& c, const std::string& v) { c.dataset_root = v; }},
        {"layout",
         [](RunConfig& c, const std::string& v) {
             if (v != "folder" && v != "manifest") throw UsageError("config: layout must be 'folder' or 'manifest'");
             c.layout = v;
         }},
        {"toy",
         [](RunConfig& c, const std::string& v) {
             if (to_bool("toy", v)) c.apply_toy_defaults();
             else c.toy = false;
         }},
        {"toy_identities",
         [](RunConfig& c, const std::string& v) { c.toy_identities = to_int("toy_identities", v); }},
        {"toy_images", [](RunConfig& c, const std::string& v) { c.toy_images = to_int("toy_images", v); }},
        {"toy_size", [](RunConfig& c, const std::string& v) { c.toy_size = to_int("toy_size", v); }},
        {"self_test_split",
         [](RunConfig& c, const std::string& v) { c.self_test_split = to_bool("self_test_split", v); }},
        {"distractor_root", [](RunConfig& c, const std::string& v) { c.distractor_root = v; }},
        {"repetitions", [](RunConfig& c, const std::string& v) { c.repetitions = to_int("repetitions", v); }},
        {"cmc_k", [](RunConfig& c, const std::string& v) { c.cmc_k = to_int("cmc_k", v); }},
        {"checkpoint", [](RunConfig& c, const std::string& v) { c.checkpoint = v; }},
        {"foreign_root", [](RunConfig& c, const std::string& v) { c.foreign_root = v; }},
        {"backbone_import", [](RunConfig& c, const std::string& v) { c.backbone_import = v; }},
    };
    auto it = setters.find(key);
    if (it == setters.end()) throw UsageError("config: unknown key '" + key + "'");
    it->second(cfg, value);
}

RunConfig load_config(const std::string& path, const std::vector<std::string>& overrides) {
    RunConfig cfg;
    if (!path.empty()) {
        std::ifstream is(path);
        if (!is) throw DataError("cannot open config file '" + path + "'");
        std::string line;
        int lineno = 0;
        while (std::getline(is, line)) {
            ++lineno;
            if (line.empty() || line[0] == '#') continue;
            auto eq = line.find('=');
            if (eq == std::string::npos)
                throw UsageError("config file '" + path + "' line " + std::to_string(lineno) +
                                 ": expected key=value");
            apply_override(cfg, line.substr(0, eq), line.substr(eq + 1));
        }
    }
    for (const auto& ov : overrides) {
        auto eq = ov.find('=');
        if (eq == std::string::npos) throw UsageError("override '" + ov + "' is not of the form key=value");
        apply_override(cfg, ov.substr(0, eq), ov.substr(eq + 1));
    }
    return cfg;
}

}  // namespace mba
