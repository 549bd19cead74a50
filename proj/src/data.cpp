#include "mba/data.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

namespace fs = std::filesystem;

namespace mba {

namespace {

bool has_image_extension(const fs::path& p) {
    std::string ext = p.extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return char(std::tolower(c)); });
    return ext == ".jpg" || ext == ".jpeg" || ext == ".png";
}

IdentityDataset scan_folders(const std::string& root) {
    if (!fs::is_directory(root)) throw DataError("dataset root '" + root + "' is not a directory");
    std::vector<std::string> identities;
    for (const auto& e : fs::directory_iterator(root))
        if (e.is_directory()) identities.push_back(e.path().filename().string());
    std::sort(identities.begin(), identities.end());
    if (identities.empty()) throw DataError("dataset root '" + root + "' contains no identity folders");

    IdentityDataset ds;
    ds.root = root;
    ds.identity_names = identities;
    std::vector<std::string> empty_folders;
    for (std::size_t label = 0; label < identities.size(); ++label) {
        std::vector<std::string> files;
        for (const auto& e : fs::directory_iterator(fs::path(root) / identities[label]))
            if (e.is_regular_file() && has_image_extension(e.path())) files.push_back(e.path().string());
        std::sort(files.begin(), files.end());
        if (files.empty()) {
            empty_folders.push_back((fs::path(root) / identities[label]).string());
            continue;
        }
        for (auto& f : files) ds.records.push_back({f, int(label), identities[label], -1, -1});
    }
    if (!empty_folders.empty()) {
        std::ostringstream os;
        os << "empty identity folders:";
        for (const auto& f : empty_folders) os << ' ' << f;
        throw DataError(os.str());
    }
    return ds;
}

IdentityDataset scan_manifest(const std::string& manifest) {
    std::ifstream is(manifest);
    if (!is) throw DataError("cannot open manifest '" + manifest + "'");
    fs::path base = fs::path(manifest).parent_path();

    std::vector<std::pair<std::string, std::string>> rows;  // (path, identity)
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty() || line[0] == '#') continue;
        auto tab = line.find('\t');
        if (tab == std::string::npos)
            throw DataError("manifest '" + manifest + "' line " + std::to_string(lineno) +
                            ": expected path<TAB>identity");
        std::string p = line.substr(0, tab);
        std::string id = line.substr(tab + 1);
        if (!fs::path(p).is_absolute()) p = (base / p).string();
        rows.emplace_back(std::move(p), std::move(id));
    }
    if (rows.empty()) throw DataError("manifest '" + manifest + "' lists no images");

    std::vector<std::string> missing;
    for (auto& [p, id] : rows)
        if (!fs::is_regular_file(p)) missing.push_back(p);
    if (!missing.empty()) {
        std::ostringstream os;
        os << "manifest '" << manifest << "' references missing files:";
        for (const auto& m : missing) os << ' ' << m;
        throw DataError(os.str());
    }

    std::vector<std::string> identities;
    for (auto& [p, id] : rows) identities.push_back(id);
    std::sort(identities.begin(), identities.end());
    identities.erase(std::unique(identities.begin(), identities.end()), identities.end());
    std::map<std::string, int> label_of;
    for (std::size_t i = 0; i < identities.size(); ++i) label_of[identities[i]] = int(i);

    IdentityDataset ds;
    ds.root = manifest;
    ds.identity_names = identities;
    std::sort(rows.begin(), rows.end(), [&](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second < b.second;
        return a.first < b.first;
    });
    for (auto& [p, id] : rows) ds.records.push_back({p, label_of[id], id, -1, -1});
    return ds;
}

}  // namespace

IdentityDataset scan_dataset(const std::string& root, DatasetLayout layout) {
    return layout == DatasetLayout::FolderPerIdentity ? scan_folders(root) : scan_manifest(root);
}

IdentityDataset make_synthetic_dataset(const SyntheticSpec& spec) {
    IdentityDataset ds;
    ds.root = "synthetic";
    ds.synthetic = spec;
    for (int id = 0; id < spec.num_identities; ++id) {
        ds.identity_names.push_back("synthetic-" + std::to_string(id));
        for (int i = 0; i < spec.images_per_identity; ++i) {
            ImageRecord rec;
            rec.path = "synthetic://" + std::to_string(id) + "/" + std::to_string(i);
            rec.label = id;
            rec.tag = ds.identity_names.back();
            rec.synth_identity = id;
            rec.synth_index = i;
            ds.records.push_back(std::move(rec));
        }
    }
    return ds;
}

RawImage load_image(const IdentityDataset& ds, const ImageRecord& rec) {
    if (rec.synth_identity >= 0) {
        if (!ds.synthetic) throw DataError("record '" + rec.path + "' is synthetic but the dataset is not");
        return synthetic_image(*ds.synthetic, rec.synth_identity, rec.synth_index);
    }
    return decode_image(rec.path);
}

RetrievalSplit make_split(const IdentityDataset& ds, uint64_t seed, int repetition, const SplitOptions& opt) {
    int n = ds.num_identities();
    if (n < 2 && !opt.self_test) throw DataError("split needs at least 2 identities, got " + std::to_string(n));
    if (repetition < 0) throw DataError("repetition must be non-negative");

    // images per identity, in record order (records are already sorted)
    std::vector<std::vector<int>> by_label;
    by_label.resize(std::size_t(n));
    for (std::size_t r = 0; r < ds.records.size(); ++r) by_label[std::size_t(ds.records[r].label)].push_back(int(r));

    // identity halving by sorted identity order; the halving is shared by
    // all repetitions, only the per-repetition draws below differ
    int train_count = opt.self_test ? n : (n + 1) / 2;
    RetrievalSplit split;
    split.seed = seed;
    split.repetition = repetition;
    Rng rng(mix64(seed, uint64_t(repetition), 0x5917ull));

    std::vector<int> test_labels;
    for (int id = 0; id < n; ++id) {
        if (id < train_count) split.train_identities.push_back(id);
        if (opt.self_test || id >= train_count) test_labels.push_back(id);
    }

    // draw one validation image per train identity (first draw per identity)
    std::vector<int> validation_of(std::size_t(n), -1);
    for (int id : split.train_identities) {
        const auto& imgs = by_label[std::size_t(id)];
        validation_of[std::size_t(id)] = imgs[std::size_t(rng.below(imgs.size()))];
    }
    // draw one gallery image per test identity (second draw per identity)
    std::vector<int> gallery_of(std::size_t(n), -1);
    for (int id : test_labels) {
        const auto& imgs = by_label[std::size_t(id)];
        gallery_of[std::size_t(id)] = imgs[std::size_t(rng.below(imgs.size()))];
        if (imgs.size() < 2)
            split.warnings.push_back("identity '" + ds.identity_names[std::size_t(id)] +
                                     "' has a single image: it joins the gallery and contributes no queries");
    }

    for (int id : split.train_identities)
        for (int r : by_label[std::size_t(id)])
            if (r != validation_of[std::size_t(id)]) split.train_images.push_back(r);
    for (int id : split.train_identities) split.validation_images.push_back(validation_of[std::size_t(id)]);
    for (int id : test_labels) {
        split.gallery.push_back({gallery_of[std::size_t(id)], id, false});
        for (int r : by_label[std::size_t(id)])
            if (r != gallery_of[std::size_t(id)]) split.query_images.push_back(r);
    }

    if (opt.distractors) {
        // sentinel labels -1, -2, ... can never equal a query label
        for (std::size_t r = 0; r < opt.distractors->records.size(); ++r)
            split.gallery.push_back({int(r), -1 - int(opt.distractors->records[r].label), true});
    }
    return split;
}

void export_split(const IdentityDataset& ds, const RetrievalSplit& split, const std::string& path) {
    std::ofstream os(path);
    if (!os) throw DataError("cannot open split export file '" + path + "'");
    os << "# seed=" << split.seed << " repetition=" << split.repetition << "\n";
    std::vector<std::string> assignment(ds.records.size(), "unused");
    for (int r : split.train_images) assignment[std::size_t(r)] = "train";
    for (int r : split.validation_images) assignment[std::size_t(r)] = "validation";
    for (const auto& g : split.gallery)
        if (!g.from_distractor) assignment[std::size_t(g.record)] = "gallery";
    for (int r : split.query_images) assignment[std::size_t(r)] = "query";
    for (std::size_t r = 0; r < ds.records.size(); ++r)
        os << ds.records[r].path << '\t' << ds.records[r].label << '\t' << assignment[r] << '\n';
    for (const auto& g : split.gallery)
        if (g.from_distractor) os << "distractor#" << g.record << '\t' << g.label << "\tgallery\n";
    if (!os) throw DataError("write to split export file '" + path + "' failed");
}

namespace {

TensorPtr normalize_to_tensor(const RawImage& img, const AugmentationConfig& cfg) {
    auto t = Tensor::create({3, img.height, img.width});
    std::size_t plane = std::size_t(img.height) * img.width;
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x)
            for (int c = 0; c < 3; ++c)
                t->data[std::size_t(c) * plane + std::size_t(y) * img.width + x] =
                    (img.at(y, x, c) - cfg.mean[std::size_t(c)]) / cfg.stddev[std::size_t(c)];
    return t;
}

void jitter_inplace(RawImage& img, float brightness, float contrast, float saturation) {
    if (brightness != 1.f)
        for (auto& v : img.rgb) v = std::min(1.f, std::max(0.f, v * brightness));
    if (contrast != 1.f) {
        double mean_gray = 0;
        for (int y = 0; y < img.height; ++y)
            for (int x = 0; x < img.width; ++x)
                mean_gray += 0.299 * img.at(y, x, 0) + 0.587 * img.at(y, x, 1) + 0.114 * img.at(y, x, 2);
        float mg = float(mean_gray / (double(img.height) * img.width));
        for (auto& v : img.rgb) v = std::min(1.f, std::max(0.f, mg + contrast * (v - mg)));
    }
    if (saturation != 1.f) {
        for (int y = 0; y < img.height; ++y)
            for (int x = 0; x < img.width; ++x) {
                float gray = 0.299f * img.at(y, x, 0) + 0.587f * img.at(y, x, 1) + 0.114f * img.at(y, x, 2);
                for (int c = 0; c < 3; ++c)
                    img.at(y, x, c) = std::min(1.f, std::max(0.f, gray + saturation * (img.at(y, x, c) - gray)));
            }
    }
}

}  // namespace

TensorPtr augment_train_at(const RawImage& img, const AugmentationConfig& cfg, bool flip, int oy, int ox,
                           float brightness, float contrast, float saturation) {
    if (cfg.crop > cfg.resize) throw DataError("crop size exceeds resize target");
    RawImage work = resize_bilinear(img, cfg.resize, cfg.resize);
    work = crop(work, oy, ox, cfg.crop, cfg.crop);
    if (flip) work = flip_horizontal(work);
    jitter_inplace(work, brightness, contrast, saturation);
    return normalize_to_tensor(work, cfg);
}

TensorPtr augment_train(const RawImage& img, const AugmentationConfig& cfg, Rng& rng) {
    bool flip = rng.bernoulli(double(cfg.flip_prob));
    int slack = cfg.resize - cfg.crop;
    int oy = slack > 0 ? int(rng.below(uint64_t(slack) + 1)) : 0;
    int ox = slack > 0 ? int(rng.below(uint64_t(slack) + 1)) : 0;
    auto factor = [&](float s) { return s > 0.f ? float(rng.uniform(1.0 - s, 1.0 + s)) : 1.f; };
    float brightness = factor(cfg.jitter_brightness);
    float contrast = factor(cfg.jitter_contrast);
    float saturation = factor(cfg.jitter_saturation);
    return augment_train_at(img, cfg, flip, oy, ox, brightness, contrast, saturation);
}

TensorPtr prepare_eval(const RawImage& img, const AugmentationConfig& cfg) {
    RawImage work = resize_bilinear(img, cfg.crop, cfg.crop);
    return normalize_to_tensor(work, cfg);
}

}  // namespace mba
