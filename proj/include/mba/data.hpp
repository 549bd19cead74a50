#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "mba/tensor.hpp"

namespace mba {

// Decoded image: interleaved RGB rows, values in [0,1].
struct RawImage {
    int height = 0, width = 0;
    std::vector<float> rgb;

    float& at(int y, int x, int c) { return rgb[(std::size_t(y) * width + x) * 3 + c]; }
    float at(int y, int x, int c) const { return rgb[(std::size_t(y) * width + x) * 3 + c]; }
};

// --- image_io.cpp ---
// 8-bit images only; grayscale is expanded to RGB with a warning on stderr.
RawImage decode_image(const std::string& path);

RawImage resize_bilinear(const RawImage& img, int out_h, int out_w);
RawImage flip_horizontal(const RawImage& img);
RawImage crop(const RawImage& img, int y0, int x0, int h, int w);

// --- synthetic.cpp ---
// Procedural identities: each identity owns a base color, blob layout and
// stripe texture; each image jitters them slightly. No files involved.
struct SyntheticSpec {
    int num_identities = 10;
    int images_per_identity = 10;
    int size = 64;
    uint64_t seed = 1234;
};
RawImage synthetic_image(const SyntheticSpec& spec, int identity, int index);

// --- data.cpp ---
enum class DatasetLayout { FolderPerIdentity, Manifest };

struct ImageRecord {
    std::string path;  // file path, or synthetic://<id>/<index>
    int label = 0;
    std::string tag;  // subset tag, free-form
    int synth_identity = -1;
    int synth_index = -1;
};

struct IdentityDataset {
    std::string root;
    std::vector<ImageRecord> records;
    std::vector<std::string> identity_names;  // sorted; label i corresponds to identity_names[i]
    std::optional<SyntheticSpec> synthetic;

    int num_identities() const { return int(identity_names.size()); }
};

// Deterministic scan (lexicographic order) of either layout:
//   A: root/<identity>/<image>.{jpg,jpeg,png}
//   B: manifest text file of "path<TAB>identity" lines (paths relative to
//      the manifest's directory unless absolute)
IdentityDataset scan_dataset(const std::string& root, DatasetLayout layout);
IdentityDataset make_synthetic_dataset(const SyntheticSpec& spec);
RawImage load_image(const IdentityDataset& ds, const ImageRecord& rec);

// One gallery entry; distractor entries carry sentinel labels < 0 which can
// never match a query label.
struct GalleryItem {
    int record = -1;  // index into the owning dataset (distractor dataset when from_distractor)
    int label = 0;
    bool from_distractor = false;
};

struct RetrievalSplit {
    std::vector<int> train_identities;  // labels
    std::vector<int> train_images;      // record indices fed to the train stream
    std::vector<int> validation_images; // one record per train identity, excluded from the stream
    std::vector<GalleryItem> gallery;
    std::vector<int> query_images;
    uint64_t seed = 0;
    int repetition = 0;
    std::vector<std::string> warnings;  // e.g. single-image test identities
};

struct SplitOptions {
    // Test half equals the train half (all identities on both sides); used
    // by the toy self-retrieval sanity run.
    bool self_test = false;
    const IdentityDataset* distractors = nullptr;  // appended to the gallery only
};

RetrievalSplit make_split(const IdentityDataset& ds, uint64_t seed, int repetition, const SplitOptions& opt = {});

// Audit file: one line per image with its assignment for this repetition.
void export_split(const IdentityDataset& ds, const RetrievalSplit& split, const std::string& path);

struct AugmentationConfig {
    int resize = 356;
    int crop = 324;
    float flip_prob = 0.5f;
    float jitter_brightness = 0.2f;
    float jitter_contrast = 0.2f;
    float jitter_saturation = 0.2f;
    std::array<float, 3> mean{0.485f, 0.456f, 0.406f};   // conventional defaults; configurable
    std::array<float, 3> stddev{0.229f, 0.224f, 0.225f};
};

// Deterministic core of the train pipeline; augment_train draws the knobs
// from rng (flip coin, crop offsets, three jitter factors, in that order).
TensorPtr augment_train_at(const RawImage& img, const AugmentationConfig& cfg, bool flip, int oy, int ox,
                           float brightness, float contrast, float saturation);
TensorPtr augment_train(const RawImage& img, const AugmentationConfig& cfg, Rng& rng);

// Eval path: resize straight to the crop size, normalize only.
TensorPtr prepare_eval(const RawImage& img, const AugmentationConfig& cfg);

}  // namespace mba
