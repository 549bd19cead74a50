#pragma once

#include <string>
#include <vector>

#include "mba/data.hpp"
#include "mba/network.hpp"

// Retrieval scoring: queries ranked against a gallery by cosine distance,
// rank-1 / mAP / CMC metrics, and repetition averaging.

namespace mba {

struct EmbeddingSet {
    int dim = 0;
    std::vector<float> matrix;  // [count, dim] row-major
    std::vector<int> labels;
    std::vector<std::string> image_ids;

    int count() const { return int(labels.size()); }
    const float* row(int i) const { return matrix.data() + std::size_t(i) * dim; }
};

// Per query, gallery indices by ascending cosine distance; ties broken by
// gallery index. Throws NumericError on zero-norm embeddings.
std::vector<std::vector<int>> cosine_rank(const EmbeddingSet& queries, const EmbeddingSet& gallery);

double rank1(const std::vector<std::vector<int>>& ranking, const std::vector<int>& q_labels,
             const std::vector<int>& g_labels);

// AP per query: precision at each relevant rank, averaged over that query's
// relevant items; mAP is the mean over queries. Every query label must
// appear in the gallery.
double mean_ap(const std::vector<std::vector<int>>& ranking, const std::vector<int>& q_labels,
               const std::vector<int>& g_labels);

// cmc[k] = fraction of queries whose first correct match has rank <= k+1
std::vector<double> cmc_curve(const std::vector<std::vector<int>>& ranking, const std::vector<int>& q_labels,
                              const std::vector<int>& g_labels, int max_rank);

struct EvalScores {
    int repetition = 0;
    double rank1 = 0.0;
    double map = 0.0;
    std::vector<double> cmc;
};

struct EvalReport {
    std::vector<EvalScores> repetitions;
    double rank1_mean = 0.0, rank1_std = 0.0;
    double map_mean = 0.0, map_std = 0.0;
    std::vector<double> cmc_mean;
};

// Embeds gallery and query images through forward_embed and scores them.
// distractor_ds provides the images for gallery entries flagged
// from_distractor (may be null when the split has none).
EvalScores evaluate(Network& net, const IdentityDataset& ds, const IdentityDataset* distractor_ds,
                    const RetrievalSplit& split, const AugmentationConfig& aug, int batch_size, int cmc_k = 10);

EvalReport aggregate(const std::vector<EvalScores>& reps);

// CSV: one row per repetition plus mean and std rows. JSON adds CMC curves.
void write_report_csv(const EvalReport& report, const std::string& path);
void write_report_json(const EvalReport& report, const std::string& path);

}  // namespace mba
