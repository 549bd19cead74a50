#include "mba/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

#include <json.hpp>

#include "mba/ops.hpp"
#include "mba/simd/kernels.hpp"

namespace mba {

std::vector<std::vector<int>> cosine_rank(const EmbeddingSet& queries, const EmbeddingSet& gallery) {
    if (queries.dim != gallery.dim)
        throw ShapeError("cosine_rank: dimension mismatch " + std::to_string(queries.dim) + " vs " +
                         std::to_string(gallery.dim));
    if (queries.count() == 0 || gallery.count() == 0) throw DataError("cosine_rank: empty query or gallery set");

    auto norms = [](const EmbeddingSet& s, const char* who) {
        std::vector<double> out(std::size_t(s.count()));
        for (int i = 0; i < s.count(); ++i) {
            double n = std::sqrt(double(simd::dot(s.row(i), s.row(i), std::size_t(s.dim))));
            if (n == 0.0)
                throw NumericError(std::string("cosine_rank: zero-norm ") + who + " embedding at row " +
                                   std::to_string(i));
            out[std::size_t(i)] = n;
        }
        return out;
    };
    auto qn = norms(queries, "query");
    auto gn = norms(gallery, "gallery");

    std::vector<std::vector<int>> ranking(std::size_t(queries.count()));
    for (int q = 0; q < queries.count(); ++q) {
        std::vector<std::pair<double, int>> scored(std::size_t(gallery.count()));
        for (int g = 0; g < gallery.count(); ++g) {
            double cos = double(simd::dot(queries.row(q), gallery.row(g), std::size_t(queries.dim))) /
                         (qn[std::size_t(q)] * gn[std::size_t(g)]);
            scored[std::size_t(g)] = {1.0 - cos, g};
        }
        std::sort(scored.begin(), scored.end());
        auto& row = ranking[std::size_t(q)];
        row.reserve(scored.size());
        for (auto& [dist, idx] : scored) row.push_back(idx);
    }
    return ranking;
}

double rank1(const std::vector<std::vector<int>>& ranking, const std::vector<int>& q_labels,
             const std::vector<int>& g_labels) {
    if (ranking.size() != q_labels.size()) throw ShapeError("rank1: ranking and label counts differ");
    if (ranking.empty()) throw DataError("rank1: no queries");
    std::size_t hits = 0;
    for (std::size_t q = 0; q < ranking.size(); ++q)
        if (g_labels.at(std::size_t(ranking[q].at(0))) == q_labels[q]) ++hits;
    return double(hits) / double(ranking.size());
}

double mean_ap(const std::vector<std::vector<int>>& ranking, const std::vector<int>& q_labels,
               const std::vector<int>& g_labels) {
    if (ranking.size() != q_labels.size()) throw ShapeError("mean_ap: ranking and label counts differ");
    if (ranking.empty()) throw DataError("mean_ap: no queries");
    std::set<int> gallery_label_set(g_labels.begin(), g_labels.end());
    double total = 0.0;
    for (std::size_t q = 0; q < ranking.size(); ++q) {
        if (!gallery_label_set.count(q_labels[q]))
            throw DataError("mean_ap: query label " + std::to_string(q_labels[q]) + " absent from the gallery");
        int hits = 0;
        double ap = 0.0;
        for (std::size_t pos = 0; pos < ranking[q].size(); ++pos) {
            if (g_labels.at(std::size_t(ranking[q][pos])) == q_labels[q]) {
                ++hits;
                ap += double(hits) / double(pos + 1);
            }
        }
        total += ap / double(hits);
    }
    return total / double(ranking.size());
}

std::vector<double> cmc_curve(const std::vector<std::vector<int>>& ranking, const std::vector<int>& q_labels,
                              const std::vector<int>& g_labels, int max_rank) {
    std::vector<double> cmc(std::size_t(max_rank), 0.0);
    for (std::size_t q = 0; q < ranking.size(); ++q) {
        for (std::size_t pos = 0; pos < ranking[q].size() && int(pos) < max_rank; ++pos) {
            if (g_labels.at(std::size_t(ranking[q][pos])) == q_labels[q]) {
                for (int k = int(pos); k < max_rank; ++k) cmc[std::size_t(k)] += 1.0;
                break;
            }
        }
    }
    for (auto& v : cmc) v /= double(ranking.size());
    return cmc;
}

namespace {

// embeds a list of (dataset, record) pairs in eval batches
EmbeddingSet embed_images(Network& net, const std::vector<std::pair<const IdentityDataset*, int>>& items,
                          const std::vector<int>& labels, const AugmentationConfig& aug, int batch_size) {
    EmbeddingSet set;
    set.dim = net.descriptor_dim();
    set.labels = labels;
    set.matrix.resize(items.size() * std::size_t(set.dim));
    for (const auto& [ds, rec] : items) set.image_ids.push_back(ds->records[std::size_t(rec)].path);

    for (std::size_t lo = 0; lo < items.size(); lo += std::size_t(batch_size)) {
        std::size_t hi = std::min(items.size(), lo + std::size_t(batch_size));
        std::vector<TensorPtr> images(hi - lo);
        parallel_for(hi - lo, 2, [&](std::size_t a, std::size_t b) {
            for (std::size_t i = a; i < b; ++i) {
                const auto& [ds, rec] = items[lo + i];
                images[i] = prepare_eval(load_image(*ds, ds->records[std::size_t(rec)]), aug);
            }
        });
        auto desc = net.forward_embed(stack_batch(images));
        std::copy(desc->data.begin(), desc->data.end(), set.matrix.begin() + lo * std::size_t(set.dim));
    }
    return set;
}

}  // namespace

EvalScores evaluate(Network& net, const IdentityDataset& ds, const IdentityDataset* distractor_ds,
                    const RetrievalSplit& split, const AugmentationConfig& aug, int batch_size, int cmc_k) {
    if (split.gallery.empty()) throw DataError("evaluate: empty gallery");
    if (split.query_images.empty()) throw DataError("evaluate: empty query set");

    std::vector<std::pair<const IdentityDataset*, int>> gallery_items;
    std::vector<int> gallery_labels;
    for (const auto& g : split.gallery) {
        if (g.from_distractor) {
            if (!distractor_ds) throw DataError("evaluate: split has distractors but no distractor dataset given");
            gallery_items.emplace_back(distractor_ds, g.record);
        } else {
            gallery_items.emplace_back(&ds, g.record);
        }
        gallery_labels.push_back(g.label);
    }
    std::vector<std::pair<const IdentityDataset*, int>> query_items;
    std::vector<int> query_labels;
    for (int r : split.query_images) {
        query_items.emplace_back(&ds, r);
        query_labels.push_back(ds.records[std::size_t(r)].label);
    }

    auto gallery = embed_images(net, gallery_items, gallery_labels, aug, batch_size);
    auto queries = embed_images(net, query_items, query_labels, aug, batch_size);
    auto ranking = cosine_rank(queries, gallery);

    EvalScores scores;
    scores.repetition = split.repetition;
    scores.rank1 = rank1(ranking, query_labels, gallery_labels);
    scores.map = mean_ap(ranking, query_labels, gallery_labels);
    scores.cmc = cmc_curve(ranking, query_labels, gallery_labels, cmc_k);
    return scores;
}

EvalReport aggregate(const std::vector<EvalScores>& reps) {
    if (reps.empty()) throw DataError("aggregate: no repetitions");
    EvalReport report;
    report.repetitions = reps;
    double r1 = 0, r2 = 0, m1 = 0, m2 = 0;
    for (const auto& r : reps) {
        r1 += r.rank1;
        r2 += r.rank1 * r.rank1;
        m1 += r.map;
        m2 += r.map * r.map;
    }
    double n = double(reps.size());
    report.rank1_mean = r1 / n;
    report.map_mean = m1 / n;
    report.rank1_std = std::sqrt(std::max(0.0, r2 / n - report.rank1_mean * report.rank1_mean));
    report.map_std = std::sqrt(std::max(0.0, m2 / n - report.map_mean * report.map_mean));
    std::size_t klen = reps[0].cmc.size();
    report.cmc_mean.assign(klen, 0.0);
    for (const auto& r : reps)
        for (std::size_t k = 0; k < klen && k < r.cmc.size(); ++k) report.cmc_mean[k] += r.cmc[k];
    for (auto& v : report.cmc_mean) v /= n;
    return report;
}

void write_report_csv(const EvalReport& report, const std::string& path) {
    std::ofstream os(path);
    if (!os) throw DataError("cannot open report file '" + path + "'");
    os << "repetition,rank1,mAP\n";
    for (const auto& r : report.repetitions) os << r.repetition << ',' << r.rank1 << ',' << r.map << '\n';
    os << "mean," << report.rank1_mean << ',' << report.map_mean << '\n';
    os << "std," << report.rank1_std << ',' << report.map_std << '\n';
    if (!os) throw DataError("write to report file '" + path + "' failed");
}

void write_report_json(const EvalReport& report, const std::string& path) {
    nlohmann::json j;
    j["rank1"] = {{"mean", report.rank1_mean}, {"std", report.rank1_std}};
    j["mAP"] = {{"mean", report.map_mean}, {"std", report.map_std}};
    j["cmc_mean"] = report.cmc_mean;
    auto& reps = j["repetitions"] = nlohmann::json::array();
    for (const auto& r : report.repetitions)
        reps.push_back({{"repetition", r.repetition}, {"rank1", r.rank1}, {"mAP", r.map}, {"cmc", r.cmc}});
    std::ofstream os(path);
    if (!os) throw DataError("cannot open report file '" + path + "'");
    os << j.dump(2) << '\n';
}

}  // namespace mba
