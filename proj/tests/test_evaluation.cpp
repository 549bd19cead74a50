#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>

#include "mba/evaluation.hpp"
#include "test_support.hpp"

using namespace mba;

namespace {

EmbeddingSet make_set(int dim, const std::vector<std::vector<float>>& rows, const std::vector<int>& labels) {
    EmbeddingSet s;
    s.dim = dim;
    s.labels = labels;
    for (const auto& r : rows) s.matrix.insert(s.matrix.end(), r.begin(), r.end());
    for (std::size_t i = 0; i < rows.size(); ++i) s.image_ids.push_back("img" + std::to_string(i));
    return s;
}

EmbeddingSet random_set(Rng& rng, int count, int dim, const std::vector<int>& labels) {
    std::vector<std::vector<float>> rows;
    for (int i = 0; i < count; ++i) {
        std::vector<float> r;
        r.resize(std::size_t(dim));
        for (auto& v : r) v = float(rng.normal());
        rows.push_back(std::move(r));
    }
    return make_set(dim, rows, labels);
}

// independent AP: precision-at-k summed over relevant ranks
double ap_oracle(const std::vector<int>& ranked, int q_label, const std::vector<int>& g_labels) {
    int relevant = 0;
    for (int g : g_labels)
        if (g == q_label) ++relevant;
    double ap = 0;
    int hits = 0;
    for (std::size_t k = 0; k < ranked.size(); ++k) {
        bool rel = g_labels[std::size_t(ranked[k])] == q_label;
        if (rel) {
            ++hits;
            double precision_at_k = double(hits) / double(k + 1);
            ap += precision_at_k;
        }
    }
    return ap / double(relevant);
}

}  // namespace

TEST_CASE("cosine_rank: exact match first, scale invariance, oracle") {
    auto gallery = make_set(3, {{1, 0, 0}, {0, 1, 0}, {0.5f, 0.5f, 0}}, {0, 1, 2});
    auto queries = make_set(3, {{0, 1, 0}}, {1});
    auto ranking = cosine_rank(queries, gallery);
    CHECK(ranking[0][0] == 1);

    Rng rng(3);
    auto q = random_set(rng, 4, 5, {0, 1, 2, 3});
    auto g = random_set(rng, 6, 5, {0, 1, 2, 3, 4, 5});
    auto base = cosine_rank(q, g);
    auto scaled = q;
    for (auto& v : scaled.matrix) v *= 37.5f;
    auto g2 = g;
    for (auto& v : g2.matrix) v *= 0.01f;
    CHECK(cosine_rank(scaled, g2) == base);

    // normalized-dot-product oracle on a 4x3 case
    auto q43 = random_set(rng, 4, 3, {0, 1, 2, 0});
    auto g43 = random_set(rng, 5, 3, {0, 1, 2, 3, 4});
    auto ranking43 = cosine_rank(q43, g43);
    for (int qi = 0; qi < 4; ++qi) {
        std::vector<std::pair<double, int>> ref;
        double qn = 0;
        for (int d = 0; d < 3; ++d) qn += double(q43.row(qi)[d]) * q43.row(qi)[d];
        for (int gi = 0; gi < 5; ++gi) {
            double dot = 0, gn = 0;
            for (int d = 0; d < 3; ++d) {
                dot += double(q43.row(qi)[d]) * g43.row(gi)[d];
                gn += double(g43.row(gi)[d]) * g43.row(gi)[d];
            }
            ref.emplace_back(1.0 - dot / std::sqrt(qn * gn), gi);
        }
        std::sort(ref.begin(), ref.end());
        for (int k = 0; k < 5; ++k) CHECK(ranking43[std::size_t(qi)][std::size_t(k)] == ref[std::size_t(k)].second);
    }

    auto zero = make_set(3, {{0, 0, 0}}, {0});
    CHECK_THROWS_AS(cosine_rank(zero, gallery), NumericError);
}

TEST_CASE("rank1 counting") {
    std::vector<std::vector<int>> ranking = {{0, 1}, {1, 0}, {0, 1}, {1, 0}};
    std::vector<int> g_labels = {7, 8};
    CHECK(rank1(ranking, {7, 8, 7, 8}, g_labels) == 1.0);
    CHECK(rank1(ranking, {8, 7, 8, 7}, g_labels) == 0.0);
    CHECK(rank1(ranking, {7, 8, 8, 7}, g_labels) == 0.5);
}

TEST_CASE("mean_ap: single-relevant values and brute-force oracle") {
    // relevant item at rank 1 for every query
    std::vector<std::vector<int>> perfect = {{0, 1, 2}, {1, 0, 2}};
    std::vector<int> g_labels = {0, 1, 2};
    CHECK(mean_ap(perfect, {0, 1}, g_labels) == 1.0);

    // single query with its only relevant at rank 4 -> AP 0.25
    std::vector<std::vector<int>> r4 = {{1, 2, 3, 0}};
    CHECK(mean_ap(r4, {9}, {9, 5, 6, 7}) == doctest::Approx(0.25));

    // multi-relevant synthetic cases against the oracle
    Rng rng(11);
    for (int trial = 0; trial < 50; ++trial) {
        int gallery_n = 3 + int(rng.below(8));
        std::vector<int> glabels;
        for (int g = 0; g < gallery_n; ++g) glabels.push_back(int(rng.below(4)));
        int q_label = glabels[std::size_t(rng.below(uint64_t(glabels.size())))];
        std::vector<int> ranked;
        for (int i = 0; i < gallery_n; ++i) ranked.push_back(i);
        for (std::size_t i = ranked.size(); i > 1; --i) std::swap(ranked[i - 1], ranked[rng.below(i)]);
        double expect = ap_oracle(ranked, q_label, glabels);
        CHECK(mean_ap({ranked}, {q_label}, glabels) == doctest::Approx(expect).epsilon(1e-12));
    }

    CHECK_THROWS_AS(mean_ap(perfect, {0, 9}, g_labels), DataError);
}

TEST_CASE("metric invariances: relabeling and rescaling") {
    Rng rng(13);
    std::vector<int> qlabels = {0, 1, 2, 1};
    std::vector<int> glabels = {0, 1, 2, 3};
    auto q = random_set(rng, 4, 6, qlabels);
    auto g = random_set(rng, 4, 6, glabels);
    auto ranking = cosine_rank(q, g);
    double r1 = rank1(ranking, qlabels, glabels);
    double ap = mean_ap(ranking, qlabels, glabels);

    // relabeling bijection
    std::map<int, int> relabel = {{0, 40}, {1, 17}, {2, 5}, {3, 99}};
    std::vector<int> q2, g2;
    for (int l : qlabels) q2.push_back(relabel[l]);
    for (int l : glabels) g2.push_back(relabel[l]);
    CHECK(rank1(ranking, q2, g2) == r1);
    CHECK(mean_ap(ranking, q2, g2) == ap);

    // positive rescale of all embeddings
    auto qs = q;
    auto gs = g;
    for (auto& v : qs.matrix) v *= 3.25f;
    for (auto& v : gs.matrix) v *= 3.25f;
    CHECK(cosine_rank(qs, gs) == ranking);
}

TEST_CASE("single-relevant protocol: rank1 <= mAP on every instance") {
    Rng rng(17);
    for (int trial = 0; trial < 50; ++trial) {
        int ids = 3 + int(rng.below(5));
        std::vector<int> glabels;
        for (int i = 0; i < ids; ++i) glabels.push_back(i);  // one relevant per query
        std::vector<int> qlabels;
        for (int i = 0; i < ids; ++i)
            for (int r = 0; r < 2; ++r) qlabels.push_back(i);
        auto g = random_set(rng, ids, 4, glabels);
        auto q = random_set(rng, int(qlabels.size()), 4, qlabels);
        auto ranking = cosine_rank(q, g);
        CHECK(rank1(ranking, qlabels, glabels) <= mean_ap(ranking, qlabels, glabels) + 1e-12);
    }
}

TEST_CASE("distractors can only decrease or preserve the metrics") {
    Rng rng(19);
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<int> glabels = {0, 1, 2, 3};
        std::vector<int> qlabels = {0, 1, 2, 3, 0, 2};
        auto g = random_set(rng, 4, 5, glabels);
        auto q = random_set(rng, 6, 5, qlabels);
        auto base_rank = cosine_rank(q, g);
        double r1 = rank1(base_rank, qlabels, glabels);
        double ap = mean_ap(base_rank, qlabels, glabels);

        auto g_plus = g;
        int extra = 1 + int(rng.below(4));
        for (int e = 0; e < extra; ++e) {
            for (int d = 0; d < 5; ++d) g_plus.matrix.push_back(float(rng.normal()));
            g_plus.labels.push_back(-1 - e);  // sentinel, never queried
            g_plus.image_ids.push_back("distractor");
        }
        auto rank_plus = cosine_rank(q, g_plus);
        CHECK(rank1(rank_plus, qlabels, g_plus.labels) <= r1 + 1e-12);
        CHECK(mean_ap(rank_plus, qlabels, g_plus.labels) <= ap + 1e-12);
    }
}

TEST_CASE("cmc curve: anchored at rank1, monotone, within [0,1]") {
    Rng rng(23);
    std::vector<int> glabels = {0, 1, 2, 3, 4};
    std::vector<int> qlabels = {0, 1, 2, 3, 4, 0, 1};
    auto g = random_set(rng, 5, 4, glabels);
    auto q = random_set(rng, 7, 4, qlabels);
    auto ranking = cosine_rank(q, g);
    auto cmc = cmc_curve(ranking, qlabels, glabels, 5);
    CHECK(cmc[0] == doctest::Approx(rank1(ranking, qlabels, glabels)));
    for (std::size_t k = 0; k < cmc.size(); ++k) {
        CHECK(cmc[k] >= 0.0);
        CHECK(cmc[k] <= 1.0);
        if (k) CHECK(cmc[k] >= cmc[k - 1]);
    }
    CHECK(cmc.back() == doctest::Approx(1.0));  // every query label is present
}

TEST_CASE("self-retrieval with identical gallery and query embeddings is perfect") {
    Rng rng(29);
    std::vector<int> labels = {0, 1, 2, 3, 4, 5};
    auto g = random_set(rng, 6, 8, labels);
    auto ranking = cosine_rank(g, g);
    CHECK(rank1(ranking, labels, labels) == 1.0);
    CHECK(mean_ap(ranking, labels, labels) == 1.0);
}

TEST_CASE("aggregate reports mean and spread; csv and json artifacts") {
    std::vector<EvalScores> reps;
    for (int r = 0; r < 10; ++r) {
        EvalScores s;
        s.repetition = r;
        s.rank1 = 0.8 + 0.01 * r;
        s.map = 0.85 + 0.01 * r;
        s.cmc = {s.rank1, 1.0};
        reps.push_back(s);
    }
    auto report = aggregate(reps);
    CHECK(report.rank1_mean == doctest::Approx(0.845));
    CHECK(report.map_mean == doctest::Approx(0.895));
    CHECK(report.rank1_std > 0.0);
    CHECK(report.repetitions.size() == 10);

    auto csv_path = std::filesystem::temp_directory_path() / "mba_report.csv";
    write_report_csv(report, csv_path.string());
    std::ifstream is(csv_path);
    std::string header;
    std::getline(is, header);
    CHECK(header == "repetition,rank1,mAP");
    int rows = 0;
    std::string line;
    bool saw_mean = false, saw_std = false;
    while (std::getline(is, line)) {
        if (line.rfind("mean,", 0) == 0) saw_mean = true;
        if (line.rfind("std,", 0) == 0) saw_std = true;
        if (!line.empty()) ++rows;
    }
    CHECK(rows == 12);
    CHECK(saw_mean);
    CHECK(saw_std);
    std::filesystem::remove(csv_path);

    auto json_path = std::filesystem::temp_directory_path() / "mba_report.json";
    write_report_json(report, json_path.string());
    std::ifstream js(json_path);
    std::string all((std::istreambuf_iterator<char>(js)), std::istreambuf_iterator<char>());
    CHECK(all.find("\"cmc_mean\"") != std::string::npos);
    std::filesystem::remove(json_path);
}

TEST_CASE("end-to-end evaluate is deterministic and respects the split") {
    SyntheticSpec spec;
    spec.num_identities = 4;
    spec.images_per_identity = 3;
    spec.size = 20;
    auto ds = make_synthetic_dataset(spec);
    auto split = make_split(ds, 3, 0);

    NetworkConfig ncfg;
    ncfg.backbone.stage_widths = {8, 8, 16, 16};
    ncfg.backbone.image_size = 16;
    ncfg.num_identities = 2;
    ncfg.head_dim = 8;
    ncfg.init_seed = 4;
    Network net(ncfg);

    AugmentationConfig aug;
    aug.resize = 18;
    aug.crop = 16;

    auto s1 = evaluate(net, ds, nullptr, split, aug, 4);
    auto s2 = evaluate(net, ds, nullptr, split, aug, 4);
    CHECK(s1.rank1 == s2.rank1);
    CHECK(s1.map == s2.map);
    CHECK(s1.cmc == s2.cmc);
    CHECK(s1.rank1 >= 0.0);
    CHECK(s1.rank1 <= 1.0);
    CHECK(rank1({{0}}, {7}, {7}) == 1.0);
}
