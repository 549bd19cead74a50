#include <cmath>
#include <cstdio>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "mba/attention.hpp"
#include "mba/commands.hpp"
#include "mba/evaluation.hpp"
#include "mba/ops.hpp"
#include "mba/simd/kernels.hpp"

// Built-in verification: each category re-derives an expected result through
// an independent route (plain loops, finite differences, brute force) and
// compares the library against it. Any failure names the broken invariant.

namespace mba {

namespace {

using DP = TensorPtrT<double>;
using DT = TensorT<double>;

using CheckResult = std::optional<std::string>;  // failure detail, empty = pass

CheckResult check_kernel_equivalence() {
    if (simd::detect_backend() == simd::Backend::Scalar) return std::nullopt;  // nothing to compare
    Rng rng(41);
    auto saved = simd::active_backend();
    for (std::size_t n : {std::size_t(7), std::size_t(64), std::size_t(129)}) {
        std::vector<double> a, b;
        for (std::size_t i = 0; i < n; ++i) {
            a.push_back(rng.normal());
            b.push_back(rng.normal());
        }
        simd::set_backend(simd::Backend::Scalar);
        double ds = simd::dot(a.data(), b.data(), n);
        simd::set_backend(simd::detect_backend());
        double dv = simd::dot(a.data(), b.data(), n);
        simd::set_backend(saved);
        if (std::abs(ds - dv) > 1e-10 * std::max(1.0, std::abs(ds)))
            return "scalar and vector dot products disagree at n=" + std::to_string(n);
    }
    return std::nullopt;
}

CheckResult check_softmax_normalization() {
    Rng rng(43);
    for (int trial = 0; trial < 40; ++trial) {
        double mag = trial % 2 ? 1e4 : 1.0;
        auto x = DT::create({5, 23});
        for (auto& v : x->data) v = rng.uniform(-mag, mag);
        auto s = softmax_rows(x);
        for (int r = 0; r < 5; ++r) {
            double acc = 0;
            for (int c = 0; c < 23; ++c) acc += s->data[std::size_t(r) * 23 + c];
            if (std::abs(acc - 1.0) > 1e-6)
                return "softmax_rows row sums deviate from 1 by " + std::to_string(std::abs(acc - 1.0));
        }
        auto xf = TensorT<float>::create({4, 17});
        for (auto& v : xf->data) v = float(rng.uniform(-mag, mag));
        auto sf = softmax_rows(xf);
        for (int r = 0; r < 4; ++r) {
            double acc = 0;
            for (int c = 0; c < 17; ++c) acc += double(sf->data[std::size_t(r) * 17 + c]);
            if (std::abs(acc - 1.0) > 1e-6)
                return "softmax_rows row sums deviate from 1 by " + std::to_string(std::abs(acc - 1.0)) +
                       " (float path)";
        }
    }
    return std::nullopt;
}

// compact central finite-difference harness
bool fdiff_ok(const std::vector<DP>& leaves, const std::function<DP()>& make_loss, std::string* why) {
    for (auto& l : leaves) l->zero_grad();
    auto loss = make_loss();
    backward(loss);
    std::vector<std::vector<double>> analytic;
    for (auto& l : leaves) {
        l->ensure_grad();
        analytic.push_back(l->grad);
    }
    const double step = 1e-5;
    for (std::size_t li = 0; li < leaves.size(); ++li) {
        auto& l = leaves[li];
        for (std::size_t i = 0; i < l->data.size(); ++i) {
            double saved = l->data[i];
            l->data[i] = saved + step;
            double lp = make_loss()->data[0];
            l->data[i] = saved - step;
            double lm = make_loss()->data[0];
            l->data[i] = saved;
            double numeric = (lp - lm) / (2 * step);
            double a = analytic[li][i];
            double rel = std::abs(a - numeric) / std::max({1.0, std::abs(a), std::abs(numeric)});
            if (rel >= 1e-4) {
                *why = "gradient mismatch: analytic " + std::to_string(a) + " vs numeric " + std::to_string(numeric);
                return false;
            }
        }
    }
    return true;
}

CheckResult check_gradients() {
    Rng rng(47);
    std::string why;
    {
        auto a = DT::randn({3, 4}, rng, 1.0, true);
        auto b = DT::randn({4, 2}, rng, 1.0, true);
        auto w = DT::randn({3, 2}, rng, 1.0);
        if (!fdiff_ok({a, b}, [&] { return sum_all(mul(matmul(a, b), w)); }, &why)) return "matmul: " + why;
    }
    {
        auto a = DT::randn({2, 5}, rng, 1.0, true);
        auto w = DT::randn({2, 5}, rng, 1.0);
        if (!fdiff_ok({a}, [&] { return sum_all(mul(softmax_rows(a), w)); }, &why)) return "softmax_rows: " + why;
    }
    {
        auto x = DT::randn({2, 3, 2, 2}, rng, 1.0, true);
        auto bn = BatchNormStateT<double>::make(3);
        auto w = DT::randn({2, 3, 2, 2}, rng, 1.0);
        if (!fdiff_ok({x, bn.scale, bn.shift}, [&] { return sum_all(mul(batch_norm(x, bn, Mode::Train), w)); }, &why))
            return "batch_norm: " + why;
    }
    {
        auto x = DT::randn({1, 2, 4, 4}, rng, 1.0, true);
        auto w = DT::randn({2, 2, 3, 3}, rng, 0.5, true);
        auto probe = DT::randn({1, 2, 4, 4}, rng, 1.0);
        if (!fdiff_ok({x, w}, [&] { return sum_all(mul(conv3x3(x, w, 1), probe)); }, &why))
            return "conv3x3: " + why;
    }
    {
        auto logits = DT::randn({2, 4}, rng, 1.0, true);
        std::vector<int> labels = {1, 3};
        if (!fdiff_ok({logits}, [&] { return smoothed_cross_entropy(logits, labels, 0.1); }, &why))
            return "smoothed_cross_entropy: " + why;
    }
    return std::nullopt;
}

CheckResult check_identity_at_init() {
    Rng rng(53);
    auto x = DT::randn({2, 8, 2, 3}, rng, 1.0);
    auto cam = CamStateT<double>::make();
    if (cam_forward(x, cam)->data != x->data) return "channel attention with gamma=0 is not the identity";
    auto sam = SamRpeStateT<double>::make(8, 2, 3, rng);
    if (sam_rpe_forward(x, sam, Mode::Eval)->data != x->data)
        return "spatial attention with gamma=0 is not the identity (eval)";
    if (sam_rpe_forward(x, sam, Mode::Train)->data != x->data)
        return "spatial attention with gamma=0 is not the identity (train)";
    return std::nullopt;
}

CheckResult check_reindex_mask() {
    for (int h = 1; h <= 4; ++h)
        for (int w = 1; w <= 4; ++w) {
            auto m = build_reindex_mask<double>(Axis::Height, h, w);
            int shifts = 2 * h - 1;
            for (int hh = 0; hh < h; ++hh)
                for (int i = 0; i < w; ++i)
                    for (int r = -(h - 1); r <= h - 1; ++r) {
                        double expect = (i - hh == r) ? 1.0 : 0.0;
                        double got = m.mat->data[(std::size_t(hh) * w + i) * shifts + std::size_t(r + h - 1)];
                        if (got != expect)
                            return "height mask H=" + std::to_string(h) + " W=" + std::to_string(w) +
                                   " disagrees with the re-indexing rule at (" + std::to_string(hh) + "," +
                                   std::to_string(i) + "," + std::to_string(r) + ")";
                    }
        }
    return std::nullopt;
}

CheckResult check_attention_oracle() {
    Rng rng(59);
    // channel attention against a plain-loop evaluation
    {
        int channels = 4, hw = 6;
        auto x = DT::randn({1, channels, 2, 3}, rng, 1.0);
        auto st = CamStateT<double>::make();
        st.gamma->data[0] = 0.7;
        auto y = cam_forward(x, st);
        for (int c = 0; c < channels; ++c) {
            std::vector<double> row(std::size_t(channels));
            for (int c2 = 0; c2 < channels; ++c2) {
                double s = 0;
                for (int p = 0; p < hw; ++p)
                    s += x->data[std::size_t(c) * hw + p] * x->data[std::size_t(c2) * hw + p];
                row[std::size_t(c2)] = s;
            }
            double mx = row[0];
            for (double v : row) mx = std::max(mx, v);
            double acc = 0;
            for (auto& v : row) {
                v = std::exp(v - mx);
                acc += v;
            }
            for (auto& v : row) v /= acc;
            for (int p = 0; p < hw; ++p) {
                double s = 0;
                for (int c2 = 0; c2 < channels; ++c2) s += row[std::size_t(c2)] * x->data[std::size_t(c2) * hw + p];
                double expect = 0.7 * s + x->data[std::size_t(c) * hw + p];
                if (std::abs(y->data[std::size_t(c) * hw + p] - expect) > 1e-9)
                    return "channel attention disagrees with the loop oracle";
            }
        }
    }
    // positional term against explicit position sums
    {
        int channels = 8, dk = 1, h = 2, w = 2, hw = 4;
        auto mask = build_reindex_mask<double>(Axis::Height, h, w);
        auto q = DT::randn({dk, hw}, rng, 1.0);
        auto v = DT::randn({channels, hw}, rng, 1.0);
        auto emb = DT::randn({2 * h - 1, dk}, rng, 1.0);
        auto term = relative_position_term(mask, q, v, emb);
        for (int c = 0; c < channels; ++c)
            for (int p2 = 0; p2 < hw; ++p2) {
                double s = 0;
                for (int p = 0; p < hw; ++p) {
                    double pq = 0;
                    for (int d = 0; d < dk; ++d) {
                        double pe = 0;
                        for (int r = 0; r < 2 * h - 1; ++r)
                            pe += mask.mat->data[std::size_t(p) * (2 * h - 1) + r] * emb->data[std::size_t(r) * dk + d];
                        pq += pe * q->data[std::size_t(d) * hw + p2];
                    }
                    s += v->data[std::size_t(c) * hw + p] * pq;
                }
                if (std::abs(term->data[std::size_t(c) * hw + p2] - s) > 1e-9)
                    return "relative position term disagrees with the loop oracle";
            }
    }
    // spatial attention map rows must be normalized
    {
        auto st = SamRpeStateT<double>::make(8, 2, 2, rng);
        st.gamma->data[0] = 0.3;
        auto x = DT::randn({1, 8, 2, 2}, rng, 1.0);
        AttentionTraceT<double> trace;
        sam_rpe_forward(x, st, Mode::Eval, &trace);
        for (auto& m : trace.maps)
            for (int r = 0; r < m.rows; ++r) {
                double acc = 0;
                for (int c = 0; c < m.cols; ++c) acc += m.values[std::size_t(r) * m.cols + c];
                if (std::abs(acc - 1.0) > 1e-6) return "spatial attention rows are not normalized";
            }
    }
    return std::nullopt;
}

CheckResult check_metric_oracle() {
    Rng rng(61);
    // AP = 1/r for a single relevant item
    {
        std::vector<std::vector<int>> ranking = {{1, 2, 3, 0}};
        double ap = mean_ap(ranking, {9}, {9, 5, 6, 7});
        if (std::abs(ap - 0.25) > 1e-12) return "single-relevant AP at rank 4 is not 0.25";
    }
    for (int trial = 0; trial < 30; ++trial) {
        int gallery_n = 3 + int(rng.below(7));
        std::vector<int> glabels;
        for (int g = 0; g < gallery_n; ++g) glabels.push_back(int(rng.below(3)));
        int q_label = glabels[std::size_t(rng.below(uint64_t(glabels.size())))];
        std::vector<int> ranked;
        for (int i = 0; i < gallery_n; ++i) ranked.push_back(i);
        for (std::size_t i = ranked.size(); i > 1; --i) std::swap(ranked[i - 1], ranked[rng.below(i)]);
        int hits = 0;
        double ap = 0;
        for (std::size_t k = 0; k < ranked.size(); ++k)
            if (glabels[std::size_t(ranked[k])] == q_label) {
                ++hits;
                ap += double(hits) / double(k + 1);
            }
        ap /= double(hits);
        double got = mean_ap({ranked}, {q_label}, glabels);
        if (std::abs(got - ap) > 1e-12) return "mean_ap disagrees with the brute-force enumeration";
    }
    // rank1 <= mAP under the single-relevant protocol
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<int> glabels = {0, 1, 2, 3};
        std::vector<int> qlabels = {0, 1, 2, 3, 0, 1};
        EmbeddingSet g, q;
        g.dim = q.dim = 4;
        g.labels = glabels;
        q.labels = qlabels;
        for (std::size_t i = 0; i < glabels.size() * 4; ++i) g.matrix.push_back(float(rng.normal()));
        for (std::size_t i = 0; i < qlabels.size() * 4; ++i) q.matrix.push_back(float(rng.normal()));
        auto ranking = cosine_rank(q, g);
        if (rank1(ranking, qlabels, glabels) > mean_ap(ranking, qlabels, glabels) + 1e-12)
            return "rank1 exceeded mAP under the single-relevant protocol";
    }
    return std::nullopt;
}

}  // namespace

int run_selfcheck(const std::string& corrupt) {
    if (!corrupt.empty()) {
        if (corrupt == "softmax")
            testing::corrupt_softmax.store(true);
        else
            throw UsageError("unknown corruption hook '" + corrupt + "'");
    }
    struct Category {
        const char* name;
        std::function<CheckResult()> run;
    };
    const std::vector<Category> categories = {
        {"simd-kernel-equivalence", check_kernel_equivalence},
        {"softmax-normalization", check_softmax_normalization},
        {"gradient-checks", check_gradients},
        {"attention-identity-at-init", check_identity_at_init},
        {"reindex-mask-rule", check_reindex_mask},
        {"attention-loop-oracle", check_attention_oracle},
        {"retrieval-metric-oracle", check_metric_oracle},
    };
    int failures = 0;
    for (const auto& cat : categories) {
        CheckResult result;
        try {
            result = cat.run();
        } catch (const std::exception& e) {
            result = std::string("exception: ") + e.what();
        }
        if (result) {
            ++failures;
            std::printf("[FAIL] %s: %s\n", cat.name, result->c_str());
        } else {
            std::printf("[ok]   %s\n", cat.name);
        }
    }
    testing::corrupt_softmax.store(false);
    std::printf("%d/%zu self-check categories passed\n", int(categories.size()) - failures, categories.size());
    return failures;
}

}  // namespace mba
