#include <doctest.h>

#include <cmath>

#include "attention_oracle.hpp"
#include "mba/attention.hpp"
#include "test_support.hpp"

using namespace mba;

namespace {

using DT = TensorT<double>;
using DP = TensorPtrT<double>;

DP randt(Rng& rng, std::vector<int> shape, bool rg = false, double scale = 1.0) {
    return DT::randn(std::move(shape), rng, scale, rg);
}

// applies a pixel permutation to the trailing H*W positions of [1,C,H,W]
DP permute_pixels(const DP& x, const std::vector<int>& perm) {
    auto out = DT::create(x->shape);
    int channels = x->shape[1];
    std::size_t hw = perm.size();
    for (int c = 0; c < channels; ++c)
        for (std::size_t p = 0; p < hw; ++p) out->data[c * hw + p] = x->data[c * hw + std::size_t(perm[p])];
    return out;
}

SamRpeStateT<double> make_sam_state(Rng& rng, int c, int h, int w, RpeVariant variant = RpeVariant::Paper) {
    auto st = SamRpeStateT<double>::make(c, h, w, rng, variant);
    // nudge normalization parameters off their symmetric defaults
    for (auto* bn : {&st.bn_k, &st.bn_q, &st.bn_v, &st.bn_h, &st.bn_w}) {
        for (std::size_t i = 0; i < bn->running_mean.size(); ++i) {
            bn->scale->data[i] = 0.8 + 0.4 * rng.uniform();
            bn->shift->data[i] = 0.2 * rng.normal();
            bn->running_mean[i] = 0.1 * rng.normal();
            bn->running_var[i] = 0.6 + rng.uniform();
        }
    }
    return st;
}

}  // namespace

TEST_CASE("channel attention with gamma=0 is a bit-exact identity") {
    Rng rng(101);
    auto x = randt(rng, {2, 4, 3, 2});
    auto st = CamStateT<double>::make();
    auto y = cam_forward(x, st);
    CHECK(y->data == x->data);

    Rng frng(102);
    auto xf = TensorT<float>::randn({2, 4, 3, 2}, frng, 1.f);
    auto stf = CamState::make();
    auto yf = cam_forward(xf, stf);
    CHECK(yf->data == xf->data);
}

TEST_CASE("channel attention C=2 H=W=1 matches hand evaluation") {
    double a = 0.7, b = -1.3;
    auto x = DT::from({1, 2, 1, 1}, {a, b});
    auto st = CamStateT<double>::make();
    st.gamma->data[0] = 1.0;
    auto y = cam_forward(x, st);
    // logits are the pairwise products of the two channel scalars
    double e00 = std::exp(a * a), e01 = std::exp(a * b), e10 = std::exp(b * a), e11 = std::exp(b * b);
    double s0 = e00 + e01, s1 = e10 + e11;
    double out0 = (e00 / s0) * a + (e01 / s0) * b + a;
    double out1 = (e10 / s1) * a + (e11 / s1) * b + b;
    CHECK(y->data[0] == doctest::Approx(out0).epsilon(1e-12));
    CHECK(y->data[1] == doctest::Approx(out1).epsilon(1e-12));
}

TEST_CASE("channel attention matches the loop oracle on a random batch") {
    Rng rng(103);
    int batch = 2, channels = 4, h = 3, w = 2, hw = h * w;
    auto x = randt(rng, {batch, channels, h, w});
    auto st = CamStateT<double>::make();
    st.gamma->data[0] = 0.6;
    auto y = cam_forward(x, st);
    for (int b = 0; b < batch; ++b) {
        attn_oracle::Mat sample(x->data.begin() + std::size_t(b) * channels * hw,
                                x->data.begin() + std::size_t(b + 1) * channels * hw);
        auto ref = attn_oracle::cam(sample, channels, hw, 0.6);
        for (std::size_t i = 0; i < ref.size(); ++i)
            CHECK(y->data[std::size_t(b) * channels * hw + i] == doctest::Approx(ref[i]).epsilon(1e-10));
    }
}

TEST_CASE("reindex mask: degenerate, frozen, and oracle cases") {
    // H=1: single shift column, every pixel in row 0 selects it when i=0
    auto m1 = build_reindex_mask<double>(Axis::Height, 1, 3);
    CHECK(m1.mat->shape == std::vector<int>{3, 1});
    CHECK(m1.mat->data[0] == 1.0);  // (0,0): i-h = 0
    CHECK(m1.mat->data[1] == 0.0);  // (0,1): i-h = 1, unrepresentable for H=1
    CHECK(m1.mat->data[2] == 0.0);

    // H=W=2, flattened rows (0,0),(0,1),(1,0),(1,1) -> shifts 0, 1, -1, 0
    auto m2 = build_reindex_mask<double>(Axis::Height, 2, 2);
    CHECK(m2.mat->shape == std::vector<int>{4, 3});
    CHECK(m2.mat->data == std::vector<double>{0, 1, 0, 0, 0, 1, 1, 0, 0, 0, 1, 0});

    // all H,W <= 5 against the direct triple-loop evaluation
    for (int h = 1; h <= 5; ++h)
        for (int w = 1; w <= 5; ++w)
            for (auto axis : {Axis::Height, Axis::Width}) {
                auto m = build_reindex_mask<double>(axis, h, w);
                auto ref = attn_oracle::reindex_mask(axis, h, w);
                REQUIRE(m.mat->data.size() == ref.size());
                CHECK(m.mat->data == ref);
                int span = axis == Axis::Height ? h : w;
                for (int hh = 0; hh < h; ++hh)
                    for (int ii = 0; ii < w; ++ii) {
                        int delta = axis == Axis::Height ? ii - hh : hh - ii;
                        int ones = 0;
                        for (int r = 0; r < 2 * span - 1; ++r) {
                            double v = m.mat->data[(std::size_t(hh) * w + ii) * (2 * span - 1) + r];
                            CHECK((v == 0.0 || v == 1.0));
                            if (v == 1.0) ++ones;
                        }
                        CHECK(ones == (std::abs(delta) <= span - 1 ? 1 : 0));
                    }
            }
}

TEST_CASE("relative_position_term: zeros, scalar chain, loop oracle") {
    Rng rng(104);
    int channels = 6, dk = 2, h = 2, w = 3, hw = h * w;
    auto mask = build_reindex_mask<double>(Axis::Height, h, w);
    auto q = randt(rng, {dk, hw});
    auto v = randt(rng, {channels, hw});

    auto zero_emb = DT::create({2 * h - 1, dk});
    auto zt = relative_position_term(mask, q, v, zero_emb);
    for (double x : zt->data) CHECK(x == 0.0);

    // H=W=1, dk=1: out = v * (p * q) with p the single r=0 embedding
    auto mask1 = build_reindex_mask<double>(Axis::Height, 1, 1);
    auto q1 = DT::from({1, 1}, {1.7});
    auto v1 = DT::from({1, 1}, {-0.4});
    auto e1 = DT::from({1, 1}, {0.9});
    auto t1 = relative_position_term(mask1, q1, v1, e1);
    CHECK(t1->data[0] == doctest::Approx(-0.4 * 0.9 * 1.7).epsilon(1e-12));

    // random case vs explicit summation over positions
    auto emb = randt(rng, {2 * h - 1, dk});
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
            CHECK(term->data[std::size_t(c) * hw + p2] == doctest::Approx(s).epsilon(1e-10));
        }
}

TEST_CASE("spatial attention with gamma=0 is a bit-exact identity in both modes") {
    Rng rng(105);
    auto st = make_sam_state(rng, 8, 2, 3);
    auto x = randt(rng, {2, 8, 2, 3});
    auto y_eval = sam_rpe_forward(x, st, Mode::Eval);
    CHECK(y_eval->data == x->data);
    auto y_train = sam_rpe_forward(x, st, Mode::Train);
    CHECK(y_train->data == x->data);
}

TEST_CASE("spatial attention on a single pixel gives the trivial attention map") {
    Rng rng(106);
    auto st = make_sam_state(rng, 8, 1, 1);
    st.gamma->data[0] = 0.5;
    auto x = randt(rng, {1, 8, 1, 1});
    AttentionTraceT<double> trace;
    sam_rpe_forward(x, st, Mode::Eval, &trace);
    REQUIRE(trace.maps.size() == 1);
    REQUIRE(trace.maps[0].values.size() == 1);
    CHECK(trace.maps[0].values[0] == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("spatial attention matches the fully-looped reference") {
    Rng rng(107);
    for (int h : {1, 2}) {
        for (int w : {2, 3}) {
            auto st = make_sam_state(rng, 8, h, w);
            st.gamma->data[0] = 0.8;
            auto x = randt(rng, {1, 8, h, w});
            attn_oracle::Mat sample(x->data.begin(), x->data.end());

            auto ref_eval = attn_oracle::sam_rpe(sample, st, false);
            auto y_eval = sam_rpe_forward(x, st, Mode::Eval);
            for (std::size_t i = 0; i < ref_eval.size(); ++i)
                CHECK(y_eval->data[i] == doctest::Approx(ref_eval[i]).epsilon(1e-9));

            auto ref_train = attn_oracle::sam_rpe(sample, st, true);
            auto y_train = sam_rpe_forward(x, st, Mode::Train);
            for (std::size_t i = 0; i < ref_train.size(); ++i)
                CHECK(y_train->data[i] == doctest::Approx(ref_train[i]).epsilon(1e-9));
        }
    }
}

TEST_CASE("attention map rows sum to one, including extreme inputs") {
    Rng rng(108);
    for (int trial = 0; trial < 10; ++trial) {
        double scale = trial % 2 == 0 ? 1.0 : 60.0;  // logits reach ~1e4 via dot products
        auto xc = randt(rng, {1, 5, 2, 2}, false, scale);
        auto cs = CamStateT<double>::make();
        cs.gamma->data[0] = 0.3;
        AttentionTraceT<double> ct;
        cam_forward(xc, cs, &ct);
        for (auto& m : ct.maps)
            for (int r = 0; r < m.rows; ++r) {
                double s = 0;
                for (int c = 0; c < m.cols; ++c) s += m.values[std::size_t(r) * m.cols + c];
                CHECK(std::abs(s - 1.0) < 1e-6);
            }

        auto st = make_sam_state(rng, 8, 2, 2);
        st.gamma->data[0] = 0.3;
        auto xs = randt(rng, {1, 8, 2, 2}, false, scale);
        AttentionTraceT<double> strace;
        sam_rpe_forward(xs, st, Mode::Eval, &strace);
        for (auto& m : strace.maps)
            for (int r = 0; r < m.rows; ++r) {
                double s = 0;
                for (int c = 0; c < m.cols; ++c) s += m.values[std::size_t(r) * m.cols + c];
                CHECK(std::abs(s - 1.0) < 1e-6);
            }
    }
}

TEST_CASE("content attention is pixel-permutation equivariant; relative encodings break it") {
    Rng rng(109);
    int h = 2, w = 2, hw = 4;
    auto st = make_sam_state(rng, 8, h, w);
    st.gamma->data[0] = 1.0;
    std::fill(st.rel_h->data.begin(), st.rel_h->data.end(), 0.0);
    std::fill(st.rel_w->data.begin(), st.rel_w->data.end(), 0.0);
    auto x = randt(rng, {1, 8, h, w});

    // an arbitrary non-trivial pixel shuffle
    std::vector<int> perm = {2, 0, 3, 1};
    auto fx = sam_rpe_forward(x, st, Mode::Eval);
    auto fpx = sam_rpe_forward(permute_pixels(x, perm), st, Mode::Eval);
    auto pfx = permute_pixels(fx, perm);
    for (std::size_t i = 0; i < fpx->data.size(); ++i)
        CHECK(fpx->data[i] == doctest::Approx(pfx->data[i]).epsilon(1e-9));

    // restore nonzero embeddings: swapping two pixels with different shifts
    // must now change the result
    Rng rng2(110);
    auto st2 = make_sam_state(rng2, 8, h, w);
    st2.gamma->data[0] = 1.0;
    std::vector<int> swap01 = {1, 0, 2, 3};  // not a translation
    auto g = sam_rpe_forward(x, st2, Mode::Eval);
    auto gpx = sam_rpe_forward(permute_pixels(x, swap01), st2, Mode::Eval);
    auto pgx = permute_pixels(g, swap01);
    double max_diff = 0;
    for (std::size_t i = 0; i < gpx->data.size(); ++i)
        max_diff = std::max(max_diff, std::abs(gpx->data[i] - pgx->data[i]));
    CHECK(max_diff > 1e-7);
    (void)hw;
}

TEST_CASE("relative position path never materializes a pairwise table") {
    Rng rng(111);
    int channels = 64, h = 4, w = 4, hw = h * w, dk = channels / 8;
    auto mask = build_reindex_mask<double>(Axis::Height, h, w);
    CHECK(mask.mat->shape == std::vector<int>{hw, 2 * h - 1});
    auto q = randt(rng, {dk, hw});
    auto v = randt(rng, {channels, hw});
    auto emb = randt(rng, {2 * h - 1, dk});
    AllocStats::reset();
    relative_position_term(mask, q, v, emb);
    std::size_t peak = AllocStats::peak_elems();
    CHECK(peak <= std::size_t(channels) * hw);          // largest legitimate buffer
    CHECK(peak < std::size_t(hw) * hw * dk);            // pairwise 3-D table never allocated
}

TEST_CASE("gradients of both attention modules pass finite differences") {
    Rng rng(112);
    gradcheck::Failure fail;

    {
        auto x = randt(rng, {2, 3, 2, 2}, true);
        auto st = CamStateT<double>::make();
        st.gamma->data[0] = 0.4;
        auto w = randt(rng, {2, 3, 2, 2});
        bool ok = gradcheck::check({{"x", x}, {"gamma", st.gamma}},
                                   [&] { return sum_all(mul(cam_forward(x, st), w)); }, 1e-4, 1e-5, &fail);
        if (!ok)
            MESSAGE("cam: " << fail.leaf << "[" << fail.index << "] a=" << fail.analytic << " n=" << fail.numeric);
        CHECK(ok);
    }

    for (auto variant : {RpeVariant::Paper, RpeVariant::Rowwise}) {
        for (auto mode : {Mode::Eval, Mode::Train}) {
            auto st = make_sam_state(rng, 8, 2, 2, variant);
            st.gamma->data[0] = 0.37;
            auto x = randt(rng, {2, 8, 2, 2}, true);
            auto w = randt(rng, {2, 8, 2, 2});
            std::vector<std::pair<std::string, DP>> leaves = {{"x", x}};
            for (auto& [name, t] : st.named_params("sam")) leaves.emplace_back(name, t);
            bool ok = gradcheck::check(leaves, [&] { return sum_all(mul(sam_rpe_forward(x, st, mode), w)); },
                                       1e-4, 1e-5, &fail);
            if (!ok)
                MESSAGE("sam variant=" << (variant == RpeVariant::Paper ? "paper" : "rowwise")
                                       << " mode=" << (mode == Mode::Eval ? "eval" : "train") << ": " << fail.leaf
                                       << "[" << fail.index << "] a=" << fail.analytic << " n=" << fail.numeric
                                       << " rel=" << fail.rel);
            CHECK(ok);
        }
    }
}

TEST_CASE("rowwise variant matches its own pairwise-loop reference") {
    Rng rng(113);
    int channels = 8, dk = 1, h = 3, w = 2, hw = h * w;
    auto q = randt(rng, {dk, hw});
    auto v = randt(rng, {channels, hw});

    // height: shift between key row and query row
    auto emb_h = randt(rng, {2 * h - 1, dk});
    auto mask_h = build_reindex_mask<double>(Axis::Height, h, w);
    auto term_h = relative_position_term_variant(RpeVariant::Rowwise, mask_h, q, v, emb_h);
    for (int c = 0; c < channels; ++c)
        for (int hq = 0; hq < h; ++hq)
            for (int iq = 0; iq < w; ++iq) {
                double s = 0;
                for (int hk = 0; hk < h; ++hk)
                    for (int ik = 0; ik < w; ++ik) {
                        double logit = 0;
                        for (int d = 0; d < dk; ++d)
                            logit += emb_h->data[std::size_t(hk - hq + h - 1) * dk + d] *
                                     q->data[std::size_t(d) * hw + (hq * w + iq)];
                        s += v->data[std::size_t(c) * hw + (hk * w + ik)] * logit;
                    }
                CHECK(term_h->data[std::size_t(c) * hw + (hq * w + iq)] == doctest::Approx(s).epsilon(1e-9));
            }

    // width: shift between key column and query column
    auto emb_w = randt(rng, {2 * w - 1, dk});
    auto mask_w = build_reindex_mask<double>(Axis::Width, h, w);
    auto term_w = relative_position_term_variant(RpeVariant::Rowwise, mask_w, q, v, emb_w);
    for (int c = 0; c < channels; ++c)
        for (int hq = 0; hq < h; ++hq)
            for (int iq = 0; iq < w; ++iq) {
                double s = 0;
                for (int hk = 0; hk < h; ++hk)
                    for (int ik = 0; ik < w; ++ik) {
                        double logit = 0;
                        for (int d = 0; d < dk; ++d)
                            logit += emb_w->data[std::size_t(ik - iq + w - 1) * dk + d] *
                                     q->data[std::size_t(d) * hw + (hq * w + iq)];
                        s += v->data[std::size_t(c) * hw + (hk * w + ik)] * logit;
                    }
                CHECK(term_w->data[std::size_t(c) * hw + (hq * w + iq)] == doctest::Approx(s).epsilon(1e-9));
            }
}
