#pragma once

#include <string>
#include <utility>
#include <vector>

#include "mba/ops.hpp"

// Channel attention and spatial attention with factorized relative positional
// encodings. Both modules are residual with a learnable mixing scalar gamma
// that starts at zero, so a freshly constructed module is an exact identity.

namespace mba {

enum class Axis { Height, Width };

// Which relative shift the height mask encodes. Paper follows the printed
// re-indexing rule (shift = column index - row index of the key pixel);
// Rowwise compares the key pixel's row against the query pixel's row.
enum class RpeVariant { Paper, Rowwise };

template <class T>
using NamedTensors = std::vector<std::pair<std::string, TensorPtrT<T>>>;

template <class T>
struct CamStateT {
    TensorPtrT<T> gamma;

    static CamStateT make() {
        CamStateT s;
        s.gamma = TensorT<T>::scalar(T(0), true);
        return s;
    }

    NamedTensors<T> named_params(const std::string& prefix) const { return {{prefix + ".gamma", gamma}}; }
};

using CamState = CamStateT<float>;

// 0/1 matrix of shape [HW, 2S-1] (S = H for the height axis, W for the
// width axis) mapping each pixel to the embedding row of its relative shift.
// Height axis: pixel (h,i) selects shift r = i - h when |i-h| <= H-1, else
// the row is all zero. Width axis is the same with the roles of the two
// coordinates swapped: r = h - i bounded by W-1.
template <class T>
struct ReindexMaskT {
    Axis axis = Axis::Height;
    int height = 0, width = 0;
    TensorPtrT<T> mat;
};

using ReindexMask = ReindexMaskT<float>;

template <class T>
ReindexMaskT<T> build_reindex_mask(Axis axis, int height, int width) {
    if (height < 1 || width < 1) throw ShapeError("build_reindex_mask: extents must be >= 1");
    int span = axis == Axis::Height ? height : width;
    int shifts = 2 * span - 1;
    ReindexMaskT<T> m;
    m.axis = axis;
    m.height = height;
    m.width = width;
    m.mat = TensorT<T>::create({height * width, shifts}, false);
    for (int h = 0; h < height; ++h) {
        for (int i = 0; i < width; ++i) {
            int r = axis == Axis::Height ? i - h : h - i;
            if (r <= -(span) || r >= span) continue;
            std::size_t row = std::size_t(h) * width + i;
            m.mat->data[row * shifts + std::size_t(r + span - 1)] = T(1);
        }
    }
    return m;
}

template <class T>
struct SamRpeStateT {
    int channels = 0, height = 0, width = 0, key_dim = 0;
    RpeVariant variant = RpeVariant::Paper;
    bool use_rpe = true;  // false: content attention only, no positional terms

    TensorPtrT<T> w_k, w_q;  // [dk, C]
    TensorPtrT<T> w_v;       // [C, C]
    BatchNormStateT<T> bn_k, bn_q, bn_v;

    TensorPtrT<T> rel_h;  // [2H-1, dk]
    TensorPtrT<T> rel_w;  // [2W-1, dk]
    BatchNormStateT<T> bn_h, bn_w;

    TensorPtrT<T> gamma;

    ReindexMaskT<T> mask_h, mask_w;

    static SamRpeStateT make(int channels, int height, int width, Rng& rng,
                             RpeVariant variant = RpeVariant::Paper) {
        if (channels < 8)
            throw ShapeError("spatial attention needs at least 8 channels, got " + std::to_string(channels));
        SamRpeStateT s;
        s.channels = channels;
        s.height = height;
        s.width = width;
        s.key_dim = channels / 8;
        s.variant = variant;
        T proj_std = T(1) / std::sqrt(T(channels));
        s.w_k = TensorT<T>::randn({s.key_dim, channels}, rng, proj_std, true);
        s.w_q = TensorT<T>::randn({s.key_dim, channels}, rng, proj_std, true);
        s.w_v = TensorT<T>::randn({channels, channels}, rng, proj_std, true);
        s.bn_k = BatchNormStateT<T>::make(s.key_dim);
        s.bn_q = BatchNormStateT<T>::make(s.key_dim);
        s.bn_v = BatchNormStateT<T>::make(channels);
        T emb_std = T(1) / std::sqrt(T(s.key_dim));
        s.rel_h = TensorT<T>::randn({2 * height - 1, s.key_dim}, rng, emb_std, true);
        s.rel_w = TensorT<T>::randn({2 * width - 1, s.key_dim}, rng, emb_std, true);
        s.bn_h = BatchNormStateT<T>::make(channels);
        s.bn_w = BatchNormStateT<T>::make(channels);
        s.gamma = TensorT<T>::scalar(T(0), true);
        s.mask_h = build_reindex_mask<T>(Axis::Height, height, width);
        s.mask_w = build_reindex_mask<T>(Axis::Width, height, width);
        return s;
    }

    NamedTensors<T> named_params(const std::string& p) const {
        NamedTensors<T> out = {
            {p + ".w_k", w_k},           {p + ".w_q", w_q},           {p + ".w_v", w_v},
            {p + ".bn_k.scale", bn_k.scale}, {p + ".bn_k.shift", bn_k.shift},
            {p + ".bn_q.scale", bn_q.scale}, {p + ".bn_q.shift", bn_q.shift},
            {p + ".bn_v.scale", bn_v.scale}, {p + ".bn_v.shift", bn_v.shift},
        };
        if (use_rpe) {
            out.insert(out.end(), {
                {p + ".rel_h", rel_h},       {p + ".rel_w", rel_w},
                {p + ".bn_h.scale", bn_h.scale}, {p + ".bn_h.shift", bn_h.shift},
                {p + ".bn_w.scale", bn_w.scale}, {p + ".bn_w.shift", bn_w.shift},
            });
        }
        out.emplace_back(p + ".gamma", gamma);
        return out;
    }
};

using SamRpeState = SamRpeStateT<float>;

// Captured attention maps (one per batch element per forward call) so tests
// can check normalization without re-deriving the maps.
template <class T>
struct AttentionTraceT {
    struct Map {
        int rows = 0, cols = 0;
        std::vector<T> values;
    };
    std::vector<Map> maps;
};

using AttentionTrace = AttentionTraceT<float>;

// Channel attention: keys/queries/values are raw reshapes of the input (no
// learned projections, no normalization of the attended output).
template <class T>
TensorPtrT<T> cam_forward(const TensorPtrT<T>& input, const CamStateT<T>& state,
                          AttentionTraceT<T>* trace = nullptr) {
    if (input->ndim() != 4) throw ShapeError("cam_forward expects [B,C,H,W], got " + shape_str(input->shape));
    int batch = input->shape[0], channels = input->shape[1], h = input->shape[2], w = input->shape[3];
    int hw = h * w;
    std::vector<TensorPtrT<T>> outs;
    outs.reserve(std::size_t(batch));
    for (int b = 0; b < batch; ++b) {
        auto flat = reshape(batch_slice(input, b), {channels, hw});  // K = Q = V
        auto attn = softmax_rows(matmul(flat, transpose(flat)));     // [C, C]
        if (trace) trace->maps.push_back({channels, channels, attn->data});
        auto attended = matmul(attn, flat);
        outs.push_back(reshape(scale_add(state.gamma, attended, flat), {channels, h, w}));
    }
    return stack_batch(outs);
}

// The printed relative-position term for one axis: P = mask * emb selects
// each key pixel's shift embedding, P*Q forms the positional attention, and
// V * (P*Q) attends the values with it.
template <class T>
TensorPtrT<T> relative_position_term(const ReindexMaskT<T>& mask, const TensorPtrT<T>& q, const TensorPtrT<T>& v,
                                     const TensorPtrT<T>& emb) {
    int hw = mask.height * mask.width;
    if (q->ndim() != 2 || q->shape[1] != hw || v->ndim() != 2 || v->shape[1] != hw)
        throw ShapeError("relative_position_term: q " + shape_str(q->shape) + " / v " + shape_str(v->shape) +
                         " do not match mask pixels " + std::to_string(hw));
    if (emb->ndim() != 2 || emb->shape[0] != mask.mat->shape[1] || emb->shape[1] != q->shape[0])
        throw ShapeError("relative_position_term: embedding " + shape_str(emb->shape) + " does not match mask " +
                         shape_str(mask.mat->shape) + " and q " + shape_str(q->shape));
    auto pos = matmul(mask.mat, emb);   // [HW, dk]
    auto attn = matmul(pos, q);         // [HW, HW]
    auto out = matmul(v, attn);         // [C, HW]
    return reshape(out, {v->shape[0], mask.height, mask.width});
}

namespace detail {

// Row-wise variant along the height axis on a column-major-by-row pixel
// layout: the attention logit between key pixel (h,i) and query pixel
// (h',i') uses the embedding of shift h-h'. Computed blockwise per query
// row from S = emb * Q without materializing any pairwise table beyond
// the HW x HW result.
template <class T>
TensorPtrT<T> rowwise_term_height(const TensorPtrT<T>& q, const TensorPtrT<T>& v, const TensorPtrT<T>& emb,
                                  int height, int width) {
    int hw = height * width;
    // U[:,h] = sum_i V[:,(h,i)]
    auto rowsum_sel = TensorT<T>::create({hw, height}, false);
    for (int h = 0; h < height; ++h)
        for (int i = 0; i < width; ++i)
            rowsum_sel->data[(std::size_t(h) * width + i) * height + h] = T(1);
    auto u = matmul(v, rowsum_sel);  // [C, H]

    auto s = matmul(emb, q);  // [2H-1, HW]
    std::vector<TensorPtrT<T>> blocks;
    blocks.reserve(std::size_t(height));
    for (int qrow = 0; qrow < height; ++qrow) {
        auto sel = TensorT<T>::create({height, 2 * height - 1}, false);
        for (int h = 0; h < height; ++h) sel->data[std::size_t(h) * (2 * height - 1) + (h - qrow + height - 1)] = T(1);
        auto s_blk = slice_last(s, qrow * width, width);  // [2H-1, W]
        blocks.push_back(matmul(u, matmul(sel, s_blk)));  // [C, W]
    }
    return reshape(concat_last(blocks), {v->shape[0], height, width});
}

}  // namespace detail

// Relative-position term dispatching on the configured shift definition.
template <class T>
TensorPtrT<T> relative_position_term_variant(RpeVariant variant, const ReindexMaskT<T>& mask, const TensorPtrT<T>& q,
                                             const TensorPtrT<T>& v, const TensorPtrT<T>& emb) {
    if (variant == RpeVariant::Paper) return relative_position_term(mask, q, v, emb);
    int height = mask.height, width = mask.width;
    if (mask.axis == Axis::Height) return detail::rowwise_term_height(q, v, emb, height, width);
    // Width axis: transpose the pixel layout so columns become rows, run the
    // height-style computation, then restore the original layout.
    std::vector<int> to_t(std::size_t(height) * width), from_t(std::size_t(height) * width);
    for (int h = 0; h < height; ++h)
        for (int i = 0; i < width; ++i) {
            to_t[std::size_t(i) * height + h] = h * width + i;
            from_t[std::size_t(h) * width + i] = i * height + h;
        }
    auto qt = permute_cols(q, to_t);
    auto vt = permute_cols(v, to_t);
    auto term = detail::rowwise_term_height(qt, vt, emb, width, height);  // [C, W, H]
    auto back = permute_cols(reshape(term, {v->shape[0], width * height}), from_t);
    return reshape(back, {v->shape[0], height, width});
}

// Spatial attention with relative positional encodings. Content attention
// plus one positional term per axis, each batch-normalized, mixed in by
// gamma on top of the residual input.
template <class T>
TensorPtrT<T> sam_rpe_forward(const TensorPtrT<T>& input, SamRpeStateT<T>& state, Mode mode,
                              AttentionTraceT<T>* trace = nullptr) {
    if (input->ndim() != 4) throw ShapeError("sam_rpe_forward expects [B,C,H,W], got " + shape_str(input->shape));
    int batch = input->shape[0], channels = input->shape[1], h = input->shape[2], w = input->shape[3];
    if (channels != state.channels || h != state.height || w != state.width)
        throw ShapeError("sam_rpe_forward: input " + shape_str(input->shape) + " does not match state (C=" +
                         std::to_string(state.channels) + ",H=" + std::to_string(state.height) + ",W=" +
                         std::to_string(state.width) + ")");
    int hw = h * w;

    auto keys = pointwise_conv(input, state.w_k, &state.bn_k, Activation::Relu, mode);    // [B,dk,H,W]
    auto queries = pointwise_conv(input, state.w_q, &state.bn_q, Activation::Relu, mode); // [B,dk,H,W]
    auto values = pointwise_conv(input, state.w_v, &state.bn_v, Activation::Relu, mode);  // [B,C,H,W]

    std::vector<TensorPtrT<T>> content, term_h, term_w;
    content.reserve(std::size_t(batch));
    for (int b = 0; b < batch; ++b) {
        auto k = reshape(batch_slice(keys, b), {state.key_dim, hw});
        auto q = reshape(batch_slice(queries, b), {state.key_dim, hw});
        auto v = reshape(batch_slice(values, b), {channels, hw});
        auto attn = softmax_rows(matmul(transpose(k), q));  // [HW, HW]
        if (trace) trace->maps.push_back({hw, hw, attn->data});
        content.push_back(reshape(matmul(v, attn), {channels, h, w}));
        if (state.use_rpe) {
            term_h.push_back(relative_position_term_variant(state.variant, state.mask_h, q, v, state.rel_h));
            term_w.push_back(relative_position_term_variant(state.variant, state.mask_w, q, v, state.rel_w));
        }
    }
    auto mixed = stack_batch(content);
    if (state.use_rpe) {
        auto pos_h = batch_norm(stack_batch(term_h), state.bn_h, mode);
        auto pos_w = batch_norm(stack_batch(term_w), state.bn_w, mode);
        mixed = add(mixed, add(pos_h, pos_w));
    }
    return scale_add(state.gamma, mixed, input);
}

}  // namespace mba
