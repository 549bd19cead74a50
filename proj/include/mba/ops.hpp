#pragma once

#include <algorithm>
#include <cmath>
#include <cstring>
#include <string>
#include <vector>

#include "mba/tensor.hpp"

// Differentiable operations. Each op computes its forward value through the
// simd kernels, verifies the output is finite, and records a backward closure
// that accumulates into the parents' grad buffers.

namespace mba {

enum class Mode { Train, Eval };
enum class Activation { None, Relu };

namespace testing {
// Self-check corruption hook: when set, softmax_rows perturbs its output so
// the normalization invariant visibly fails.
inline std::atomic<bool> corrupt_softmax{false};
}  // namespace testing

namespace detail {

template <class T>
inline void ensure_out_grad(TensorT<T>* o) {
    if (o->grad.size() != o->data.size()) o->grad.assign(o->data.size(), T(0));
}

template <class T>
inline void require_same_shape(const TensorPtrT<T>& a, const TensorPtrT<T>& b, const char* op) {
    if (a->shape != b->shape)
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a->shape) + " vs " + shape_str(b->shape));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// elementwise
// ---------------------------------------------------------------------------

template <class T>
TensorPtrT<T> add(const TensorPtrT<T>& a, const TensorPtrT<T>& b) {
    detail::require_same_shape(a, b, "add");
    auto out = TensorT<T>::create(a->shape, a->requires_grad || b->requires_grad);
    simd::add(a->data.data(), b->data.data(), out->data.data(), out->numel());
    detail::check_finite(out, "add");
    if (out->requires_grad) {
        out->parents = {a, b};
        TensorT<T>* o = out.get();
        out->backfn = [o, a, b] {
            detail::ensure_out_grad(o);
            if (a->requires_grad) {
                a->ensure_grad();
                simd::axpy(T(1), o->grad.data(), a->grad.data(), o->grad.size());
            }
            if (b->requires_grad) {
                b->ensure_grad();
                simd::axpy(T(1), o->grad.data(), b->grad.data(), o->grad.size());
            }
        };
    }
    return out;
}

template <class T>
TensorPtrT<T> mul(const TensorPtrT<T>& a, const TensorPtrT<T>& b) {
    detail::require_same_shape(a, b, "mul");
    auto out = TensorT<T>::create(a->shape, a->requires_grad || b->requires_grad);
    simd::mul(a->data.data(), b->data.data(), out->data.data(), out->numel());
    detail::check_finite(out, "mul");
    if (out->requires_grad) {
        out->parents = {a, b};
        TensorT<T>* o = out.get();
        out->backfn = [o, a, b] {
            detail::ensure_out_grad(o);
            std::size_t n = o->grad.size();
            if (a->requires_grad) {
                a->ensure_grad();
                for (std::size_t i = 0; i < n; ++i) a->grad[i] += o->grad[i] * b->data[i];
            }
            if (b->requires_grad) {
                b->ensure_grad();
                for (std::size_t i = 0; i < n; ++i) b->grad[i] += o->grad[i] * a->data[i];
            }
        };
    }
    return out;
}

// out = gamma * x + y with a learnable scalar gamma. The residual mixer used
// by both attention modules: at gamma == 0 the output equals y bit-for-bit.
template <class T>
TensorPtrT<T> scale_add(const TensorPtrT<T>& gamma, const TensorPtrT<T>& x, const TensorPtrT<T>& y) {
    if (gamma->numel() != 1) throw ShapeError("scale_add: gamma must be a scalar tensor");
    detail::require_same_shape(x, y, "scale_add");
    auto out = TensorT<T>::create(x->shape, gamma->requires_grad || x->requires_grad || y->requires_grad);
    simd::axpy_out(gamma->data[0], x->data.data(), y->data.data(), out->data.data(), out->numel());
    detail::check_finite(out, "scale_add");
    if (out->requires_grad) {
        out->parents = {gamma, x, y};
        TensorT<T>* o = out.get();
        out->backfn = [o, gamma, x, y] {
            detail::ensure_out_grad(o);
            std::size_t n = o->grad.size();
            if (gamma->requires_grad) {
                gamma->ensure_grad();
                gamma->grad[0] += simd::dot(o->grad.data(), x->data.data(), n);
            }
            if (x->requires_grad) {
                x->ensure_grad();
                simd::axpy(gamma->data[0], o->grad.data(), x->grad.data(), n);
            }
            if (y->requires_grad) {
                y->ensure_grad();
                simd::axpy(T(1), o->grad.data(), y->grad.data(), n);
            }
        };
    }
    return out;
}

template <class T>
TensorPtrT<T> relu(const TensorPtrT<T>& a) {
    auto out = TensorT<T>::create(a->shape, a->requires_grad);
    simd::relu(a->data.data(), out->data.data(), out->numel());
    detail::check_finite(out, "relu");
    if (out->requires_grad) {
        out->parents = {a};
        TensorT<T>* o = out.get();
        out->backfn = [o, a] {
            detail::ensure_out_grad(o);
            a->ensure_grad();
            for (std::size_t i = 0; i < o->grad.size(); ++i)
                if (a->data[i] > T(0)) a->grad[i] += o->grad[i];
        };
    }
    return out;
}

template <class T>
TensorPtrT<T> leaky_relu(const TensorPtrT<T>& a, T slope) {
    auto out = TensorT<T>::create(a->shape, a->requires_grad);
    simd::leaky_relu(a->data.data(), slope, out->data.data(), out->numel());
    detail::check_finite(out, "leaky_relu");
    if (out->requires_grad) {
        out->parents = {a};
        TensorT<T>* o = out.get();
        out->backfn = [o, a, slope] {
            detail::ensure_out_grad(o);
            a->ensure_grad();
            for (std::size_t i = 0; i < o->grad.size(); ++i)
                a->grad[i] += (a->data[i] > T(0) ? o->grad[i] : slope * o->grad[i]);
        };
    }
    return out;
}

template <class T>
TensorPtrT<T> dropout(const TensorPtrT<T>& a, T p, Mode mode, Rng& rng) {
    if (mode == Mode::Eval || p <= T(0)) return a;
    auto out = TensorT<T>::create(a->shape, a->requires_grad);
    std::vector<T> mask(a->numel());
    T keep_scale = T(1) / (T(1) - p);
    for (std::size_t i = 0; i < mask.size(); ++i) mask[i] = rng.uniform() < double(p) ? T(0) : keep_scale;
    simd::mul(a->data.data(), mask.data(), out->data.data(), out->numel());
    detail::check_finite(out, "dropout");
    if (out->requires_grad) {
        out->parents = {a};
        TensorT<T>* o = out.get();
        out->backfn = [o, a, mask = std::move(mask)] {
            detail::ensure_out_grad(o);
            a->ensure_grad();
            for (std::size_t i = 0; i < o->grad.size(); ++i) a->grad[i] += o->grad[i] * mask[i];
        };
    }
    return out;
}

template <class T>
TensorPtrT<T> sum_all(const TensorPtrT<T>& a) {
    auto out = TensorT<T>::create({1}, a->requires_grad);
    double acc = 0.0;
    for (T v : a->data) acc += double(v);
    out->data[0] = T(acc);
    detail::check_finite(out, "sum_all");
    if (out->requires_grad) {
        out->parents = {a};
        TensorT<T>* o = out.get();
        out->backfn = [o, a] {
            detail::ensure_out_grad(o);
            a->ensure_grad();
            for (std::size_t i = 0; i < a->grad.size(); ++i) a->grad[i] += o->grad[0];
        };
    }
    return out;
}

// ---------------------------------------------------------------------------
// shape
// ---------------------------------------------------------------------------

template <class T>
TensorPtrT<T> reshape(const TensorPtrT<T>& a, std::vector<int> shape) {
    std::size_t n = 1;
    for (int e : shape) n *= std::size_t(e > 0 ? e : 0);
    if (n != a->numel())
        throw ShapeError("reshape: element count mismatch, " + shape_str(a->shape) + " -> " + shape_str(shape));
    auto out = TensorT<T>::create(std::move(shape), a->requires_grad);
    out->data = a->data;
    if (out->requires_grad) {
        out->parents = {a};
        TensorT<T>* o = out.get();
        out->backfn = [o, a] {
            detail::ensure_out_grad(o);
            a->ensure_grad();
            simd::axpy(T(1), o->grad.data(), a->grad.data(), o->grad.size());
        };
    }
    return out;
}

template <class T>
TensorPtrT<T> transpose(const TensorPtrT<T>& a) {
    if (a->ndim() != 2) throw ShapeError("transpose expects a 2-D tensor, got " + shape_str(a->shape));
    int m = a->shape[0], n = a->shape[1];
    auto out = TensorT<T>::create({n, m}, a->requires_grad);
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) out->data[std::size_t(j) * m + i] = a->data[std::size_t(i) * n + j];
    if (out->requires_grad) {
        out->parents = {a};
        TensorT<T>* o = out.get();
        out->backfn = [o, a, m, n] {
            detail::ensure_out_grad(o);
            a->ensure_grad();
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < n; ++j) a->grad[std::size_t(i) * n + j] += o->grad[std::size_t(j) * m + i];
        };
    }
    return out;
}

// Concatenation along the trailing axis; all inputs must agree on the
// leading axes.
template <class T>
TensorPtrT<T> concat_last(const std::vector<TensorPtrT<T>>& parts) {
    if (parts.empty()) throw ShapeError("concat_last: no inputs");
    const auto& s0 = parts[0]->shape;
    int last_total = 0;
    bool rg = false;
    for (const auto& p : parts) {
        if (p->ndim() != s0.size() ||
            !std::equal(s0.begin(), s0.end() - 1, p->shape.begin()))
            throw ShapeError("concat_last: leading extents differ, " + shape_str(s0) + " vs " + shape_str(p->shape));
        last_total += p->shape.back();
        rg = rg || p->requires_grad;
    }
    std::vector<int> oshape = s0;
    oshape.back() = last_total;
    auto out = TensorT<T>::create(oshape, rg);

    std::size_t rows = 1;
    for (std::size_t i = 0; i + 1 < s0.size(); ++i) rows *= std::size_t(s0[i]);
    std::size_t off = 0;
    for (const auto& p : parts) {
        std::size_t w = std::size_t(p->shape.back());
        for (std::size_t r = 0; r < rows; ++r)
            std::memcpy(out->data.data() + r * last_total + off, p->data.data() + r * w, w * sizeof(T));
        off += w;
    }
    if (out->requires_grad) {
        out->parents = parts;
        TensorT<T>* o = out.get();
        out->backfn = [o, parts, rows, last_total] {
            detail::ensure_out_grad(o);
            std::size_t off = 0;
            for (const auto& p : parts) {
                std::size_t w = std::size_t(p->shape.back());
                if (p->requires_grad) {
                    p->ensure_grad();
                    for (std::size_t r = 0; r < rows; ++r)
                        simd::axpy(T(1), o->grad.data() + r * last_total + off, p->grad.data() + r * w, w);
                }
                off += w;
            }
        };
    }
    return out;
}

// out[..., j] = t[..., start + j] for j in [0, len)
template <class T>
TensorPtrT<T> slice_last(const TensorPtrT<T>& t, int start, int len) {
    int last = t->shape.back();
    if (start < 0 || len <= 0 || start + len > last)
        throw ShapeError("slice_last: [" + std::to_string(start) + "," + std::to_string(start + len) +
                         ") out of range for " + shape_str(t->shape));
    std::vector<int> oshape = t->shape;
    oshape.back() = len;
    auto out = TensorT<T>::create(oshape, t->requires_grad);
    std::size_t rows = t->numel() / std::size_t(last);
    for (std::size_t r = 0; r < rows; ++r)
        std::memcpy(out->data.data() + r * len, t->data.data() + r * last + start, std::size_t(len) * sizeof(T));
    if (out->requires_grad) {
        out->parents = {t};
        TensorT<T>* o = out.get();
        out->backfn = [o, t, rows, last, start, len] {
            detail::ensure_out_grad(o);
            t->ensure_grad();
            for (std::size_t r = 0; r < rows; ++r)
                simd::axpy(T(1), o->grad.data() + r * len, t->grad.data() + r * last + start, std::size_t(len));
        };
    }
    return out;
}

// Column permutation of a 2-D tensor: out[:, j] = x[:, perm[j]].
template <class T>
TensorPtrT<T> permute_cols(const TensorPtrT<T>& x, const std::vector<int>& perm) {
    if (x->ndim() != 2) throw ShapeError("permute_cols expects a 2-D tensor, got " + shape_str(x->shape));
    int rows = x->shape[0], cols = x->shape[1];
    if (int(perm.size()) != cols) throw ShapeError("permute_cols: permutation size does not match columns");
    auto out = TensorT<T>::create(x->shape, x->requires_grad);
    for (int r = 0; r < rows; ++r)
        for (int j = 0; j < cols; ++j)
            out->data[std::size_t(r) * cols + j] = x->data[std::size_t(r) * cols + perm[j]];
    if (out->requires_grad) {
        out->parents = {x};
        TensorT<T>* o = out.get();
        out->backfn = [o, x, perm, rows, cols] {
            detail::ensure_out_grad(o);
            x->ensure_grad();
            for (int r = 0; r < rows; ++r)
                for (int j = 0; j < cols; ++j)
                    x->grad[std::size_t(r) * cols + perm[j]] += o->grad[std::size_t(r) * cols + j];
        };
    }
    return out;
}

// x[B, ...] -> element b as [...]
template <class T>
TensorPtrT<T> batch_slice(const TensorPtrT<T>& x, int b) {
    if (x->ndim() < 2) throw ShapeError("batch_slice expects a batched tensor, got " + shape_str(x->shape));
    int batch = x->shape[0];
    if (b < 0 || b >= batch) throw ShapeError("batch_slice: index " + std::to_string(b) + " out of range");
    std::vector<int> oshape(x->shape.begin() + 1, x->shape.end());
    auto out = TensorT<T>::create(oshape, x->requires_grad);
    std::size_t stride = out->numel();
    std::memcpy(out->data.data(), x->data.data() + std::size_t(b) * stride, stride * sizeof(T));
    if (out->requires_grad) {
        out->parents = {x};
        TensorT<T>* o = out.get();
        out->backfn = [o, x, b, stride] {
            detail::ensure_out_grad(o);
            x->ensure_grad();
            simd::axpy(T(1), o->grad.data(), x->grad.data() + std::size_t(b) * stride, stride);
        };
    }
    return out;
}

template <class T>
TensorPtrT<T> stack_batch(const std::vector<TensorPtrT<T>>& parts) {
    if (parts.empty()) throw ShapeError("stack_batch: no inputs");
    bool rg = false;
    for (const auto& p : parts) {
        detail::require_same_shape(parts[0], p, "stack_batch");
        rg = rg || p->requires_grad;
    }
    std::vector<int> oshape;
    oshape.push_back(int(parts.size()));
    oshape.insert(oshape.end(), parts[0]->shape.begin(), parts[0]->shape.end());
    auto out = TensorT<T>::create(oshape, rg);
    std::size_t stride = parts[0]->numel();
    for (std::size_t b = 0; b < parts.size(); ++b)
        std::memcpy(out->data.data() + b * stride, parts[b]->data.data(), stride * sizeof(T));
    if (out->requires_grad) {
        out->parents = parts;
        TensorT<T>* o = out.get();
        out->backfn = [o, parts, stride] {
            detail::ensure_out_grad(o);
            for (std::size_t b = 0; b < parts.size(); ++b) {
                if (!parts[b]->requires_grad) continue;
                parts[b]->ensure_grad();
                simd::axpy(T(1), o->grad.data() + b * stride, parts[b]->grad.data(), stride);
            }
        };
    }
    return out;
}

// ---------------------------------------------------------------------------
// matmul and softmax
// ---------------------------------------------------------------------------

template <class T>
TensorPtrT<T> matmul(const TensorPtrT<T>& a, const TensorPtrT<T>& b) {
    if (a->ndim() != 2 || b->ndim() != 2 || a->shape[1] != b->shape[0])
        throw ShapeError("matmul: incompatible shapes " + shape_str(a->shape) + " x " + shape_str(b->shape));
    std::size_t m = std::size_t(a->shape[0]), k = std::size_t(a->shape[1]), n = std::size_t(b->shape[1]);
    auto out = TensorT<T>::create({int(m), int(n)}, a->requires_grad || b->requires_grad);
    simd::gemm_nn(m, n, k, a->data.data(), b->data.data(), out->data.data(), false);
    detail::check_finite(out, "matmul");
    if (out->requires_grad) {
        out->parents = {a, b};
        TensorT<T>* o = out.get();
        out->backfn = [o, a, b, m, n, k] {
            detail::ensure_out_grad(o);
            if (a->requires_grad) {
                a->ensure_grad();
                simd::gemm_nt(m, k, n, o->grad.data(), b->data.data(), a->grad.data(), true);
            }
            if (b->requires_grad) {
                b->ensure_grad();
                simd::gemm_tn(k, n, m, a->data.data(), o->grad.data(), b->grad.data(), true);
            }
        };
    }
    return out;
}

// Row-wise softmax with max-subtraction. Exponentials and the normalizing
// sum are accumulated in double so rows sum to 1 within 1e-6 even in the
// float instantiation and at logit magnitudes around 1e4.
template <class T>
TensorPtrT<T> softmax_rows(const TensorPtrT<T>& a) {
    if (a->ndim() != 2) throw ShapeError("softmax_rows expects a 2-D tensor, got " + shape_str(a->shape));
    std::size_t m = std::size_t(a->shape[0]), n = std::size_t(a->shape[1]);
    auto out = TensorT<T>::create(a->shape, a->requires_grad);
    std::vector<double> buf(n);
    for (std::size_t i = 0; i < m; ++i) {
        const T* row = a->data.data() + i * n;
        T* orow = out->data.data() + i * n;
        T mx = simd::max(row, n);
        double acc = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            buf[j] = std::exp(double(row[j]) - double(mx));
            acc += buf[j];
        }
        double inv = 1.0 / acc;
        for (std::size_t j = 0; j < n; ++j) orow[j] = T(buf[j] * inv);
        if (testing::corrupt_softmax.load(std::memory_order_relaxed)) orow[0] += T(0.01);
    }
    detail::check_finite(out, "softmax_rows");
    if (out->requires_grad) {
        out->parents = {a};
        TensorT<T>* o = out.get();
        out->backfn = [o, a, m, n] {
            detail::ensure_out_grad(o);
            a->ensure_grad();
            for (std::size_t i = 0; i < m; ++i) {
                const T* y = o->data.data() + i * n;
                const T* dy = o->grad.data() + i * n;
                T* dx = a->grad.data() + i * n;
                T inner = simd::dot(dy, y, n);
                for (std::size_t j = 0; j < n; ++j) dx[j] += y[j] * (dy[j] - inner);
            }
        };
    }
    return out;
}

// ---------------------------------------------------------------------------
// batch normalization
// ---------------------------------------------------------------------------

template <class T>
struct BatchNormStateT {
    TensorPtrT<T> scale;  // [C], learnable
    TensorPtrT<T> shift;  // [C], learnable
    std::vector<T> running_mean;
    std::vector<T> running_var;
    T momentum = T(0.1);
    T eps = T(1e-5);

    static BatchNormStateT make(int channels) {
        BatchNormStateT s;
        s.scale = TensorT<T>::full({channels}, T(1), true);
        s.shift = TensorT<T>::full({channels}, T(0), true);
        s.running_mean.assign(std::size_t(channels), T(0));
        s.running_var.assign(std::size_t(channels), T(1));
        return s;
    }

    int channels() const { return scale ? scale->shape[0] : 0; }
};

using BatchNormState = BatchNormStateT<float>;

// x is [B,C,...] (channel axis 1; anything after is treated as spatial).
// Train mode normalizes with batch statistics and updates the running
// buffers; eval mode is the affine map defined by the running buffers.
template <class T>
TensorPtrT<T> batch_norm(const TensorPtrT<T>& x, BatchNormStateT<T>& bn, Mode mode) {
    if (x->ndim() < 2) throw ShapeError("batch_norm expects [B,C,...], got " + shape_str(x->shape));
    int batch = x->shape[0], channels = x->shape[1];
    if (channels != bn.channels())
        throw ShapeError("batch_norm: channel mismatch, input " + shape_str(x->shape) + " vs state C=" +
                         std::to_string(bn.channels()));
    std::size_t spatial = 1;
    for (std::size_t i = 2; i < x->shape.size(); ++i) spatial *= std::size_t(x->shape[i]);
    std::size_t per_sample = std::size_t(channels) * spatial;
    std::size_t count = std::size_t(batch) * spatial;

    auto out = TensorT<T>::create(x->shape, x->requires_grad || bn.scale->requires_grad || bn.shift->requires_grad);

    std::vector<T> mean(channels), inv_std(channels);
    std::vector<T> xhat(x->numel());

    if (mode == Mode::Train) {
        for (int c = 0; c < channels; ++c) {
            double acc = 0.0;
            for (int b = 0; b < batch; ++b) {
                const T* p = x->data.data() + std::size_t(b) * per_sample + std::size_t(c) * spatial;
                for (std::size_t s = 0; s < spatial; ++s) acc += double(p[s]);
            }
            double mu = acc / double(count);
            double var_acc = 0.0;
            for (int b = 0; b < batch; ++b) {
                const T* p = x->data.data() + std::size_t(b) * per_sample + std::size_t(c) * spatial;
                for (std::size_t s = 0; s < spatial; ++s) {
                    double d = double(p[s]) - mu;
                    var_acc += d * d;
                }
            }
            double var = var_acc / double(count);
            mean[c] = T(mu);
            inv_std[c] = T(1.0 / std::sqrt(var + double(bn.eps)));
            bn.running_mean[c] = (T(1) - bn.momentum) * bn.running_mean[c] + bn.momentum * T(mu);
            bn.running_var[c] = (T(1) - bn.momentum) * bn.running_var[c] + bn.momentum * T(var);
        }
    } else {
        for (int c = 0; c < channels; ++c) {
            mean[c] = bn.running_mean[c];
            inv_std[c] = T(1) / std::sqrt(bn.running_var[c] + bn.eps);
        }
    }

    for (int b = 0; b < batch; ++b) {
        for (int c = 0; c < channels; ++c) {
            std::size_t base = std::size_t(b) * per_sample + std::size_t(c) * spatial;
            T g = bn.scale->data[c], sh = bn.shift->data[c];
            for (std::size_t s = 0; s < spatial; ++s) {
                T xh = (x->data[base + s] - mean[c]) * inv_std[c];
                xhat[base + s] = xh;
                out->data[base + s] = g * xh + sh;
            }
        }
    }
    detail::check_finite(out, "batch_norm");

    if (out->requires_grad) {
        auto scale = bn.scale;
        auto shift = bn.shift;
        out->parents = {x, scale, shift};
        TensorT<T>* o = out.get();
        bool train = mode == Mode::Train;
        out->backfn = [o, x, scale, shift, mean = std::move(mean), inv_std = std::move(inv_std),
                       xhat = std::move(xhat), batch, channels, spatial, per_sample, count, train] {
            detail::ensure_out_grad(o);
            std::vector<double> sum_dy(channels, 0.0), sum_dy_xhat(channels, 0.0);
            for (int b = 0; b < batch; ++b) {
                for (int c = 0; c < channels; ++c) {
                    std::size_t base = std::size_t(b) * per_sample + std::size_t(c) * spatial;
                    for (std::size_t s = 0; s < spatial; ++s) {
                        sum_dy[c] += double(o->grad[base + s]);
                        sum_dy_xhat[c] += double(o->grad[base + s]) * double(xhat[base + s]);
                    }
                }
            }
            if (scale->requires_grad) {
                scale->ensure_grad();
                for (int c = 0; c < channels; ++c) scale->grad[c] += T(sum_dy_xhat[c]);
            }
            if (shift->requires_grad) {
                shift->ensure_grad();
                for (int c = 0; c < channels; ++c) shift->grad[c] += T(sum_dy[c]);
            }
            if (x->requires_grad) {
                x->ensure_grad();
                for (int b = 0; b < batch; ++b) {
                    for (int c = 0; c < channels; ++c) {
                        std::size_t base = std::size_t(b) * per_sample + std::size_t(c) * spatial;
                        T g = scale->data[c];
                        if (train) {
                            T mean_dy = T(sum_dy[c] / double(count));
                            T mean_dy_xhat = T(sum_dy_xhat[c] / double(count));
                            for (std::size_t s = 0; s < spatial; ++s)
                                x->grad[base + s] +=
                                    g * inv_std[c] * (o->grad[base + s] - mean_dy - xhat[base + s] * mean_dy_xhat);
                        } else {
                            for (std::size_t s = 0; s < spatial; ++s)
                                x->grad[base + s] += g * inv_std[c] * o->grad[base + s];
                        }
                    }
                }
            }
        };
    }
    return out;
}

// ---------------------------------------------------------------------------
// convolutions, pooling, dense
// ---------------------------------------------------------------------------

// 1x1 convolution: per-pixel linear map over channels, w is [Cout,Cin].
template <class T>
TensorPtrT<T> conv1x1(const TensorPtrT<T>& x, const TensorPtrT<T>& w) {
    if (x->ndim() != 4) throw ShapeError("conv1x1 expects [B,C,H,W], got " + shape_str(x->shape));
    if (w->ndim() != 2 || w->shape[1] != x->shape[1])
        throw ShapeError("conv1x1: weight " + shape_str(w->shape) + " does not match input " + shape_str(x->shape));
    int batch = x->shape[0], cin = x->shape[1], h = x->shape[2], wd = x->shape[3], cout = w->shape[0];
    std::size_t hw = std::size_t(h) * wd;
    auto out = TensorT<T>::create({batch, cout, h, wd}, x->requires_grad || w->requires_grad);
    for (int b = 0; b < batch; ++b)
        simd::gemm_nn(std::size_t(cout), hw, std::size_t(cin), w->data.data(),
                      x->data.data() + std::size_t(b) * cin * hw, out->data.data() + std::size_t(b) * cout * hw,
                      false);
    detail::check_finite(out, "conv1x1");
    if (out->requires_grad) {
        out->parents = {x, w};
        TensorT<T>* o = out.get();
        out->backfn = [o, x, w, batch, cin, cout, hw] {
            detail::ensure_out_grad(o);
            if (w->requires_grad) {
                w->ensure_grad();
                for (int b = 0; b < batch; ++b)
                    simd::gemm_nt(std::size_t(cout), std::size_t(cin), hw,
                                  o->grad.data() + std::size_t(b) * cout * hw,
                                  x->data.data() + std::size_t(b) * cin * hw, w->grad.data(), true);
            }
            if (x->requires_grad) {
                x->ensure_grad();
                for (int b = 0; b < batch; ++b)
                    simd::gemm_tn(std::size_t(cin), hw, std::size_t(cout), w->data.data(),
                                  o->grad.data() + std::size_t(b) * cout * hw,
                                  x->grad.data() + std::size_t(b) * cin * hw, true);
            }
        };
    }
    return out;
}

// Pointwise (1x1) convolution block: linear map, then batch normalization
// (skipped when bn is null), then optional ReLU.
template <class T>
TensorPtrT<T> pointwise_conv(const TensorPtrT<T>& x, const TensorPtrT<T>& w, BatchNormStateT<T>* bn,
                             Activation act, Mode mode) {
    auto y = conv1x1(x, w);
    if (bn) y = batch_norm(y, *bn, mode);
    if (act == Activation::Relu) y = relu(y);
    return y;
}

namespace detail {

// col is [Cin*K*K, Hout*Wout]
template <class T>
void im2col(const T* x, int cin, int h, int w, int ksize, int stride, int pad, int hout, int wout, T* col) {
    for (int c = 0; c < cin; ++c) {
        for (int ky = 0; ky < ksize; ++ky) {
            for (int kx = 0; kx < ksize; ++kx) {
                T* dst = col + ((std::size_t(c) * ksize + ky) * ksize + kx) * (std::size_t(hout) * wout);
                for (int oy = 0; oy < hout; ++oy) {
                    int iy = oy * stride - pad + ky;
                    for (int ox = 0; ox < wout; ++ox) {
                        int ix = ox * stride - pad + kx;
                        bool in = iy >= 0 && iy < h && ix >= 0 && ix < w;
                        dst[std::size_t(oy) * wout + ox] = in ? x[(std::size_t(c) * h + iy) * w + ix] : T(0);
                    }
                }
            }
        }
    }
}

template <class T>
void col2im_add(const T* col, int cin, int h, int w, int ksize, int stride, int pad, int hout, int wout, T* dx) {
    for (int c = 0; c < cin; ++c) {
        for (int ky = 0; ky < ksize; ++ky) {
            for (int kx = 0; kx < ksize; ++kx) {
                const T* src = col + ((std::size_t(c) * ksize + ky) * ksize + kx) * (std::size_t(hout) * wout);
                for (int oy = 0; oy < hout; ++oy) {
                    int iy = oy * stride - pad + ky;
                    if (iy < 0 || iy >= h) continue;
                    for (int ox = 0; ox < wout; ++ox) {
                        int ix = ox * stride - pad + kx;
                        if (ix < 0 || ix >= w) continue;
                        dx[(std::size_t(c) * h + iy) * w + ix] += src[std::size_t(oy) * wout + ox];
                    }
                }
            }
        }
    }
}

}  // namespace detail

// 3x3 convolution with padding 1, weight [Cout,Cin,3,3]; the backbone's
// spatial op. im2col turns it into one gemm per sample.
template <class T>
TensorPtrT<T> conv3x3(const TensorPtrT<T>& x, const TensorPtrT<T>& w, int stride) {
    if (x->ndim() != 4) throw ShapeError("conv3x3 expects [B,C,H,W], got " + shape_str(x->shape));
    if (w->ndim() != 4 || w->shape[1] != x->shape[1] || w->shape[2] != 3 || w->shape[3] != 3)
        throw ShapeError("conv3x3: weight " + shape_str(w->shape) + " does not match input " + shape_str(x->shape));
    if (stride < 1) throw ShapeError("conv3x3: stride must be >= 1");
    const int pad = 1, ksize = 3;
    int batch = x->shape[0], cin = x->shape[1], h = x->shape[2], wd = x->shape[3], cout = w->shape[0];
    int hout = (h + 2 * pad - ksize) / stride + 1;
    int wout = (wd + 2 * pad - ksize) / stride + 1;
    std::size_t cols = std::size_t(hout) * wout;
    std::size_t krows = std::size_t(cin) * ksize * ksize;
    auto out = TensorT<T>::create({batch, cout, hout, wout}, x->requires_grad || w->requires_grad);

    parallel_for(std::size_t(batch), 1, [&](std::size_t lo, std::size_t hi) {
        std::vector<T> col(krows * cols);
        for (std::size_t b = lo; b < hi; ++b) {
            detail::im2col(x->data.data() + b * cin * h * wd, cin, h, wd, ksize, stride, pad, hout, wout, col.data());
            simd::gemm_nn(std::size_t(cout), cols, krows, w->data.data(), col.data(),
                          out->data.data() + b * cout * cols, false);
        }
    });
    detail::check_finite(out, "conv3x3");

    if (out->requires_grad) {
        out->parents = {x, w};
        TensorT<T>* o = out.get();
        out->backfn = [o, x, w, batch, cin, cout, h, wd, hout, wout, stride, cols, krows] {
            detail::ensure_out_grad(o);
            const int pad = 1, ksize = 3;
            std::vector<T> col(krows * cols);
            std::vector<T> dcol(krows * cols);
            if (w->requires_grad) w->ensure_grad();
            if (x->requires_grad) x->ensure_grad();
            for (int b = 0; b < batch; ++b) {
                const T* dy = o->grad.data() + std::size_t(b) * cout * cols;
                if (w->requires_grad || x->requires_grad)
                    detail::im2col(x->data.data() + std::size_t(b) * cin * h * wd, cin, h, wd, ksize, stride, pad,
                                   hout, wout, col.data());
                if (w->requires_grad)
                    simd::gemm_nt(std::size_t(cout), krows, cols, dy, col.data(), w->grad.data(), true);
                if (x->requires_grad) {
                    simd::gemm_tn(krows, cols, std::size_t(cout), w->data.data(), dy, dcol.data(), false);
                    detail::col2im_add(dcol.data(), cin, h, wd, ksize, stride, pad, hout, wout,
                                       x->grad.data() + std::size_t(b) * cin * h * wd);
                }
            }
        };
    }
    return out;
}

template <class T>
TensorPtrT<T> global_average_pool(const TensorPtrT<T>& x) {
    if (x->ndim() != 4) throw ShapeError("global_average_pool expects [B,C,H,W], got " + shape_str(x->shape));
    int batch = x->shape[0], channels = x->shape[1];
    std::size_t spatial = std::size_t(x->shape[2]) * x->shape[3];
    auto out = TensorT<T>::create({batch, channels}, x->requires_grad);
    for (int b = 0; b < batch; ++b) {
        for (int c = 0; c < channels; ++c) {
            const T* p = x->data.data() + (std::size_t(b) * channels + c) * spatial;
            double acc = 0.0;
            for (std::size_t s = 0; s < spatial; ++s) acc += double(p[s]);
            out->data[std::size_t(b) * channels + c] = T(acc / double(spatial));
        }
    }
    detail::check_finite(out, "global_average_pool");
    if (out->requires_grad) {
        out->parents = {x};
        TensorT<T>* o = out.get();
        out->backfn = [o, x, batch, channels, spatial] {
            detail::ensure_out_grad(o);
            x->ensure_grad();
            T inv = T(1) / T(spatial);
            for (int b = 0; b < batch; ++b)
                for (int c = 0; c < channels; ++c) {
                    T g = o->grad[std::size_t(b) * channels + c] * inv;
                    T* dst = x->grad.data() + (std::size_t(b) * channels + c) * spatial;
                    for (std::size_t s = 0; s < spatial; ++s) dst[s] += g;
                }
        };
    }
    return out;
}

// y = x * w + bias, x is [B,In], w is [In,Out], bias is [Out].
template <class T>
TensorPtrT<T> dense(const TensorPtrT<T>& x, const TensorPtrT<T>& w, const TensorPtrT<T>& bias) {
    if (x->ndim() != 2 || w->ndim() != 2 || x->shape[1] != w->shape[0])
        throw ShapeError("dense: incompatible shapes " + shape_str(x->shape) + " x " + shape_str(w->shape));
    if (bias->ndim() != 1 || bias->shape[0] != w->shape[1])
        throw ShapeError("dense: bias " + shape_str(bias->shape) + " does not match " + shape_str(w->shape));
    std::size_t m = std::size_t(x->shape[0]), k = std::size_t(x->shape[1]), n = std::size_t(w->shape[1]);
    auto out = TensorT<T>::create({int(m), int(n)}, x->requires_grad || w->requires_grad || bias->requires_grad);
    simd::gemm_nn(m, n, k, x->data.data(), w->data.data(), out->data.data(), false);
    for (std::size_t r = 0; r < m; ++r) simd::axpy(T(1), bias->data.data(), out->data.data() + r * n, n);
    detail::check_finite(out, "dense");
    if (out->requires_grad) {
        out->parents = {x, w, bias};
        TensorT<T>* o = out.get();
        out->backfn = [o, x, w, bias, m, n, k] {
            detail::ensure_out_grad(o);
            if (x->requires_grad) {
                x->ensure_grad();
                simd::gemm_nt(m, k, n, o->grad.data(), w->data.data(), x->grad.data(), true);
            }
            if (w->requires_grad) {
                w->ensure_grad();
                simd::gemm_tn(k, n, m, x->data.data(), o->grad.data(), w->grad.data(), true);
            }
            if (bias->requires_grad) {
                bias->ensure_grad();
                for (std::size_t r = 0; r < m; ++r) simd::axpy(T(1), o->grad.data() + r * n, bias->grad.data(), n);
            }
        };
    }
    return out;
}

// ---------------------------------------------------------------------------
// classification loss
// ---------------------------------------------------------------------------

enum class SmoothingVariant {
    UniformAll,  // true class 1-eps+eps/N, others eps/N
    Others       // true class 1-eps, others eps/(N-1)
};

// Mean over the batch of cross-entropy against the smoothed target
// distribution. Log-sum-exp and probabilities are computed in double.
template <class T>
TensorPtrT<T> smoothed_cross_entropy(const TensorPtrT<T>& logits, const std::vector<int>& labels, T epsilon,
                                     SmoothingVariant variant = SmoothingVariant::UniformAll) {
    if (logits->ndim() != 2) throw ShapeError("smoothed_cross_entropy expects [B,N], got " + shape_str(logits->shape));
    std::size_t batch = std::size_t(logits->shape[0]), nclass = std::size_t(logits->shape[1]);
    if (labels.size() != batch)
        throw ShapeError("smoothed_cross_entropy: " + std::to_string(labels.size()) + " labels for batch " +
                         std::to_string(batch));
    for (std::size_t b = 0; b < batch; ++b)
        if (labels[b] < 0 || std::size_t(labels[b]) >= nclass)
            throw DataError("smoothed_cross_entropy: label " + std::to_string(labels[b]) + " at row " +
                            std::to_string(b) + " outside [0," + std::to_string(nclass) + ")");
    double eps = double(epsilon);
    auto target = [&](std::size_t b, std::size_t j) {
        bool hit = std::size_t(labels[b]) == j;
        if (variant == SmoothingVariant::UniformAll) return (hit ? 1.0 - eps : 0.0) + eps / double(nclass);
        if (nclass == 1) return 1.0;
        return hit ? 1.0 - eps : eps / double(nclass - 1);
    };

    auto out = TensorT<T>::create({1}, logits->requires_grad);
    std::vector<T> probs(batch * nclass);
    std::vector<T> targets(batch * nclass);
    double total = 0.0;
    for (std::size_t b = 0; b < batch; ++b) {
        const T* row = logits->data.data() + b * nclass;
        double mx = double(simd::max(row, nclass));
        double acc = 0.0;
        for (std::size_t j = 0; j < nclass; ++j) acc += std::exp(double(row[j]) - mx);
        double lse = mx + std::log(acc);
        double row_loss = 0.0;
        for (std::size_t j = 0; j < nclass; ++j) {
            double logp = double(row[j]) - lse;
            double t = target(b, j);
            probs[b * nclass + j] = T(std::exp(logp));
            targets[b * nclass + j] = T(t);
            row_loss -= t * logp;
        }
        total += row_loss;
    }
    out->data[0] = T(total / double(batch));
    detail::check_finite(out, "smoothed_cross_entropy");

    if (out->requires_grad) {
        out->parents = {logits};
        TensorT<T>* o = out.get();
        out->backfn = [o, logits, batch, nclass, probs = std::move(probs), targets = std::move(targets)] {
            detail::ensure_out_grad(o);
            logits->ensure_grad();
            T g = o->grad[0] / T(batch);
            std::size_t n = batch * nclass;
            for (std::size_t i = 0; i < n; ++i) logits->grad[i] += g * (probs[i] - targets[i]);
        };
    }
    return out;
}

}  // namespace mba
