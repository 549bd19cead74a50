#pragma once

#include <atomic>
#include <cstddef>
#include <functional>
#include <memory>
#include <sstream>
#include <string>
#include <unordered_set>
#include <vector>

#include "mba/common.hpp"
#include "mba/simd/kernels.hpp"

namespace mba {

// Largest single buffer allocated since the last reset, in elements. Lets
// tests pin the memory shape of an algorithm (e.g. that the relative-position
// path never materializes a pairwise 3-D table).
struct AllocStats {
    static std::atomic<std::size_t>& peak() {
        static std::atomic<std::size_t> v{0};
        return v;
    }
    static void note(std::size_t n) {
        auto& p = peak();
        std::size_t cur = p.load(std::memory_order_relaxed);
        while (n > cur && !p.compare_exchange_weak(cur, n, std::memory_order_relaxed)) {
        }
    }
    static void reset() { peak().store(0, std::memory_order_relaxed); }
    static std::size_t peak_elems() { return peak().load(std::memory_order_relaxed); }
};

inline std::string shape_str(const std::vector<int>& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
    os << ']';
    return os.str();
}

// Dense row-major tensor node in a dynamically built computation graph.
// Ops allocate a fresh node per result and record a backward closure; the
// graph is a DAG rooted at the op outputs. Gradients accumulate (+=) into
// grad so a tensor used twice receives both contributions; callers zero
// grads between optimization steps.
template <class T>
class TensorT {
public:
    using Ptr = std::shared_ptr<TensorT<T>>;

    std::vector<int> shape;
    std::vector<T> data;
    std::vector<T> grad;  // same size as data once touched by backward
    bool requires_grad = false;

    std::vector<Ptr> parents;
    std::function<void()> backfn;

    static Ptr create(std::vector<int> shape, bool requires_grad = false) {
        auto t = std::make_shared<TensorT<T>>();
        t->shape = std::move(shape);
        std::size_t n = 1;
        for (int e : t->shape) {
            if (e <= 0) throw ShapeError("tensor extent must be positive, got " + shape_str(t->shape));
            n *= std::size_t(e);
        }
        t->data.assign(n, T(0));
        AllocStats::note(n);
        t->requires_grad = requires_grad;
        return t;
    }

    static Ptr from(std::vector<int> shape, std::vector<T> values, bool requires_grad = false) {
        auto t = create(std::move(shape), requires_grad);
        if (values.size() != t->data.size())
            throw ShapeError("value count " + std::to_string(values.size()) + " does not match shape " +
                             shape_str(t->shape));
        t->data = std::move(values);
        return t;
    }

    static Ptr scalar(T v, bool requires_grad = false) { return from({1}, {v}, requires_grad); }

    static Ptr full(std::vector<int> shape, T v, bool requires_grad = false) {
        auto t = create(std::move(shape), requires_grad);
        std::fill(t->data.begin(), t->data.end(), v);
        return t;
    }

    static Ptr randn(std::vector<int> shape, Rng& rng, T stddev = T(1), bool requires_grad = false) {
        auto t = create(std::move(shape), requires_grad);
        for (auto& v : t->data) v = T(rng.normal()) * stddev;
        return t;
    }

    std::size_t numel() const { return data.size(); }
    int dim(std::size_t i) const { return shape.at(i); }
    std::size_t ndim() const { return shape.size(); }

    bool is_leaf() const { return parents.empty() && !backfn; }

    void ensure_grad() {
        if (grad.size() != data.size()) grad.assign(data.size(), T(0));
    }

    void zero_grad() {
        if (!grad.empty()) std::fill(grad.begin(), grad.end(), T(0));
    }

    // Detaches from any recorded graph; used for parameters that persist
    // across steps while graphs are rebuilt.
    void detach() {
        parents.clear();
        backfn = nullptr;
    }
};

template <class T>
using TensorPtrT = std::shared_ptr<TensorT<T>>;

using Tensor = TensorT<float>;
using TensorPtr = TensorPtrT<float>;

// Reverse-mode sweep from a scalar loss. Every reachable tensor with
// requires_grad ends up holding dLoss/dTensor in grad.
template <class T>
void backward(const TensorPtrT<T>& loss) {
    if (loss->numel() != 1)
        throw ShapeError("backward requires a scalar loss, got shape " + shape_str(loss->shape));

    std::vector<TensorT<T>*> order;
    std::unordered_set<TensorT<T>*> seen;
    std::vector<std::pair<TensorT<T>*, std::size_t>> stack;
    stack.emplace_back(loss.get(), 0);
    seen.insert(loss.get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            TensorT<T>* p = node->parents[next++].get();
            if (seen.insert(p).second) stack.emplace_back(p, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    // order is a post-order: parents before children, so iterate backwards.
    loss->ensure_grad();
    loss->grad[0] = T(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        TensorT<T>* node = *it;
        if (node->backfn && node->requires_grad) node->backfn();
    }
}

template <class T>
void zero_grads(const std::vector<TensorPtrT<T>>& params) {
    for (auto& p : params) p->zero_grad();
}

namespace detail {

template <class T>
inline void check_finite(const TensorPtrT<T>& t, const char* op) {
    if (!simd::all_finite(t->data.data(), t->data.size()))
        throw NumericError(std::string(op) + " produced non-finite values");
}

inline bool same_shape(const std::vector<int>& a, const std::vector<int>& b) { return a == b; }

}  // namespace detail

}  // namespace mba
