#pragma once

// Shared test utilities: independent reference implementations (oracles) and
// a central finite-difference gradient checker. Everything here deliberately
// avoids the library's kernel and graph machinery so it stays an independent
// route to the same numbers.

#include <cmath>
#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "mba/tensor.hpp"

namespace oracle {

// plain triple-loop matrix product
template <class T>
std::vector<T> matmul(const std::vector<T>& a, const std::vector<T>& b, int m, int k, int n) {
    std::vector<T> c(std::size_t(m) * n, T(0));
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) {
            T s = T(0);
            for (int p = 0; p < k; ++p) s += a[std::size_t(i) * k + p] * b[std::size_t(p) * n + j];
            c[std::size_t(i) * n + j] = s;
        }
    return c;
}

// direct formula, no max subtraction (inputs must be moderate)
template <class T>
std::vector<T> softmax_rows(const std::vector<T>& x, int m, int n) {
    std::vector<T> y(x.size());
    for (int i = 0; i < m; ++i) {
        double acc = 0.0;
        for (int j = 0; j < n; ++j) acc += std::exp(double(x[std::size_t(i) * n + j]));
        for (int j = 0; j < n; ++j) y[std::size_t(i) * n + j] = T(std::exp(double(x[std::size_t(i) * n + j])) / acc);
    }
    return y;
}

// stabilized double-precision softmax over a row, for attention oracles
inline std::vector<double> softmax_row_stable(const std::vector<double>& row) {
    double m = row[0];
    for (double v : row) m = v > m ? v : m;
    double acc = 0.0;
    std::vector<double> y(row.size());
    for (std::size_t j = 0; j < row.size(); ++j) {
        y[j] = std::exp(row[j] - m);
        acc += y[j];
    }
    for (auto& v : y) v /= acc;
    return y;
}

inline double mean(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return s / double(v.size());
}

}  // namespace oracle

namespace gradcheck {

using DTensor = mba::TensorPtrT<double>;

struct Failure {
    std::string leaf;
    std::size_t index = 0;
    double analytic = 0, numeric = 0, rel = 0;
};

// Central finite differences at 64-bit precision. make_loss() must rebuild
// the graph from the current leaf contents and return a scalar.
inline bool check(const std::vector<std::pair<std::string, DTensor>>& leaves,
                  const std::function<DTensor()>& make_loss, double tol = 1e-4, double step = 1e-5,
                  Failure* failure = nullptr) {
    for (auto& [name, leaf] : leaves) leaf->zero_grad();
    auto loss = make_loss();
    mba::backward(loss);
    std::vector<std::vector<double>> analytic;
    for (auto& [name, leaf] : leaves) {
        leaf->ensure_grad();
        analytic.push_back(leaf->grad);
    }
    for (std::size_t li = 0; li < leaves.size(); ++li) {
        auto& leaf = leaves[li].second;
        for (std::size_t i = 0; i < leaf->data.size(); ++i) {
            double saved = leaf->data[i];
            leaf->data[i] = saved + step;
            double lp = make_loss()->data[0];
            leaf->data[i] = saved - step;
            double lm = make_loss()->data[0];
            leaf->data[i] = saved;
            double numeric = (lp - lm) / (2.0 * step);
            double a = analytic[li][i];
            double denom = std::max({1.0, std::abs(a), std::abs(numeric)});
            double rel = std::abs(a - numeric) / denom;
            if (rel >= tol) {
                if (failure) *failure = {leaves[li].first, i, a, numeric, rel};
                return false;
            }
        }
    }
    return true;
}

}  // namespace gradcheck
