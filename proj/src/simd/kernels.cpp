#include "mba/simd/kernels.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <mutex>
#include <string>
#include <thread>

#include "mba/common.hpp"

namespace mba {

namespace {
std::atomic<int> g_max_threads{0};
}

int max_threads() {
    int n = g_max_threads.load(std::memory_order_relaxed);
    if (n > 0) return n;
    if (const char* env = std::getenv("MBA_NUM_THREADS")) {
        int v = std::atoi(env);
        if (v > 0) return v;
    }
    unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : int(hw);
}

void set_max_threads(int n) { g_max_threads.store(n, std::memory_order_relaxed); }

void parallel_for(std::size_t n, std::size_t grain, const std::function<void(std::size_t, std::size_t)>& body) {
    int nthreads = max_threads();
    if (n == 0) return;
    if (nthreads <= 1 || n <= grain) {
        body(0, n);
        return;
    }
    std::size_t chunks = std::min<std::size_t>(std::size_t(nthreads), (n + grain - 1) / grain);
    std::size_t per = (n + chunks - 1) / chunks;
    std::vector<std::thread> workers;
    workers.reserve(chunks);
    for (std::size_t c = 0; c < chunks; ++c) {
        std::size_t lo = c * per;
        std::size_t hi = std::min(n, lo + per);
        if (lo >= hi) break;
        workers.emplace_back([&body, lo, hi] { body(lo, hi); });
    }
    for (auto& w : workers) w.join();
}

}  // namespace mba

namespace mba::simd {

// ---------------------------------------------------------------------------
// scalar reference kernels
// ---------------------------------------------------------------------------

namespace scalar {

template <class T>
void axpy(T a, const T* x, T* y, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) y[i] += a * x[i];
}

template <class T>
void axpy_out(T a, const T* x, const T* y, T* out, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) out[i] = a * x[i] + y[i];
}

template <class T>
void add(const T* a, const T* b, T* out, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) out[i] = a[i] + b[i];
}

template <class T>
void mul(const T* a, const T* b, T* out, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) out[i] = a[i] * b[i];
}

template <class T>
void scale(const T* x, T c, T* out, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) out[i] = c * x[i];
}

template <class T>
T dot(const T* a, const T* b, std::size_t n) {
    T s = T(0);
    for (std::size_t i = 0; i < n; ++i) s += a[i] * b[i];
    return s;
}

template <class T>
T sum(const T* x, std::size_t n) {
    T s = T(0);
    for (std::size_t i = 0; i < n; ++i) s += x[i];
    return s;
}

template <class T>
T max(const T* x, std::size_t n) {
    T m = x[0];
    for (std::size_t i = 1; i < n; ++i) m = x[i] > m ? x[i] : m;
    return m;
}

template <class T>
void relu(const T* x, T* out, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) out[i] = x[i] > T(0) ? x[i] : T(0);
}

template <class T>
void leaky_relu(const T* x, T slope, T* out, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) out[i] = x[i] > T(0) ? x[i] : slope * x[i];
}

template <class T>
bool all_finite(const T* x, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i)
        if (!std::isfinite(x[i])) return false;
    return true;
}

// i-k-j order: the inner j loop is a row axpy, the same shape the vector
// backends use, so per-element accumulation order matches across backends.
template <class T>
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c, bool accumulate) {
    if (!accumulate) std::memset(c, 0, m * n * sizeof(T));
    for (std::size_t i = 0; i < m; ++i) {
        T* crow = c + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            T av = a[i * k + p];
            const T* brow = b + p * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

template <class T>
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c, bool accumulate) {
    for (std::size_t i = 0; i < m; ++i) {
        const T* arow = a + i * k;
        T* crow = c + i * n;
        for (std::size_t j = 0; j < n; ++j) {
            T s = dot(arow, b + j * k, k);
            crow[j] = accumulate ? crow[j] + s : s;
        }
    }
}

template <class T>
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c, bool accumulate) {
    if (!accumulate) std::memset(c, 0, m * n * sizeof(T));
    for (std::size_t p = 0; p < k; ++p) {
        const T* brow = b + p * n;
        for (std::size_t i = 0; i < m; ++i) {
            T av = a[p * m + i];
            T* crow = c + i * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

}  // namespace scalar

// ---------------------------------------------------------------------------
// dispatch
// ---------------------------------------------------------------------------

#if defined(__x86_64__) || defined(_M_X64)
#define MBA_HAVE_AVX2_TU 1
namespace avx2 {
void axpy(float a, const float* x, float* y, std::size_t n);
void axpy(double a, const double* x, double* y, std::size_t n);
void axpy_out(float a, const float* x, const float* y, float* out, std::size_t n);
void axpy_out(double a, const double* x, const double* y, double* out, std::size_t n);
void add(const float* a, const float* b, float* out, std::size_t n);
void add(const double* a, const double* b, double* out, std::size_t n);
void mul(const float* a, const float* b, float* out, std::size_t n);
void mul(const double* a, const double* b, double* out, std::size_t n);
void scale(const float* x, float c, float* out, std::size_t n);
void scale(const double* x, double c, double* out, std::size_t n);
float dot(const float* a, const float* b, std::size_t n);
double dot(const double* a, const double* b, std::size_t n);
float sum(const float* x, std::size_t n);
double sum(const double* x, std::size_t n);
float max(const float* x, std::size_t n);
double max(const double* x, std::size_t n);
void relu(const float* x, float* out, std::size_t n);
void relu(const double* x, double* out, std::size_t n);
void leaky_relu(const float* x, float slope, float* out, std::size_t n);
void leaky_relu(const double* x, double slope, double* out, std::size_t n);
bool all_finite(const float* x, std::size_t n);
bool all_finite(const double* x, std::size_t n);
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const float* a, const float* b, float* c, bool accumulate);
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c, bool accumulate);
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const float* a, const float* b, float* c, bool accumulate);
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c, bool accumulate);
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const float* a, const float* b, float* c, bool accumulate);
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c, bool accumulate);
}  // namespace avx2
#endif

#if defined(__aarch64__)
#define MBA_HAVE_NEON_TU 1
namespace neon {
void axpy(float a, const float* x, float* y, std::size_t n);
void axpy(double a, const double* x, double* y, std::size_t n);
void axpy_out(float a, const float* x, const float* y, float* out, std::size_t n);
void axpy_out(double a, const double* x, const double* y, double* out, std::size_t n);
void add(const float* a, const float* b, float* out, std::size_t n);
void add(const double* a, const double* b, double* out, std::size_t n);
void mul(const float* a, const float* b, float* out, std::size_t n);
void mul(const double* a, const double* b, double* out, std::size_t n);
void scale(const float* x, float c, float* out, std::size_t n);
void scale(const double* x, double c, double* out, std::size_t n);
float dot(const float* a, const float* b, std::size_t n);
double dot(const double* a, const double* b, std::size_t n);
float sum(const float* x, std::size_t n);
double sum(const double* x, std::size_t n);
float max(const float* x, std::size_t n);
double max(const double* x, std::size_t n);
void relu(const float* x, float* out, std::size_t n);
void relu(const double* x, double* out, std::size_t n);
void leaky_relu(const float* x, float slope, float* out, std::size_t n);
void leaky_relu(const double* x, double slope, double* out, std::size_t n);
bool all_finite(const float* x, std::size_t n);
bool all_finite(const double* x, std::size_t n);
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const float* a, const float* b, float* c, bool accumulate);
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c, bool accumulate);
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const float* a, const float* b, float* c, bool accumulate);
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c, bool accumulate);
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const float* a, const float* b, float* c, bool accumulate);
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c, bool accumulate);
}  // namespace neon
#endif

Backend detect_backend() {
#if defined(MBA_HAVE_AVX2_TU)
    if (__builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma")) return Backend::Avx2;
#endif
#if defined(MBA_HAVE_NEON_TU)
    return Backend::Neon;
#endif
    return Backend::Scalar;
}

namespace {

Backend initial_backend() {
    Backend best = detect_backend();
    if (const char* env = std::getenv("MBA_SIMD")) {
        std::string s(env);
        if (s == "scalar") return Backend::Scalar;
        if (s == "avx2" && best == Backend::Avx2) return Backend::Avx2;
        if (s == "neon" && best == Backend::Neon) return Backend::Neon;
    }
    return best;
}

std::atomic<Backend> g_backend{initial_backend()};

}  // namespace

Backend active_backend() { return g_backend.load(std::memory_order_relaxed); }

void set_backend(Backend b) {
    if (b != Backend::Scalar && b != detect_backend())
        throw NumericError(std::string("simd backend '") + backend_name(b) + "' not supported on this CPU");
    g_backend.store(b, std::memory_order_relaxed);
}

const char* backend_name(Backend b) {
    switch (b) {
        case Backend::Scalar: return "scalar";
        case Backend::Avx2: return "avx2";
        case Backend::Neon: return "neon";
    }
    return "?";
}

#if defined(MBA_HAVE_AVX2_TU)
#define MBA_DISPATCH(fn, ...)                                              \
    do {                                                                   \
        if (active_backend() == Backend::Avx2) return avx2::fn(__VA_ARGS__); \
        return scalar::fn(__VA_ARGS__);                                    \
    } while (0)
#elif defined(MBA_HAVE_NEON_TU)
#define MBA_DISPATCH(fn, ...)                                              \
    do {                                                                   \
        if (active_backend() == Backend::Neon) return neon::fn(__VA_ARGS__); \
        return scalar::fn(__VA_ARGS__);                                    \
    } while (0)
#else
#define MBA_DISPATCH(fn, ...) return scalar::fn(__VA_ARGS__)
#endif

void axpy(float a, const float* x, float* y, std::size_t n) { MBA_DISPATCH(axpy, a, x, y, n); }
void axpy(double a, const double* x, double* y, std::size_t n) { MBA_DISPATCH(axpy, a, x, y, n); }
void axpy_out(float a, const float* x, const float* y, float* out, std::size_t n) { MBA_DISPATCH(axpy_out, a, x, y, out, n); }
void axpy_out(double a, const double* x, const double* y, double* out, std::size_t n) { MBA_DISPATCH(axpy_out, a, x, y, out, n); }
void add(const float* a, const float* b, float* out, std::size_t n) { MBA_DISPATCH(add, a, b, out, n); }
void add(const double* a, const double* b, double* out, std::size_t n) { MBA_DISPATCH(add, a, b, out, n); }
void mul(const float* a, const float* b, float* out, std::size_t n) { MBA_DISPATCH(mul, a, b, out, n); }
void mul(const double* a, const double* b, double* out, std::size_t n) { MBA_DISPATCH(mul, a, b, out, n); }
void scale(const float* x, float c, float* out, std::size_t n) { MBA_DISPATCH(scale, x, c, out, n); }
void scale(const double* x, double c, double* out, std::size_t n) { MBA_DISPATCH(scale, x, c, out, n); }
float dot(const float* a, const float* b, std::size_t n) { MBA_DISPATCH(dot, a, b, n); }
double dot(const double* a, const double* b, std::size_t n) { MBA_DISPATCH(dot, a, b, n); }
float sum(const float* x, std::size_t n) { MBA_DISPATCH(sum, x, n); }
double sum(const double* x, std::size_t n) { MBA_DISPATCH(sum, x, n); }
float max(const float* x, std::size_t n) { MBA_DISPATCH(max, x, n); }
double max(const double* x, std::size_t n) { MBA_DISPATCH(max, x, n); }
void relu(const float* x, float* out, std::size_t n) { MBA_DISPATCH(relu, x, out, n); }
void relu(const double* x, double* out, std::size_t n) { MBA_DISPATCH(relu, x, out, n); }
void leaky_relu(const float* x, float slope, float* out, std::size_t n) { MBA_DISPATCH(leaky_relu, x, slope, out, n); }
void leaky_relu(const double* x, double slope, double* out, std::size_t n) { MBA_DISPATCH(leaky_relu, x, slope, out, n); }
bool all_finite(const float* x, std::size_t n) { MBA_DISPATCH(all_finite, x, n); }
bool all_finite(const double* x, std::size_t n) { MBA_DISPATCH(all_finite, x, n); }

void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const float* a, const float* b, float* c, bool accumulate) {
    MBA_DISPATCH(gemm_nn, m, n, k, a, b, c, accumulate);
}
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c, bool accumulate) {
    MBA_DISPATCH(gemm_nn, m, n, k, a, b, c, accumulate);
}
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const float* a, const float* b, float* c, bool accumulate) {
    MBA_DISPATCH(gemm_nt, m, n, k, a, b, c, accumulate);
}
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c, bool accumulate) {
    MBA_DISPATCH(gemm_nt, m, n, k, a, b, c, accumulate);
}
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const float* a, const float* b, float* c, bool accumulate) {
    MBA_DISPATCH(gemm_tn, m, n, k, a, b, c, accumulate);
}
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c, bool accumulate) {
    MBA_DISPATCH(gemm_tn, m, n, k, a, b, c, accumulate);
}

#undef MBA_DISPATCH

}  // namespace mba::simd
