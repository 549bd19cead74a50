#if defined(__x86_64__) || defined(_M_X64)

#include <immintrin.h>

#include <cstddef>
#include <cstring>

// AVX2+FMA variants. Only reached when the dispatcher verified CPU support,
// so this TU may be compiled with -mavx2 -mfma unconditionally.

namespace mba::simd::avx2 {

namespace {

inline float hsum(__m256 v) {
    __m128 lo = _mm256_castps256_ps128(v);
    __m128 hi = _mm256_extractf128_ps(v, 1);
    lo = _mm_add_ps(lo, hi);
    lo = _mm_add_ps(lo, _mm_movehl_ps(lo, lo));
    lo = _mm_add_ss(lo, _mm_movehdup_ps(lo));
    return _mm_cvtss_f32(lo);
}

inline double hsum(__m256d v) {
    __m128d lo = _mm256_castpd256_pd128(v);
    __m128d hi = _mm256_extractf128_pd(v, 1);
    lo = _mm_add_pd(lo, hi);
    return _mm_cvtsd_f64(_mm_add_sd(lo, _mm_unpackhi_pd(lo, lo)));
}

inline float hmax(__m256 v) {
    __m128 lo = _mm256_castps256_ps128(v);
    __m128 hi = _mm256_extractf128_ps(v, 1);
    lo = _mm_max_ps(lo, hi);
    lo = _mm_max_ps(lo, _mm_movehl_ps(lo, lo));
    lo = _mm_max_ss(lo, _mm_movehdup_ps(lo));
    return _mm_cvtss_f32(lo);
}

inline double hmax(__m256d v) {
    __m128d lo = _mm256_castpd256_pd128(v);
    __m128d hi = _mm256_extractf128_pd(v, 1);
    lo = _mm_max_pd(lo, hi);
    return _mm_cvtsd_f64(_mm_max_sd(lo, _mm_unpackhi_pd(lo, lo)));
}

}  // namespace

void axpy(float a, const float* x, float* y, std::size_t n) {
    __m256 av = _mm256_set1_ps(a);
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        __m256 yv = _mm256_loadu_ps(y + i);
        yv = _mm256_fmadd_ps(av, _mm256_loadu_ps(x + i), yv);
        _mm256_storeu_ps(y + i, yv);
    }
    for (; i < n; ++i) y[i] += a * x[i];
}

void axpy(double a, const double* x, double* y, std::size_t n) {
    __m256d av = _mm256_set1_pd(a);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        __m256d yv = _mm256_loadu_pd(y + i);
        yv = _mm256_fmadd_pd(av, _mm256_loadu_pd(x + i), yv);
        _mm256_storeu_pd(y + i, yv);
    }
    for (; i < n; ++i) y[i] += a * x[i];
}

void axpy_out(float a, const float* x, const float* y, float* out, std::size_t n) {
    __m256 av = _mm256_set1_ps(a);
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8)
        _mm256_storeu_ps(out + i, _mm256_fmadd_ps(av, _mm256_loadu_ps(x + i), _mm256_loadu_ps(y + i)));
    for (; i < n; ++i) out[i] = a * x[i] + y[i];
}

void axpy_out(double a, const double* x, const double* y, double* out, std::size_t n) {
    __m256d av = _mm256_set1_pd(a);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4)
        _mm256_storeu_pd(out + i, _mm256_fmadd_pd(av, _mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
    for (; i < n; ++i) out[i] = a * x[i] + y[i];
}

void add(const float* a, const float* b, float* out, std::size_t n) {
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8)
        _mm256_storeu_ps(out + i, _mm256_add_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i)));
    for (; i < n; ++i) out[i] = a[i] + b[i];
}

void add(const double* a, const double* b, double* out, std::size_t n) {
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4)
        _mm256_storeu_pd(out + i, _mm256_add_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
    for (; i < n; ++i) out[i] = a[i] + b[i];
}

void mul(const float* a, const float* b, float* out, std::size_t n) {
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8)
        _mm256_storeu_ps(out + i, _mm256_mul_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i)));
    for (; i < n; ++i) out[i] = a[i] * b[i];
}

void mul(const double* a, const double* b, double* out, std::size_t n) {
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4)
        _mm256_storeu_pd(out + i, _mm256_mul_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
    for (; i < n; ++i) out[i] = a[i] * b[i];
}

void scale(const float* x, float c, float* out, std::size_t n) {
    __m256 cv = _mm256_set1_ps(c);
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8) _mm256_storeu_ps(out + i, _mm256_mul_ps(cv, _mm256_loadu_ps(x + i)));
    for (; i < n; ++i) out[i] = c * x[i];
}

void scale(const double* x, double c, double* out, std::size_t n) {
    __m256d cv = _mm256_set1_pd(c);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) _mm256_storeu_pd(out + i, _mm256_mul_pd(cv, _mm256_loadu_pd(x + i)));
    for (; i < n; ++i) out[i] = c * x[i];
}

float dot(const float* a, const float* b, std::size_t n) {
    __m256 acc0 = _mm256_setzero_ps();
    __m256 acc1 = _mm256_setzero_ps();
    std::size_t i = 0;
    for (; i + 16 <= n; i += 16) {
        acc0 = _mm256_fmadd_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i), acc0);
        acc1 = _mm256_fmadd_ps(_mm256_loadu_ps(a + i + 8), _mm256_loadu_ps(b + i + 8), acc1);
    }
    for (; i + 8 <= n; i += 8) acc0 = _mm256_fmadd_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i), acc0);
    float s = hsum(_mm256_add_ps(acc0, acc1));
    for (; i < n; ++i) s += a[i] * b[i];
    return s;
}

double dot(const double* a, const double* b, std::size_t n) {
    __m256d acc0 = _mm256_setzero_pd();
    __m256d acc1 = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc0);
        acc1 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i + 4), _mm256_loadu_pd(b + i + 4), acc1);
    }
    for (; i + 4 <= n; i += 4) acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc0);
    double s = hsum(_mm256_add_pd(acc0, acc1));
    for (; i < n; ++i) s += a[i] * b[i];
    return s;
}

float sum(const float* x, std::size_t n) {
    __m256 acc = _mm256_setzero_ps();
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8) acc = _mm256_add_ps(acc, _mm256_loadu_ps(x + i));
    float s = hsum(acc);
    for (; i < n; ++i) s += x[i];
    return s;
}

double sum(const double* x, std::size_t n) {
    __m256d acc = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) acc = _mm256_add_pd(acc, _mm256_loadu_pd(x + i));
    double s = hsum(acc);
    for (; i < n; ++i) s += x[i];
    return s;
}

float max(const float* x, std::size_t n) {
    if (n < 8) {
        float m = x[0];
        for (std::size_t i = 1; i < n; ++i) m = x[i] > m ? x[i] : m;
        return m;
    }
    __m256 acc = _mm256_loadu_ps(x);
    std::size_t i = 8;
    for (; i + 8 <= n; i += 8) acc = _mm256_max_ps(acc, _mm256_loadu_ps(x + i));
    float m = hmax(acc);
    for (; i < n; ++i) m = x[i] > m ? x[i] : m;
    return m;
}

double max(const double* x, std::size_t n) {
    if (n < 4) {
        double m = x[0];
        for (std::size_t i = 1; i < n; ++i) m = x[i] > m ? x[i] : m;
        return m;
    }
    __m256d acc = _mm256_loadu_pd(x);
    std::size_t i = 4;
    for (; i + 4 <= n; i += 4) acc = _mm256_max_pd(acc, _mm256_loadu_pd(x + i));
    double m = hmax(acc);
    for (; i < n; ++i) m = x[i] > m ? x[i] : m;
    return m;
}

void relu(const float* x, float* out, std::size_t n) {
    __m256 zero = _mm256_setzero_ps();
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8) _mm256_storeu_ps(out + i, _mm256_max_ps(zero, _mm256_loadu_ps(x + i)));
    for (; i < n; ++i) out[i] = x[i] > 0.f ? x[i] : 0.f;
}

void relu(const double* x, double* out, std::size_t n) {
    __m256d zero = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) _mm256_storeu_pd(out + i, _mm256_max_pd(zero, _mm256_loadu_pd(x + i)));
    for (; i < n; ++i) out[i] = x[i] > 0.0 ? x[i] : 0.0;
}

void leaky_relu(const float* x, float slope, float* out, std::size_t n) {
    __m256 zero = _mm256_setzero_ps();
    __m256 sv = _mm256_set1_ps(slope);
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        __m256 v = _mm256_loadu_ps(x + i);
        __m256 neg = _mm256_mul_ps(sv, v);
        __m256 pos_mask = _mm256_cmp_ps(v, zero, _CMP_GT_OQ);
        _mm256_storeu_ps(out + i, _mm256_blendv_ps(neg, v, pos_mask));
    }
    for (; i < n; ++i) out[i] = x[i] > 0.f ? x[i] : slope * x[i];
}

void leaky_relu(const double* x, double slope, double* out, std::size_t n) {
    __m256d zero = _mm256_setzero_pd();
    __m256d sv = _mm256_set1_pd(slope);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        __m256d v = _mm256_loadu_pd(x + i);
        __m256d neg = _mm256_mul_pd(sv, v);
        __m256d pos_mask = _mm256_cmp_pd(v, zero, _CMP_GT_OQ);
        _mm256_storeu_pd(out + i, _mm256_blendv_pd(neg, v, pos_mask));
    }
    for (; i < n; ++i) out[i] = x[i] > 0.0 ? x[i] : slope * x[i];
}

// v - v == 0 only for finite lanes (inf and NaN both yield NaN, which
// compares false under EQ_OQ).
bool all_finite(const float* x, std::size_t n) {
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        __m256 v = _mm256_loadu_ps(x + i);
        __m256 ok = _mm256_cmp_ps(_mm256_sub_ps(v, v), _mm256_setzero_ps(), _CMP_EQ_OQ);
        if (_mm256_movemask_ps(ok) != 0xff) return false;
    }
    for (; i < n; ++i) {
        float v = x[i];
        if (v - v != 0.f) return false;
    }
    return true;
}

bool all_finite(const double* x, std::size_t n) {
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        __m256d v = _mm256_loadu_pd(x + i);
        __m256d ok = _mm256_cmp_pd(_mm256_sub_pd(v, v), _mm256_setzero_pd(), _CMP_EQ_OQ);
        if (_mm256_movemask_pd(ok) != 0xf) return false;
    }
    for (; i < n; ++i) {
        double v = x[i];
        if (v - v != 0.0) return false;
    }
    return true;
}

void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const float* a, const float* b, float* c, bool accumulate) {
    if (!accumulate) std::memset(c, 0, m * n * sizeof(float));
    for (std::size_t i = 0; i < m; ++i) {
        float* crow = c + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            float av = a[i * k + p];
            const float* brow = b + p * n;
            __m256 avv = _mm256_set1_ps(av);
            std::size_t j = 0;
            for (; j + 8 <= n; j += 8) {
                __m256 cv = _mm256_loadu_ps(crow + j);
                cv = _mm256_fmadd_ps(avv, _mm256_loadu_ps(brow + j), cv);
                _mm256_storeu_ps(crow + j, cv);
            }
            for (; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c, bool accumulate) {
    if (!accumulate) std::memset(c, 0, m * n * sizeof(double));
    for (std::size_t i = 0; i < m; ++i) {
        double* crow = c + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            double av = a[i * k + p];
            const double* brow = b + p * n;
            __m256d avv = _mm256_set1_pd(av);
            std::size_t j = 0;
            for (; j + 4 <= n; j += 4) {
                __m256d cv = _mm256_loadu_pd(crow + j);
                cv = _mm256_fmadd_pd(avv, _mm256_loadu_pd(brow + j), cv);
                _mm256_storeu_pd(crow + j, cv);
            }
            for (; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const float* a, const float* b, float* c, bool accumulate) {
    for (std::size_t i = 0; i < m; ++i) {
        const float* arow = a + i * k;
        float* crow = c + i * n;
        for (std::size_t j = 0; j < n; ++j) {
            float s = dot(arow, b + j * k, k);
            crow[j] = accumulate ? crow[j] + s : s;
        }
    }
}

void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c, bool accumulate) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* arow = a + i * k;
        double* crow = c + i * n;
        for (std::size_t j = 0; j < n; ++j) {
            double s = dot(arow, b + j * k, k);
            crow[j] = accumulate ? crow[j] + s : s;
        }
    }
}

void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const float* a, const float* b, float* c, bool accumulate) {
    if (!accumulate) std::memset(c, 0, m * n * sizeof(float));
    for (std::size_t p = 0; p < k; ++p) {
        const float* brow = b + p * n;
        for (std::size_t i = 0; i < m; ++i) {
            float av = a[p * m + i];
            float* crow = c + i * n;
            __m256 avv = _mm256_set1_ps(av);
            std::size_t j = 0;
            for (; j + 8 <= n; j += 8) {
                __m256 cv = _mm256_loadu_ps(crow + j);
                cv = _mm256_fmadd_ps(avv, _mm256_loadu_ps(brow + j), cv);
                _mm256_storeu_ps(crow + j, cv);
            }
            for (; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c, bool accumulate) {
    if (!accumulate) std::memset(c, 0, m * n * sizeof(double));
    for (std::size_t p = 0; p < k; ++p) {
        const double* brow = b + p * n;
        for (std::size_t i = 0; i < m; ++i) {
            double av = a[p * m + i];
            double* crow = c + i * n;
            __m256d avv = _mm256_set1_pd(av);
            std::size_t j = 0;
            for (; j + 4 <= n; j += 4) {
                __m256d cv = _mm256_loadu_pd(crow + j);
                cv = _mm256_fmadd_pd(avv, _mm256_loadu_pd(brow + j), cv);
                _mm256_storeu_pd(crow + j, cv);
            }
            for (; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

}  // namespace mba::simd::avx2

#endif  // x86-64
