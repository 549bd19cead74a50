#if defined(__aarch64__)

#include <arm_neon.h>

#include <cstddef>
#include <cstring>

// NEON variants for aarch64, where 128-bit SIMD is baseline.

namespace mba::simd::neon {

void axpy(float a, const float* x, float* y, std::size_t n) {
    float32x4_t av = vdupq_n_f32(a);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) vst1q_f32(y + i, vfmaq_f32(vld1q_f32(y + i), av, vld1q_f32(x + i)));
    for (; i < n; ++i) y[i] += a * x[i];
}

void axpy(double a, const double* x, double* y, std::size_t n) {
    float64x2_t av = vdupq_n_f64(a);
    std::size_t i = 0;
    for (; i + 2 <= n; i += 2) vst1q_f64(y + i, vfmaq_f64(vld1q_f64(y + i), av, vld1q_f64(x + i)));
    for (; i < n; ++i) y[i] += a * x[i];
}

void axpy_out(float a, const float* x, const float* y, float* out, std::size_t n) {
    float32x4_t av = vdupq_n_f32(a);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) vst1q_f32(out + i, vfmaq_f32(vld1q_f32(y + i), av, vld1q_f32(x + i)));
    for (; i < n; ++i) out[i] = a * x[i] + y[i];
}

void axpy_out(double a, const double* x, const double* y, double* out, std::size_t n) {
    float64x2_t av = vdupq_n_f64(a);
    std::size_t i = 0;
    for (; i + 2 <= n; i += 2) vst1q_f64(out + i, vfmaq_f64(vld1q_f64(y + i), av, vld1q_f64(x + i)));
    for (; i < n; ++i) out[i] = a * x[i] + y[i];
}

void add(const float* a, const float* b, float* out, std::size_t n) {
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) vst1q_f32(out + i, vaddq_f32(vld1q_f32(a + i), vld1q_f32(b + i)));
    for (; i < n; ++i) out[i] = a[i] + b[i];
}

void add(const double* a, const double* b, double* out, std::size_t n) {
    std::size_t i = 0;
    for (; i + 2 <= n; i += 2) vst1q_f64(out + i, vaddq_f64(vld1q_f64(a + i), vld1q_f64(b + i)));
    for (; i < n; ++i) out[i] = a[i] + b[i];
}

void mul(const float* a, const float* b, float* out, std::size_t n) {
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) vst1q_f32(out + i, vmulq_f32(vld1q_f32(a + i), vld1q_f32(b + i)));
    for (; i < n; ++i) out[i] = a[i] * b[i];
}

void mul(const double* a, const double* b, double* out, std::size_t n) {
    std::size_t i = 0;
    for (; i + 2 <= n; i += 2) vst1q_f64(out + i, vmulq_f64(vld1q_f64(a + i), vld1q_f64(b + i)));
    for (; i < n; ++i) out[i] = a[i] * b[i];
}

void scale(const float* x, float c, float* out, std::size_t n) {
    float32x4_t cv = vdupq_n_f32(c);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) vst1q_f32(out + i, vmulq_f32(cv, vld1q_f32(x + i)));
    for (; i < n; ++i) out[i] = c * x[i];
}

void scale(const double* x, double c, double* out, std::size_t n) {
    float64x2_t cv = vdupq_n_f64(c);
    std::size_t i = 0;
    for (; i + 2 <= n; i += 2) vst1q_f64(out + i, vmulq_f64(cv, vld1q_f64(x + i)));
    for (; i < n; ++i) out[i] = c * x[i];
}

float dot(const float* a, const float* b, std::size_t n) {
    float32x4_t acc = vdupq_n_f32(0.f);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) acc = vfmaq_f32(acc, vld1q_f32(a + i), vld1q_f32(b + i));
    float s = vaddvq_f32(acc);
    for (; i < n; ++i) s += a[i] * b[i];
    return s;
}

double dot(const double* a, const double* b, std::size_t n) {
    float64x2_t acc = vdupq_n_f64(0.0);
    std::size_t i = 0;
    for (; i + 2 <= n; i += 2) acc = vfmaq_f64(acc, vld1q_f64(a + i), vld1q_f64(b + i));
    double s = vaddvq_f64(acc);
    for (; i < n; ++i) s += a[i] * b[i];
    return s;
}

float sum(const float* x, std::size_t n) {
    float32x4_t acc = vdupq_n_f32(0.f);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) acc = vaddq_f32(acc, vld1q_f32(x + i));
    float s = vaddvq_f32(acc);
    for (; i < n; ++i) s += x[i];
    return s;
}

double sum(const double* x, std::size_t n) {
    float64x2_t acc = vdupq_n_f64(0.0);
    std::size_t i = 0;
    for (; i + 2 <= n; i += 2) acc = vaddq_f64(acc, vld1q_f64(x + i));
    double s = vaddvq_f64(acc);
    for (; i < n; ++i) s += x[i];
    return s;
}

float max(const float* x, std::size_t n) {
    if (n < 4) {
        float m = x[0];
        for (std::size_t i = 1; i < n; ++i) m = x[i] > m ? x[i] : m;
        return m;
    }
    float32x4_t acc = vld1q_f32(x);
    std::size_t i = 4;
    for (; i + 4 <= n; i += 4) acc = vmaxq_f32(acc, vld1q_f32(x + i));
    float m = vmaxvq_f32(acc);
    for (; i < n; ++i) m = x[i] > m ? x[i] : m;
    return m;
}

double max(const double* x, std::size_t n) {
    if (n < 2) return x[0];
    float64x2_t acc = vld1q_f64(x);
    std::size_t i = 2;
    for (; i + 2 <= n; i += 2) acc = vmaxq_f64(acc, vld1q_f64(x + i));
    double m = vmaxvq_f64(acc);
    for (; i < n; ++i) m = x[i] > m ? x[i] : m;
    return m;
}

void relu(const float* x, float* out, std::size_t n) {
    float32x4_t zero = vdupq_n_f32(0.f);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) vst1q_f32(out + i, vmaxq_f32(zero, vld1q_f32(x + i)));
    for (; i < n; ++i) out[i] = x[i] > 0.f ? x[i] : 0.f;
}

void relu(const double* x, double* out, std::size_t n) {
    float64x2_t zero = vdupq_n_f64(0.0);
    std::size_t i = 0;
    for (; i + 2 <= n; i += 2) vst1q_f64(out + i, vmaxq_f64(zero, vld1q_f64(x + i)));
    for (; i < n; ++i) out[i] = x[i] > 0.0 ? x[i] : 0.0;
}

void leaky_relu(const float* x, float slope, float* out, std::size_t n) {
    float32x4_t zero = vdupq_n_f32(0.f);
    float32x4_t sv = vdupq_n_f32(slope);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        float32x4_t v = vld1q_f32(x + i);
        uint32x4_t pos = vcgtq_f32(v, zero);
        vst1q_f32(out + i, vbslq_f32(pos, v, vmulq_f32(sv, v)));
    }
    for (; i < n; ++i) out[i] = x[i] > 0.f ? x[i] : slope * x[i];
}

void leaky_relu(const double* x, double slope, double* out, std::size_t n) {
    float64x2_t zero = vdupq_n_f64(0.0);
    float64x2_t sv = vdupq_n_f64(slope);
    std::size_t i = 0;
    for (; i + 2 <= n; i += 2) {
        float64x2_t v = vld1q_f64(x + i);
        uint64x2_t pos = vcgtq_f64(v, zero);
        vst1q_f64(out + i, vbslq_f64(pos, v, vmulq_f64(sv, v)));
    }
    for (; i < n; ++i) out[i] = x[i] > 0.0 ? x[i] : slope * x[i];
}

bool all_finite(const float* x, std::size_t n) {
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        float32x4_t v = vld1q_f32(x + i);
        uint32x4_t ok = vceqq_f32(vsubq_f32(v, v), vdupq_n_f32(0.f));
        if (vminvq_u32(ok) == 0) return false;
    }
    for (; i < n; ++i) {
        float v = x[i];
        if (v - v != 0.f) return false;
    }
    return true;
}

bool all_finite(const double* x, std::size_t n) {
    std::size_t i = 0;
    for (; i + 2 <= n; i += 2) {
        float64x2_t v = vld1q_f64(x + i);
        uint64x2_t ok = vceqq_f64(vsubq_f64(v, v), vdupq_n_f64(0.0));
        if (vgetq_lane_u64(ok, 0) == 0 || vgetq_lane_u64(ok, 1) == 0) return false;
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
            float32x4_t avv = vdupq_n_f32(av);
            std::size_t j = 0;
            for (; j + 4 <= n; j += 4) vst1q_f32(crow + j, vfmaq_f32(vld1q_f32(crow + j), avv, vld1q_f32(brow + j)));
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
            float64x2_t avv = vdupq_n_f64(av);
            std::size_t j = 0;
            for (; j + 2 <= n; j += 2) vst1q_f64(crow + j, vfmaq_f64(vld1q_f64(crow + j), avv, vld1q_f64(brow + j)));
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
            float32x4_t avv = vdupq_n_f32(av);
            std::size_t j = 0;
            for (; j + 4 <= n; j += 4) vst1q_f32(crow + j, vfmaq_f32(vld1q_f32(crow + j), avv, vld1q_f32(brow + j)));
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
            float64x2_t avv = vdupq_n_f64(av);
            std::size_t j = 0;
            for (; j + 2 <= n; j += 2) vst1q_f64(crow + j, vfmaq_f64(vld1q_f64(crow + j), avv, vld1q_f64(brow + j)));
            for (; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

}  // namespace mba::simd::neon

#endif  // aarch64
