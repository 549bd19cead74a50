#pragma once

#include <cstddef>

// Data-parallel kernels behind the tensor ops. Every kernel has a scalar
// reference implementation plus vectorized variants (AVX2 on x86-64, NEON on
// aarch64) selected once at runtime. Scalar and vector paths are equivalence
// tested; reductions may differ in the last bits because the vector paths
// reassociate sums.

namespace mba::simd {

enum class Backend { Scalar, Avx2, Neon };

// Best backend the running CPU supports.
Backend detect_backend();

// Active backend. Defaults to detect_backend(); MBA_SIMD=scalar|avx2|neon
// overrides at startup, set_backend() overrides programmatically.
Backend active_backend();
void set_backend(Backend b);  // throws NumericError if unsupported on this CPU
const char* backend_name(Backend b);

// y[i] += a * x[i]
void axpy(float a, const float* x, float* y, std::size_t n);
void axpy(double a, const double* x, double* y, std::size_t n);

// out[i] = a * x[i] + y[i]
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

float max(const float* x, std::size_t n);  // n >= 1
double max(const double* x, std::size_t n);

void relu(const float* x, float* out, std::size_t n);
void relu(const double* x, double* out, std::size_t n);

void leaky_relu(const float* x, float slope, float* out, std::size_t n);
void leaky_relu(const double* x, double slope, double* out, std::size_t n);

bool all_finite(const float* x, std::size_t n);
bool all_finite(const double* x, std::size_t n);

// C[M,N] (+)= A[M,K] * B[K,N], row-major. accumulate=false zero-fills C first.
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const float* a, const float* b, float* c, bool accumulate);
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c, bool accumulate);

// C[M,N] (+)= A[M,K] * B[N,K]^T
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const float* a, const float* b, float* c, bool accumulate);
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c, bool accumulate);

// C[M,N] (+)= A[K,M]^T * B[K,N]
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const float* a, const float* b, float* c, bool accumulate);
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c, bool accumulate);

}  // namespace mba::simd
