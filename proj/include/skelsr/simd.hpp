#pragma once
// Data-parallel inner loops. Every kernel has a scalar reference version and
// an AVX2/FMA version; the active table is picked once at startup from CPUID
// and can be overridden (SKELSR_ISA=scalar|avx2, or force_isa in tests).

#include <cstddef>
#include <string_view>

namespace skelsr::simd {

enum class Isa { Scalar, Avx2 };

struct KernelTable {
    Isa isa;
    std::string_view name;

    double (*dot)(const double* a, const double* b, std::size_t n);
    /// y += alpha * x
    void (*axpy)(double alpha, const double* x, double* y, std::size_t n);
    /// y = alpha * x + beta (elementwise affine)
    void (*affine)(double alpha, const double* x, double beta, double* y, std::size_t n);
    void (*add)(const double* a, const double* b, double* out, std::size_t n);
    void (*mul)(const double* a, const double* b, double* out, std::size_t n);
    void (*div)(const double* a, const double* b, double* out, std::size_t n);
    /// out = a + s, a * s, a / s, s / a
    void (*add_scalar)(const double* a, double s, double* out, std::size_t n);
    void (*mul_scalar)(const double* a, double s, double* out, std::size_t n);
    void (*div_scalar)(const double* a, double s, double* out, std::size_t n);
    void (*rdiv_scalar)(double s, const double* a, double* out, std::size_t n);
    /// Replace every non-finite entry by quiet NaN.
    void (*sanitize)(double* v, std::size_t n);
    /// out = max(a, 0)
    void (*relu)(const double* a, double* out, std::size_t n);
    /// sum_i |a_i - b_i|, NaN-free inputs assumed
    double (*abs_diff_sum)(const double* a, const double* b, std::size_t n);

    /// Row-major GEMMs, all accumulate into C (C += ...).
    /// nn: C[m x n] += A[m x k] * B[k x n]
    void (*gemm_nn)(std::size_t m, std::size_t n, std::size_t k, const double* A, const double* B, double* C);
    /// nt: C[m x n] += A[m x k] * B[n x k]^T
    void (*gemm_nt)(std::size_t m, std::size_t n, std::size_t k, const double* A, const double* B, double* C);
    /// tn: C[m x n] += A[k x m]^T * B[k x n]
    void (*gemm_tn)(std::size_t m, std::size_t n, std::size_t k, const double* A, const double* B, double* C);
};

const KernelTable& scalar_kernels();
/// nullptr when the binary was built without AVX2 support or the CPU lacks it.
const KernelTable* avx2_kernels();

/// Currently selected table.
const KernelTable& kernels();
Isa active_isa();
/// Returns false (and leaves the selection unchanged) if `isa` is unavailable.
bool force_isa(Isa isa);

}  // namespace skelsr::simd
