// Compiled with -mavx2 -mfma; only reached after a CPUID check.
#include <immintrin.h>

#include <cmath>
#include <limits>

#include "skelsr/simd.hpp"

namespace skelsr::simd {

namespace {

inline double hsum(__m256d v) {
    __m128d lo = _mm256_castpd256_pd128(v);
    __m128d hi = _mm256_extractf128_pd(v, 1);
    lo = _mm_add_pd(lo, hi);
    __m128d sh = _mm_unpackhi_pd(lo, lo);
    return _mm_cvtsd_f64(_mm_add_sd(lo, sh));
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

void axpy(double alpha, const double* x, double* y, std::size_t n) {
    const __m256d va = _mm256_set1_pd(alpha);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) _mm256_storeu_pd(y + i, _mm256_fmadd_pd(va, _mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
    for (; i < n; ++i) y[i] += alpha * x[i];
}

void affine(double alpha, const double* x, double beta, double* y, std::size_t n) {
    const __m256d va = _mm256_set1_pd(alpha);
    const __m256d vb = _mm256_set1_pd(beta);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) _mm256_storeu_pd(y + i, _mm256_fmadd_pd(va, _mm256_loadu_pd(x + i), vb));
    for (; i < n; ++i) y[i] = alpha * x[i] + beta;
}

template <class Op>
inline void binary_loop(const double* a, const double* b, double* out, std::size_t n, Op op) {
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) _mm256_storeu_pd(out + i, op(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
    for (; i < n; ++i) {
        __m256d r = op(_mm256_set1_pd(a[i]), _mm256_set1_pd(b[i]));
        out[i] = _mm256_cvtsd_f64(r);
    }
}

void add(const double* a, const double* b, double* out, std::size_t n) {
    binary_loop(a, b, out, n, [](__m256d x, __m256d y) { return _mm256_add_pd(x, y); });
}

void mul(const double* a, const double* b, double* out, std::size_t n) {
    binary_loop(a, b, out, n, [](__m256d x, __m256d y) { return _mm256_mul_pd(x, y); });
}

void div(const double* a, const double* b, double* out, std::size_t n) {
    binary_loop(a, b, out, n, [](__m256d x, __m256d y) { return _mm256_div_pd(x, y); });
}

template <class Op>
inline void scalar_loop(const double* a, double s, double* out, std::size_t n, Op op) {
    const __m256d vs = _mm256_set1_pd(s);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) _mm256_storeu_pd(out + i, op(_mm256_loadu_pd(a + i), vs));
    for (; i < n; ++i) out[i] = _mm256_cvtsd_f64(op(_mm256_set1_pd(a[i]), vs));
}

void add_scalar(const double* a, double s, double* out, std::size_t n) {
    scalar_loop(a, s, out, n, [](__m256d x, __m256d y) { return _mm256_add_pd(x, y); });
}

void mul_scalar(const double* a, double s, double* out, std::size_t n) {
    scalar_loop(a, s, out, n, [](__m256d x, __m256d y) { return _mm256_mul_pd(x, y); });
}

void div_scalar(const double* a, double s, double* out, std::size_t n) {
    scalar_loop(a, s, out, n, [](__m256d x, __m256d y) { return _mm256_div_pd(x, y); });
}

void rdiv_scalar(double s, const double* a, double* out, std::size_t n) {
    scalar_loop(a, s, out, n, [](__m256d x, __m256d y) { return _mm256_div_pd(y, x); });
}

void sanitize(double* v, std::size_t n) {
    const __m256d sign = _mm256_set1_pd(-0.0);
    const __m256d inf = _mm256_set1_pd(std::numeric_limits<double>::infinity());
    const __m256d nan = _mm256_set1_pd(std::numeric_limits<double>::quiet_NaN());
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        __m256d x = _mm256_loadu_pd(v + i);
        // |x| < inf is false for inf and NaN alike
        __m256d finite = _mm256_cmp_pd(_mm256_andnot_pd(sign, x), inf, _CMP_LT_OQ);
        _mm256_storeu_pd(v + i, _mm256_blendv_pd(nan, x, finite));
    }
    for (; i < n; ++i)
        if (!std::isfinite(v[i])) v[i] = std::numeric_limits<double>::quiet_NaN();
}

void relu(const double* a, double* out, std::size_t n) {
    const __m256d zero = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        __m256d x = _mm256_loadu_pd(a + i);
        _mm256_storeu_pd(out + i, _mm256_and_pd(x, _mm256_cmp_pd(x, zero, _CMP_GT_OQ)));
    }
    for (; i < n; ++i) out[i] = a[i] > 0.0 ? a[i] : 0.0;
}

double abs_diff_sum(const double* a, const double* b, std::size_t n) {
    const __m256d sign = _mm256_set1_pd(-0.0);
    __m256d acc = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        __m256d d = _mm256_sub_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i));
        acc = _mm256_add_pd(acc, _mm256_andnot_pd(sign, d));
    }
    double s = hsum(acc);
    for (; i < n; ++i) s += std::fabs(a[i] - b[i]);
    return s;
}

void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const double* A, const double* B, double* C) {
    for (std::size_t i = 0; i < m; ++i) {
        double* c = C + i * n;
        for (std::size_t p = 0; p < k; ++p) axpy(A[i * k + p], B + p * n, c, n);
    }
}

void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const double* A, const double* B, double* C) {
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) C[i * n + j] += dot(A + i * k, B + j * k, k);
}

void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const double* A, const double* B, double* C) {
    for (std::size_t p = 0; p < k; ++p)
        for (std::size_t i = 0; i < m; ++i) axpy(A[p * m + i], B + p * n, C + i * n, n);
}

}  // namespace

const KernelTable* avx2_table() {
    static const KernelTable table{Isa::Avx2, "avx2", dot, axpy, affine, add, mul, div, add_scalar, mul_scalar,
                                   div_scalar, rdiv_scalar, sanitize, relu, abs_diff_sum,
                                   gemm_nn, gemm_nt, gemm_tn};
    return &table;
}

}  // namespace skelsr::simd
