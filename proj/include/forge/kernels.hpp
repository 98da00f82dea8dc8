#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

// Dense compute kernels. Each kernel exists twice: a serial reference in
// kernels::serial and an OpenMP version in kernels::par. Both drive the same
// per-row worker functions, and the parallel loops only partition disjoint
// output rows, so the two variants produce bit-identical results. The
// unqualified kernels:: entry points dispatch on thread-local Config.
//
// The serial variants are the reference implementations for the parity tests
// and the baseline for the kernel benchmark.

namespace forge::kernels {

struct Config {
    bool parallel = true;
    // Minimum number of scalar operations before a parallel region pays off.
    std::int64_t grain = 1 << 15;
};

Config& config(); // thread-local

using i64 = std::int64_t;

namespace detail {

// c[j] (+)= sum_k a[k] * b[k*n + j]; k-outer so the j-loop vectorizes
// without reassociating any single accumulation chain.
template <typename T>
#if defined(__GNUC__)
__attribute__((noinline, noclone))
#endif
void gemm_nn_row(const T* a, const T* b, T* c, i64 k, i64 n, bool accumulate) {
    if (!accumulate)
        for (i64 j = 0; j < n; ++j) c[j] = T(0);
    for (i64 kk = 0; kk < k; ++kk) {
        const T av = a[kk];
        const T* brow = b + kk * n;
        for (i64 j = 0; j < n; ++j) c[j] += av * brow[j];
    }
}

// c[j] += dot(a, b_row_j) with b stored [n, k] (i.e. B^T against the nn
// layout). Used for dA = dC * B^T.
template <typename T>
#if defined(__GNUC__)
__attribute__((noinline, noclone))
#endif
void gemm_nt_row(const T* a, const T* b, T* c, i64 k, i64 n, bool accumulate) {
    for (i64 j = 0; j < n; ++j) {
        const T* brow = b + j * k;
        T acc = T(0);
        for (i64 kk = 0; kk < k; ++kk) acc += a[kk] * brow[kk];
        c[j] = accumulate ? c[j] + acc : acc;
    }
}

// c_row[j] += sum_m a[m*lda + row] * b[m*ldb + j]; A^T * B one output row.
template <typename T>
#if defined(__GNUC__)
__attribute__((noinline, noclone))
#endif
void gemm_tn_row(const T* a, const T* b, T* c, i64 m, i64 lda, i64 ldb, i64 row, i64 n,
                 bool accumulate) {
    if (!accumulate)
        for (i64 j = 0; j < n; ++j) c[j] = T(0);
    for (i64 mm = 0; mm < m; ++mm) {
        const T av = a[mm * lda + row];
        const T* brow = b + mm * ldb;
        for (i64 j = 0; j < n; ++j) c[j] += av * brow[j];
    }
}

template <typename T>
#if defined(__GNUC__)
__attribute__((noinline, noclone))
#endif
void softmax_row(const T* x, T* y, i64 n) {
    T mx = -std::numeric_limits<T>::infinity();
    for (i64 j = 0; j < n; ++j)
        if (x[j] > mx) mx = x[j];
    T sum = T(0);
    for (i64 j = 0; j < n; ++j) {
        // exp(-inf - mx) == 0 exactly, so masked entries drop out.
        T e = std::isinf(x[j]) && x[j] < T(0) ? T(0) : std::exp(x[j] - mx);
        y[j] = e;
        sum += e;
    }
    const T inv = T(1) / sum;
    for (i64 j = 0; j < n; ++j) y[j] *= inv;
}

// dx = y * (g - dot(g, y)) per row.
template <typename T>
#if defined(__GNUC__)
__attribute__((noinline, noclone))
#endif
void softmax_backward_row(const T* y, const T* g, T* dx, i64 n) {
    T dot = T(0);
    for (i64 j = 0; j < n; ++j) dot += g[j] * y[j];
    for (i64 j = 0; j < n; ++j) dx[j] += y[j] * (g[j] - dot);
}

template <typename T>
#if defined(__GNUC__)
__attribute__((noinline, noclone))
#endif
void layer_norm_row(const T* x, const T* gain, const T* bias, T* y, i64 d, T eps, T* mean_out,
                    T* rstd_out) {
    T mean = T(0);
    for (i64 j = 0; j < d; ++j) mean += x[j];
    mean /= static_cast<T>(d);
    T var = T(0);
    for (i64 j = 0; j < d; ++j) {
        T c = x[j] - mean;
        var += c * c;
    }
    var /= static_cast<T>(d);
    const T rstd = T(1) / std::sqrt(var + eps);
    for (i64 j = 0; j < d; ++j) y[j] = (x[j] - mean) * rstd * gain[j] + bias[j];
    *mean_out = mean;
    *rstd_out = rstd;
}

// dx for one row; dgain/dbias accumulated by the caller (shared across rows).
template <typename T>
#if defined(__GNUC__)
__attribute__((noinline, noclone))
#endif
void layer_norm_backward_row(const T* x, const T* gain, const T* g, T mean, T rstd, T* dx, i64 d) {
    T sum_dg = T(0), sum_dg_xhat = T(0);
    for (i64 j = 0; j < d; ++j) {
        T xhat = (x[j] - mean) * rstd;
        T dg = g[j] * gain[j];
        sum_dg += dg;
        sum_dg_xhat += dg * xhat;
    }
    const T inv_d = T(1) / static_cast<T>(d);
    for (i64 j = 0; j < d; ++j) {
        T xhat = (x[j] - mean) * rstd;
        T dg = g[j] * gain[j];
        dx[j] += rstd * (dg - inv_d * sum_dg - xhat * inv_d * sum_dg_xhat);
    }
}

} // namespace detail

// ---------------------------------------------------------------------------
// Batched GEMM entry points. Offsets give the start of each batch item inside
// the flat buffers; output offsets are always distinct across the batch.
// ---------------------------------------------------------------------------

namespace serial {

template <typename T>
void gemm_nn(const T* a, const T* b, T* c, i64 batch, const i64* a_off, const i64* b_off,
             const i64* c_off, i64 m, i64 k, i64 n) {
    for (i64 bi = 0; bi < batch; ++bi)
        for (i64 mm = 0; mm < m; ++mm)
            detail::gemm_nn_row(a + a_off[bi] + mm * k, b + b_off[bi], c + c_off[bi] + mm * n, k, n,
                                false);
}

// dA += dC * B^T: a=dC rows of length n_inner, b laid out [n, k].
template <typename T>
void gemm_nt_acc(const T* a, const T* b, T* c, i64 batch, const i64* a_off, const i64* b_off,
                 const i64* c_off, i64 m, i64 k, i64 n) {
    for (i64 bi = 0; bi < batch; ++bi)
        for (i64 mm = 0; mm < m; ++mm)
            detail::gemm_nt_row(a + a_off[bi] + mm * k, b + b_off[bi], c + c_off[bi] + mm * n, k, n,
                                true);
}

// dB += A^T * dC with the output shared across the whole batch (weight
// gradients). Parallel variant partitions output rows, batch stays inside.
template <typename T>
void gemm_tn_acc_shared(const T* a, const T* b, T* c, i64 batch, const i64* a_off, const i64* b_off,
                        i64 m, i64 k, i64 n) {
    for (i64 row = 0; row < k; ++row)
        for (i64 bi = 0; bi < batch; ++bi)
            detail::gemm_tn_row(a + a_off[bi], b + b_off[bi], c + row * n, m, k, n, row, n, true);
}

// dB += A^T * dC, distinct output per batch item.
template <typename T>
void gemm_tn_acc(const T* a, const T* b, T* c, i64 batch, const i64* a_off, const i64* b_off,
                 const i64* c_off, i64 m, i64 k, i64 n) {
    for (i64 bi = 0; bi < batch; ++bi)
        for (i64 row = 0; row < k; ++row)
            detail::gemm_tn_row(a + a_off[bi], b + b_off[bi], c + c_off[bi] + row * n, m, k, n, row,
                                n, true);
}

template <typename T>
void softmax_rows(const T* x, T* y, i64 rows, i64 n) {
    for (i64 r = 0; r < rows; ++r) detail::softmax_row(x + r * n, y + r * n, n);
}

template <typename T>
void softmax_backward_rows(const T* y, const T* g, T* dx, i64 rows, i64 n) {
    for (i64 r = 0; r < rows; ++r)
        detail::softmax_backward_row(y + r * n, g + r * n, dx + r * n, n);
}

template <typename T>
void layer_norm_rows(const T* x, const T* gain, const T* bias, T* y, i64 rows, i64 d, T eps,
                     T* means, T* rstds) {
    for (i64 r = 0; r < rows; ++r)
        detail::layer_norm_row(x + r * d, gain, bias, y + r * d, d, eps, means + r, rstds + r);
}

template <typename T>
void layer_norm_backward_rows(const T* x, const T* gain, const T* g, const T* means, const T* rstds,
                              T* dx, i64 rows, i64 d) {
    for (i64 r = 0; r < rows; ++r)
        detail::layer_norm_backward_row(x + r * d, gain, g + r * d, means[r], rstds[r], dx + r * d, d);
}

} // namespace serial

namespace par {

template <typename T>
void gemm_nn(const T* a, const T* b, T* c, i64 batch, const i64* a_off, const i64* b_off,
             const i64* c_off, i64 m, i64 k, i64 n) {
#pragma omp parallel for schedule(static)
    for (i64 idx = 0; idx < batch * m; ++idx) {
        const i64 bi = idx / m, mm = idx % m;
        detail::gemm_nn_row(a + a_off[bi] + mm * k, b + b_off[bi], c + c_off[bi] + mm * n, k, n,
                            false);
    }
}

template <typename T>
void gemm_nt_acc(const T* a, const T* b, T* c, i64 batch, const i64* a_off, const i64* b_off,
                 const i64* c_off, i64 m, i64 k, i64 n) {
#pragma omp parallel for schedule(static)
    for (i64 idx = 0; idx < batch * m; ++idx) {
        const i64 bi = idx / m, mm = idx % m;
        detail::gemm_nt_row(a + a_off[bi] + mm * k, b + b_off[bi], c + c_off[bi] + mm * n, k, n,
                            true);
    }
}

template <typename T>
void gemm_tn_acc_shared(const T* a, const T* b, T* c, i64 batch, const i64* a_off, const i64* b_off,
                        i64 m, i64 k, i64 n) {
#pragma omp parallel for schedule(static)
    for (i64 row = 0; row < k; ++row)
        for (i64 bi = 0; bi < batch; ++bi)
            detail::gemm_tn_row(a + a_off[bi], b + b_off[bi], c + row * n, m, k, n, row, n, true);
}

template <typename T>
void gemm_tn_acc(const T* a, const T* b, T* c, i64 batch, const i64* a_off, const i64* b_off,
                 const i64* c_off, i64 m, i64 k, i64 n) {
#pragma omp parallel for schedule(static)
    for (i64 idx = 0; idx < batch * k; ++idx) {
        const i64 bi = idx / k, row = idx % k;
        detail::gemm_tn_row(a + a_off[bi], b + b_off[bi], c + c_off[bi] + row * n, m, k, n, row, n,
                            true);
    }
}

template <typename T>
void softmax_rows(const T* x, T* y, i64 rows, i64 n) {
#pragma omp parallel for schedule(static)
    for (i64 r = 0; r < rows; ++r) detail::softmax_row(x + r * n, y + r * n, n);
}

template <typename T>
void softmax_backward_rows(const T* y, const T* g, T* dx, i64 rows, i64 n) {
#pragma omp parallel for schedule(static)
    for (i64 r = 0; r < rows; ++r)
        detail::softmax_backward_row(y + r * n, g + r * n, dx + r * n, n);
}

template <typename T>
void layer_norm_rows(const T* x, const T* gain, const T* bias, T* y, i64 rows, i64 d, T eps,
                     T* means, T* rstds) {
#pragma omp parallel for schedule(static)
    for (i64 r = 0; r < rows; ++r)
        detail::layer_norm_row(x + r * d, gain, bias, y + r * d, d, eps, means + r, rstds + r);
}

template <typename T>
void layer_norm_backward_rows(const T* x, const T* gain, const T* g, const T* means, const T* rstds,
                              T* dx, i64 rows, i64 d) {
#pragma omp parallel for schedule(static)
    for (i64 r = 0; r < rows; ++r)
        detail::layer_norm_backward_row(x + r * d, gain, g + r * d, means[r], rstds[r], dx + r * d, d);
}

} // namespace par

// ---------------------------------------------------------------------------
// Dispatchers.
// ---------------------------------------------------------------------------

inline bool use_parallel(i64 work) { return config().parallel && work >= config().grain; }

template <typename T>
void gemm_nn(const T* a, const T* b, T* c, i64 batch, const i64* a_off, const i64* b_off,
             const i64* c_off, i64 m, i64 k, i64 n) {
    if (use_parallel(batch * m * k * n))
        par::gemm_nn(a, b, c, batch, a_off, b_off, c_off, m, k, n);
    else
        serial::gemm_nn(a, b, c, batch, a_off, b_off, c_off, m, k, n);
}

template <typename T>
void gemm_nt_acc(const T* a, const T* b, T* c, i64 batch, const i64* a_off, const i64* b_off,
                 const i64* c_off, i64 m, i64 k, i64 n) {
    if (use_parallel(batch * m * k * n))
        par::gemm_nt_acc(a, b, c, batch, a_off, b_off, c_off, m, k, n);
    else
        serial::gemm_nt_acc(a, b, c, batch, a_off, b_off, c_off, m, k, n);
}

template <typename T>
void gemm_tn_acc_shared(const T* a, const T* b, T* c, i64 batch, const i64* a_off, const i64* b_off,
                        i64 m, i64 k, i64 n) {
    if (use_parallel(batch * m * k * n))
        par::gemm_tn_acc_shared(a, b, c, batch, a_off, b_off, m, k, n);
    else
        serial::gemm_tn_acc_shared(a, b, c, batch, a_off, b_off, m, k, n);
}

template <typename T>
void gemm_tn_acc(const T* a, const T* b, T* c, i64 batch, const i64* a_off, const i64* b_off,
                 const i64* c_off, i64 m, i64 k, i64 n) {
    if (use_parallel(batch * m * k * n))
        par::gemm_tn_acc(a, b, c, batch, a_off, b_off, c_off, m, k, n);
    else
        serial::gemm_tn_acc(a, b, c, batch, a_off, b_off, c_off, m, k, n);
}

template <typename T>
void softmax_rows(const T* x, T* y, i64 rows, i64 n) {
    if (use_parallel(rows * n * 4))
        par::softmax_rows(x, y, rows, n);
    else
        serial::softmax_rows(x, y, rows, n);
}

template <typename T>
void softmax_backward_rows(const T* y, const T* g, T* dx, i64 rows, i64 n) {
    if (use_parallel(rows * n * 4))
        par::softmax_backward_rows(y, g, dx, rows, n);
    else
        serial::softmax_backward_rows(y, g, dx, rows, n);
}

template <typename T>
void layer_norm_rows(const T* x, const T* gain, const T* bias, T* y, i64 rows, i64 d, T eps,
                     T* means, T* rstds) {
    if (use_parallel(rows * d * 4))
        par::layer_norm_rows(x, gain, bias, y, rows, d, eps, means, rstds);
    else
        serial::layer_norm_rows(x, gain, bias, y, rows, d, eps, means, rstds);
}

template <typename T>
void layer_norm_backward_rows(const T* x, const T* gain, const T* g, const T* means, const T* rstds,
                              T* dx, i64 rows, i64 d) {
    if (use_parallel(rows * d * 4))
        par::layer_norm_backward_rows(x, gain, g, means, rstds, dx, rows, d);
    else
        serial::layer_norm_backward_rows(x, gain, g, means, rstds, dx, rows, d);
}

// Elementwise map over a contiguous range; Fn must be pure per element.
template <typename Fn>
void for_each_index(i64 n, Fn&& fn) {
    if (use_parallel(n)) {
#pragma omp parallel for schedule(static)
        for (i64 i = 0; i < n; ++i) fn(i);
    } else {
        for (i64 i = 0; i < n; ++i) fn(i);
    }
}

} // namespace forge::kernels
