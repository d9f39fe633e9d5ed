#pragma once

// Low-level compute kernels. Every kernel exists in two flavors selected by
// Exec: a plain serial loop and an OpenMP loop over disjoint output slices.
// Both flavors call the same per-slice worker, and no parallel loop ever
// shares an accumulator across iterations, so the parallel result is
// bit-identical to the serial one; tests/test_kernels.cpp asserts this and
// bench/kernel_bench.cpp measures the speedup.

#include <cstdint>
#include <functional>

#include "crnl/common.hpp"

namespace crnl::kernels {

enum class Exec { serial, parallel };

Exec exec_mode();
void set_exec_mode(Exec e);

// Runs fn(lo, hi) over a partition of [0, n). Each index lands in exactly
// one chunk; fn must only write state owned by its indices.
void for_range(int64_t n, const std::function<void(int64_t, int64_t)>& fn, Exec exec);
inline void for_range(int64_t n, const std::function<void(int64_t, int64_t)>& fn) {
    for_range(n, fn, exec_mode());
}

// Row-major GEMM family. acc=false overwrites C, acc=true accumulates.
// C[m,n] = A[m,k] * B[k,n]
void gemm(const real* a, const real* b, real* c, int64_t m, int64_t k, int64_t n, bool acc,
          Exec exec);
// C[m,n] = A^T * B with A stored [k,m]
void gemm_at(const real* a, const real* b, real* c, int64_t m, int64_t k, int64_t n, bool acc,
             Exec exec);
// C[m,n] = A * B^T with B stored [n,k]
void gemm_bt(const real* a, const real* b, real* c, int64_t m, int64_t k, int64_t n, bool acc,
             Exec exec);

inline void gemm(const real* a, const real* b, real* c, int64_t m, int64_t k, int64_t n,
                 bool acc = false) {
    gemm(a, b, c, m, k, n, acc, exec_mode());
}
inline void gemm_at(const real* a, const real* b, real* c, int64_t m, int64_t k, int64_t n,
                    bool acc = false) {
    gemm_at(a, b, c, m, k, n, acc, exec_mode());
}
inline void gemm_bt(const real* a, const real* b, real* c, int64_t m, int64_t k, int64_t n,
                    bool acc = false) {
    gemm_bt(a, b, c, m, k, n, acc, exec_mode());
}

// im2col for one image: x[cin,H,W] -> col[cin*kh*kw, oh*ow], zero padding.
void im2col(const real* x, int64_t cin, int64_t h, int64_t w, int64_t kh, int64_t kw, int64_t sh,
            int64_t sw, int64_t ph, int64_t pw, int64_t oh, int64_t ow, real* col, Exec exec);
inline void im2col(const real* x, int64_t cin, int64_t h, int64_t w, int64_t kh, int64_t kw,
                   int64_t sh, int64_t sw, int64_t ph, int64_t pw, int64_t oh, int64_t ow,
                   real* col) {
    im2col(x, cin, h, w, kh, kw, sh, sw, ph, pw, oh, ow, col, exec_mode());
}

// Adjoint of im2col: accumulates col[cin*kh*kw, oh*ow] back into x[cin,H,W].
// Parallel over input pixels, each gathering its contributions in a fixed
// order, so no scatter races.
void col2im_acc(const real* col, int64_t cin, int64_t h, int64_t w, int64_t kh, int64_t kw,
                int64_t sh, int64_t sw, int64_t ph, int64_t pw, int64_t oh, int64_t ow, real* x,
                Exec exec);
inline void col2im_acc(const real* col, int64_t cin, int64_t h, int64_t w, int64_t kh, int64_t kw,
                       int64_t sh, int64_t sw, int64_t ph, int64_t pw, int64_t oh, int64_t ow,
                       real* x) {
    col2im_acc(col, cin, h, w, kh, kw, sh, sw, ph, pw, oh, ow, x, exec_mode());
}

// out[i] = a[i] + b[i], etc. Elementwise kernels are chunk-parallel.
void add(const real* a, const real* b, real* out, int64_t n, Exec exec);
void mul(const real* a, const real* b, real* out, int64_t n, Exec exec);
void axpy(real alpha, const real* x, real* y, int64_t n, Exec exec);  // y += alpha*x
inline void add(const real* a, const real* b, real* out, int64_t n) {
    add(a, b, out, n, exec_mode());
}
inline void mul(const real* a, const real* b, real* out, int64_t n) {
    mul(a, b, out, n, exec_mode());
}
inline void axpy(real alpha, const real* x, real* y, int64_t n) {
    axpy(alpha, x, y, n, exec_mode());
}

// Mean over the middle axis of a[outer, axis, inner] -> out[outer, inner].
// Parallel over output elements, inner sum in fixed index order.
void mean_axis(const real* a, int64_t outer, int64_t axis, int64_t inner, real* out, Exec exec);
inline void mean_axis(const real* a, int64_t outer, int64_t axis, int64_t inner, real* out) {
    mean_axis(a, outer, axis, inner, out, exec_mode());
}

int max_threads();

}  // namespace crnl::kernels
