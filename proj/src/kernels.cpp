#include "crnl/kernels.hpp"

#include <atomic>
#include <cstring>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace crnl {

static std::atomic<bool> g_debug_checks{
#ifdef NDEBUG
    false
#else
    true
#endif
};
bool debug_checks() { return g_debug_checks.load(std::memory_order_relaxed); }
void set_debug_checks(bool on) { g_debug_checks.store(on, std::memory_order_relaxed); }

}  // namespace crnl

namespace crnl::kernels {

static std::atomic<Exec> g_exec{Exec::parallel};
Exec exec_mode() { return g_exec.load(std::memory_order_relaxed); }
void set_exec_mode(Exec e) { g_exec.store(e, std::memory_order_relaxed); }

int max_threads() {
#ifdef _OPENMP
    return omp_get_max_threads();
#else
    return 1;
#endif
}

void for_range(int64_t n, const std::function<void(int64_t, int64_t)>& fn, Exec exec) {
    if (n <= 0) return;
    int nt = max_threads();
    if (exec == Exec::serial || nt <= 1 || n < 2) {
        fn(0, n);
        return;
    }
    int64_t chunks = std::min<int64_t>(nt, n);
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
    for (int64_t c = 0; c < chunks; ++c) {
        int64_t lo = n * c / chunks;
        int64_t hi = n * (c + 1) / chunks;
        fn(lo, hi);
    }
}

// The per-row workers are noinline and shared by both exec paths so the
// compiler emits exactly one body: serial and parallel runs then agree bit
// for bit regardless of codegen choices.

__attribute__((noinline)) static void gemm_row(const real* a, const real* b, real* c, int64_t i,
                                               int64_t k, int64_t n, bool acc) {
    real* ci = c + i * n;
    if (!acc) std::memset(ci, 0, sizeof(real) * n);
    const real* ai = a + i * k;
    for (int64_t kk = 0; kk < k; ++kk) {
        real av = ai[kk];
        const real* bk = b + kk * n;
        for (int64_t j = 0; j < n; ++j) ci[j] += av * bk[j];
    }
}

__attribute__((noinline)) static void gemm_at_row(const real* a, const real* b, real* c, int64_t i,
                                                  int64_t m, int64_t k, int64_t n, bool acc) {
    real* ci = c + i * n;
    if (!acc) std::memset(ci, 0, sizeof(real) * n);
    for (int64_t kk = 0; kk < k; ++kk) {
        real av = a[kk * m + i];
        const real* bk = b + kk * n;
        for (int64_t j = 0; j < n; ++j) ci[j] += av * bk[j];
    }
}

__attribute__((noinline)) static void gemm_bt_row(const real* a, const real* b, real* c, int64_t i,
                                                  int64_t k, int64_t n, bool acc) {
    real* ci = c + i * n;
    const real* ai = a + i * k;
    for (int64_t j = 0; j < n; ++j) {
        const real* bj = b + j * k;
        // four independent chains; order is fixed, so results stay reproducible
        real s0 = 0, s1 = 0, s2 = 0, s3 = 0;
        int64_t kk = 0;
        for (; kk + 4 <= k; kk += 4) {
            s0 += ai[kk] * bj[kk];
            s1 += ai[kk + 1] * bj[kk + 1];
            s2 += ai[kk + 2] * bj[kk + 2];
            s3 += ai[kk + 3] * bj[kk + 3];
        }
        real s = (s0 + s1) + (s2 + s3);
        for (; kk < k; ++kk) s += ai[kk] * bj[kk];
        if (acc)
            ci[j] += s;
        else
            ci[j] = s;
    }
}

void gemm(const real* a, const real* b, real* c, int64_t m, int64_t k, int64_t n, bool acc,
          Exec exec) {
    bool par = exec == Exec::parallel && m > 1 && m * k * n > 16384;
    if (!par) {
        for (int64_t i = 0; i < m; ++i) gemm_row(a, b, c, i, k, n, acc);
        return;
    }
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
    for (int64_t i = 0; i < m; ++i) gemm_row(a, b, c, i, k, n, acc);
}

void gemm_at(const real* a, const real* b, real* c, int64_t m, int64_t k, int64_t n, bool acc,
             Exec exec) {
    bool par = exec == Exec::parallel && m > 1 && m * k * n > 16384;
    if (!par) {
        for (int64_t i = 0; i < m; ++i) gemm_at_row(a, b, c, i, m, k, n, acc);
        return;
    }
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
    for (int64_t i = 0; i < m; ++i) gemm_at_row(a, b, c, i, m, k, n, acc);
}

void gemm_bt(const real* a, const real* b, real* c, int64_t m, int64_t k, int64_t n, bool acc,
             Exec exec) {
    bool par = exec == Exec::parallel && m > 1 && m * k * n > 16384;
    if (!par) {
        for (int64_t i = 0; i < m; ++i) gemm_bt_row(a, b, c, i, k, n, acc);
        return;
    }
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
    for (int64_t i = 0; i < m; ++i) gemm_bt_row(a, b, c, i, k, n, acc);
}

__attribute__((noinline)) static void im2col_row(const real* x, int64_t h, int64_t w, int64_t kh,
                                                 int64_t kw, int64_t sh, int64_t sw, int64_t ph,
                                                 int64_t pw, int64_t oh, int64_t ow, real* col,
                                                 int64_t row) {
    // row indexes [cin*kh*kw]; columns enumerate output pixels
    int64_t kx = row % kw;
    int64_t ky = (row / kw) % kh;
    int64_t ci = row / (kw * kh);
    const real* xc = x + ci * h * w;
    real* dst = col + row * (oh * ow);
    for (int64_t oy = 0; oy < oh; ++oy) {
        int64_t iy = oy * sh - ph + ky;
        if (iy < 0 || iy >= h) {
            std::memset(dst + oy * ow, 0, sizeof(real) * ow);
            continue;
        }
        const real* xr = xc + iy * w;
        real* dr = dst + oy * ow;
        for (int64_t ox = 0; ox < ow; ++ox) {
            int64_t ix = ox * sw - pw + kx;
            dr[ox] = (ix >= 0 && ix < w) ? xr[ix] : real(0);
        }
    }
}

void im2col(const real* x, int64_t cin, int64_t h, int64_t w, int64_t kh, int64_t kw, int64_t sh,
            int64_t sw, int64_t ph, int64_t pw, int64_t oh, int64_t ow, real* col, Exec exec) {
    int64_t rows = cin * kh * kw;
    bool par = exec == Exec::parallel && rows > 1 && rows * oh * ow > 8192;
    if (!par) {
        for (int64_t r = 0; r < rows; ++r)
            im2col_row(x, h, w, kh, kw, sh, sw, ph, pw, oh, ow, col, r);
        return;
    }
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
    for (int64_t r = 0; r < rows; ++r) im2col_row(x, h, w, kh, kw, sh, sw, ph, pw, oh, ow, col, r);
}

__attribute__((noinline)) static void col2im_pixel(const real* col, int64_t h, int64_t w,
                                                   int64_t kh, int64_t kw, int64_t sh, int64_t sw,
                                                   int64_t ph, int64_t pw, int64_t oh, int64_t ow,
                                                   real* x, int64_t px) {
    // px indexes [cin,H,W]; gather every (ky,kx,oy,ox) writing to it
    int64_t ix = px % w;
    int64_t iy = (px / w) % h;
    int64_t ci = px / (w * h);
    real s = 0;
    for (int64_t ky = 0; ky < kh; ++ky) {
        int64_t ny = iy + ph - ky;
        if (ny < 0 || ny % sh != 0) continue;
        int64_t oy = ny / sh;
        if (oy >= oh) continue;
        for (int64_t kx = 0; kx < kw; ++kx) {
            int64_t nx = ix + pw - kx;
            if (nx < 0 || nx % sw != 0) continue;
            int64_t ox = nx / sw;
            if (ox >= ow) continue;
            int64_t row = (ci * kh + ky) * kw + kx;
            s += col[row * (oh * ow) + oy * ow + ox];
        }
    }
    x[px] += s;
}

void col2im_acc(const real* col, int64_t cin, int64_t h, int64_t w, int64_t kh, int64_t kw,
                int64_t sh, int64_t sw, int64_t ph, int64_t pw, int64_t oh, int64_t ow, real* x,
                Exec exec) {
    int64_t pixels = cin * h * w;
    bool par = exec == Exec::parallel && pixels > 4096;
    if (!par) {
        for (int64_t p = 0; p < pixels; ++p)
            col2im_pixel(col, h, w, kh, kw, sh, sw, ph, pw, oh, ow, x, p);
        return;
    }
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
    for (int64_t p = 0; p < pixels; ++p)
        col2im_pixel(col, h, w, kh, kw, sh, sw, ph, pw, oh, ow, x, p);
}

void add(const real* a, const real* b, real* out, int64_t n, Exec exec) {
    for_range(
        n,
        [&](int64_t lo, int64_t hi) {
            for (int64_t i = lo; i < hi; ++i) out[i] = a[i] + b[i];
        },
        exec);
}

void mul(const real* a, const real* b, real* out, int64_t n, Exec exec) {
    for_range(
        n,
        [&](int64_t lo, int64_t hi) {
            for (int64_t i = lo; i < hi; ++i) out[i] = a[i] * b[i];
        },
        exec);
}

void axpy(real alpha, const real* x, real* y, int64_t n, Exec exec) {
    for_range(
        n,
        [&](int64_t lo, int64_t hi) {
            for (int64_t i = lo; i < hi; ++i) y[i] += alpha * x[i];
        },
        exec);
}

__attribute__((noinline)) static void mean_axis_one(const real* a, int64_t axis, int64_t inner,
                                                    real* out, int64_t idx) {
    int64_t o = idx / inner;
    int64_t in = idx % inner;
    const real* base = a + o * axis * inner + in;
    real s = 0;
    for (int64_t k = 0; k < axis; ++k) s += base[k * inner];
    out[idx] = s / static_cast<real>(axis);
}

void mean_axis(const real* a, int64_t outer, int64_t axis, int64_t inner, real* out, Exec exec) {
    int64_t n = outer * inner;
    bool par = exec == Exec::parallel && n > 1 && n * axis > 8192;
    if (!par) {
        for (int64_t i = 0; i < n; ++i) mean_axis_one(a, axis, inner, out, i);
        return;
    }
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
    for (int64_t i = 0; i < n; ++i) mean_axis_one(a, axis, inner, out, i);
}

}  // namespace crnl::kernels
