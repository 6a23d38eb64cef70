// AVX2 kernels. Lanes span independent output elements only; each output
// keeps the scalar accumulation order, so results are bit-identical to the
// scalar reference. _mm256_mul_pd/_mm256_add_pd are used separately (no FMA).
//
// This translation unit is compiled with -mavx2 and must only be entered
// after the runtime dispatch has confirmed CPU support.

#if defined(__x86_64__) || defined(_M_X64)

#include <immintrin.h>

#include "pwrf/kernels.hpp"

namespace pwrf::kernels {
namespace {

void a_add(const double* a, const double* b, double* y, std::int64_t n) {
  std::int64_t i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(y + i, _mm256_add_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
  for (; i < n; ++i) y[i] = a[i] + b[i];
}

void a_sub(const double* a, const double* b, double* y, std::int64_t n) {
  std::int64_t i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(y + i, _mm256_sub_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
  for (; i < n; ++i) y[i] = a[i] - b[i];
}

void a_mul(const double* a, const double* b, double* y, std::int64_t n) {
  std::int64_t i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(y + i, _mm256_mul_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
  for (; i < n; ++i) y[i] = a[i] * b[i];
}

void a_mul_acc(const double* a, const double* b, double* y, std::int64_t n) {
  std::int64_t i = 0;
  for (; i + 4 <= n; i += 4) {
    __m256d p = _mm256_mul_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i));
    _mm256_storeu_pd(y + i, _mm256_add_pd(_mm256_loadu_pd(y + i), p));
  }
  for (; i < n; ++i) y[i] += a[i] * b[i];
}

void a_axpy(double a, const double* x, double* y, std::int64_t n) {
  const __m256d av = _mm256_set1_pd(a);
  std::int64_t i = 0;
  for (; i + 4 <= n; i += 4) {
    __m256d p = _mm256_mul_pd(av, _mm256_loadu_pd(x + i));
    _mm256_storeu_pd(y + i, _mm256_add_pd(_mm256_loadu_pd(y + i), p));
  }
  for (; i < n; ++i) y[i] += a * x[i];
}

void a_scale(const double* x, double s, double* y, std::int64_t n) {
  const __m256d sv = _mm256_set1_pd(s);
  std::int64_t i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(y + i, _mm256_mul_pd(sv, _mm256_loadu_pd(x + i)));
  for (; i < n; ++i) y[i] = s * x[i];
}

void a_relu(const double* x, double* y, std::int64_t n) {
  const __m256d zero = _mm256_setzero_pd();
  std::int64_t i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(y + i, _mm256_max_pd(_mm256_loadu_pd(x + i), zero));
  for (; i < n; ++i) y[i] = x[i] > 0.0 ? x[i] : 0.0;
}

void a_lin_fwd(const double* x, const double* w, const double* b, double* y,
               std::int64_t rows, std::int64_t cin, std::int64_t cout, bool accumulate) {
  for (std::int64_t r = 0; r < rows; ++r) {
    const double* xr = x + r * cin;
    double* yr = y + r * cout;
    std::int64_t j = 0;
    for (; j + 4 <= cout; j += 4) {
      __m256d acc = accumulate ? _mm256_loadu_pd(yr + j)
                               : (b ? _mm256_loadu_pd(b + j) : _mm256_setzero_pd());
      for (std::int64_t i = 0; i < cin; ++i) {
        __m256d xv = _mm256_set1_pd(xr[i]);
        __m256d wv = _mm256_loadu_pd(w + i * cout + j);
        acc = _mm256_add_pd(acc, _mm256_mul_pd(xv, wv));
      }
      _mm256_storeu_pd(yr + j, acc);
    }
    for (; j < cout; ++j) {
      double acc = accumulate ? yr[j] : (b ? b[j] : 0.0);
      for (std::int64_t i = 0; i < cin; ++i) acc += xr[i] * w[i * cout + j];
      yr[j] = acc;
    }
  }
}

void a_lin_dw(const double* x, const double* dy, double* dw,
              std::int64_t rows, std::int64_t cin, std::int64_t cout) {
  for (std::int64_t r = 0; r < rows; ++r) {
    const double* xr = x + r * cin;
    const double* gr = dy + r * cout;
    for (std::int64_t i = 0; i < cin; ++i) {
      const __m256d xv = _mm256_set1_pd(xr[i]);
      double* dwi = dw + i * cout;
      std::int64_t j = 0;
      for (; j + 4 <= cout; j += 4) {
        __m256d p = _mm256_mul_pd(xv, _mm256_loadu_pd(gr + j));
        _mm256_storeu_pd(dwi + j, _mm256_add_pd(_mm256_loadu_pd(dwi + j), p));
      }
      for (; j < cout; ++j) dwi[j] += xr[i] * gr[j];
    }
  }
}

void a_conv3_fwd(const double* x, const double* k, const double* b, double* y,
                 std::int64_t H, std::int64_t W, std::int64_t cin, std::int64_t cout,
                 bool accumulate) {
  for (std::int64_t h = 0; h < H; ++h) {
    for (std::int64_t w = 0; w < W; ++w) {
      double* yo = y + (h * W + w) * cout;
      if (!accumulate) {
        if (b) {
          for (std::int64_t j = 0; j < cout; ++j) yo[j] = b[j];
        } else {
          for (std::int64_t j = 0; j < cout; ++j) yo[j] = 0.0;
        }
      }
      for (std::int64_t kh = 0; kh < 3; ++kh) {
        const std::int64_t ih = h + kh - 1;
        if (ih < 0 || ih >= H) continue;
        for (std::int64_t kw = 0; kw < 3; ++kw) {
          const std::int64_t iw = w + kw - 1;
          if (iw < 0 || iw >= W) continue;
          const double* xi = x + (ih * W + iw) * cin;
          const double* kk = k + (kh * 3 + kw) * cin * cout;
          for (std::int64_t i = 0; i < cin; ++i) {
            const __m256d xv = _mm256_set1_pd(xi[i]);
            const double* kij = kk + i * cout;
            std::int64_t j = 0;
            for (; j + 4 <= cout; j += 4) {
              __m256d p = _mm256_mul_pd(xv, _mm256_loadu_pd(kij + j));
              _mm256_storeu_pd(yo + j, _mm256_add_pd(_mm256_loadu_pd(yo + j), p));
            }
            for (; j < cout; ++j) yo[j] += xi[i] * kij[j];
          }
        }
      }
    }
  }
}

void a_conv3_dw(const double* x, const double* dy, double* dk,
                std::int64_t H, std::int64_t W, std::int64_t cin, std::int64_t cout) {
  for (std::int64_t h = 0; h < H; ++h) {
    for (std::int64_t w = 0; w < W; ++w) {
      const double* g = dy + (h * W + w) * cout;
      for (std::int64_t kh = 0; kh < 3; ++kh) {
        const std::int64_t ih = h + kh - 1;
        if (ih < 0 || ih >= H) continue;
        for (std::int64_t kw = 0; kw < 3; ++kw) {
          const std::int64_t iw = w + kw - 1;
          if (iw < 0 || iw >= W) continue;
          const double* xi = x + (ih * W + iw) * cin;
          double* dkk = dk + (kh * 3 + kw) * cin * cout;
          for (std::int64_t i = 0; i < cin; ++i) {
            const __m256d xv = _mm256_set1_pd(xi[i]);
            double* dkij = dkk + i * cout;
            std::int64_t j = 0;
            for (; j + 4 <= cout; j += 4) {
              __m256d p = _mm256_mul_pd(xv, _mm256_loadu_pd(g + j));
              _mm256_storeu_pd(dkij + j, _mm256_add_pd(_mm256_loadu_pd(dkij + j), p));
            }
            for (; j < cout; ++j) dkij[j] += xi[i] * g[j];
          }
        }
      }
    }
  }
}

}  // namespace

const KernelSet* avx2_kernels() {
  static const KernelSet k = {
      "avx2", a_add,    a_sub,    a_mul,       a_mul_acc, a_axpy,
      a_scale, a_relu,  a_lin_fwd, a_lin_dw,   a_conv3_fwd, a_conv3_dw,
  };
  return &k;
}

}  // namespace pwrf::kernels

#endif  // x86-64
