// NEON kernels (aarch64, 2 x f64 lanes). Same contract as the AVX2 variant:
// lanes span independent outputs, accumulation order matches the scalar
// reference, vmulq/vaddq used separately so nothing fuses.

#if defined(__aarch64__)

#include <arm_neon.h>

#include "pwrf/kernels.hpp"

namespace pwrf::kernels {
namespace {

void n_add(const double* a, const double* b, double* y, std::int64_t n) {
  std::int64_t i = 0;
  for (; i + 2 <= n; i += 2) vst1q_f64(y + i, vaddq_f64(vld1q_f64(a + i), vld1q_f64(b + i)));
  for (; i < n; ++i) y[i] = a[i] + b[i];
}

void n_sub(const double* a, const double* b, double* y, std::int64_t n) {
  std::int64_t i = 0;
  for (; i + 2 <= n; i += 2) vst1q_f64(y + i, vsubq_f64(vld1q_f64(a + i), vld1q_f64(b + i)));
  for (; i < n; ++i) y[i] = a[i] - b[i];
}

void n_mul(const double* a, const double* b, double* y, std::int64_t n) {
  std::int64_t i = 0;
  for (; i + 2 <= n; i += 2) vst1q_f64(y + i, vmulq_f64(vld1q_f64(a + i), vld1q_f64(b + i)));
  for (; i < n; ++i) y[i] = a[i] * b[i];
}

void n_mul_acc(const double* a, const double* b, double* y, std::int64_t n) {
  std::int64_t i = 0;
  for (; i + 2 <= n; i += 2) {
    float64x2_t p = vmulq_f64(vld1q_f64(a + i), vld1q_f64(b + i));
    vst1q_f64(y + i, vaddq_f64(vld1q_f64(y + i), p));
  }
  for (; i < n; ++i) y[i] += a[i] * b[i];
}

void n_axpy(double a, const double* x, double* y, std::int64_t n) {
  const float64x2_t av = vdupq_n_f64(a);
  std::int64_t i = 0;
  for (; i + 2 <= n; i += 2) {
    float64x2_t p = vmulq_f64(av, vld1q_f64(x + i));
    vst1q_f64(y + i, vaddq_f64(vld1q_f64(y + i), p));
  }
  for (; i < n; ++i) y[i] += a * x[i];
}

void n_scale(const double* x, double s, double* y, std::int64_t n) {
  const float64x2_t sv = vdupq_n_f64(s);
  std::int64_t i = 0;
  for (; i + 2 <= n; i += 2) vst1q_f64(y + i, vmulq_f64(sv, vld1q_f64(x + i)));
  for (; i < n; ++i) y[i] = s * x[i];
}

void n_relu(const double* x, double* y, std::int64_t n) {
  const float64x2_t zero = vdupq_n_f64(0.0);
  std::int64_t i = 0;
  for (; i + 2 <= n; i += 2) vst1q_f64(y + i, vmaxq_f64(vld1q_f64(x + i), zero));
  for (; i < n; ++i) y[i] = x[i] > 0.0 ? x[i] : 0.0;
}

void n_lin_fwd(const double* x, const double* w, const double* b, double* y,
               std::int64_t rows, std::int64_t cin, std::int64_t cout, bool accumulate) {
  for (std::int64_t r = 0; r < rows; ++r) {
    const double* xr = x + r * cin;
    double* yr = y + r * cout;
    std::int64_t j = 0;
    for (; j + 2 <= cout; j += 2) {
      float64x2_t acc = accumulate ? vld1q_f64(yr + j)
                                   : (b ? vld1q_f64(b + j) : vdupq_n_f64(0.0));
      for (std::int64_t i = 0; i < cin; ++i) {
        float64x2_t xv = vdupq_n_f64(xr[i]);
        acc = vaddq_f64(acc, vmulq_f64(xv, vld1q_f64(w + i * cout + j)));
      }
      vst1q_f64(yr + j, acc);
    }
    for (; j < cout; ++j) {
      double acc = accumulate ? yr[j] : (b ? b[j] : 0.0);
      for (std::int64_t i = 0; i < cin; ++i) acc += xr[i] * w[i * cout + j];
      yr[j] = acc;
    }
  }
}

void n_lin_dw(const double* x, const double* dy, double* dw,
              std::int64_t rows, std::int64_t cin, std::int64_t cout) {
  for (std::int64_t r = 0; r < rows; ++r) {
    const double* xr = x + r * cin;
    const double* gr = dy + r * cout;
    for (std::int64_t i = 0; i < cin; ++i) {
      const float64x2_t xv = vdupq_n_f64(xr[i]);
      double* dwi = dw + i * cout;
      std::int64_t j = 0;
      for (; j + 2 <= cout; j += 2) {
        float64x2_t p = vmulq_f64(xv, vld1q_f64(gr + j));
        vst1q_f64(dwi + j, vaddq_f64(vld1q_f64(dwi + j), p));
      }
      for (; j < cout; ++j) dwi[j] += xr[i] * gr[j];
    }
  }
}

void n_conv3_fwd(const double* x, const double* k, const double* b, double* y,
                 std::int64_t H, std::int64_t W, std::int64_t cin, std::int64_t cout,
                 bool accumulate) {
  for (std::int64_t h = 0; h < H; ++h) {
    for (std::int64_t w = 0; w < W; ++w) {
      double* yo = y + (h * W + w) * cout;
      if (!accumulate) {
        for (std::int64_t j = 0; j < cout; ++j) yo[j] = b ? b[j] : 0.0;
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
            const float64x2_t xv = vdupq_n_f64(xi[i]);
            const double* kij = kk + i * cout;
            std::int64_t j = 0;
            for (; j + 2 <= cout; j += 2) {
              float64x2_t p = vmulq_f64(xv, vld1q_f64(kij + j));
              vst1q_f64(yo + j, vaddq_f64(vld1q_f64(yo + j), p));
            }
            for (; j < cout; ++j) yo[j] += xi[i] * kij[j];
          }
        }
      }
    }
  }
}

void n_conv3_dw(const double* x, const double* dy, double* dk,
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
            const float64x2_t xv = vdupq_n_f64(xi[i]);
            double* dkij = dkk + i * cout;
            std::int64_t j = 0;
            for (; j + 2 <= cout; j += 2) {
              float64x2_t p = vmulq_f64(xv, vld1q_f64(g + j));
              vst1q_f64(dkij + j, vaddq_f64(vld1q_f64(dkij + j), p));
            }
            for (; j < cout; ++j) dkij[j] += xi[i] * g[j];
          }
        }
      }
    }
  }
}

}  // namespace

const KernelSet* neon_kernels() {
  static const KernelSet k = {
      "neon", n_add,    n_sub,    n_mul,       n_mul_acc, n_axpy,
      n_scale, n_relu,  n_lin_fwd, n_lin_dw,   n_conv3_fwd, n_conv3_dw,
  };
  return &k;
}

}  // namespace pwrf::kernels

#endif  // aarch64
