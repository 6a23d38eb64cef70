#include "pwrf/kernels.hpp"

// Scalar reference kernels. These define the numeric contract: every other
// variant must match them bit for bit. Accumulation order is left-to-right
// over the innermost reduction index of each output element.

namespace pwrf::kernels {
namespace {

void s_add(const double* a, const double* b, double* y, std::int64_t n) {
  for (std::int64_t i = 0; i < n; ++i) y[i] = a[i] + b[i];
}

void s_sub(const double* a, const double* b, double* y, std::int64_t n) {
  for (std::int64_t i = 0; i < n; ++i) y[i] = a[i] - b[i];
}

void s_mul(const double* a, const double* b, double* y, std::int64_t n) {
  for (std::int64_t i = 0; i < n; ++i) y[i] = a[i] * b[i];
}

void s_mul_acc(const double* a, const double* b, double* y, std::int64_t n) {
  for (std::int64_t i = 0; i < n; ++i) y[i] += a[i] * b[i];
}

void s_axpy(double a, const double* x, double* y, std::int64_t n) {
  for (std::int64_t i = 0; i < n; ++i) y[i] += a * x[i];
}

void s_scale(const double* x, double s, double* y, std::int64_t n) {
  for (std::int64_t i = 0; i < n; ++i) y[i] = s * x[i];
}

void s_relu(const double* x, double* y, std::int64_t n) {
  for (std::int64_t i = 0; i < n; ++i) y[i] = x[i] > 0.0 ? x[i] : 0.0;
}

void s_lin_fwd(const double* x, const double* w, const double* b, double* y,
               std::int64_t rows, std::int64_t cin, std::int64_t cout, bool accumulate) {
  for (std::int64_t r = 0; r < rows; ++r) {
    const double* xr = x + r * cin;
    double* yr = y + r * cout;
    for (std::int64_t j = 0; j < cout; ++j) {
      double acc = accumulate ? yr[j] : (b ? b[j] : 0.0);
      for (std::int64_t i = 0; i < cin; ++i) acc += xr[i] * w[i * cout + j];
      yr[j] = acc;
    }
  }
}

void s_lin_dw(const double* x, const double* dy, double* dw,
              std::int64_t rows, std::int64_t cin, std::int64_t cout) {
  for (std::int64_t r = 0; r < rows; ++r) {
    const double* xr = x + r * cin;
    const double* gr = dy + r * cout;
    for (std::int64_t i = 0; i < cin; ++i) {
      const double xv = xr[i];
      double* dwi = dw + i * cout;
      for (std::int64_t j = 0; j < cout; ++j) dwi[j] += xv * gr[j];
    }
  }
}

void s_conv3_fwd(const double* x, const double* k, const double* b, double* y,
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
            const double xv = xi[i];
            const double* kij = kk + i * cout;
            for (std::int64_t j = 0; j < cout; ++j) yo[j] += xv * kij[j];
          }
        }
      }
    }
  }
}

void s_conv3_dw(const double* x, const double* dy, double* dk,
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
            const double xv = xi[i];
            double* dkij = dkk + i * cout;
            for (std::int64_t j = 0; j < cout; ++j) dkij[j] += xv * g[j];
          }
        }
      }
    }
  }
}

}  // namespace

const KernelSet& scalar() {
  static const KernelSet k = {
      "scalar", s_add,    s_sub,    s_mul,       s_mul_acc, s_axpy,
      s_scale,  s_relu,   s_lin_fwd, s_lin_dw,   s_conv3_fwd, s_conv3_dw,
  };
  return k;
}

}  // namespace pwrf::kernels
