#pragma once

#include <cstdint>
#include <string>
#include <vector>

// Arithmetic inner loops, selectable at runtime between a scalar reference
// and SIMD variants (AVX2 on x86-64, NEON on aarch64).
//
// Every implementation must produce bit-identical results to the scalar
// reference. The rule that makes this possible: SIMD lanes only span
// *independent* output elements, never a single accumulation chain. Each
// output element is accumulated in the same left-to-right order as the
// scalar code, with separate multiply and add (no FMA contraction).

namespace pwrf::kernels {

struct KernelSet {
  const char* name;

  // Elementwise, y may not alias a or b unless equal to one of them.
  void (*add)(const double* a, const double* b, double* y, std::int64_t n);
  void (*sub)(const double* a, const double* b, double* y, std::int64_t n);
  void (*mul)(const double* a, const double* b, double* y, std::int64_t n);
  void (*mul_acc)(const double* a, const double* b, double* y, std::int64_t n);  // y += a*b
  void (*axpy)(double a, const double* x, double* y, std::int64_t n);            // y += a*x
  void (*scale)(const double* x, double s, double* y, std::int64_t n);           // y = s*x
  void (*relu)(const double* x, double* y, std::int64_t n);                      // y = max(x, 0)

  // y[r,j] (+)= b[j] + sum_i x[r,i]*w[i,j]; x is [rows,cin], w is [cin,cout]
  // row-major, b may be null. accumulate==false overwrites y.
  void (*lin_fwd)(const double* x, const double* w, const double* b, double* y,
                  std::int64_t rows, std::int64_t cin, std::int64_t cout, bool accumulate);
  // dw[i,j] += sum_r x[r,i]*dy[r,j]
  void (*lin_dw)(const double* x, const double* dy, double* dw,
                 std::int64_t rows, std::int64_t cin, std::int64_t cout);

  // 3x3 cross-correlation, zero padding 1, spatial size preserved.
  // x is [H,W,cin], k is [3,3,cin,cout], b may be null, y is [H,W,cout].
  void (*conv3_fwd)(const double* x, const double* k, const double* b, double* y,
                    std::int64_t H, std::int64_t W, std::int64_t cin, std::int64_t cout,
                    bool accumulate);
  // dk[kh,kw,i,j] += sum_{h,w} x[h+kh-1,w+kw-1,i]*dy[h,w,j]
  void (*conv3_dw)(const double* x, const double* dy, double* dk,
                   std::int64_t H, std::int64_t W, std::int64_t cin, std::int64_t cout);
};

const KernelSet& scalar();

// Active set: best supported variant, or the one forced via select() /
// the PWRF_KERNELS environment variable (checked once at first use).
const KernelSet& active();

// All variants usable on this machine, scalar first.
std::vector<const KernelSet*> available();

// Force a variant by name ("scalar", "avx2", "neon"). False if unknown or
// unsupported on this CPU.
bool select(const std::string& name);

}  // namespace pwrf::kernels
