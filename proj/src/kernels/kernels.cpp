#include "pwrf/kernels.hpp"

#include <cstdlib>

namespace pwrf::kernels {

#if defined(__x86_64__) || defined(_M_X64)
const KernelSet* avx2_kernels();  // kernels_avx2.cpp
static bool cpu_has_avx2() {
#if defined(__GNUC__) || defined(__clang__)
  return __builtin_cpu_supports("avx2");
#else
  return false;
#endif
}
#endif
#if defined(__aarch64__)
const KernelSet* neon_kernels();  // kernels_neon.cpp
#endif

std::vector<const KernelSet*> available() {
  std::vector<const KernelSet*> v{&scalar()};
#if defined(__x86_64__) || defined(_M_X64)
  if (cpu_has_avx2()) v.push_back(avx2_kernels());
#endif
#if defined(__aarch64__)
  v.push_back(neon_kernels());
#endif
  return v;
}

namespace {
const KernelSet* g_active = nullptr;

const KernelSet* resolve_default() {
  auto v = available();
  if (const char* env = std::getenv("PWRF_KERNELS")) {
    for (const KernelSet* k : v)
      if (std::string(k->name) == env) return k;
    // Unknown or unsupported request: fall back to the best available.
  }
  return v.back();
}
}  // namespace

const KernelSet& active() {
  if (!g_active) g_active = resolve_default();
  return *g_active;
}

bool select(const std::string& name) {
  for (const KernelSet* k : available()) {
    if (name == k->name) {
      g_active = k;
      return true;
    }
  }
  return false;
}

}  // namespace pwrf::kernels
