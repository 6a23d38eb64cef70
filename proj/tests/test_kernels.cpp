#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstring>

#include "pwrf/kernels.hpp"
#include "pwrf/rng.hpp"

using namespace pwrf;

namespace {

std::vector<double> rand_vec(std::size_t n, std::uint64_t seed, double lo = -2.0, double hi = 2.0) {
  Rng rng(seed);
  std::vector<double> v(n);
  for (double& x : v) x = rng.uniform(lo, hi);
  return v;
}

bool bits_equal(const std::vector<double>& a, const std::vector<double>& b) {
  return a.size() == b.size() &&
         std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

}  // namespace

// Every SIMD variant must reproduce the scalar reference bit for bit: lanes
// cover independent outputs and each output keeps the scalar accumulation
// order.
TEST_CASE("elementwise kernels are bit-identical across variants") {
  const auto variants = kernels::available();
  CHECK(variants.front() == &kernels::scalar());
  for (std::int64_t n : {1, 3, 4, 7, 64, 1001}) {
    auto a = rand_vec(static_cast<std::size_t>(n), 11 + static_cast<std::uint64_t>(n));
    auto b = rand_vec(static_cast<std::size_t>(n), 22 + static_cast<std::uint64_t>(n));
    for (const kernels::KernelSet* k : variants) {
      std::vector<double> ref(a.size()), got(a.size());

      kernels::scalar().add(a.data(), b.data(), ref.data(), n);
      k->add(a.data(), b.data(), got.data(), n);
      CHECK(bits_equal(ref, got));

      kernels::scalar().sub(a.data(), b.data(), ref.data(), n);
      k->sub(a.data(), b.data(), got.data(), n);
      CHECK(bits_equal(ref, got));

      kernels::scalar().mul(a.data(), b.data(), ref.data(), n);
      k->mul(a.data(), b.data(), got.data(), n);
      CHECK(bits_equal(ref, got));

      ref = a;
      got = a;
      kernels::scalar().mul_acc(b.data(), b.data(), ref.data(), n);
      k->mul_acc(b.data(), b.data(), got.data(), n);
      CHECK(bits_equal(ref, got));

      ref = b;
      got = b;
      kernels::scalar().axpy(0.37, a.data(), ref.data(), n);
      k->axpy(0.37, a.data(), got.data(), n);
      CHECK(bits_equal(ref, got));

      kernels::scalar().scale(a.data(), -1.75, ref.data(), n);
      k->scale(a.data(), -1.75, got.data(), n);
      CHECK(bits_equal(ref, got));

      kernels::scalar().relu(a.data(), ref.data(), n);
      k->relu(a.data(), got.data(), n);
      CHECK(bits_equal(ref, got));
    }
  }
}

TEST_CASE("linear kernels are bit-identical across variants") {
  for (auto [rows, cin, cout] : {std::tuple<int, int, int>{1, 1, 1},
                                 {3, 5, 7},
                                 {16, 32, 64},
                                 {9, 17, 33}}) {
    auto x = rand_vec(static_cast<std::size_t>(rows * cin), 7);
    auto w = rand_vec(static_cast<std::size_t>(cin * cout), 8);
    auto b = rand_vec(static_cast<std::size_t>(cout), 9);
    auto dy = rand_vec(static_cast<std::size_t>(rows * cout), 10);
    for (const kernels::KernelSet* k : kernels::available()) {
      std::vector<double> ref(static_cast<std::size_t>(rows * cout));
      std::vector<double> got(ref.size());
      kernels::scalar().lin_fwd(x.data(), w.data(), b.data(), ref.data(), rows, cin, cout, false);
      k->lin_fwd(x.data(), w.data(), b.data(), got.data(), rows, cin, cout, false);
      CHECK(bits_equal(ref, got));

      // accumulate mode
      auto ref2 = ref, got2 = got;
      kernels::scalar().lin_fwd(x.data(), w.data(), nullptr, ref2.data(), rows, cin, cout, true);
      k->lin_fwd(x.data(), w.data(), nullptr, got2.data(), rows, cin, cout, true);
      CHECK(bits_equal(ref2, got2));

      std::vector<double> dw_ref(static_cast<std::size_t>(cin * cout), 0.5);
      auto dw_got = dw_ref;
      kernels::scalar().lin_dw(x.data(), dy.data(), dw_ref.data(), rows, cin, cout);
      k->lin_dw(x.data(), dy.data(), dw_got.data(), rows, cin, cout);
      CHECK(bits_equal(dw_ref, dw_got));
    }
  }
}

TEST_CASE("conv3 kernels are bit-identical across variants") {
  for (auto [H, W, cin, cout] :
       {std::tuple<int, int, int, int>{1, 1, 1, 1}, {4, 5, 3, 6}, {8, 8, 16, 32}, {5, 3, 7, 5}}) {
    auto x = rand_vec(static_cast<std::size_t>(H * W * cin), 31);
    auto k9 = rand_vec(static_cast<std::size_t>(9 * cin * cout), 32);
    auto b = rand_vec(static_cast<std::size_t>(cout), 33);
    auto dy = rand_vec(static_cast<std::size_t>(H * W * cout), 34);
    for (const kernels::KernelSet* k : kernels::available()) {
      std::vector<double> ref(static_cast<std::size_t>(H * W * cout));
      std::vector<double> got(ref.size());
      kernels::scalar().conv3_fwd(x.data(), k9.data(), b.data(), ref.data(), H, W, cin, cout, false);
      k->conv3_fwd(x.data(), k9.data(), b.data(), got.data(), H, W, cin, cout, false);
      CHECK(bits_equal(ref, got));

      std::vector<double> dk_ref(k9.size(), 0.25);
      auto dk_got = dk_ref;
      kernels::scalar().conv3_dw(x.data(), dy.data(), dk_ref.data(), H, W, cin, cout);
      k->conv3_dw(x.data(), dy.data(), dk_got.data(), H, W, cin, cout);
      CHECK(bits_equal(dk_ref, dk_got));
    }
  }
}

TEST_CASE("kernel selection honors names") {
  CHECK(kernels::select("scalar"));
  CHECK(std::string(kernels::active().name) == "scalar");
  CHECK_FALSE(kernels::select("no-such-variant"));
  // restore the best variant for the remaining tests
  kernels::select(std::string(kernels::available().back()->name));
}
