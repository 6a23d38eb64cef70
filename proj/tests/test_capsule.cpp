#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "pwrf/capsule.hpp"
#include "pwrf/ops.hpp"
#include "test_util.hpp"

using namespace pwrf;
using testutil::random_tensor;

namespace {

Tensor find_param(ParamStore& store, const std::string& needle) {
  for (Parameter* p : store.all())
    if (p->name.find(needle) != std::string::npos) return p->tensor;
  FAIL("parameter not found: ", needle);
  return Tensor();
}

void fill(Tensor t, const std::vector<double>& v) {
  REQUIRE(t.values().size() == v.size());
  t.mutable_values() = v;
}

AxisCapsules make_parts_h(std::int64_t L, std::int64_t P, std::uint64_t seed) {
  // pose in [-1,1], activation strictly inside (0,1)
  Rng rng(seed);
  std::vector<double> g(static_cast<std::size_t>(L * P * 17));
  for (std::int64_t i = 0; i < L * P; ++i) {
    for (int h = 0; h < 16; ++h)
      g[static_cast<std::size_t>(i * 17 + h)] = rng.uniform(-1.0, 1.0);
    g[static_cast<std::size_t>(i * 17 + 16)] = rng.uniform(0.05, 0.95);
  }
  return AxisCapsules{Tensor::from_data({L, 1, P, 17}, std::move(g)), Axis::horizontal};
}

// Plain-double EM iteration (one M-step then one E-step), written directly
// from the update equations, independent of the tape implementation.
struct StepOracle {
  std::vector<double> coefficients;  // P*J
  std::vector<double> mu;            // J*16
  std::vector<double> act;           // J
};

StepOracle em_single_step(const std::vector<std::vector<double>>& pose,  // P x 16
                          const std::vector<double>& a,                  // P
                          const std::vector<std::vector<std::vector<double>>>& w,  // P x J x 16
                          const std::vector<double>& beta_a, const std::vector<double>& beta_u,
                          double lambda) {
  const std::size_t P = pose.size(), J = w[0].size();
  // votes
  std::vector<std::vector<std::vector<double>>> v(P);
  for (std::size_t p = 0; p < P; ++p) {
    v[p].resize(J, std::vector<double>(16, 0.0));
    for (std::size_t j = 0; j < J; ++j)
      for (int r = 0; r < 4; ++r)
        for (int c = 0; c < 4; ++c) {
          double acc = 0;
          for (int k = 0; k < 4; ++k) acc += pose[p][r * 4 + k] * w[p][j][k * 4 + c];
          v[p][j][static_cast<std::size_t>(r * 4 + c)] = acc;
        }
  }
  // M-step from uniform responsibilities
  StepOracle out;
  out.mu.assign(J * 16, 0.0);
  out.act.assign(J, 0.0);
  std::vector<std::vector<double>> var(J, std::vector<double>(16, 0.0));
  for (std::size_t j = 0; j < J; ++j) {
    double s = 0;
    std::vector<double> rw(P);
    for (std::size_t p = 0; p < P; ++p) {
      rw[p] = (1.0 / static_cast<double>(J)) * a[p];
      s += rw[p];
    }
    s = std::max(s, 1e-16);
    for (int h = 0; h < 16; ++h) {
      double m = 0;
      for (std::size_t p = 0; p < P; ++p) m += rw[p] * v[p][j][static_cast<std::size_t>(h)];
      m /= s;
      out.mu[j * 16 + static_cast<std::size_t>(h)] = m;
      double vv = 0;
      for (std::size_t p = 0; p < P; ++p) {
        const double d = v[p][j][static_cast<std::size_t>(h)] - m;
        vv += rw[p] * d * d;
      }
      var[j][static_cast<std::size_t>(h)] = std::max(vv / s, 1e-8);
    }
    double cost = 0;
    for (int h = 0; h < 16; ++h)
      cost += (beta_u[j] + 0.5 * std::log(var[j][static_cast<std::size_t>(h)])) * s;
    const double z = lambda * (beta_a[j] - cost);
    out.act[j] = 1.0 / (1.0 + std::exp(-z));
  }
  // E-step
  out.coefficients.assign(P * J, 0.0);
  for (std::size_t p = 0; p < P; ++p) {
    std::vector<double> logit(J);
    for (std::size_t j = 0; j < J; ++j) {
      double lp = 0;
      for (int h = 0; h < 16; ++h) {
        const double d = v[p][j][static_cast<std::size_t>(h)] -
                         out.mu[j * 16 + static_cast<std::size_t>(h)];
        const double s2 = var[j][static_cast<std::size_t>(h)];
        lp += -d * d / (2.0 * s2) - 0.5 * std::log(s2) - 0.5 * std::log(2.0 * M_PI);
      }
      logit[j] = std::log(out.act[j]) + lp;
    }
    double m = logit[0];
    for (double x : logit) m = std::max(m, x);
    double sum = 0;
    for (std::size_t j = 0; j < J; ++j) {
      logit[j] = std::exp(logit[j] - m);
      sum += logit[j];
    }
    for (std::size_t j = 0; j < J; ++j) out.coefficients[p * J + j] = logit[j] / sum;
  }
  return out;
}

}  // namespace

TEST_CASE("make_primary_capsules builds (H,W,T,17) grids with sigmoid activations") {
  ParamStore store(1);
  FusionConfig cfg;
  cfg.part_types = 8;
  CapsuleFusion fusion(store, "t.", cfg);
  Tensor f = random_tensor({4, 4, 32}, 2);
  CapsuleField cf = fusion.make_primary_capsules(f, 0);
  CHECK(cf.grid.shape() == Shape{4, 4, 8, 17});
  for (std::int64_t h = 0; h < 4; ++h)
    for (std::int64_t w = 0; w < 4; ++w)
      for (std::int64_t t = 0; t < 8; ++t) {
        const double a = cf.grid.at({h, w, t, 16});
        CHECK(a > 0.0);
        CHECK(a < 1.0);
      }

  // zero projection weights: sigmoid(0) activations exactly 0.5
  for (Parameter* p : store.all())
    std::fill(p->tensor.mutable_values().begin(), p->tensor.mutable_values().end(), 0.0);
  CapsuleField cf0 = fusion.make_primary_capsules(f, 0);
  for (std::int64_t h = 0; h < 4; ++h)
    for (std::int64_t w = 0; w < 4; ++w)
      for (std::int64_t t = 0; t < 8; ++t) CHECK(cf0.grid.at({h, w, t, 16}) == 0.5);
}

TEST_CASE("disentangle collapses one resolution axis") {
  ParamStore store(3);
  FusionConfig cfg;
  cfg.part_types = 8;
  CapsuleFusion fusion(store, "t.", cfg);
  CapsuleField cf{random_tensor({4, 6, 8, 17}, 4)};
  AxisCapsules h = fusion.disentangle(cf, Axis::horizontal, 0);
  AxisCapsules v = fusion.disentangle(cf, Axis::vertical, 0);
  CHECK(h.grid.shape() == Shape{4, 1, 8, 17});
  CHECK(v.grid.shape() == Shape{1, 6, 8, 17});

  // W=1 input: the averaging init makes the collapse an identity on data
  CapsuleField col{random_tensor({5, 1, 3, 17}, 5)};
  AxisCapsules hc = fusion.disentangle(col, Axis::horizontal, 0);
  CHECK(testutil::max_abs_diff(hc.grid, col.grid) < 1e-15);
}

TEST_CASE("concat_parts stacks along the type axis in modality order") {
  auto p1 = make_parts_h(4, 8, 10);
  auto p2 = make_parts_h(4, 8, 11);
  auto p3 = make_parts_h(4, 8, 12);
  CHECK(CapsuleFusion::concat_parts({p1, p2, p3}).grid.shape() == Shape{4, 1, 24, 17});
  CHECK(CapsuleFusion::concat_parts({p1, p2}).grid.shape() == Shape{4, 1, 16, 17});
  AxisCapsules same = CapsuleFusion::concat_parts({p1});
  CHECK(testutil::max_abs_diff(same.grid, p1.grid) == 0.0);

  AxisCapsules v{random_tensor({1, 4, 8, 17}, 13), Axis::vertical};
  CHECK_THROWS_AS(CapsuleFusion::concat_parts({p1, v}), Error);
}

TEST_CASE("em_routing degenerate cases") {
  // single part, single whole: normalization over one class is exactly 1
  {
    ParamStore store(20);
    FusionConfig cfg;
    cfg.part_types = 1;
    cfg.whole_types = 1;
    CapsuleFusion fusion(store, "t.", cfg);
    RoutingOutcome out = fusion.em_routing(make_parts_h(3, 1, 21));
    for (double c : out.coefficients.values()) CHECK(c == 1.0);
    CHECK(out.wholes.grid.shape() == Shape{3, 1, 1, 17});
  }
  // duplicated identical parts, symmetric (noise-free) init: rows are (1/2, 1/2)
  {
    ParamStore store(22);
    FusionConfig cfg;
    cfg.part_types = 2;
    cfg.whole_types = 2;
    cfg.vote_noise = 0.0;
    CapsuleFusion fusion(store, "t.", cfg);
    AxisCapsules one = make_parts_h(2, 1, 23);
    Tensor dup = ops::concat({one.grid, one.grid}, 2);
    RoutingOutcome out = fusion.em_routing(AxisCapsules{dup, Axis::horizontal});
    for (double c : out.coefficients.values()) CHECK(c == doctest::Approx(0.5).epsilon(1e-6));
  }
  // zero iterations violate the contract
  {
    ParamStore store(24);
    FusionConfig cfg;
    cfg.routing_iters = 0;
    CapsuleFusion fusion(store, "t.", cfg);
    CHECK_THROWS_AS(fusion.em_routing(make_parts_h(2, 8, 25)), Error);
  }
}

TEST_CASE("one E/M iteration matches the independent step-by-step oracle") {
  const std::int64_t P = 2, J = 2;
  std::vector<std::vector<double>> pose = {
      {0.3, -0.5, 0.8, 0.1, 0.6, -0.2, 0.4, -0.9, 0.05, 0.7, -0.3, 0.2, -0.6, 0.15, 0.9, -0.4},
      {-0.7, 0.25, -0.1, 0.55, -0.35, 0.85, -0.45, 0.05, 0.65, -0.15, 0.35, -0.8, 0.5, -0.25, 0.1, 0.75}};
  std::vector<double> act = {0.7, 0.4};
  std::vector<std::vector<std::vector<double>>> w(
      static_cast<std::size_t>(P),
      std::vector<std::vector<double>>(static_cast<std::size_t>(J), std::vector<double>(16)));
  Rng wr(99);
  for (auto& wp : w)
    for (auto& wj : wp)
      for (int k = 0; k < 16; ++k) {
        const int r = k / 4, c = k % 4;
        wj[static_cast<std::size_t>(k)] = (r == c ? 1.0 : 0.0) + wr.uniform(-0.2, 0.2);
      }
  std::vector<double> beta_a = {0.3, -0.2}, beta_u = {0.1, 0.05};
  const double lambda = 1.0;

  StepOracle oracle = em_single_step(pose, act, w, beta_a, beta_u, lambda);

  // drive the tape implementation with the same instance
  ParamStore store(30);
  FusionConfig cfg;
  cfg.part_types = 2;
  cfg.whole_types = 2;
  cfg.routing_iters = 1;
  cfg.lambda_schedule = {lambda};
  CapsuleFusion fusion(store, "t.", cfg);
  std::vector<double> grid(static_cast<std::size_t>(P * 17));
  for (std::int64_t p = 0; p < P; ++p) {
    for (int h = 0; h < 16; ++h)
      grid[static_cast<std::size_t>(p * 17 + h)] = pose[static_cast<std::size_t>(p)][static_cast<std::size_t>(h)];
    grid[static_cast<std::size_t>(p * 17 + 16)] = act[static_cast<std::size_t>(p)];
  }
  AxisCapsules parts{Tensor::from_data({1, 1, P, 17}, grid), Axis::horizontal};
  fusion.em_routing(parts);  // materialize parameters
  std::vector<double> wflat;
  for (std::int64_t p = 0; p < P; ++p)
    for (std::int64_t j = 0; j < J; ++j)
      for (int k = 0; k < 16; ++k)
        wflat.push_back(w[static_cast<std::size_t>(p)][static_cast<std::size_t>(j)][static_cast<std::size_t>(k)]);
  fill(find_param(store, "vote_w"), wflat);
  fill(find_param(store, "beta_a"), beta_a);
  fill(find_param(store, "beta_u"), beta_u);

  RoutingOutcome out = fusion.em_routing(parts);
  for (std::int64_t p = 0; p < P; ++p)
    for (std::int64_t j = 0; j < J; ++j)
      CHECK(out.coefficients.at({0, p, j}) ==
            doctest::Approx(oracle.coefficients[static_cast<std::size_t>(p * J + j)]).epsilon(1e-10));
  for (std::int64_t j = 0; j < J; ++j) {
    for (int h = 0; h < 16; ++h)
      CHECK(out.wholes.grid.at({0, 0, j, h}) ==
            doctest::Approx(oracle.mu[static_cast<std::size_t>(j * 16 + h)]).epsilon(1e-10));
    CHECK(out.wholes.grid.at({0, 0, j, 16}) ==
          doctest::Approx(oracle.act[static_cast<std::size_t>(j)]).epsilon(1e-10));
  }
}

TEST_CASE("entangle: shapes, ones, exact bilinearity, rank-1 recovery") {
  AxisCapsules h{Tensor::full({4, 1, 3, 17}, 1.0), Axis::horizontal};
  AxisCapsules v{Tensor::full({1, 6, 3, 17}, 1.0), Axis::vertical};
  CapsuleField wp = CapsuleFusion::entangle(h, v);
  CHECK(wp.grid.shape() == Shape{4, 6, 3, 17});
  for (double x : wp.grid.values()) CHECK(x == 1.0);

  AxisCapsules hr{random_tensor({4, 1, 3, 17}, 31), Axis::horizontal};
  AxisCapsules vr{random_tensor({1, 6, 3, 17}, 32), Axis::vertical};
  Tensor a = CapsuleFusion::entangle(hr, vr).grid;
  AxisCapsules h2{ops::scale_shift(hr.grid, 2.0, 0.0), Axis::horizontal};
  Tensor b = CapsuleFusion::entangle(h2, vr).grid;
  // scaling by a power of two is exact, so bilinearity holds bit for bit
  for (std::size_t i = 0; i < a.values().size(); ++i)
    CHECK(b.values()[i] == 2.0 * a.values()[i]);

  CHECK_THROWS_AS(CapsuleFusion::entangle(hr, hr), Error);
}

TEST_CASE("split_coefficients: degenerate values, range, reassembly") {
  // T_w = 1: every row sums to one over a single class, mean is exactly 1
  Tensor r1 = Tensor::full({5, 6, 1}, 1.0);
  Tensor s1 = CapsuleFusion::split_coefficients(r1, 1, 2, Axis::horizontal);
  CHECK(s1.shape() == Shape{5, 1, 2});
  for (double v : s1.values()) CHECK(v == 1.0);

  // uniform coefficients stay 1/T_w after the mean
  Tensor r2 = Tensor::full({3, 6, 4}, 0.25);
  Tensor s2 = CapsuleFusion::split_coefficients(r2, 2, 2, Axis::vertical);
  CHECK(s2.shape() == Shape{1, 3, 2});
  for (double v : s2.values()) CHECK(v == 0.25);

  // random valid simplex rows: split values stay within [0,1]
  Rng rng(33);
  std::vector<double> rv(static_cast<std::size_t>(4 * 6 * 3));
  for (std::size_t row = 0; row < 4 * 6; ++row) {
    double s = 0;
    for (int j = 0; j < 3; ++j) s += (rv[row * 3 + static_cast<std::size_t>(j)] = rng.uniform(0.01, 1.0));
    for (int j = 0; j < 3; ++j) rv[row * 3 + static_cast<std::size_t>(j)] /= s;
  }
  Tensor r3 = Tensor::from_data({4, 6, 3}, rv);
  for (int mod = 0; mod < 3; ++mod) {
    Tensor s3 = CapsuleFusion::split_coefficients(r3, mod, 2, Axis::horizontal);
    for (double v : s3.values()) {
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
    }
    // mean over whole types of the modality block, recomputed by hand
    for (std::int64_t l = 0; l < 4; ++l)
      for (std::int64_t t = 0; t < 2; ++t) {
        double m = 0;
        for (std::int64_t j = 0; j < 3; ++j) m += r3.at({l, mod * 2 + t, j});
        CHECK(s3.at({l, 0, t}) == doctest::Approx(m / 3.0).epsilon(1e-12));
      }
  }
  CHECK_THROWS_AS(CapsuleFusion::split_coefficients(r3, 3, 2, Axis::horizontal), Error);
  CHECK_THROWS_AS(CapsuleFusion::split_coefficients(r3, -1, 2, Axis::horizontal), Error);
}

TEST_CASE("modal_specific: identity and zero splits, scalar oracle") {
  AxisCapsules ph{random_tensor({2, 1, 2, 17}, 34), Axis::horizontal};
  AxisCapsules pv{random_tensor({1, 2, 2, 17}, 35), Axis::vertical};

  Tensor ones_h = Tensor::full({2, 1, 2}, 1.0);
  Tensor ones_v = Tensor::full({1, 2, 2}, 1.0);
  Tensor sp1 = CapsuleFusion::modal_specific(ph, pv, ones_h, ones_v);
  Tensor ent = ops::reshape(CapsuleFusion::entangle(ph, pv).grid, {2, 2, 34});
  CHECK(testutil::max_abs_diff(sp1, ent) == 0.0);

  Tensor zero_h = Tensor::zeros({2, 1, 2});
  Tensor sp0 = CapsuleFusion::modal_specific(ph, pv, zero_h, ones_v);
  for (double v : sp0.values()) CHECK(v == 0.0);

  // hand 2x2 instance against an elementwise recomputation
  Tensor rh = random_tensor({2, 1, 2}, 36, 0.1, 0.9);
  Tensor rv = random_tensor({1, 2, 2}, 37, 0.1, 0.9);
  Tensor sp = CapsuleFusion::modal_specific(ph, pv, rh, rv);
  for (std::int64_t h = 0; h < 2; ++h)
    for (std::int64_t w = 0; w < 2; ++w)
      for (std::int64_t t = 0; t < 2; ++t)
        for (std::int64_t d = 0; d < 17; ++d) {
          const double want = ph.grid.at({h, 0, t, d}) * rh.at({h, 0, t}) *
                              pv.grid.at({0, w, t, d}) * rv.at({0, w, t});
          CHECK(sp.at({h, w, t * 17 + d}) == doctest::Approx(want).epsilon(1e-12));
        }
}

TEST_CASE("merge_specifics projects the concatenated specifics") {
  ParamStore store(40);
  FusionConfig cfg;
  cfg.merged_channels = 64;
  CapsuleFusion fusion(store, "t.", cfg);
  std::vector<Tensor> sp = {random_tensor({4, 4, 136}, 41), random_tensor({4, 4, 136}, 42),
                            random_tensor({4, 4, 136}, 43)};
  CHECK(fusion.merge_specifics(sp).shape() == Shape{4, 4, 64});

  // zero projection weights leave only the bias
  ParamStore store2(44);
  FusionConfig cfg2;
  cfg2.merged_channels = 8;
  CapsuleFusion f2(store2, "t.", cfg2);
  Tensor m = f2.merge_specifics({random_tensor({3, 3, 10}, 45)});
  fill(find_param(store2, "merge.w"), std::vector<double>(80, 0.0));
  fill(find_param(store2, "merge.b"), {1, 2, 3, 4, 5, 6, 7, 8});
  Tensor m2 = f2.merge_specifics({random_tensor({3, 3, 10}, 46)});
  for (std::int64_t h = 0; h < 3; ++h)
    for (std::int64_t w = 0; w < 3; ++w)
      for (std::int64_t c = 0; c < 8; ++c) CHECK(m2.at({h, w, c}) == static_cast<double>(c + 1));
}

TEST_CASE("fuse: shape composition, simplex, splits, determinism") {
  FusionConfig cfg;
  cfg.part_types = 8;
  cfg.whole_types = 4;
  cfg.merged_channels = 24;
  std::vector<Tensor> bundle = {random_tensor({4, 4, 32}, 50), random_tensor({4, 4, 32}, 51),
                                random_tensor({4, 4, 32}, 52)};

  ParamStore store(53);
  CapsuleFusion fusion(store, "t.", cfg);
  FusionOutputs out = fusion.fuse(bundle);
  CHECK(out.shared.grid.shape() == Shape{4, 4, 4, 17});
  CHECK(out.specifics.size() == 3);
  for (const Tensor& sp : out.specifics) CHECK(sp.shape() == Shape{4, 4, 136});
  CHECK(out.merged_specific.shape() == Shape{4, 4, 24});
  CHECK(out.routing_h.coefficients.shape() == Shape{4, 24, 4});
  CHECK(out.routing_v.coefficients.shape() == Shape{4, 24, 4});

  // routing simplex on both axes
  for (const Tensor* r : {&out.routing_h.coefficients, &out.routing_v.coefficients})
    for (std::int64_t l = 0; l < r->dim(0); ++l)
      for (std::int64_t p = 0; p < r->dim(1); ++p) {
        double s = 0;
        for (std::int64_t j = 0; j < r->dim(2); ++j) {
          const double c = r->at({l, p, j});
          CHECK(c >= 0.0);
          CHECK(c <= 1.0);
          s += c;
        }
        CHECK(s == doctest::Approx(1.0).epsilon(1e-6));
      }

  // split consistency: per-modality blocks average the raw rows exactly
  for (int mod = 0; mod < 3; ++mod)
    for (std::int64_t l = 0; l < 4; ++l)
      for (std::int64_t t = 0; t < 8; ++t) {
        double m = 0;
        for (std::int64_t j = 0; j < 4; ++j) m += out.routing_h.coefficients.at({l, mod * 8 + t, j});
        CHECK(out.coefficients_h[static_cast<std::size_t>(mod)].at({l, 0, t}) ==
              doctest::Approx(m / 4.0).epsilon(1e-12));
      }

  // same seed, fresh store: bit-identical outputs
  ParamStore store2(53);
  CapsuleFusion fusion2(store2, "t.", cfg);
  FusionOutputs out2 = fusion2.fuse(bundle);
  CHECK(testutil::bit_equal(out.merged_specific.values(), out2.merged_specific.values()));
  CHECK(testutil::bit_equal(out.shared.grid.values(), out2.shared.grid.values()));
}

TEST_CASE("fuse: modality permutation permutes the specifics (tied weights)") {
  FusionConfig cfg;
  cfg.part_types = 4;
  cfg.whole_types = 2;
  cfg.merged_channels = 12;
  cfg.share_params = true;
  cfg.vote_noise = 0.0;  // identical transforms across modality blocks
  std::vector<Tensor> bundle = {random_tensor({4, 4, 8}, 60), random_tensor({4, 4, 8}, 61),
                                random_tensor({4, 4, 8}, 62)};
  ParamStore store(63);
  CapsuleFusion fusion(store, "t.", cfg);
  FusionOutputs a = fusion.fuse(bundle);
  FusionOutputs b = fusion.fuse({bundle[2], bundle[0], bundle[1]});
  const int perm[3] = {2, 0, 1};  // b's modality i is a's perm[i]
  for (int i = 0; i < 3; ++i) {
    CHECK(testutil::max_abs_diff(b.specifics[static_cast<std::size_t>(i)],
                                 a.specifics[static_cast<std::size_t>(perm[i])]) < 1e-9);
    CHECK(testutil::max_abs_diff(b.coefficients_h[static_cast<std::size_t>(i)],
                                 a.coefficients_h[static_cast<std::size_t>(perm[i])]) < 1e-9);
  }
}

TEST_CASE("fuse: T_w = 1 stays finite with unit splits") {
  FusionConfig cfg;
  cfg.part_types = 3;
  cfg.whole_types = 1;
  cfg.merged_channels = 8;
  ParamStore store(70);
  CapsuleFusion fusion(store, "t.", cfg);
  FusionOutputs out = fusion.fuse({random_tensor({3, 5, 6}, 71), random_tensor({3, 5, 6}, 72)});
  for (double v : out.shared.grid.values()) CHECK(std::isfinite(v));
  for (const auto& cs : {out.coefficients_h, out.coefficients_v})
    for (const Tensor& c : cs)
      for (double v : c.values()) CHECK(v == 1.0);
}

TEST_CASE("gradients flow through routing and the full fuse pipeline") {
  // em_routing alone, three unrolled iterations
  {
    ParamStore store(80);
    FusionConfig cfg;
    cfg.part_types = 2;
    cfg.whole_types = 2;
    cfg.routing_iters = 3;
    CapsuleFusion fusion(store, "t.", cfg);
    AxisCapsules parts = make_parts_h(2, 4, 81);
    Tensor grid = parts.grid;
    grid.set_requires_grad(true);
    Parameter pg{grid, "parts"};
    fusion.em_routing(AxisCapsules{grid, Axis::horizontal});
    std::vector<Parameter*> params{&pg};
    for (Parameter* p : store.all()) params.push_back(p);
    Tensor probe_c = random_tensor({2, 4, 2}, 82);
    Tensor probe_w = random_tensor({2, 1, 2, 17}, 83);
    auto f = [&]() {
      RoutingOutcome out = fusion.em_routing(AxisCapsules{grid, Axis::horizontal});
      return ops::add(ops::sum_all(ops::mul(out.coefficients, probe_c)),
                      ops::sum_all(ops::mul(out.wholes.grid, probe_w)));
    };
    CHECK(grad_check(f, params, 1e-5, -1, 84) < 1e-3);
  }
  // full fuse on (4,4) inputs
  {
    ParamStore store(85);
    FusionConfig cfg;
    cfg.part_types = 2;
    cfg.whole_types = 2;
    cfg.merged_channels = 6;
    CapsuleFusion fusion(store, "t.", cfg);
    Tensor f0 = random_tensor({4, 4, 5}, 86, -1, 1, true);
    Tensor f1 = random_tensor({4, 4, 5}, 87, -1, 1, true);
    Parameter p0{f0, "f0"}, p1{f1, "f1"};
    fusion.fuse({f0, f1});
    std::vector<Parameter*> params{&p0, &p1};
    for (Parameter* p : store.all()) params.push_back(p);
    Tensor probe_m = random_tensor({4, 4, 6}, 88);
    Tensor probe_s = random_tensor({4, 4, 2, 17}, 89);
    auto f = [&]() {
      FusionOutputs out = fusion.fuse({f0, f1});
      return ops::add(ops::sum_all(ops::mul(out.merged_specific, probe_m)),
                      ops::sum_all(ops::mul(out.shared.grid, probe_s)));
    };
    CHECK(grad_check(f, params, 1e-5, 6, 90) < 1e-3);
  }
}
