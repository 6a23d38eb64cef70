#include "pwrf/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "pwrf/kernels.hpp"

namespace pwrf::ops {

using detail::make_op;
using Node = Tensor::Node;

namespace {

const kernels::KernelSet& K() { return kernels::active(); }

std::int64_t isize(const std::vector<double>& v) { return static_cast<std::int64_t>(v.size()); }

double stable_sigmoid(double x) {
  if (x >= 0.0) {
    const double e = std::exp(-x);
    return 1.0 / (1.0 + e);
  }
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// ---------------------------------------------------------------------------
// Broadcast plumbing
// ---------------------------------------------------------------------------

struct Bcast {
  Shape out;
  std::vector<std::int64_t> sa, sb;  // per-axis step in a / b (0 on broadcast axes)
  std::int64_t n = 0;
  bool same = false;
};

Bcast plan_bcast(const char* name, const Shape& a, const Shape& b) {
  check_shape(a.size() == b.size(),
              std::string(name) + ": rank mismatch " + shape_str(a) + " vs " + shape_str(b));
  Bcast bc;
  const int r = static_cast<int>(a.size());
  bc.out.resize(a.size());
  bc.same = true;
  for (int i = 0; i < r; ++i) {
    const std::int64_t ea = a[static_cast<std::size_t>(i)], eb = b[static_cast<std::size_t>(i)];
    check_shape(ea == eb || ea == 1 || eb == 1,
                std::string(name) + ": incompatible shapes " + shape_str(a) + " vs " + shape_str(b));
    bc.out[static_cast<std::size_t>(i)] = std::max(ea, eb);
    bc.same = bc.same && ea == eb;
  }
  auto strides = [&](const Shape& s) {
    std::vector<std::int64_t> st(s.size(), 0);
    std::int64_t acc = 1;
    for (int i = r - 1; i >= 0; --i) {
      st[static_cast<std::size_t>(i)] = (s[static_cast<std::size_t>(i)] == 1) ? 0 : acc;
      acc *= s[static_cast<std::size_t>(i)];
    }
    return st;
  };
  bc.sa = strides(a);
  bc.sb = strides(b);
  bc.n = numel(bc.out);
  return bc;
}

// f(flat_out, flat_a, flat_b), row-major over the output.
template <class F>
void bcast_for(const Bcast& bc, F&& f) {
  const int r = static_cast<int>(bc.out.size());
  std::vector<std::int64_t> idx(static_cast<std::size_t>(r), 0);
  std::int64_t ia = 0, ib = 0;
  for (std::int64_t io = 0; io < bc.n; ++io) {
    f(io, ia, ib);
    for (int ax = r - 1; ax >= 0; --ax) {
      auto u = static_cast<std::size_t>(ax);
      ++idx[u];
      ia += bc.sa[u];
      ib += bc.sb[u];
      if (idx[u] < bc.out[u]) break;
      idx[u] = 0;
      ia -= bc.sa[u] * bc.out[u];
      ib -= bc.sb[u] * bc.out[u];
    }
  }
}

enum class Bin { add, sub, mul, div, max };

Tensor binary_op(const char* name, Bin kind, const Tensor& a, const Tensor& b) {
  Bcast bc = plan_bcast(name, a.shape(), b.shape());
  std::vector<double> out(static_cast<std::size_t>(bc.n));
  const double* pa = a.data();
  const double* pb = b.data();
  if (bc.same) {
    switch (kind) {
      case Bin::add: K().add(pa, pb, out.data(), bc.n); break;
      case Bin::sub: K().sub(pa, pb, out.data(), bc.n); break;
      case Bin::mul: K().mul(pa, pb, out.data(), bc.n); break;
      case Bin::div:
        for (std::int64_t i = 0; i < bc.n; ++i) out[static_cast<std::size_t>(i)] = pa[i] / pb[i];
        break;
      case Bin::max:
        for (std::int64_t i = 0; i < bc.n; ++i)
          out[static_cast<std::size_t>(i)] = pa[i] >= pb[i] ? pa[i] : pb[i];
        break;
    }
  } else {
    bcast_for(bc, [&](std::int64_t io, std::int64_t ia, std::int64_t ib) {
      const double x = pa[ia], y = pb[ib];
      double v = 0;
      switch (kind) {
        case Bin::add: v = x + y; break;
        case Bin::sub: v = x - y; break;
        case Bin::mul: v = x * y; break;
        case Bin::div: v = x / y; break;
        case Bin::max: v = x >= y ? x : y; break;
      }
      out[static_cast<std::size_t>(io)] = v;
    });
  }

  return make_op(name, bc.out, std::move(out), {a, b}, [kind, bc](Node& self) {
    Node* na = self.inputs[0].get();
    Node* nb = self.inputs[1].get();
    const std::vector<double>& g = self.grad;
    const double* pa = na->value.data();
    const double* pb = nb->value.data();
    const bool ga = na->requires_grad, gb = nb->requires_grad;
    double* da = ga ? na->grad_buf().data() : nullptr;
    double* db = gb ? nb->grad_buf().data() : nullptr;

    if (bc.same) {
      const std::int64_t n = bc.n;
      switch (kind) {
        case Bin::add:
          if (ga) K().add(da, g.data(), da, n);
          if (gb) K().add(db, g.data(), db, n);
          return;
        case Bin::sub:
          if (ga) K().add(da, g.data(), da, n);
          if (gb) K().axpy(-1.0, g.data(), db, n);
          return;
        case Bin::mul:
          if (ga) K().mul_acc(g.data(), pb, da, n);
          if (gb) K().mul_acc(g.data(), pa, db, n);
          return;
        case Bin::div:
          for (std::int64_t i = 0; i < n; ++i) {
            const double inv = 1.0 / pb[i];
            if (ga) da[i] += g[static_cast<std::size_t>(i)] * inv;
            if (gb) db[i] -= g[static_cast<std::size_t>(i)] * pa[i] * inv * inv;
          }
          return;
        case Bin::max:
          for (std::int64_t i = 0; i < n; ++i) {
            if (pa[i] >= pb[i]) {
              if (ga) da[i] += g[static_cast<std::size_t>(i)];
            } else if (gb) {
              db[i] += g[static_cast<std::size_t>(i)];
            }
          }
          return;
      }
    }
    bcast_for(bc, [&](std::int64_t io, std::int64_t ia, std::int64_t ib) {
      const double gv = g[static_cast<std::size_t>(io)];
      switch (kind) {
        case Bin::add:
          if (ga) da[ia] += gv;
          if (gb) db[ib] += gv;
          break;
        case Bin::sub:
          if (ga) da[ia] += gv;
          if (gb) db[ib] -= gv;
          break;
        case Bin::mul:
          if (ga) da[ia] += gv * pb[ib];
          if (gb) db[ib] += gv * pa[ia];
          break;
        case Bin::div: {
          const double inv = 1.0 / pb[ib];
          if (ga) da[ia] += gv * inv;
          if (gb) db[ib] -= gv * pa[ia] * inv * inv;
          break;
        }
        case Bin::max:
          if (pa[ia] >= pb[ib]) {
            if (ga) da[ia] += gv;
          } else if (gb) {
            db[ib] += gv;
          }
          break;
      }
    });
  });
}

}  // namespace

// ---------------------------------------------------------------------------
// Elementwise
// ---------------------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) { return binary_op("add", Bin::add, a, b); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary_op("sub", Bin::sub, a, b); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary_op("mul", Bin::mul, a, b); }
Tensor div(const Tensor& a, const Tensor& b) { return binary_op("div", Bin::div, a, b); }
Tensor emax(const Tensor& a, const Tensor& b) { return binary_op("emax", Bin::max, a, b); }

Tensor sigmoid(const Tensor& x) {
  std::vector<double> out(x.values().size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = stable_sigmoid(x.values()[i]);
  return make_op("sigmoid", x.shape(), std::move(out), {x}, [](Node& self) {
    Node* nx = self.inputs[0].get();
    double* dx = nx->grad_buf().data();
    for (std::size_t i = 0; i < self.value.size(); ++i) {
      const double y = self.value[i];
      dx[i] += self.grad[i] * y * (1.0 - y);
    }
  });
}

Tensor logsigmoid(const Tensor& x) {
  std::vector<double> out(x.values().size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double v = x.values()[i];
    out[i] = v < 0.0 ? v - std::log1p(std::exp(v)) : -std::log1p(std::exp(-v));
  }
  return make_op("logsigmoid", x.shape(), std::move(out), {x}, [](Node& self) {
    Node* nx = self.inputs[0].get();
    double* dx = nx->grad_buf().data();
    for (std::size_t i = 0; i < self.value.size(); ++i)
      dx[i] += self.grad[i] * stable_sigmoid(-nx->value[i]);
  });
}

Tensor relu(const Tensor& x) {
  std::vector<double> out(x.values().size());
  K().relu(x.data(), out.data(), isize(out));
  return make_op("relu", x.shape(), std::move(out), {x}, [](Node& self) {
    Node* nx = self.inputs[0].get();
    double* dx = nx->grad_buf().data();
    for (std::size_t i = 0; i < self.value.size(); ++i)
      if (nx->value[i] > 0.0) dx[i] += self.grad[i];
  });
}

Tensor exp(const Tensor& x) {
  std::vector<double> out(x.values().size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::exp(x.values()[i]);
  return make_op("exp", x.shape(), std::move(out), {x}, [](Node& self) {
    double* dx = self.inputs[0]->grad_buf().data();
    for (std::size_t i = 0; i < self.value.size(); ++i) dx[i] += self.grad[i] * self.value[i];
  });
}

Tensor log(const Tensor& x) {
  std::vector<double> out(x.values().size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::log(x.values()[i]);
  return make_op("log", x.shape(), std::move(out), {x}, [](Node& self) {
    Node* nx = self.inputs[0].get();
    double* dx = nx->grad_buf().data();
    for (std::size_t i = 0; i < self.value.size(); ++i) dx[i] += self.grad[i] / nx->value[i];
  });
}

Tensor sqrt(const Tensor& x) {
  std::vector<double> out(x.values().size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::sqrt(x.values()[i]);
  return make_op("sqrt", x.shape(), std::move(out), {x}, [](Node& self) {
    double* dx = self.inputs[0]->grad_buf().data();
    for (std::size_t i = 0; i < self.value.size(); ++i)
      dx[i] += self.grad[i] * 0.5 / self.value[i];
  });
}

Tensor clamp(const Tensor& x, double lo, double hi) {
  check_contract(lo <= hi, "clamp: lo > hi");
  std::vector<double> out(x.values().size());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = std::min(std::max(x.values()[i], lo), hi);
  return make_op("clamp", x.shape(), std::move(out), {x}, [lo, hi](Node& self) {
    Node* nx = self.inputs[0].get();
    double* dx = nx->grad_buf().data();
    for (std::size_t i = 0; i < self.value.size(); ++i) {
      const double v = nx->value[i];
      if (v > lo && v < hi) dx[i] += self.grad[i];
    }
  });
}

Tensor clamp_min(const Tensor& x, double lo) {
  std::vector<double> out(x.values().size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::max(x.values()[i], lo);
  return make_op("clamp_min", x.shape(), std::move(out), {x}, [lo](Node& self) {
    Node* nx = self.inputs[0].get();
    double* dx = nx->grad_buf().data();
    for (std::size_t i = 0; i < self.value.size(); ++i)
      if (nx->value[i] > lo) dx[i] += self.grad[i];
  });
}

Tensor scale_shift(const Tensor& x, double s, double t) {
  std::vector<double> out(x.values().size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = s * x.values()[i] + t;
  return make_op("scale_shift", x.shape(), std::move(out), {x}, [s](Node& self) {
    double* dx = self.inputs[0]->grad_buf().data();
    K().axpy(s, self.grad.data(), dx, isize(self.value));
  });
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

namespace {
void axis_split(const Shape& s, int axis, std::int64_t& outer, std::int64_t& ext,
                std::int64_t& inner) {
  check_shape(axis >= 0 && axis < static_cast<int>(s.size()), "axis out of range");
  outer = 1;
  inner = 1;
  for (int i = 0; i < axis; ++i) outer *= s[static_cast<std::size_t>(i)];
  ext = s[static_cast<std::size_t>(axis)];
  for (std::size_t i = static_cast<std::size_t>(axis) + 1; i < s.size(); ++i) inner *= s[i];
}
}  // namespace

Tensor sum_axis(const Tensor& x, int axis) {
  std::int64_t outer, ext, inner;
  axis_split(x.shape(), axis, outer, ext, inner);
  Shape os = x.shape();
  os[static_cast<std::size_t>(axis)] = 1;
  std::vector<double> out(static_cast<std::size_t>(outer * inner), 0.0);
  const double* px = x.data();
  for (std::int64_t o = 0; o < outer; ++o)
    for (std::int64_t k = 0; k < ext; ++k)
      K().add(out.data() + o * inner, px + (o * ext + k) * inner, out.data() + o * inner, inner);
  return make_op("sum_axis", std::move(os), std::move(out), {x},
                 [outer, ext, inner](Node& self) {
                   double* dx = self.inputs[0]->grad_buf().data();
                   const double* g = self.grad.data();
                   for (std::int64_t o = 0; o < outer; ++o)
                     for (std::int64_t k = 0; k < ext; ++k)
                       K().add(dx + (o * ext + k) * inner, g + o * inner,
                               dx + (o * ext + k) * inner, inner);
                 });
}

Tensor max_axis(const Tensor& x, int axis) {
  std::int64_t outer, ext, inner;
  axis_split(x.shape(), axis, outer, ext, inner);
  Shape os = x.shape();
  os[static_cast<std::size_t>(axis)] = 1;
  std::vector<double> out(static_cast<std::size_t>(outer * inner));
  std::vector<std::int64_t> arg(out.size());
  const double* px = x.data();
  for (std::int64_t o = 0; o < outer; ++o) {
    for (std::int64_t i = 0; i < inner; ++i) {
      double best = px[o * ext * inner + i];
      std::int64_t bk = 0;
      for (std::int64_t k = 1; k < ext; ++k) {
        const double v = px[(o * ext + k) * inner + i];
        if (v > best) {
          best = v;
          bk = k;
        }
      }
      out[static_cast<std::size_t>(o * inner + i)] = best;
      arg[static_cast<std::size_t>(o * inner + i)] = bk;
    }
  }
  return make_op("max_axis", std::move(os), std::move(out), {x},
                 [outer, ext, inner, arg = std::move(arg)](Node& self) {
                   double* dx = self.inputs[0]->grad_buf().data();
                   for (std::int64_t o = 0; o < outer; ++o)
                     for (std::int64_t i = 0; i < inner; ++i) {
                       const std::int64_t k = arg[static_cast<std::size_t>(o * inner + i)];
                       dx[(o * ext + k) * inner + i] += self.grad[static_cast<std::size_t>(o * inner + i)];
                     }
                 });
}

Tensor sum_all(const Tensor& x) {
  double acc = 0.0;
  for (double v : x.values()) acc += v;
  return make_op("sum_all", {1}, {acc}, {x}, [](Node& self) {
    Node* nx = self.inputs[0].get();
    double* dx = nx->grad_buf().data();
    const double g = self.grad[0];
    for (std::size_t i = 0; i < nx->value.size(); ++i) dx[i] += g;
  });
}

Tensor mean_all(const Tensor& x) {
  return scale_shift(sum_all(x), 1.0 / static_cast<double>(x.size()), 0.0);
}

// ---------------------------------------------------------------------------
// Structure
// ---------------------------------------------------------------------------

Tensor reshape(const Tensor& x, Shape shape) {
  check_shape(numel(shape) == x.size(),
              "reshape: numel mismatch " + shape_str(x.shape()) + " -> " + shape_str(shape));
  std::vector<double> out = x.values();
  return make_op("reshape", std::move(shape), std::move(out), {x}, [](Node& self) {
    detail::accumulate(self.inputs[0]->grad_buf(), self.grad);
  });
}

Tensor concat(const std::vector<Tensor>& ts, int axis) {
  check_contract(!ts.empty(), "concat: empty input list");
  const Shape& s0 = ts[0].shape();
  check_shape(axis >= 0 && axis < static_cast<int>(s0.size()), "concat: axis out of range");
  std::int64_t total = 0;
  for (const Tensor& t : ts) {
    check_shape(t.rank() == static_cast<int>(s0.size()), "concat: rank mismatch");
    for (int i = 0; i < t.rank(); ++i)
      if (i != axis)
        check_shape(t.dim(i) == s0[static_cast<std::size_t>(i)], "concat: extent mismatch");
    total += t.dim(axis);
  }
  Shape os = s0;
  os[static_cast<std::size_t>(axis)] = total;

  std::int64_t outer, ext0, inner;
  axis_split(os, axis, outer, ext0, inner);
  std::vector<double> out(static_cast<std::size_t>(numel(os)));
  std::vector<std::int64_t> offsets;  // start along axis per input
  std::int64_t off = 0;
  for (const Tensor& t : ts) {
    offsets.push_back(off);
    const std::int64_t e = t.dim(axis);
    const double* p = t.data();
    for (std::int64_t o = 0; o < outer; ++o)
      std::copy(p + o * e * inner, p + (o + 1) * e * inner,
                out.begin() + (o * total + off) * inner);
    off += e;
  }

  std::vector<Tensor> ins(ts.begin(), ts.end());
  return make_op("concat", std::move(os), std::move(out), std::move(ins),
                 [outer, inner, total, offsets](Node& self) {
                   for (std::size_t t = 0; t < self.inputs.size(); ++t) {
                     Node* nt = self.inputs[t].get();
                     if (!nt->requires_grad) continue;
                     const std::int64_t e = static_cast<std::int64_t>(nt->value.size()) / (outer * inner);
                     double* dt = nt->grad_buf().data();
                     const double* g = self.grad.data();
                     for (std::int64_t o = 0; o < outer; ++o)
                       K().add(dt + o * e * inner, g + (o * total + offsets[t]) * inner,
                               dt + o * e * inner, e * inner);
                   }
                 });
}

Tensor slice(const Tensor& x, int axis, std::int64_t start, std::int64_t len) {
  std::int64_t outer, ext, inner;
  axis_split(x.shape(), axis, outer, ext, inner);
  check_contract(start >= 0 && len >= 1 && start + len <= ext, "slice: range out of bounds");
  Shape os = x.shape();
  os[static_cast<std::size_t>(axis)] = len;
  std::vector<double> out(static_cast<std::size_t>(outer * len * inner));
  const double* px = x.data();
  for (std::int64_t o = 0; o < outer; ++o)
    std::copy(px + (o * ext + start) * inner, px + (o * ext + start + len) * inner,
              out.begin() + o * len * inner);
  return make_op("slice", std::move(os), std::move(out), {x},
                 [outer, ext, inner, start, len](Node& self) {
                   double* dx = self.inputs[0]->grad_buf().data();
                   const double* g = self.grad.data();
                   for (std::int64_t o = 0; o < outer; ++o)
                     K().add(dx + (o * ext + start) * inner, g + o * len * inner,
                             dx + (o * ext + start) * inner, len * inner);
                 });
}

// ---------------------------------------------------------------------------
// Learnable maps
// ---------------------------------------------------------------------------

Tensor linear_last(const Tensor& x, const Tensor& w, const Tensor& b) {
  check_shape(w.rank() == 2, "linear_last: weight must be rank 2");
  const std::int64_t cin = w.dim(0), cout = w.dim(1);
  check_shape(x.dim(x.rank() - 1) == cin,
              "linear_last: input channels " + std::to_string(x.dim(x.rank() - 1)) +
                  " != weight rows " + std::to_string(cin));
  const bool has_b = b.defined();
  if (has_b) check_shape(b.rank() == 1 && b.dim(0) == cout, "linear_last: bad bias shape");
  const std::int64_t rows = x.size() / cin;

  Shape os = x.shape();
  os.back() = cout;
  std::vector<double> out(static_cast<std::size_t>(rows * cout));
  K().lin_fwd(x.data(), w.data(), has_b ? b.data() : nullptr, out.data(), rows, cin, cout, false);

  std::vector<Tensor> ins = has_b ? std::vector<Tensor>{x, w, b} : std::vector<Tensor>{x, w};
  return make_op("linear_last", std::move(os), std::move(out), std::move(ins),
                 [rows, cin, cout, has_b](Node& self) {
                   Node* nx = self.inputs[0].get();
                   Node* nw = self.inputs[1].get();
                   const double* g = self.grad.data();
                   if (nx->requires_grad) {
                     // dx = g . w^T via the forward kernel on a transposed copy.
                     std::vector<double> wt(static_cast<std::size_t>(cin * cout));
                     const double* w = nw->value.data();
                     for (std::int64_t i = 0; i < cin; ++i)
                       for (std::int64_t j = 0; j < cout; ++j)
                         wt[static_cast<std::size_t>(j * cin + i)] = w[i * cout + j];
                     K().lin_fwd(g, wt.data(), nullptr, nx->grad_buf().data(), rows, cout, cin, true);
                   }
                   if (nw->requires_grad)
                     K().lin_dw(nx->value.data(), g, nw->grad_buf().data(), rows, cin, cout);
                   if (has_b && self.inputs[2]->requires_grad) {
                     double* db = self.inputs[2]->grad_buf().data();
                     for (std::int64_t r = 0; r < rows; ++r)
                       K().add(db, g + r * cout, db, cout);
                   }
                 });
}

Tensor linear_last(const Tensor& x, const Tensor& w) { return linear_last(x, w, Tensor()); }

Tensor conv2d_3x3(const Tensor& x, const Tensor& w, const Tensor& b) {
  check_shape(x.rank() == 3, "conv2d_3x3: input must be (H,W,C)");
  check_shape(w.rank() == 4 && w.dim(0) == 3 && w.dim(1) == 3, "conv2d_3x3: weight must be (3,3,C,Cout)");
  const std::int64_t H = x.dim(0), W = x.dim(1), cin = x.dim(2), cout = w.dim(3);
  check_shape(w.dim(2) == cin, "conv2d_3x3: channel mismatch");
  const bool has_b = b.defined();
  if (has_b) check_shape(b.rank() == 1 && b.dim(0) == cout, "conv2d_3x3: bad bias shape");

  std::vector<double> out(static_cast<std::size_t>(H * W * cout));
  K().conv3_fwd(x.data(), w.data(), has_b ? b.data() : nullptr, out.data(), H, W, cin, cout, false);

  std::vector<Tensor> ins = has_b ? std::vector<Tensor>{x, w, b} : std::vector<Tensor>{x, w};
  return make_op("conv2d_3x3", {H, W, cout}, std::move(out), std::move(ins),
                 [H, W, cin, cout, has_b](Node& self) {
                   Node* nx = self.inputs[0].get();
                   Node* nw = self.inputs[1].get();
                   const double* g = self.grad.data();
                   if (nx->requires_grad) {
                     // dx = conv(g, k^T) with the kernel flipped spatially and
                     // transposed on channels.
                     std::vector<double> kt(static_cast<std::size_t>(9 * cin * cout));
                     const double* w = nw->value.data();
                     for (std::int64_t kh = 0; kh < 3; ++kh)
                       for (std::int64_t kw = 0; kw < 3; ++kw)
                         for (std::int64_t i = 0; i < cin; ++i)
                           for (std::int64_t j = 0; j < cout; ++j)
                             kt[static_cast<std::size_t>((((kh * 3 + kw) * cout) + j) * cin + i)] =
                                 w[(((2 - kh) * 3 + (2 - kw)) * cin + i) * cout + j];
                     K().conv3_fwd(g, kt.data(), nullptr, nx->grad_buf().data(), H, W, cout, cin, true);
                   }
                   if (nw->requires_grad)
                     K().conv3_dw(nx->value.data(), g, nw->grad_buf().data(), H, W, cin, cout);
                   if (has_b && self.inputs[2]->requires_grad) {
                     double* db = self.inputs[2]->grad_buf().data();
                     for (std::int64_t p = 0; p < H * W; ++p)
                       K().add(db, g + p * cout, db, cout);
                   }
                 });
}

Tensor collapse_axis_linear(const Tensor& x, int axis, const Tensor& w, const Tensor& b) {
  std::int64_t outer, ext, inner;
  axis_split(x.shape(), axis, outer, ext, inner);
  check_shape(w.rank() == 1 && w.dim(0) == ext, "collapse_axis_linear: weight extent mismatch");
  check_shape(b.rank() == 1 && b.dim(0) == 1, "collapse_axis_linear: bias must be a scalar tensor");
  Shape os = x.shape();
  os[static_cast<std::size_t>(axis)] = 1;
  std::vector<double> out(static_cast<std::size_t>(outer * inner), 0.0);
  const double* px = x.data();
  const double* pw = w.data();
  const double b0 = b.data()[0];
  for (std::int64_t o = 0; o < outer; ++o) {
    double* po = out.data() + o * inner;
    for (std::int64_t i = 0; i < inner; ++i) po[i] = b0;
    for (std::int64_t k = 0; k < ext; ++k)
      K().axpy(pw[k], px + (o * ext + k) * inner, po, inner);
  }
  return make_op("collapse_axis_linear", std::move(os), std::move(out), {x, w, b},
                 [outer, ext, inner](Node& self) {
                   Node* nx = self.inputs[0].get();
                   Node* nw = self.inputs[1].get();
                   Node* nb = self.inputs[2].get();
                   const double* g = self.grad.data();
                   if (nx->requires_grad) {
                     double* dx = nx->grad_buf().data();
                     const double* w = nw->value.data();
                     for (std::int64_t o = 0; o < outer; ++o)
                       for (std::int64_t k = 0; k < ext; ++k)
                         K().axpy(w[k], g + o * inner, dx + (o * ext + k) * inner, inner);
                   }
                   if (nw->requires_grad) {
                     double* dw = nw->grad_buf().data();
                     const double* x = nx->value.data();
                     for (std::int64_t o = 0; o < outer; ++o)
                       for (std::int64_t k = 0; k < ext; ++k) {
                         double acc = 0.0;
                         const double* xr = x + (o * ext + k) * inner;
                         const double* gr = g + o * inner;
                         for (std::int64_t i = 0; i < inner; ++i) acc += xr[i] * gr[i];
                         dw[k] += acc;
                       }
                   }
                   if (nb->requires_grad) {
                     double acc = 0.0;
                     for (std::size_t i = 0; i < self.value.size(); ++i) acc += g[i];
                     nb->grad_buf()[0] += acc;
                   }
                 });
}

Tensor norm_affine(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  check_shape(x.rank() == 3, "norm_affine: input must be (H,W,C)");
  const double hw = static_cast<double>(x.dim(0) * x.dim(1));
  Tensor mu = scale_shift(sum_axis(sum_axis(x, 0), 1), 1.0 / hw, 0.0);
  Tensor xc = sub(x, mu);
  Tensor var = scale_shift(sum_axis(sum_axis(mul(xc, xc), 0), 1), 1.0 / hw, 0.0);
  Tensor inv = sqrt(scale_shift(var, 1.0, eps));
  return add(mul(div(xc, inv), gamma), beta);
}

Tensor softmax_last(const Tensor& x) {
  const std::int64_t k = x.dim(x.rank() - 1);
  const std::int64_t rows = x.size() / k;
  std::vector<double> out(x.values().size());
  const double* px = x.data();
  for (std::int64_t r = 0; r < rows; ++r) {
    const double* xr = px + r * k;
    double* yr = out.data() + r * k;
    double m = xr[0];
    for (std::int64_t i = 1; i < k; ++i) m = std::max(m, xr[i]);
    double s = 0.0;
    for (std::int64_t i = 0; i < k; ++i) {
      yr[i] = std::exp(xr[i] - m);
      s += yr[i];
    }
    const double inv = 1.0 / s;
    for (std::int64_t i = 0; i < k; ++i) yr[i] *= inv;
  }
  return make_op("softmax_last", x.shape(), std::move(out), {x}, [k, rows](Node& self) {
    double* dx = self.inputs[0]->grad_buf().data();
    const double* y = self.value.data();
    const double* g = self.grad.data();
    for (std::int64_t r = 0; r < rows; ++r) {
      const double* yr = y + r * k;
      const double* gr = g + r * k;
      double dot = 0.0;
      for (std::int64_t i = 0; i < k; ++i) dot += gr[i] * yr[i];
      for (std::int64_t i = 0; i < k; ++i) dx[r * k + i] += yr[i] * (gr[i] - dot);
    }
  });
}

// ---------------------------------------------------------------------------
// Pooling / resampling
// ---------------------------------------------------------------------------

Tensor global_max_pool(const Tensor& x) {
  check_shape(x.rank() == 3, "global_max_pool: input must be (H,W,C)");
  return max_axis(max_axis(x, 0), 1);
}

Tensor channel_max_pool(const Tensor& x) {
  check_shape(x.rank() == 3, "channel_max_pool: input must be (H,W,C)");
  return max_axis(x, 2);
}

Tensor global_avg_pool(const Tensor& x) {
  check_shape(x.rank() == 3, "global_avg_pool: input must be (H,W,C)");
  const double hw = static_cast<double>(x.dim(0) * x.dim(1));
  return scale_shift(sum_axis(sum_axis(x, 0), 1), 1.0 / hw, 0.0);
}

Tensor avg_pool2(const Tensor& x) {
  check_shape(x.rank() == 3, "avg_pool2: input must be (H,W,C)");
  const std::int64_t H = x.dim(0), W = x.dim(1), C = x.dim(2);
  const std::int64_t H2 = (H + 1) / 2, W2 = (W + 1) / 2;
  std::vector<double> out(static_cast<std::size_t>(H2 * W2 * C), 0.0);
  const double* px = x.data();
  for (std::int64_t h = 0; h < H2; ++h) {
    for (std::int64_t w = 0; w < W2; ++w) {
      const std::int64_t h1 = std::min(2 * h + 1, H - 1);
      const std::int64_t w1 = std::min(2 * w + 1, W - 1);
      const std::int64_t cnt = (h1 - 2 * h + 1) * (w1 - 2 * w + 1);
      double* po = out.data() + (h * W2 + w) * C;
      for (std::int64_t hh = 2 * h; hh <= h1; ++hh)
        for (std::int64_t ww = 2 * w; ww <= w1; ++ww)
          K().add(po, px + (hh * W + ww) * C, po, C);
      K().scale(po, 1.0 / static_cast<double>(cnt), po, C);
    }
  }
  return make_op("avg_pool2", {H2, W2, C}, std::move(out), {x}, [H, W, C, H2, W2](Node& self) {
    double* dx = self.inputs[0]->grad_buf().data();
    const double* g = self.grad.data();
    for (std::int64_t h = 0; h < H2; ++h)
      for (std::int64_t w = 0; w < W2; ++w) {
        const std::int64_t h1 = std::min(2 * h + 1, H - 1);
        const std::int64_t w1 = std::min(2 * w + 1, W - 1);
        const double inv = 1.0 / static_cast<double>((h1 - 2 * h + 1) * (w1 - 2 * w + 1));
        const double* go = g + (h * W2 + w) * C;
        for (std::int64_t hh = 2 * h; hh <= h1; ++hh)
          for (std::int64_t ww = 2 * w; ww <= w1; ++ww)
            K().axpy(inv, go, dx + (hh * W + ww) * C, C);
      }
  });
}

namespace {
struct Lerp {
  std::int64_t i0, i1;
  double w0, w1;
};
// align_corners=false source coordinates with edge clamping.
std::vector<Lerp> lerp_table(std::int64_t in, std::int64_t out) {
  std::vector<Lerp> t(static_cast<std::size_t>(out));
  const double scale = static_cast<double>(in) / static_cast<double>(out);
  for (std::int64_t i = 0; i < out; ++i) {
    const double src = (static_cast<double>(i) + 0.5) * scale - 0.5;
    const double f = std::floor(src);
    const double frac = src - f;
    std::int64_t i0 = static_cast<std::int64_t>(f);
    std::int64_t i1 = i0 + 1;
    i0 = std::min(std::max(i0, static_cast<std::int64_t>(0)), in - 1);
    i1 = std::min(std::max(i1, static_cast<std::int64_t>(0)), in - 1);
    t[static_cast<std::size_t>(i)] = {i0, i1, 1.0 - frac, frac};
  }
  return t;
}
}  // namespace

Tensor bilinear_resize(const Tensor& x, std::int64_t H2, std::int64_t W2) {
  check_shape(x.rank() == 3, "bilinear_resize: input must be (H,W,C)");
  check_contract(H2 >= 1 && W2 >= 1, "bilinear_resize: target extents must be positive");
  const std::int64_t H = x.dim(0), W = x.dim(1), C = x.dim(2);
  if (H2 == H && W2 == W) return reshape(x, x.shape());
  const auto ty = lerp_table(H, H2);
  const auto tx = lerp_table(W, W2);
  std::vector<double> out(static_cast<std::size_t>(H2 * W2 * C), 0.0);
  const double* px = x.data();
  for (std::int64_t h = 0; h < H2; ++h) {
    const Lerp& ly = ty[static_cast<std::size_t>(h)];
    for (std::int64_t w = 0; w < W2; ++w) {
      const Lerp& lx = tx[static_cast<std::size_t>(w)];
      double* po = out.data() + (h * W2 + w) * C;
      K().axpy(ly.w0 * lx.w0, px + (ly.i0 * W + lx.i0) * C, po, C);
      K().axpy(ly.w0 * lx.w1, px + (ly.i0 * W + lx.i1) * C, po, C);
      K().axpy(ly.w1 * lx.w0, px + (ly.i1 * W + lx.i0) * C, po, C);
      K().axpy(ly.w1 * lx.w1, px + (ly.i1 * W + lx.i1) * C, po, C);
    }
  }
  return make_op("bilinear_resize", {H2, W2, C}, std::move(out), {x},
                 [W, C, W2, H2, ty, tx](Node& self) {
                   double* dx = self.inputs[0]->grad_buf().data();
                   const double* g = self.grad.data();
                   for (std::int64_t h = 0; h < H2; ++h) {
                     const Lerp& ly = ty[static_cast<std::size_t>(h)];
                     for (std::int64_t w = 0; w < W2; ++w) {
                       const Lerp& lx = tx[static_cast<std::size_t>(w)];
                       const double* go = g + (h * W2 + w) * C;
                       K().axpy(ly.w0 * lx.w0, go, dx + (ly.i0 * W + lx.i0) * C, C);
                       K().axpy(ly.w0 * lx.w1, go, dx + (ly.i0 * W + lx.i1) * C, C);
                       K().axpy(ly.w1 * lx.w0, go, dx + (ly.i1 * W + lx.i0) * C, C);
                       K().axpy(ly.w1 * lx.w1, go, dx + (ly.i1 * W + lx.i1) * C, C);
                     }
                   }
                 });
}

// ---------------------------------------------------------------------------
// Capsule-specific ops
// ---------------------------------------------------------------------------

Tensor matmul_resolution(const Tensor& a, const Tensor& b) {
  check_shape(a.rank() == 4 && b.rank() == 4, "matmul_resolution: inputs must be rank 4");
  check_shape(a.dim(1) == 1 && b.dim(0) == 1,
              "matmul_resolution: expected (H,1,T,D) x (1,W,T,D), got " + shape_str(a.shape()) +
                  " x " + shape_str(b.shape()));
  check_shape(a.dim(2) == b.dim(2) && a.dim(3) == b.dim(3),
              "matmul_resolution: T/D mismatch " + shape_str(a.shape()) + " vs " +
                  shape_str(b.shape()));
  const std::int64_t H = a.dim(0), W = b.dim(1), T = a.dim(2), D = a.dim(3);
  const std::int64_t td = T * D;
  std::vector<double> out(static_cast<std::size_t>(H * W * td));
  const double* pa = a.data();
  const double* pb = b.data();
  for (std::int64_t h = 0; h < H; ++h)
    for (std::int64_t w = 0; w < W; ++w)
      K().mul(pa + h * td, pb + w * td, out.data() + (h * W + w) * td, td);
  return make_op("matmul_resolution", {H, W, T, D}, std::move(out), {a, b},
                 [H, W, td](Node& self) {
                   Node* na = self.inputs[0].get();
                   Node* nb = self.inputs[1].get();
                   const double* g = self.grad.data();
                   if (na->requires_grad) {
                     double* da = na->grad_buf().data();
                     const double* pb = nb->value.data();
                     for (std::int64_t h = 0; h < H; ++h)
                       for (std::int64_t w = 0; w < W; ++w)
                         K().mul_acc(g + (h * W + w) * td, pb + w * td, da + h * td, td);
                   }
                   if (nb->requires_grad) {
                     double* db = nb->grad_buf().data();
                     const double* pa = na->value.data();
                     for (std::int64_t h = 0; h < H; ++h)
                       for (std::int64_t w = 0; w < W; ++w)
                         K().mul_acc(g + (h * W + w) * td, pa + h * td, db + w * td, td);
                   }
                 });
}

Tensor capsule_votes(const Tensor& pose, const Tensor& trans) {
  check_shape(pose.rank() == 3 && pose.dim(2) == 16, "capsule_votes: pose must be (L,P,16)");
  check_shape(trans.rank() == 3 && trans.dim(2) == 16, "capsule_votes: trans must be (P,J,16)");
  check_shape(pose.dim(1) == trans.dim(0), "capsule_votes: part-type extents differ");
  const std::int64_t L = pose.dim(0), P = pose.dim(1), J = trans.dim(1);
  std::vector<double> out(static_cast<std::size_t>(L * P * J * 16), 0.0);
  const double* pp = pose.data();
  const double* pt = trans.data();
  for (std::int64_t l = 0; l < L; ++l)
    for (std::int64_t p = 0; p < P; ++p) {
      const double* m = pp + (l * P + p) * 16;
      for (std::int64_t j = 0; j < J; ++j) {
        const double* t = pt + (p * J + j) * 16;
        double* o = out.data() + ((l * P + p) * J + j) * 16;
        for (int r = 0; r < 4; ++r)
          for (int c = 0; c < 4; ++c) {
            double acc = 0.0;
            for (int k = 0; k < 4; ++k) acc += m[r * 4 + k] * t[k * 4 + c];
            o[r * 4 + c] = acc;
          }
      }
    }
  return make_op("capsule_votes", {L, P, J, 16}, std::move(out), {pose, trans},
                 [L, P, J](Node& self) {
                   Node* np = self.inputs[0].get();
                   Node* nt = self.inputs[1].get();
                   const double* g = self.grad.data();
                   const double* pp = np->value.data();
                   const double* pt = nt->value.data();
                   double* dp = np->requires_grad ? np->grad_buf().data() : nullptr;
                   double* dt = nt->requires_grad ? nt->grad_buf().data() : nullptr;
                   for (std::int64_t l = 0; l < L; ++l)
                     for (std::int64_t p = 0; p < P; ++p) {
                       const double* m = pp + (l * P + p) * 16;
                       for (std::int64_t j = 0; j < J; ++j) {
                         const double* t = pt + (p * J + j) * 16;
                         const double* go = g + ((l * P + p) * J + j) * 16;
                         for (int r = 0; r < 4; ++r)
                           for (int c = 0; c < 4; ++c) {
                             const double gv = go[r * 4 + c];
                             if (gv == 0.0) continue;
                             for (int k = 0; k < 4; ++k) {
                               if (dp) dp[(l * P + p) * 16 + r * 4 + k] += gv * t[k * 4 + c];
                               if (dt) dt[(p * J + j) * 16 + k * 4 + c] += gv * m[r * 4 + k];
                             }
                           }
                       }
                     }
                 });
}

Tensor window_conv(const Tensor& x, const std::vector<double>& window, int K_, bool replicate) {
  check_shape(x.rank() == 3 && x.dim(2) == 1, "window_conv: input must be (H,W,1)");
  check_contract(K_ >= 1 && K_ % 2 == 1 && static_cast<int>(window.size()) == K_ * K_,
                 "window_conv: window must be odd KxK");
  const std::int64_t H = x.dim(0), W = x.dim(1);
  const int pad = K_ / 2;
  std::vector<double> out(static_cast<std::size_t>(H * W), 0.0);
  const double* px = x.data();
  for (std::int64_t h = 0; h < H; ++h)
    for (std::int64_t w = 0; w < W; ++w) {
      double acc = 0.0;
      for (int kh = 0; kh < K_; ++kh) {
        std::int64_t ih = h + kh - pad;
        if (replicate) ih = std::clamp<std::int64_t>(ih, 0, H - 1);
        else if (ih < 0 || ih >= H) continue;
        for (int kw = 0; kw < K_; ++kw) {
          std::int64_t iw = w + kw - pad;
          if (replicate) iw = std::clamp<std::int64_t>(iw, 0, W - 1);
          else if (iw < 0 || iw >= W) continue;
          acc += px[ih * W + iw] * window[static_cast<std::size_t>(kh * K_ + kw)];
        }
      }
      out[static_cast<std::size_t>(h * W + w)] = acc;
    }
  return make_op("window_conv", {H, W, 1}, std::move(out), {x},
                 [H, W, K_, pad, window, replicate](Node& self) {
                   double* dx = self.inputs[0]->grad_buf().data();
                   const double* g = self.grad.data();
                   for (std::int64_t h = 0; h < H; ++h)
                     for (std::int64_t w = 0; w < W; ++w) {
                       const double gv = g[h * W + w];
                       if (gv == 0.0) continue;
                       for (int kh = 0; kh < K_; ++kh) {
                         std::int64_t ih = h + kh - pad;
                         if (replicate) ih = std::clamp<std::int64_t>(ih, 0, H - 1);
                         else if (ih < 0 || ih >= H) continue;
                         for (int kw = 0; kw < K_; ++kw) {
                           std::int64_t iw = w + kw - pad;
                           if (replicate) iw = std::clamp<std::int64_t>(iw, 0, W - 1);
                           else if (iw < 0 || iw >= W) continue;
                           dx[ih * W + iw] += gv * window[static_cast<std::size_t>(kh * K_ + kw)];
                         }
                       }
                     }
                 });
}

Tensor cross_entropy_map(const Tensor& logits, const Tensor& gt) {
  check_shape(logits.rank() == 3, "cross_entropy_map: logits must be (H,W,K)");
  check_shape(gt.rank() == 2 && gt.dim(0) == logits.dim(0) && gt.dim(1) == logits.dim(1),
              "cross_entropy_map: gt shape mismatch");
  check_contract(!gt.requires_grad(), "cross_entropy_map: gt must not require grad");
  const std::int64_t H = logits.dim(0), W = logits.dim(1), Kc = logits.dim(2);
  const std::int64_t n = H * W;
  std::vector<std::int64_t> labels(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) {
    const double v = gt.data()[i];
    const std::int64_t id = static_cast<std::int64_t>(v);
    check_contract(static_cast<double>(id) == v && id >= 0 && id < Kc,
                   "cross_entropy_map: gt class id out of range [0," + std::to_string(Kc) + ")");
    labels[static_cast<std::size_t>(i)] = id;
  }
  std::vector<double> out(static_cast<std::size_t>(n));
  const double* pl = logits.data();
  for (std::int64_t i = 0; i < n; ++i) {
    const double* row = pl + i * Kc;
    double m = row[0];
    for (std::int64_t k = 1; k < Kc; ++k) m = std::max(m, row[k]);
    double s = 0.0;
    for (std::int64_t k = 0; k < Kc; ++k) s += std::exp(row[k] - m);
    out[static_cast<std::size_t>(i)] =
        m + std::log(s) - row[labels[static_cast<std::size_t>(i)]];
  }
  return make_op("cross_entropy_map", {H, W}, std::move(out), {logits, gt},
                 [n, Kc, labels = std::move(labels)](Node& self) {
                   Node* nl = self.inputs[0].get();
                   if (!nl->requires_grad) return;
                   double* dl = nl->grad_buf().data();
                   const double* pl = nl->value.data();
                   const double* g = self.grad.data();
                   for (std::int64_t i = 0; i < n; ++i) {
                     const double gv = g[i];
                     if (gv == 0.0) continue;
                     const double* row = pl + i * Kc;
                     double m = row[0];
                     for (std::int64_t k = 1; k < Kc; ++k) m = std::max(m, row[k]);
                     double s = 0.0;
                     for (std::int64_t k = 0; k < Kc; ++k) s += std::exp(row[k] - m);
                     const double inv = 1.0 / s;
                     for (std::int64_t k = 0; k < Kc; ++k) {
                       const double p = std::exp(row[k] - m) * inv;
                       dl[i * Kc + k] +=
                           gv * (p - (k == labels[static_cast<std::size_t>(i)] ? 1.0 : 0.0));
                     }
                   }
                 });
}

Tensor mean_topk(const Tensor& x, std::int64_t k) {
  check_shape(x.rank() == 1, "mean_topk: input must be rank 1");
  const std::int64_t n = x.dim(0);
  check_contract(k >= 1 && k <= n, "mean_topk: k out of range");
  std::vector<std::int64_t> idx(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) idx[static_cast<std::size_t>(i)] = i;
  const double* px = x.data();
  std::stable_sort(idx.begin(), idx.end(),
                   [px](std::int64_t a, std::int64_t b) { return px[a] > px[b]; });
  idx.resize(static_cast<std::size_t>(k));
  std::sort(idx.begin(), idx.end());
  double acc = 0.0;
  for (std::int64_t i : idx) acc += px[i];
  const double mean = acc / static_cast<double>(k);
  return make_op("mean_topk", {1}, {mean}, {x}, [k, idx = std::move(idx)](Node& self) {
    double* dx = self.inputs[0]->grad_buf().data();
    const double g = self.grad[0] / static_cast<double>(k);
    for (std::int64_t i : idx) dx[i] += g;
  });
}

}  // namespace pwrf::ops
