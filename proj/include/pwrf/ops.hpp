#pragma once

#include <vector>

#include "pwrf/tensor.hpp"

// Differentiable op set. Everything is float64, single-threaded, with a
// fixed left-to-right accumulation order in every reduction so results are
// reproducible bit for bit. Binary ops broadcast between equal-rank shapes
// where each extent either matches or is 1.

namespace pwrf::ops {

// Elementwise.
Tensor sigmoid(const Tensor& x);
Tensor logsigmoid(const Tensor& x);
Tensor relu(const Tensor& x);
Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);
Tensor sqrt(const Tensor& x);
Tensor clamp(const Tensor& x, double lo, double hi);
Tensor clamp_min(const Tensor& x, double lo);
Tensor scale_shift(const Tensor& x, double s, double t);  // s*x + t

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor emax(const Tensor& a, const Tensor& b);  // ties keep a's gradient

// Reductions (keepdim).
Tensor sum_axis(const Tensor& x, int axis);
Tensor max_axis(const Tensor& x, int axis);
Tensor sum_all(const Tensor& x);
Tensor mean_all(const Tensor& x);

// Structure.
Tensor reshape(const Tensor& x, Shape shape);
Tensor concat(const std::vector<Tensor>& ts, int axis);
Tensor slice(const Tensor& x, int axis, std::int64_t start, std::int64_t len);

// Learnable maps.
Tensor linear_last(const Tensor& x, const Tensor& w, const Tensor& b);
Tensor linear_last(const Tensor& x, const Tensor& w);
Tensor conv2d_3x3(const Tensor& x, const Tensor& w, const Tensor& b);
// Collapses one axis to extent 1 with a learnable weight per slot plus a
// scalar bias (the Conv(*, dim=k) reductions used for disentanglement).
Tensor collapse_axis_linear(const Tensor& x, int axis, const Tensor& w, const Tensor& b);

// Per-channel instance statistics, eps inside the square root.
Tensor norm_affine(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);

Tensor softmax_last(const Tensor& x);

// Pooling / resampling on (H, W, C).
Tensor global_max_pool(const Tensor& x);   // (1,1,C)
Tensor channel_max_pool(const Tensor& x);  // (H,W,1)
Tensor global_avg_pool(const Tensor& x);   // (1,1,C)
Tensor avg_pool2(const Tensor& x);         // ceil-half extents
Tensor bilinear_resize(const Tensor& x, std::int64_t H2, std::int64_t W2);  // align_corners=false

// out[h,w,t,d] = a[h,0,t,d] * b[0,w,t,d]
Tensor matmul_resolution(const Tensor& a, const Tensor& b);

// votes[l,p,j] = pose[l,p] (4x4) . trans[p,j] (4x4); shapes (L,P,16),(P,J,16)->(L,P,J,16)
Tensor capsule_votes(const Tensor& pose, const Tensor& trans);

// Fixed-window correlation on a 1-channel map, padding K/2 (zeros, or edge
// replication when replicate is set). The window is a constant, not a
// parameter.
Tensor window_conv(const Tensor& x, const std::vector<double>& window, int K,
                   bool replicate = false);

// Per-pixel softmax cross-entropy; gt holds integral class ids, no gradient.
Tensor cross_entropy_map(const Tensor& logits, const Tensor& gt);

// Mean of the k largest entries of a rank-1 tensor (stable order on ties).
Tensor mean_topk(const Tensor& x, std::int64_t k);

}  // namespace pwrf::ops
