#include "pwrf/vdt.hpp"

#include <cmath>

#include "pwrf/ops.hpp"

namespace pwrf {

VdtModel::VdtModel(ParamStore& store, VdtConfig cfg) : store_(&store), cfg_(cfg) {
  check_config(cfg_.channels >= 1, "vdt: channels must be >= 1");
  check_config(cfg_.stages >= 2, "vdt: ladder needs at least 2 stages");
  cfg_.fusion.merged_channels = cfg_.channels;
}

std::string VdtModel::branch_name(int modality, const std::string& suffix) const {
  if (cfg_.fusion.share_params) return "vdt.branch." + suffix;
  return "vdt.branch" + std::to_string(modality) + "." + suffix;
}

Tensor VdtModel::project(const std::string& name, const Tensor& x, std::int64_t out_channels) const {
  const std::int64_t cin = x.dim(2);
  Tensor w = store_->get(name + ".w" + std::to_string(cin), {cin, out_channels},
                         Init::xavier(cin, out_channels));
  Tensor b = store_->get(name + ".b", {out_channels}, Init::zeros());
  return ops::linear_last(x, w, b);
}

Tensor VdtModel::cbr(const Tensor& x, const std::string& prefix) const {
  const std::int64_t cin = x.dim(2), C = cfg_.channels;
  Tensor w = store_->get(prefix + ".conv_w" + std::to_string(cin), {3, 3, cin, C},
                         Init::xavier(9 * cin, 9 * C));
  Tensor b = store_->get(prefix + ".conv_b", {C}, Init::zeros());
  Tensor gamma = store_->get(prefix + ".norm_g", {1, 1, C}, Init::ones());
  Tensor beta = store_->get(prefix + ".norm_b", {1, 1, C}, Init::zeros());
  return ops::relu(ops::norm_affine(ops::conv2d_3x3(x, w, b), gamma, beta));
}

Tensor VdtModel::backbone_stage(const Tensor& x, int stage, int modality) const {
  return cbr(x, branch_name(modality, "bb" + std::to_string(stage)));
}

Tensor VdtModel::adjacent_integrate(const Tensor& x_lo, const Tensor& x_hi,
                                    const std::string& prefix) const {
  check_shape(x_lo.dim(2) == x_hi.dim(2), "adjacent_integrate: channel mismatch");
  check_contract(x_hi.dim(0) <= x_lo.dim(0) && x_hi.dim(1) <= x_lo.dim(1),
                 "adjacent_integrate: high-level stage must not exceed low-level extents");
  Tensor hi_up = ops::bilinear_resize(cbr(x_hi, prefix + ".cbr"), x_lo.dim(0), x_lo.dim(1));
  return ops::add(x_lo, hi_up);
}

Tensor VdtModel::dual_branch_attention(const Tensor& x, const std::string& prefix) const {
  const std::int64_t C = x.dim(2);
  // Local branch: Conv+BN+ReLU+Conv+BN.
  Tensor local = cbr(x, prefix + ".cbrcb1");
  Tensor w2 = store_->get(prefix + ".cbrcb2.conv_w" + std::to_string(C), {3, 3, C, C},
                          Init::xavier(9 * C, 9 * C));
  Tensor b2 = store_->get(prefix + ".cbrcb2.conv_b", {C}, Init::zeros());
  Tensor g2 = store_->get(prefix + ".cbrcb2.norm_g", {1, 1, C}, Init::ones());
  Tensor be2 = store_->get(prefix + ".cbrcb2.norm_b", {1, 1, C}, Init::zeros());
  local = ops::norm_affine(ops::conv2d_3x3(local, w2, b2), g2, be2);
  // Global branch: AvgPool+Conv+ReLU+Conv, broadcast over space.
  Tensor pooled = ops::global_avg_pool(x);
  Tensor glob = ops::relu(project(prefix + ".acrc1", pooled, C));
  glob = project(prefix + ".acrc2", glob, C);
  return ops::add(local, glob);
}

Tensor selective_aggregate(const Tensor& hi_up, const Tensor& lo, const Tensor& dba) {
  check_shape(hi_up.shape() == lo.shape() && lo.shape() == dba.shape(),
              "selective_aggregate: operand shapes must match");
  Tensor g = ops::sigmoid(dba);
  return ops::add(ops::mul(hi_up, g), ops::mul(lo, ops::scale_shift(g, -1.0, 1.0)));
}

Tensor VdtModel::asa(const Tensor& x_lo, const Tensor& x_hi, const std::string& prefix) const {
  Tensor hi_up = ops::bilinear_resize(cbr(x_hi, prefix + ".cbr"), x_lo.dim(0), x_lo.dim(1));
  Tensor integrated = ops::add(x_lo, hi_up);
  Tensor dba = dual_branch_attention(integrated, prefix + ".dba");
  return selective_aggregate(hi_up, x_lo, dba);
}

Tensor edge_enhance(const Tensor& depth_feat, const Tensor& reference) {
  check_shape(depth_feat.rank() == 3 && reference.rank() == 3 &&
                  depth_feat.dim(0) == reference.dim(0) && depth_feat.dim(1) == reference.dim(1),
              "edge_enhance: spatial extents must match");
  const std::int64_t cr = reference.dim(2);
  Tensor ref1 = ops::scale_shift(ops::sum_axis(reference, 2), 1.0 / static_cast<double>(cr), 0.0);
  static const std::vector<double> sobel_x = {-1, 0, 1, -2, 0, 2, -1, 0, 1};
  static const std::vector<double> sobel_y = {-1, -2, -1, 0, 0, 0, 1, 2, 1};
  // Replicated edges so a constant reference yields an exactly-zero edge map.
  Tensor gx = ops::window_conv(ref1, sobel_x, 3, /*replicate=*/true);
  Tensor gy = ops::window_conv(ref1, sobel_y, 3, /*replicate=*/true);
  // Magnitude smoothed by a floor inside the square root (bounded gradients),
  // the floor subtracted back out so flat regions normalize to exactly zero.
  constexpr double floor2 = 1e-24;
  const double floor_mag = std::sqrt(floor2);
  Tensor mag = ops::sqrt(ops::scale_shift(ops::add(ops::mul(gx, gx), ops::mul(gy, gy)), 1.0, floor2));
  // The normalizer floor dominates ulp-level Sobel residue on flat fields.
  Tensor num = ops::scale_shift(mag, 1.0, -floor_mag);
  Tensor den = ops::scale_shift(ops::global_max_pool(num), 1.0, 1e-6);
  Tensor e = ops::div(num, den);
  return ops::mul(depth_feat, ops::scale_shift(e, 1.0, 1.0));
}

Tensor VdtModel::side_map(const std::string& name, const Tensor& x, std::int64_t out_h,
                          std::int64_t out_w) const {
  return ops::bilinear_resize(ops::sigmoid(project(name, x, 1)), out_h, out_w);
}

SaliencyPrediction VdtModel::stacking_decode(const ScaleLadder& ladder, std::int64_t out_h,
                                             std::int64_t out_w) const {
  const auto n = static_cast<int>(ladder.shared.size());
  check_config(n >= 2, "stacking_decode: ladder must have at least 2 stages");
  check_config(ladder.specific.size() == ladder.shared.size(),
               "stacking_decode: shared/specific ladders differ in length");
  for (int i = 1; i < n; ++i) {
    check_shape(ladder.shared[static_cast<std::size_t>(i)].dim(0) ==
                    (ladder.shared[static_cast<std::size_t>(i - 1)].dim(0) + 1) / 2,
                "stacking_decode: stage extents must halve");
  }

  // Sub-decoder 1: bottom-up ASA per stream, then per-scale merges.
  std::vector<Tensor> a_shd(static_cast<std::size_t>(n)), a_spc(static_cast<std::size_t>(n));
  a_shd[static_cast<std::size_t>(n - 1)] = ladder.shared[static_cast<std::size_t>(n - 1)];
  a_spc[static_cast<std::size_t>(n - 1)] = ladder.specific[static_cast<std::size_t>(n - 1)];
  for (int i = n - 2; i >= 0; --i) {
    a_shd[static_cast<std::size_t>(i)] =
        asa(ladder.shared[static_cast<std::size_t>(i)], a_shd[static_cast<std::size_t>(i + 1)],
            "vdt.dec1.shd.asa" + std::to_string(i));
    a_spc[static_cast<std::size_t>(i)] =
        asa(ladder.specific[static_cast<std::size_t>(i)], a_spc[static_cast<std::size_t>(i + 1)],
            "vdt.dec1.spc.asa" + std::to_string(i));
  }
  std::vector<Tensor> merged(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i)
    merged[static_cast<std::size_t>(i)] = project(
        "vdt.dec1.merge" + std::to_string(i),
        ops::concat({a_shd[static_cast<std::size_t>(i)], a_spc[static_cast<std::size_t>(i)]}, 2),
        cfg_.channels);

  const Tensor& d1 = merged[0];  // shallowest aggregated features
  SaliencyPrediction pred;
  pred.maps.push_back(side_map("vdt.side.prelim", d1, out_h, out_w));

  Tensor top;
  if (cfg_.two_sub_decoders) {
    // Bridge: sub-decoder 1's shallowest features injected into every ASA
    // stage of sub-decoder 2.
    Tensor bridge = project("vdt.bridge", d1, cfg_.channels);
    auto guided = [&](int i) {
      const Tensor& m = merged[static_cast<std::size_t>(i)];
      return ops::add(m, ops::bilinear_resize(bridge, m.dim(0), m.dim(1)));
    };
    Tensor cur = guided(n - 1);
    pred.maps.push_back(side_map("vdt.side.s" + std::to_string(n - 1), cur, out_h, out_w));
    for (int i = n - 2; i >= 0; --i) {
      cur = asa(guided(i), cur, "vdt.dec2.asa" + std::to_string(i));
      pred.maps.push_back(side_map("vdt.side.s" + std::to_string(i), cur, out_h, out_w));
    }
    top = cur;
  } else {
    for (int i = n - 1; i >= 0; --i)
      pred.maps.push_back(
          side_map("vdt.side.s" + std::to_string(i), merged[static_cast<std::size_t>(i)], out_h, out_w));
    top = d1;
  }

  // Final map combines the two sub-decoders' outputs.
  Tensor fin = ops::sigmoid(project("vdt.final", ops::concat({d1, top}, 2), 1));
  pred.maps.push_back(ops::bilinear_resize(fin, out_h, out_w));
  pred.final = pred.maps.back();
  check_contract(pred.maps.size() == 5, "stacking_decode: expected five side outputs");
  return pred;
}

SaliencyPrediction VdtModel::forward(const std::vector<Tensor>& modalities, VdtTrace* trace) const {
  const auto n = static_cast<int>(modalities.size());
  check_config(n >= 2 && n <= 3, "vdt: modality count must be 2 or 3, got " + std::to_string(n));
  const std::int64_t H = modalities[0].dim(0), W = modalities[0].dim(1);
  for (const Tensor& m : modalities)
    check_shape(m.rank() == 3 && m.dim(0) == H && m.dim(1) == W,
                "vdt: modalities must share spatial extents");

  // Backbone ladder per modality; optional stem pool halves the input first.
  std::vector<std::vector<Tensor>> feats(static_cast<std::size_t>(cfg_.stages));
  for (int i = 0; i < n; ++i) {
    Tensor x = modalities[static_cast<std::size_t>(i)];
    if (cfg_.stem_pool) x = ops::avg_pool2(x);
    for (int s = 0; s < cfg_.stages; ++s) {
      Tensor f = backbone_stage(x, s, i);
      feats[static_cast<std::size_t>(s)].push_back(f);
      if (s + 1 < cfg_.stages) x = ops::avg_pool2(f);
    }
  }

  // Edge cues from the visible stream sharpen the depth stream.
  if (cfg_.edge_cues && cfg_.depth_index >= 0 && cfg_.depth_index < n &&
      cfg_.visible_index >= 0 && cfg_.visible_index < n &&
      cfg_.visible_index != cfg_.depth_index) {
    for (int s = 0; s < cfg_.stages; ++s) {
      auto& stage = feats[static_cast<std::size_t>(s)];
      stage[static_cast<std::size_t>(cfg_.depth_index)] =
          edge_enhance(stage[static_cast<std::size_t>(cfg_.depth_index)],
                       stage[static_cast<std::size_t>(cfg_.visible_index)]);
    }
  }

  // PWRF at every stage (no stage-1 bypass on the saliency side).
  ScaleLadder ladder;
  if (trace) trace->fusions.clear();
  for (int s = 0; s < cfg_.stages; ++s) {
    const auto& stage = feats[static_cast<std::size_t>(s)];
    if (cfg_.mode == FusionMode::pwrf) {
      CapsuleFusion fusion(*store_, "vdt.fusion.s" + std::to_string(s) + ".", cfg_.fusion);
      FusionOutputs fo = fusion.fuse(stage);
      const Tensor& g = fo.shared.grid;
      Tensor flat = ops::reshape(g, {g.dim(0), g.dim(1), g.dim(2) * 17});
      ladder.shared.push_back(project("vdt.shd_proj.s" + std::to_string(s), flat, cfg_.channels));
      ladder.specific.push_back(fo.merged_specific);
      if (trace) trace->fusions.push_back(std::move(fo));
    } else {
      Tensor merged = baseline_fuse(*store_, "vdt.fusion.s" + std::to_string(s) + ".", cfg_.mode,
                                    stage, cfg_.channels);
      ladder.shared.push_back(project("vdt.shd_proj.s" + std::to_string(s), merged, cfg_.channels));
      ladder.specific.push_back(project("vdt.spc_proj.s" + std::to_string(s), merged, cfg_.channels));
    }
  }

  return stacking_decode(ladder, H, W);
}

Tensor bce_loss(const Tensor& pred, const Tensor& gt) {
  Tensor p = ops::clamp(pred, 1e-7, 1.0 - 1e-7);
  Tensor pos = ops::mul(gt, ops::log(p));
  Tensor neg = ops::mul(ops::scale_shift(gt, -1.0, 1.0), ops::log(ops::scale_shift(p, -1.0, 1.0)));
  return ops::scale_shift(ops::mean_all(ops::add(pos, neg)), -1.0, 0.0);
}

namespace {
std::vector<double> gaussian_window_11() {
  constexpr int K = 11;
  constexpr double sigma = 1.5;
  std::vector<double> g(K);
  double sum = 0.0;
  for (int i = 0; i < K; ++i) {
    const double d = static_cast<double>(i - K / 2);
    g[static_cast<std::size_t>(i)] = std::exp(-d * d / (2.0 * sigma * sigma));
    sum += g[static_cast<std::size_t>(i)];
  }
  std::vector<double> w(K * K);
  for (int r = 0; r < K; ++r)
    for (int c = 0; c < K; ++c)
      w[static_cast<std::size_t>(r * K + c)] =
          g[static_cast<std::size_t>(r)] * g[static_cast<std::size_t>(c)] / (sum * sum);
  return w;
}
}  // namespace

Tensor ssim_index(const Tensor& pred, const Tensor& gt) {
  static const std::vector<double> win = gaussian_window_11();
  constexpr double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
  Tensor mu1 = ops::window_conv(pred, win, 11);
  Tensor mu2 = ops::window_conv(gt, win, 11);
  Tensor mu1s = ops::mul(mu1, mu1);
  Tensor mu2s = ops::mul(mu2, mu2);
  Tensor mu12 = ops::mul(mu1, mu2);
  Tensor s1 = ops::sub(ops::window_conv(ops::mul(pred, pred), win, 11), mu1s);
  Tensor s2 = ops::sub(ops::window_conv(ops::mul(gt, gt), win, 11), mu2s);
  Tensor s12 = ops::sub(ops::window_conv(ops::mul(pred, gt), win, 11), mu12);
  Tensor num = ops::mul(ops::scale_shift(mu12, 2.0, c1), ops::scale_shift(s12, 2.0, c2));
  Tensor den = ops::mul(ops::scale_shift(ops::add(mu1s, mu2s), 1.0, c1),
                        ops::scale_shift(ops::add(s1, s2), 1.0, c2));
  return ops::mean_all(ops::div(num, den));
}

Tensor soft_iou(const Tensor& pred, const Tensor& gt) {
  Tensor inter = ops::sum_all(ops::mul(pred, gt));
  Tensor uni = ops::sum_all(ops::sub(ops::add(pred, gt), ops::mul(pred, gt)));
  return ops::div(inter, ops::scale_shift(uni, 1.0, 1e-12));
}

Tensor saliency_loss(const SaliencyPrediction& pred, const Tensor& gt) {
  check_shape(gt.rank() == 3 && gt.dim(2) == 1, "saliency_loss: gt must be (H,W,1)");
  for (double v : gt.values())
    check_contract(v >= 0.0 && v <= 1.0, "saliency_loss: gt outside [0,1]");
  check_contract(!pred.maps.empty(), "saliency_loss: no prediction maps");
  Tensor total;
  for (const Tensor& m : pred.maps) {
    check_shape(m.shape() == gt.shape(), "saliency_loss: map/gt shape mismatch");
    Tensor term = ops::add(bce_loss(m, gt),
                           ops::add(ops::scale_shift(ssim_index(m, gt), -1.0, 1.0),
                                    ops::scale_shift(soft_iou(m, gt), -1.0, 1.0)));
    total = total.defined() ? ops::add(total, term) : term;
  }
  return total;
}

}  // namespace pwrf
