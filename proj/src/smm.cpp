#include "pwrf/smm.hpp"

#include "pwrf/ops.hpp"

namespace pwrf {

SmmModel::SmmModel(ParamStore& store, SmmConfig cfg) : store_(&store), cfg_(cfg) {
  check_config(cfg_.channels >= 1, "smm: channels must be >= 1");
  check_config(cfg_.classes >= 2, "smm: classes must be >= 2");
  cfg_.fusion.merged_channels = cfg_.channels;
}

std::string SmmModel::branch_name(int modality, const std::string& suffix) const {
  if (cfg_.fusion.share_params) return "smm.branch." + suffix;
  return "smm.branch" + std::to_string(modality) + "." + suffix;
}

Tensor SmmModel::conv_cate(const std::string& name, const std::vector<Tensor>& xs,
                           std::int64_t out_channels) const {
  Tensor cat = xs.size() == 1 ? xs[0] : ops::concat(xs, 2);
  const std::int64_t cin = cat.dim(2);
  Tensor w = store_->get(name + ".w" + std::to_string(cin), {cin, out_channels},
                         Init::xavier(cin, out_channels));
  Tensor b = store_->get(name + ".b", {out_channels}, Init::zeros());
  return ops::linear_last(cat, w, b);
}

Tensor SmmModel::backbone_stage(const Tensor& x, int stage, int modality) const {
  const std::int64_t cin = x.dim(2);
  const std::int64_t C = cfg_.channels;
  const std::string tag = "bb" + std::to_string(stage);
  Tensor w = store_->get(branch_name(modality, tag + ".conv_w" + std::to_string(cin)),
                         {3, 3, cin, C}, Init::xavier(9 * cin, 9 * C));
  Tensor b = store_->get(branch_name(modality, tag + ".conv_b"), {C}, Init::zeros());
  Tensor gamma = store_->get(branch_name(modality, tag + ".norm_g"), {1, 1, C}, Init::ones());
  Tensor beta = store_->get(branch_name(modality, tag + ".norm_b"), {1, 1, C}, Init::zeros());
  return ops::relu(ops::norm_affine(ops::conv2d_3x3(x, w, b), gamma, beta));
}

Tensor SmmModel::shared_to_features(const CapsuleField& wp) const {
  const Tensor& g = wp.grid;
  check_shape(g.rank() == 4, "shared_to_features: capsule grid must be rank 4");
  const std::int64_t H = g.dim(0), W = g.dim(1), tw = g.dim(2);
  Tensor flat = ops::reshape(g, {H, W, tw * 17});
  return conv_cate("smm.shd_proj", {flat}, cfg_.channels);
}

Tensor SmmModel::primitive_specific(const Tensor& f_n, const Tensor& sp_n, const Tensor& shared,
                                    int modality) const {
  Tensor f_hat = conv_cate(branch_name(modality, "psg.noise"), {f_n, sp_n}, cfg_.channels);
  Tensor f = conv_cate(branch_name(modality, "psg.shared"), {shared, sp_n}, cfg_.channels);
  return ops::add(ops::mul(ops::sigmoid(f_hat), f), f);
}

Tensor SmmModel::merge_primitive(const std::vector<Tensor>& per_modality) const {
  return conv_cate("smm.psg_merge", per_modality, cfg_.channels);
}

Tensor SmmModel::spatial_attention(const Tensor& cp1, const Tensor& cp2, const Tensor& cp3,
                                   int branch) const {
  Tensor sum = ops::add(ops::add(cp1, cp2), cp3);
  Tensor pooled = ops::channel_max_pool(sum);  // (H,W,1)
  return ops::sigmoid(
      conv_cate("smm.ssi.b" + std::to_string(branch) + ".sa", {pooled}, 1));
}

Tensor SmmModel::channel_attention(const Tensor& cp1, const Tensor& sa, int branch) const {
  Tensor gated = ops::add(ops::mul(cp1, sa), cp1);
  Tensor pooled = ops::global_max_pool(gated);  // (1,1,C)
  return ops::sigmoid(
      conv_cate("smm.ssi.b" + std::to_string(branch) + ".ca", {pooled}, cfg_.channels));
}

Tensor SmmModel::attend(const Tensor& cp1, const Tensor& ca) {
  return ops::add(ops::mul(cp1, ca), cp1);
}

Tensor SmmModel::interaction_merge(const Tensor& b1, const Tensor& b2, const Tensor& b3) const {
  Tensor prod = ops::mul(ops::mul(b1, b2), b3);
  Tensor sum = ops::add(ops::add(b1, b2), b3);
  return conv_cate("smm.ssi.merge", {prod, sum}, cfg_.channels);
}

Tensor SmmModel::forward(const std::vector<Tensor>& modalities, SmmTrace* trace) const {
  const auto n = static_cast<int>(modalities.size());
  check_config(n == 2 || n == 3, "smm: modality count must be 2 or 3, got " + std::to_string(n));
  const std::int64_t H = modalities[0].dim(0), W = modalities[0].dim(1);
  for (const Tensor& m : modalities)
    check_shape(m.rank() == 3 && m.dim(0) == H && m.dim(1) == W,
                "smm: modalities must share spatial extents");

  // Two-stage backbone stub per modality; stage features are taken before
  // the stride-2 pooling that feeds the next stage.
  std::vector<Tensor> s1(static_cast<std::size_t>(n)), s2(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    s1[static_cast<std::size_t>(i)] = backbone_stage(modalities[static_cast<std::size_t>(i)], 0, i);
    Tensor pooled = ops::avg_pool2(s1[static_cast<std::size_t>(i)]);
    s2[static_cast<std::size_t>(i)] = backbone_stage(pooled, 1, i);
  }

  // Stage 1 bypass: plain concatenation, no capsule routing.
  Tensor f1 = conv_cate("smm.stage1.merge", s1, cfg_.channels);

  // Stage 2: PWRF (or a baseline fuser) plus shared-specific integration.
  Tensor f2;
  std::optional<FusionOutputs> fo;
  if (cfg_.mode == FusionMode::pwrf) {
    CapsuleFusion fusion(*store_, "smm.fusion.", cfg_.fusion);
    fo = fusion.fuse(s2);
    Tensor shared = shared_to_features(fo->shared);
    std::vector<Tensor> psg(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i)
      psg[static_cast<std::size_t>(i)] = primitive_specific(
          s2[static_cast<std::size_t>(i)], fo->specifics[static_cast<std::size_t>(i)], shared, i);
    InteractionComponents comps;
    comps.shared = shared;
    comps.primitive_specific = merge_primitive(psg);
    Tensor sel = s2[0];
    for (int i = 1; i < n; ++i) sel = ops::emax(sel, s2[static_cast<std::size_t>(i)]);
    comps.selected = conv_cate("smm.sqh", {sel}, cfg_.channels);

    const Tensor cps[3] = {comps.shared, comps.primitive_specific, comps.selected};
    Tensor branches[3];
    for (int j = 0; j < 3; ++j) {
      const Tensor& p = cps[j];
      const Tensor& o1 = cps[(j + 1) % 3];
      const Tensor& o2 = cps[(j + 2) % 3];
      Tensor sa = spatial_attention(p, o1, o2, j);
      Tensor ca = channel_attention(p, sa, j);
      branches[j] = attend(p, ca);
    }
    f2 = interaction_merge(branches[0], branches[1], branches[2]);
  } else {
    f2 = baseline_fuse(*store_, "smm.fusion.", cfg_.mode, s2, cfg_.channels);
  }

  if (trace) {
    trace->stages.clear();
    trace->stages.push_back(StageFeatures{s1[0], s1, std::nullopt});
    trace->stages.push_back(StageFeatures{s2[0], s2, fo});
  }

  // Integrate each stage with the primary modality and classify per pixel at
  // input resolution.
  Tensor g1 = conv_cate("smm.head.stage1", {f1, s1[0]}, cfg_.channels);
  Tensor g2 = conv_cate("smm.head.stage2", {f2, s2[0]}, cfg_.channels);
  Tensor up1 = ops::bilinear_resize(g1, H, W);
  Tensor up2 = ops::bilinear_resize(g2, H, W);
  return conv_cate("smm.head.classify", {up1, up2}, cfg_.classes);
}

Tensor ohem_cross_entropy(const Tensor& logits, const Tensor& gt, double keep_fraction,
                          std::int64_t min_kept) {
  check_contract(keep_fraction > 0.0 && keep_fraction <= 1.0,
                 "ohem_cross_entropy: keep_fraction must lie in (0,1]");
  Tensor ce = ops::cross_entropy_map(logits, gt);
  const std::int64_t n = ce.size();
  std::int64_t keep = std::max(min_kept, static_cast<std::int64_t>(keep_fraction * static_cast<double>(n)));
  keep = std::min(std::max<std::int64_t>(keep, 1), n);
  return ops::mean_topk(ops::reshape(ce, {n}), keep);
}

}  // namespace pwrf
