#include "pwrf/capsule.hpp"

#include <cmath>

#include "pwrf/ops.hpp"

namespace pwrf {

namespace {
constexpr double kLog2Pi = 1.8378770664093454835606594728112;
}

const char* axis_name(Axis a) { return a == Axis::horizontal ? "horizontal" : "vertical"; }

CapsuleFusion::CapsuleFusion(ParamStore& store, std::string prefix, FusionConfig cfg)
    : store_(&store), prefix_(std::move(prefix)), cfg_(cfg) {
  check_config(cfg_.part_types >= 1, "part_types must be >= 1");
  check_config(cfg_.whole_types >= 1, "whole_types must be >= 1");
  check_config(cfg_.merged_channels >= 1, "merged_channels must be >= 1");
}

std::string CapsuleFusion::branch_name(int modality, const std::string& suffix) const {
  if (cfg_.share_params) return prefix_ + "branch." + suffix;
  return prefix_ + "branch" + std::to_string(modality) + "." + suffix;
}

double CapsuleFusion::lambda_at(int iter) const {
  if (cfg_.lambda_schedule.empty()) return 1.0;
  const std::size_t i = std::min(static_cast<std::size_t>(iter), cfg_.lambda_schedule.size() - 1);
  return cfg_.lambda_schedule[i];
}

CapsuleField CapsuleFusion::make_primary_capsules(const Tensor& f, int modality) const {
  check_shape(f.rank() == 3, "make_primary_capsules: features must be (H,W,C)");
  const std::int64_t H = f.dim(0), W = f.dim(1), C = f.dim(2);
  const std::int64_t tp = cfg_.part_types;

  Tensor pose_w = store_->get(branch_name(modality, "caps.pose_w"), {C, tp * 16},
                              Init::xavier(C, tp * 16));
  Tensor pose_b = store_->get(branch_name(modality, "caps.pose_b"), {tp * 16}, Init::zeros());
  Tensor act_w = store_->get(branch_name(modality, "caps.act_w"), {C, tp}, Init::xavier(C, tp));
  Tensor act_b = store_->get(branch_name(modality, "caps.act_b"), {tp}, Init::zeros());

  Tensor pose = ops::reshape(ops::linear_last(f, pose_w, pose_b), {H, W, tp, 16});
  Tensor act = ops::reshape(ops::sigmoid(ops::linear_last(f, act_w, act_b)), {H, W, tp, 1});
  return CapsuleField{ops::concat({pose, act}, 3)};
}

AxisCapsules CapsuleFusion::disentangle(const CapsuleField& cf, Axis axis, int modality) const {
  check_shape(cf.grid.rank() == 4 && cf.grid.dim(3) == 17,
              "disentangle: capsule grid must be (H,W,T,17)");
  // Horizontal keeps H and collapses W; vertical the reverse.
  const int collapse = axis == Axis::horizontal ? 1 : 0;
  const std::int64_t ext = cf.grid.dim(collapse);
  const std::string tag = axis == Axis::horizontal ? "dis_h" : "dis_v";
  Tensor w = store_->get(branch_name(modality, tag + ".w" + std::to_string(ext)), {ext},
                         Init::uniform_avg());
  Tensor b = store_->get(branch_name(modality, tag + ".b" + std::to_string(ext)), {1}, Init::zeros());
  return AxisCapsules{ops::collapse_axis_linear(cf.grid, collapse, w, b), axis};
}

AxisCapsules CapsuleFusion::concat_parts(const std::vector<AxisCapsules>& parts) {
  check_contract(!parts.empty(), "concat_parts: empty modality list");
  for (const AxisCapsules& p : parts)
    check_contract(p.axis == parts[0].axis, "concat_parts: mixed axes");
  std::vector<Tensor> grids;
  grids.reserve(parts.size());
  for (const AxisCapsules& p : parts) grids.push_back(p.grid);
  return AxisCapsules{ops::concat(grids, 2), parts[0].axis};
}

RoutingOutcome CapsuleFusion::em_routing(const AxisCapsules& parts) const {
  check_contract(cfg_.routing_iters >= 1, "em_routing: iters must be >= 1");
  const Tensor& grid = parts.grid;
  check_shape(grid.rank() == 4 && grid.dim(3) == 17, "em_routing: parts must be (.,.,P,17)");
  const std::int64_t L = parts.axis == Axis::horizontal ? grid.dim(0) : grid.dim(1);
  const std::int64_t P = grid.dim(2);
  const std::int64_t J = cfg_.whole_types;

  Tensor flat = ops::reshape(grid, {L, P, 17});
  Tensor pose = ops::slice(flat, 2, 0, 16);                      // (L,P,16)
  Tensor act = ops::reshape(ops::slice(flat, 2, 16, 1), {L, P, 1});

  const std::string tag = prefix_ + "routing_" + (parts.axis == Axis::horizontal ? "h" : "v");
  Tensor trans = store_->get(tag + ".vote_w" + std::to_string(P), {P, J, 16},
                             Init::identity4_noise(cfg_.vote_noise));
  Tensor beta_a = store_->get(tag + ".beta_a", {1, 1, J, 1}, Init::zeros());
  Tensor beta_u = store_->get(tag + ".beta_u", {1, 1, J, 1}, Init::zeros());

  Tensor votes = ops::capsule_votes(pose, trans);  // (L,P,J,16)

  Tensor r = Tensor::full({L, P, J}, 1.0 / static_cast<double>(J));
  Tensor mu, whole_act;
  for (int it = 0; it < cfg_.routing_iters; ++it) {
    // M-step: activation-weighted Gaussian stats of the votes per whole.
    Tensor rw = ops::mul(r, act);                                // (L,P,J)
    Tensor rs = ops::clamp_min(ops::sum_axis(rw, 1), 1e-16);     // (L,1,J)
    Tensor rw4 = ops::reshape(rw, {L, P, J, 1});
    Tensor rs4 = ops::reshape(rs, {L, 1, J, 1});
    mu = ops::div(ops::sum_axis(ops::mul(votes, rw4), 1), rs4);  // (L,1,J,16)
    Tensor diff = ops::sub(votes, mu);                           // (L,P,J,16)
    Tensor var = ops::div(ops::sum_axis(ops::mul(ops::mul(diff, diff), rw4), 1), rs4);
    var = ops::clamp_min(var, cfg_.variance_floor);
    Tensor log_var = ops::log(var);
    Tensor cost = ops::mul(ops::add(beta_u, ops::scale_shift(log_var, 0.5, 0.0)), rs4);
    Tensor z = ops::scale_shift(ops::sub(beta_a, ops::sum_axis(cost, 3)), lambda_at(it), 0.0);
    whole_act = ops::sigmoid(z);          // (L,1,J,1)
    Tensor log_act = ops::logsigmoid(z);

    // E-step: responsibilities from whole activation x Gaussian likelihood,
    // normalized over whole types.
    Tensor ll_h = ops::sub(ops::scale_shift(ops::div(ops::mul(diff, diff), var), -0.5, 0.0),
                           ops::scale_shift(log_var, 0.5, 0.5 * kLog2Pi));
    Tensor ll = ops::reshape(ops::sum_axis(ll_h, 3), {L, P, J});
    Tensor logits = ops::add(ll, ops::reshape(log_act, {L, 1, J}));
    r = ops::softmax_last(logits);
  }

  Tensor whole_grid = ops::concat({mu, whole_act}, 3);  // (L,1,J,17)
  if (parts.axis == Axis::vertical) whole_grid = ops::reshape(whole_grid, {1, L, J, 17});
  return RoutingOutcome{AxisCapsules{whole_grid, parts.axis}, r, cfg_.routing_iters};
}

CapsuleField CapsuleFusion::entangle(const AxisCapsules& h, const AxisCapsules& v) {
  check_contract(h.axis == Axis::horizontal && v.axis == Axis::vertical,
                 "entangle: expects one horizontal and one vertical operand");
  check_contract(h.grid.dim(2) == v.grid.dim(2), "entangle: capsule type extents differ");
  return CapsuleField{ops::matmul_resolution(h.grid, v.grid)};
}

Tensor CapsuleFusion::split_coefficients(const Tensor& r, int modality, std::int64_t part_types,
                                         Axis axis) {
  check_shape(r.rank() == 3, "split_coefficients: coefficients must be (L,P,T_w)");
  const std::int64_t L = r.dim(0), P = r.dim(1), J = r.dim(2);
  check_contract(P % part_types == 0, "split_coefficients: P not a multiple of part_types");
  const std::int64_t n_mod = P / part_types;
  check_contract(modality >= 0 && modality < n_mod, "split_coefficients: modality index out of range");
  Tensor block = ops::slice(r, 1, part_types * modality, part_types);    // (L,T_p,J)
  Tensor mean = ops::scale_shift(ops::sum_axis(block, 2), 1.0 / static_cast<double>(J), 0.0);
  if (axis == Axis::horizontal) return ops::reshape(mean, {L, 1, part_types});
  return ops::reshape(mean, {1, L, part_types});
}

Tensor CapsuleFusion::modal_specific(const AxisCapsules& parts_h, const AxisCapsules& parts_v,
                                     const Tensor& split_h, const Tensor& split_v) {
  const Tensor& gh = parts_h.grid;  // (H,1,T_p,17)
  const Tensor& gv = parts_v.grid;  // (1,W,T_p,17)
  const std::int64_t H = gh.dim(0), W = gv.dim(1), tp = gh.dim(2);
  check_shape(split_h.rank() == 3 && split_h.dim(0) == H && split_h.dim(2) == tp,
              "modal_specific: horizontal split shape mismatch");
  check_shape(split_v.rank() == 3 && split_v.dim(1) == W && split_v.dim(2) == tp,
              "modal_specific: vertical split shape mismatch");
  Tensor sh = ops::mul(gh, ops::reshape(split_h, {H, 1, tp, 1}));
  Tensor sv = ops::mul(gv, ops::reshape(split_v, {1, W, tp, 1}));
  return ops::reshape(ops::matmul_resolution(sh, sv), {H, W, tp * 17});
}

Tensor CapsuleFusion::merge_specifics(const std::vector<Tensor>& specifics) const {
  check_contract(!specifics.empty(), "merge_specifics: empty input");
  Tensor cat = specifics.size() == 1 ? specifics[0] : ops::concat(specifics, 2);
  const std::int64_t cin = cat.dim(2);
  Tensor w = store_->get(prefix_ + "merge.w" + std::to_string(cin), {cin, cfg_.merged_channels},
                         Init::xavier(cin, cfg_.merged_channels));
  Tensor b = store_->get(prefix_ + "merge.b", {cfg_.merged_channels}, Init::zeros());
  return ops::linear_last(cat, w, b);
}

FusionOutputs CapsuleFusion::fuse(const std::vector<Tensor>& bundle) const {
  check_contract(!bundle.empty(), "fuse: empty modality bundle");
  const std::int64_t H = bundle[0].dim(0), W = bundle[0].dim(1);
  for (const Tensor& f : bundle)
    check_shape(f.rank() == 3 && f.dim(0) == H && f.dim(1) == W,
                "fuse: modalities must share spatial extents");

  const int n = static_cast<int>(bundle.size());
  std::vector<AxisCapsules> parts_h, parts_v;
  parts_h.reserve(bundle.size());
  parts_v.reserve(bundle.size());
  for (int i = 0; i < n; ++i) {
    CapsuleField cf = make_primary_capsules(bundle[static_cast<std::size_t>(i)], i);
    parts_h.push_back(disentangle(cf, Axis::horizontal, i));
    parts_v.push_back(disentangle(cf, Axis::vertical, i));
  }

  FusionOutputs out;
  out.routing_h = em_routing(concat_parts(parts_h));
  out.routing_v = em_routing(concat_parts(parts_v));
  out.shared = entangle(out.routing_h.wholes, out.routing_v.wholes);

  for (int i = 0; i < n; ++i) {
    Tensor rh = split_coefficients(out.routing_h.coefficients, i, cfg_.part_types, Axis::horizontal);
    Tensor rv = split_coefficients(out.routing_v.coefficients, i, cfg_.part_types, Axis::vertical);
    out.coefficients_h.push_back(rh);
    out.coefficients_v.push_back(rv);
    out.specifics.push_back(modal_specific(parts_h[static_cast<std::size_t>(i)],
                                           parts_v[static_cast<std::size_t>(i)], rh, rv));
  }
  out.merged_specific = merge_specifics(out.specifics);
  return out;
}

const char* fusion_mode_name(FusionMode m) {
  switch (m) {
    case FusionMode::pwrf: return "pwrf";
    case FusionMode::addition: return "addition";
    case FusionMode::concatenation: return "concatenation";
    case FusionMode::qkv: return "qkv";
  }
  return "pwrf";
}

FusionMode fusion_mode_parse(const std::string& s) {
  if (s == "pwrf") return FusionMode::pwrf;
  if (s == "addition") return FusionMode::addition;
  if (s == "concatenation") return FusionMode::concatenation;
  if (s == "qkv") return FusionMode::qkv;
  fail("config", "unknown fusion mode '" + s + "'");
}

Tensor baseline_fuse(ParamStore& store, const std::string& prefix, FusionMode mode,
                     const std::vector<Tensor>& bundle, std::int64_t channels) {
  check_contract(!bundle.empty(), "baseline_fuse: empty bundle");
  check_contract(mode != FusionMode::pwrf, "baseline_fuse: pwrf is not a baseline");
  const std::int64_t C = bundle[0].dim(2);
  const auto n = static_cast<std::int64_t>(bundle.size());

  if (mode == FusionMode::addition) {
    Tensor s = bundle[0];
    for (std::size_t i = 1; i < bundle.size(); ++i) s = ops::add(s, bundle[i]);
    Tensor w = store.get(prefix + "add.w", {C, channels}, Init::xavier(C, channels));
    Tensor b = store.get(prefix + "add.b", {channels}, Init::zeros());
    return ops::linear_last(s, w, b);
  }
  if (mode == FusionMode::concatenation) {
    Tensor cat = bundle.size() == 1 ? bundle[0] : ops::concat(bundle, 2);
    Tensor w = store.get(prefix + "cat.w" + std::to_string(n * C), {n * C, channels},
                         Init::xavier(n * C, channels));
    Tensor b = store.get(prefix + "cat.b", {channels}, Init::zeros());
    return ops::linear_last(cat, w, b);
  }

  // qkv: query from the modality mean, keys/values per modality, softmax over
  // the modality axis per pixel.
  Tensor mean = bundle[0];
  for (std::size_t i = 1; i < bundle.size(); ++i) mean = ops::add(mean, bundle[i]);
  mean = ops::scale_shift(mean, 1.0 / static_cast<double>(n), 0.0);
  Tensor wq = store.get(prefix + "qkv.wq", {C, channels}, Init::xavier(C, channels));
  Tensor wk = store.get(prefix + "qkv.wk", {C, channels}, Init::xavier(C, channels));
  Tensor wv = store.get(prefix + "qkv.wv", {C, channels}, Init::xavier(C, channels));
  Tensor q = ops::linear_last(mean, wq);
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(channels));
  std::vector<Tensor> scores, values;
  for (const Tensor& f : bundle) {
    Tensor k = ops::linear_last(f, wk);
    values.push_back(ops::linear_last(f, wv));
    scores.push_back(ops::scale_shift(ops::sum_axis(ops::mul(q, k), 2), inv_sqrt, 0.0));
  }
  Tensor att = ops::softmax_last(ops::concat(scores, 2));  // (H,W,n)
  Tensor out;
  for (std::int64_t i = 0; i < n; ++i) {
    Tensor wi = ops::slice(att, 2, i, 1);
    Tensor term = ops::mul(values[static_cast<std::size_t>(i)], wi);
    out = i == 0 ? term : ops::add(out, term);
  }
  Tensor wo = store.get(prefix + "qkv.wo", {channels, channels}, Init::xavier(channels, channels));
  Tensor bo = store.get(prefix + "qkv.bo", {channels}, Init::zeros());
  return ops::linear_last(out, wo, bo);
}

}  // namespace pwrf
