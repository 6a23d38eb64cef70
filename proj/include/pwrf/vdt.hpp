#pragma once

#include <optional>
#include <string>
#include <vector>

#include "pwrf/capsule.hpp"

// Saliency head on top of PWRF: per-stage capsule fusion produces a shared
// and a specific feature ladder, aggregated by a stacked pair of
// adjacent-scale-attention sub-decoders with a bridge connection, five side
// outputs, and a BCE + SSIM + IoU training loss.

namespace pwrf {

// Shared/specific feature pyramids, channel-projected; stage i+1 has half
// the spatial extent of stage i.
struct ScaleLadder {
  std::vector<Tensor> shared;
  std::vector<Tensor> specific;
};

struct SaliencyPrediction {
  std::vector<Tensor> maps;  // five (H,W,1) maps in (0,1)
  Tensor final;              // == maps.back()
};

struct VdtConfig {
  std::int64_t channels = 64;
  int stages = 3;
  FusionConfig fusion;
  FusionMode mode = FusionMode::pwrf;
  bool two_sub_decoders = true;  // off: single sub-decoder (decoder ablation)
  bool stem_pool = true;         // 2x pool before stage 1
  bool edge_cues = true;
  int visible_index = 0;  // edge-cue reference stream
  int depth_index = 1;    // stream that gets enhanced; -1 disables
};

struct VdtTrace {
  std::vector<FusionOutputs> fusions;  // per stage, pwrf mode only
};

class VdtModel {
 public:
  VdtModel(ParamStore& store, VdtConfig cfg);

  SaliencyPrediction forward(const std::vector<Tensor>& modalities,
                             VdtTrace* trace = nullptr) const;

  // ASA pieces, exposed for tests. prefix selects the parameter set.
  Tensor adjacent_integrate(const Tensor& x_lo, const Tensor& x_hi,
                            const std::string& prefix) const;
  Tensor dual_branch_attention(const Tensor& x, const std::string& prefix) const;
  Tensor asa(const Tensor& x_lo, const Tensor& x_hi, const std::string& prefix) const;
  SaliencyPrediction stacking_decode(const ScaleLadder& ladder, std::int64_t out_h,
                                     std::int64_t out_w) const;

  const VdtConfig& config() const { return cfg_; }

 private:
  Tensor cbr(const Tensor& x, const std::string& prefix) const;
  Tensor backbone_stage(const Tensor& x, int stage, int modality) const;
  std::string branch_name(int modality, const std::string& suffix) const;
  Tensor project(const std::string& name, const Tensor& x, std::int64_t out_channels) const;
  Tensor side_map(const std::string& name, const Tensor& x, std::int64_t out_h,
                  std::int64_t out_w) const;

  ParamStore* store_;
  VdtConfig cfg_;
};

// Gate-blend of the upsampled high-level stream and the low-level stream:
// g = sigmoid(dba); out = hi_up.g + lo.(1-g). Parameter-free.
Tensor selective_aggregate(const Tensor& hi_up, const Tensor& lo, const Tensor& dba);

// depth_feat . (1 + E), E the max-normalized Sobel gradient magnitude of the
// channel-averaged reference stream.
Tensor edge_enhance(const Tensor& depth_feat, const Tensor& reference);

// Per-map BCE + (1 - SSIM) + (1 - soft IoU), summed over all five maps.
// SSIM window 11x11 Gaussian sigma 1.5, c1 = 0.01^2, c2 = 0.03^2.
Tensor saliency_loss(const SaliencyPrediction& pred, const Tensor& gt);

Tensor bce_loss(const Tensor& pred, const Tensor& gt);
Tensor ssim_index(const Tensor& pred, const Tensor& gt);  // mean SSIM, not the loss
Tensor soft_iou(const Tensor& pred, const Tensor& gt);

}  // namespace pwrf
