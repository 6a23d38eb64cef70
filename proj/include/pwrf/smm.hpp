#pragma once

#include <optional>
#include <string>
#include <vector>

#include "pwrf/capsule.hpp"

// Segmentation head on top of PWRF: a two-stage conv backbone stub per
// modality, stage-1 plain concatenation, stage-2 capsule fusion followed by
// the shared-specific integration module, then a per-pixel linear classifier
// over the upsampled stage features. Trained with OHEM cross-entropy.

namespace pwrf {

struct SmmConfig {
  std::int64_t channels = 64;
  std::int64_t classes = 4;
  FusionConfig fusion;
  double keep_fraction = 0.7;
  std::int64_t min_kept = 16;
  FusionMode mode = FusionMode::pwrf;
};

// Per-stage feature bundle: primary modality features, all per-modality
// features, and the fusion outputs where PWRF ran.
struct StageFeatures {
  Tensor primary;
  std::vector<Tensor> auxiliaries;
  std::optional<FusionOutputs> fusion;
};

// The three interaction inputs: modal-shared features, merged primitive
// modal-specific features, and the selected-modality stand-in.
struct InteractionComponents {
  Tensor shared;
  Tensor primitive_specific;
  Tensor selected;
};

struct SmmTrace {
  std::vector<StageFeatures> stages;
};

class SmmModel {
 public:
  SmmModel(ParamStore& store, SmmConfig cfg);

  // Logits (H,W,K) at input resolution. Modality count must be 2 or 3.
  Tensor forward(const std::vector<Tensor>& modalities, SmmTrace* trace = nullptr) const;

  // Pieces of the shared-specific integration, exposed for tests.
  Tensor shared_to_features(const CapsuleField& wp) const;
  Tensor primitive_specific(const Tensor& f_n, const Tensor& sp_n, const Tensor& shared,
                            int modality) const;
  Tensor merge_primitive(const std::vector<Tensor>& per_modality) const;
  Tensor spatial_attention(const Tensor& cp1, const Tensor& cp2, const Tensor& cp3,
                           int branch) const;
  Tensor channel_attention(const Tensor& cp1, const Tensor& sa, int branch) const;
  static Tensor attend(const Tensor& cp1, const Tensor& ca);
  Tensor interaction_merge(const Tensor& b1, const Tensor& b2, const Tensor& b3) const;

  const SmmConfig& config() const { return cfg_; }

 private:
  std::string branch_name(int modality, const std::string& suffix) const;
  Tensor backbone_stage(const Tensor& x, int stage, int modality) const;
  Tensor conv_cate(const std::string& name, const std::vector<Tensor>& xs,
                   std::int64_t out_channels) const;

  ParamStore* store_;
  SmmConfig cfg_;
};

// Eq.-(24)-style loss: per-pixel cross-entropy averaged over the hardest
// max(min_kept, floor(keep_fraction * H * W)) pixels.
Tensor ohem_cross_entropy(const Tensor& logits, const Tensor& gt, double keep_fraction,
                          std::int64_t min_kept);

}  // namespace pwrf
