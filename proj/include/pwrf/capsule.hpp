#pragma once

#include <string>
#include <vector>

#include "pwrf/params.hpp"
#include "pwrf/tensor.hpp"

// Part-whole relational fusion. Each modality's features become part-level
// capsules (4x4 pose + activation), which are disentangled into horizontal
// and vertical 1-D capsule strips, concatenated across modalities along the
// type axis, EM-routed to whole-level capsules per strip position, and
// entangled back to full resolution by an outer product over the two
// resolution axes. The whole-level capsules are the modal-shared details;
// the routing coefficients, split per modality, weight each modality's own
// capsules into its modal-specific details.

namespace pwrf {

enum class Axis { horizontal, vertical };

const char* axis_name(Axis a);

// (H, W, T, 17): dims 0..15 the pose matrix, dim 16 the activation.
struct CapsuleField {
  Tensor grid;
};

// One resolution axis collapsed to extent 1.
struct AxisCapsules {
  Tensor grid;  // (H,1,T,17) or (1,W,T,17)
  Axis axis = Axis::horizontal;
};

struct RoutingOutcome {
  AxisCapsules wholes;  // T = whole_types
  Tensor coefficients;  // (L, P_total, T_w); rows over T_w form a simplex
  int iterations = 0;
};

struct FusionOutputs {
  CapsuleField shared;                 // whole-level capsules, (H,W,T_w,17)
  std::vector<Tensor> specifics;       // per modality, (H,W,T_p*17)
  Tensor merged_specific;              // (H,W,C)
  std::vector<Tensor> coefficients_h;  // per modality split, (H,1,T_p)
  std::vector<Tensor> coefficients_v;  // per modality split, (1,W,T_p)
  RoutingOutcome routing_h, routing_v;
};

struct FusionConfig {
  std::int64_t part_types = 8;   // capsule types per modality
  std::int64_t whole_types = 4;  // fused capsule types
  int routing_iters = 3;
  std::vector<double> lambda_schedule{1.0, 2.0, 3.0};  // extended with its last value
  bool share_params = true;  // tie per-modality branch weights
  double vote_noise = 0.01;  // sigma of the identity-plus-noise vote init
  std::int64_t merged_channels = 64;
  double variance_floor = 1e-8;
};

class CapsuleFusion {
 public:
  CapsuleFusion(ParamStore& store, std::string prefix, FusionConfig cfg);

  // Pose/activation projections of backbone features, Eq.-(1)/(2) style.
  CapsuleField make_primary_capsules(const Tensor& f, int modality) const;

  // Learnable linear reduction over the collapsed resolution axis,
  // initialized to uniform averaging.
  AxisCapsules disentangle(const CapsuleField& cf, Axis axis, int modality) const;

  // Type-axis concatenation; order fixes the modality block layout.
  static AxisCapsules concat_parts(const std::vector<AxisCapsules>& parts);

  // Matrix-capsule EM routing, unrolled onto the tape. Coefficients are the
  // final E-step responsibilities, normalized over whole types per part.
  RoutingOutcome em_routing(const AxisCapsules& parts) const;

  static CapsuleField entangle(const AxisCapsules& h, const AxisCapsules& v);

  // Slice one modality's part-type block and average over whole types.
  // modality is 0-based.
  static Tensor split_coefficients(const Tensor& r, int modality, std::int64_t part_types,
                                   Axis axis);

  static Tensor modal_specific(const AxisCapsules& parts_h, const AxisCapsules& parts_v,
                               const Tensor& split_h, const Tensor& split_v);

  Tensor merge_specifics(const std::vector<Tensor>& specifics) const;

  FusionOutputs fuse(const std::vector<Tensor>& bundle) const;

  const FusionConfig& config() const { return cfg_; }

 private:
  std::string branch_name(int modality, const std::string& suffix) const;
  double lambda_at(int iter) const;

  ParamStore* store_;
  std::string prefix_;
  FusionConfig cfg_;
};

// Fusion-mechanism ablation: PWRF against plain merges swapped in at the
// same place in each task network.
enum class FusionMode { pwrf, addition, concatenation, qkv };

const char* fusion_mode_name(FusionMode m);
FusionMode fusion_mode_parse(const std::string& s);

// addition: project the elementwise sum; concatenation: project the channel
// concat; qkv: per-pixel single-head attention over the modality tokens.
Tensor baseline_fuse(ParamStore& store, const std::string& prefix, FusionMode mode,
                     const std::vector<Tensor>& bundle, std::int64_t channels);

}  // namespace pwrf
