#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pwrf/capsule.hpp"

namespace pwrf {

// Every field has a default except seed; parsing fails without one.
struct PipelineConfig {
  std::string task = "smm";    // smm | vdt
  int modality_count = 3;      // 2 | 3
  std::string modalities;      // subset by initials, e.g. "VD" or "ab"; empty = all
  std::int64_t capsule_types = 8;  // T_p
  std::int64_t whole_types = 0;    // T_w; 0 = task categories (smm: classes, vdt: 2)
  int routing_iters = 3;
  std::vector<double> lambda_schedule{1.0, 2.0, 3.0};
  std::int64_t channels = 64;
  std::int64_t classes = 4;
  bool share_params = true;
  double keep_fraction = 0.7;
  std::int64_t min_kept = 16;
  double beta2 = 0.3;
  double alpha_s = 0.5;
  std::uint64_t seed = 0;
  double learning_rate = 5e-3;
  int epochs = 40;
  int batch = 8;
  std::string output_dir = "out";
  std::string fusion_mode = "pwrf";
  double vote_noise = 0.01;
  int image_size = 0;   // 0 = task default (smm 16, vdt 32)
  int scene_count = 64;
  bool vdt_two_sub_decoders = true;
  bool vdt_stem_pool = true;
  bool vdt_edge_cues = true;

  static PipelineConfig from_json_text(const std::string& text);
  std::string to_json_text(int indent = -1) const;

  void validate() const;
  std::int64_t resolved_whole_types() const;
  int resolved_image_size() const;
  FusionConfig fusion_config() const;
  FusionMode mode() const { return fusion_mode_parse(fusion_mode); }
};

}  // namespace pwrf
