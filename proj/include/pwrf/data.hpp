#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "pwrf/tensor.hpp"

namespace pwrf {

// One synthetic training example. Modalities carry complementary cues so
// that no single stream suffices: for smm each shape class is identifiable
// in exactly one modality (the others only see class-agnostic structure);
// for vdt each modality suffers one corruption mode per scene (low contrast,
// noise, occlusion).
struct SyntheticScene {
  std::vector<Tensor> modalities;          // (H,W,C_in)
  std::vector<std::string> modality_names;
  Tensor labels;  // smm: (H,W) class ids; vdt: (H,W,1) binary saliency
  std::string recipe_json;  // generator parameters for bit-exact replay
};

// kind: "smm" (3 modalities a/b/c, K=4 class maps) or "vdt" (V/D/T, binary).
std::vector<SyntheticScene> generate_dataset(const std::string& kind, int n, int size,
                                             std::uint64_t seed);

// Rebuild a single scene from its recipe; bit-identical to the original.
SyntheticScene scene_from_recipe(const std::string& recipe_json);

// Resolve a subset spec ("VD", "a+c", ...) against modality names by first
// letter, case-insensitive. Empty subset keeps the first `count` entries.
std::vector<int> modality_subset_indices(const std::vector<std::string>& names,
                                         const std::string& subset, int count);

// Keep only the modalities whose name initials appear in subset (e.g. "VD").
// Empty subset keeps the first `count` modalities.
SyntheticScene select_modalities(const SyntheticScene& scene, const std::string& subset,
                                 int count);

void save_dataset(const std::filesystem::path& dir, const std::vector<SyntheticScene>& scenes,
                  const std::string& kind, int size, std::uint64_t seed);
std::vector<SyntheticScene> load_dataset(const std::filesystem::path& dir,
                                         std::string* kind = nullptr);

}  // namespace pwrf
