#include "pwrf/config.hpp"

#include <json.hpp>

namespace pwrf {

using nlohmann::json;

namespace {
template <class T>
void read(const json& j, const char* key, T& out) {
  if (j.contains(key)) {
    try {
      out = j.at(key).get<T>();
    } catch (const std::exception& e) {
      fail("config", std::string("bad value for '") + key + "': " + e.what());
    }
  }
}
}  // namespace

PipelineConfig PipelineConfig::from_json_text(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const std::exception& e) {
    fail("config", std::string("config is not valid JSON: ") + e.what());
  }
  PipelineConfig c;
  read(j, "task", c.task);
  read(j, "modality_count", c.modality_count);
  read(j, "modalities", c.modalities);
  read(j, "capsule_types", c.capsule_types);
  read(j, "whole_types", c.whole_types);
  read(j, "routing_iters", c.routing_iters);
  read(j, "lambda_schedule", c.lambda_schedule);
  read(j, "channels", c.channels);
  read(j, "classes", c.classes);
  read(j, "share_params", c.share_params);
  read(j, "keep_fraction", c.keep_fraction);
  read(j, "min_kept", c.min_kept);
  read(j, "beta2", c.beta2);
  read(j, "alpha_s", c.alpha_s);
  read(j, "learning_rate", c.learning_rate);
  read(j, "epochs", c.epochs);
  read(j, "batch", c.batch);
  read(j, "output_dir", c.output_dir);
  read(j, "fusion_mode", c.fusion_mode);
  read(j, "vote_noise", c.vote_noise);
  read(j, "image_size", c.image_size);
  read(j, "scene_count", c.scene_count);
  read(j, "vdt_two_sub_decoders", c.vdt_two_sub_decoders);
  read(j, "vdt_stem_pool", c.vdt_stem_pool);
  read(j, "vdt_edge_cues", c.vdt_edge_cues);
  check_config(j.contains("seed"), "seed is mandatory");
  read(j, "seed", c.seed);
  c.validate();
  return c;
}

std::string PipelineConfig::to_json_text(int indent) const {
  json j;
  j["task"] = task;
  j["modality_count"] = modality_count;
  j["modalities"] = modalities;
  j["capsule_types"] = capsule_types;
  j["whole_types"] = whole_types;
  j["routing_iters"] = routing_iters;
  j["lambda_schedule"] = lambda_schedule;
  j["channels"] = channels;
  j["classes"] = classes;
  j["share_params"] = share_params;
  j["keep_fraction"] = keep_fraction;
  j["min_kept"] = min_kept;
  j["beta2"] = beta2;
  j["alpha_s"] = alpha_s;
  j["seed"] = seed;
  j["learning_rate"] = learning_rate;
  j["epochs"] = epochs;
  j["batch"] = batch;
  j["output_dir"] = output_dir;
  j["fusion_mode"] = fusion_mode;
  j["vote_noise"] = vote_noise;
  j["image_size"] = image_size;
  j["scene_count"] = scene_count;
  j["vdt_two_sub_decoders"] = vdt_two_sub_decoders;
  j["vdt_stem_pool"] = vdt_stem_pool;
  j["vdt_edge_cues"] = vdt_edge_cues;
  return j.dump(indent);
}

void PipelineConfig::validate() const {
  check_config(task == "smm" || task == "vdt", "task must be smm or vdt");
  check_config(modality_count == 2 || modality_count == 3, "modality_count must be 2 or 3");
  check_config(capsule_types >= 1, "capsule_types must be >= 1");
  check_config(whole_types >= 0, "whole_types must be >= 0 (0 = auto)");
  check_config(routing_iters >= 1, "routing_iters must be >= 1");
  check_config(channels >= 1, "channels must be >= 1");
  check_config(classes >= 2, "classes must be >= 2");
  check_config(keep_fraction > 0.0 && keep_fraction <= 1.0, "keep_fraction must lie in (0,1]");
  check_config(min_kept >= 1, "min_kept must be >= 1");
  check_config(beta2 > 0.0, "beta2 must be positive");
  check_config(alpha_s >= 0.0 && alpha_s <= 1.0, "alpha_s must lie in [0,1]");
  check_config(learning_rate >= 0.0, "learning_rate must be >= 0");
  check_config(epochs >= 1, "epochs must be >= 1");
  check_config(batch >= 1, "batch must be >= 1");
  check_config(image_size >= 0, "image_size must be >= 0");
  check_config(scene_count >= 1, "scene_count must be >= 1");
  fusion_mode_parse(fusion_mode);  // throws on unknown mode
}

std::int64_t PipelineConfig::resolved_whole_types() const {
  if (whole_types > 0) return whole_types;
  return task == "smm" ? classes : 2;
}

int PipelineConfig::resolved_image_size() const {
  if (image_size > 0) return image_size;
  return task == "smm" ? 16 : 32;
}

FusionConfig PipelineConfig::fusion_config() const {
  FusionConfig f;
  f.part_types = capsule_types;
  f.whole_types = resolved_whole_types();
  f.routing_iters = routing_iters;
  f.lambda_schedule = lambda_schedule;
  f.share_params = share_params;
  f.vote_noise = vote_noise;
  f.merged_channels = channels;
  return f;
}

}  // namespace pwrf
