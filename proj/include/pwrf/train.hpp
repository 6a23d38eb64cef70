#pragma once

#include <filesystem>
#include <functional>
#include <memory>
#include <optional>

#include "pwrf/config.hpp"
#include "pwrf/data.hpp"
#include "pwrf/metrics.hpp"
#include "pwrf/smm.hpp"
#include "pwrf/vdt.hpp"

namespace pwrf {

// Plain Adam (beta1 0.9, beta2 0.999, eps 1e-8); state keyed by parameter
// name, update order follows the store's name ordering.
class Adam {
 public:
  explicit Adam(double lr) : lr_(lr) {}
  void step(const std::vector<Parameter*>& params);

 private:
  double lr_;
  std::int64_t t_ = 0;
  std::map<std::string, std::pair<std::vector<double>, std::vector<double>>> state_;
};

// Task dispatch built from one config over one parameter store.
struct ModelBundle {
  ModelBundle(ParamStore& store, const PipelineConfig& cfg);
  const PipelineConfig& cfg() const { return cfg_; }

  Tensor smm_logits(const SyntheticScene& scene, SmmTrace* trace = nullptr) const;
  SaliencyPrediction vdt_predict(const SyntheticScene& scene, VdtTrace* trace = nullptr) const;
  // Forward + loss; fills per-scene train metrics if accumulators are given.
  Tensor scene_loss(const SyntheticScene& scene, struct MetricAccum* acc) const;

  PipelineConfig cfg_;
  std::unique_ptr<SmmModel> smm;
  std::unique_ptr<VdtModel> vdt;
};

// Dataset-level train metrics gathered during an epoch.
struct MetricAccum {
  // smm: joint confusion counts
  std::vector<double> tp, fp, fn;
  // vdt: per-scene sums
  double mae_sum = 0.0, s_sum = 0.0;
  int scenes = 0;
  double miou(std::int64_t classes) const;
};

struct EpochRow {
  int epoch = 0;
  double loss = 0.0;
  double metric = 0.0;   // smm: mIoU; vdt: MAE
  double metric2 = 0.0;  // smm: accuracy stand-in (mIoU of argmax? see impl); vdt: S-measure
};

struct TrainResult {
  std::vector<EpochRow> log;
  int epochs_run = 0;
  const EpochRow& last() const { return log.back(); }
};

using StopPredicate = std::function<bool(const EpochRow&)>;

// Deterministic full-batch/minibatch training. Scenes are filtered to the
// configured modality subset internally.
TrainResult train_model(ParamStore& store, const PipelineConfig& cfg,
                        const std::vector<SyntheticScene>& scenes,
                        const StopPredicate& stop = nullptr);

std::string train_log_csv(const PipelineConfig& cfg, const TrainResult& result);

// Checkpoints: one tensor dump per parameter plus a JSON manifest.
void save_checkpoint(const std::filesystem::path& dir, ParamStore& store,
                     const PipelineConfig& cfg);
std::unique_ptr<ParamStore> load_checkpoint(const std::filesystem::path& dir,
                                            PipelineConfig* cfg_out);

// Per-scene evaluation.
struct SmmEval {
  metrics::Miou miou;
  double accuracy = 0.0;
  Tensor pred_classes;  // (H,W)
};
SmmEval eval_smm_scene(const ModelBundle& mb, const SyntheticScene& scene);

struct VdtEval {
  double mae = 0.0, s = 0.0, f_adp = 0.0, f_mean = 0.0, e_adp = 0.0, e_mean = 0.0;
  Tensor final_map;  // (H,W)
};
VdtEval eval_vdt_scene(const ModelBundle& mb, const SyntheticScene& scene);

// Ablation sweeps (axes mirror the capsule-type / sharing / fusion-mechanism
// / modality-subset studies). One row per setting x repeat.
struct SweepRow {
  std::string axis, setting;
  std::uint64_t seed = 0;
  double loss = 0.0, metric = 0.0, metric2 = 0.0;
  int epochs = 0;
};
std::vector<SweepRow> run_sweep(const PipelineConfig& base, const std::string& axis, int repeats);
std::string sweep_csv(const std::vector<SweepRow>& rows);

// Routing-coefficient export for one pixel, both axes, raw simplex plus
// per-modality split blocks. stage indexes the model's fused stages.
std::string explain_json(const ModelBundle& mb, const SyntheticScene& scene, int stage,
                         std::int64_t py, std::int64_t px);
std::string explain_gnuplot(const std::string& explain_json_text);

}  // namespace pwrf
