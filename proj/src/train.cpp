#include "pwrf/train.hpp"

#include <cmath>
#include <cstdio>

#include <json.hpp>

#include "pwrf/io.hpp"
#include "pwrf/ops.hpp"
#include "pwrf/rng.hpp"

namespace pwrf {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

void Adam::step(const std::vector<Parameter*>& params) {
  constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
  ++t_;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  for (Parameter* p : params) {
    auto& [m, v] = state_[p->name];
    auto& vals = p->tensor.mutable_values();
    const auto& g = p->tensor.grad();
    if (m.empty()) {
      m.assign(vals.size(), 0.0);
      v.assign(vals.size(), 0.0);
    }
    for (std::size_t i = 0; i < vals.size(); ++i) {
      m[i] = b1 * m[i] + (1.0 - b1) * g[i];
      v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
      vals[i] -= lr_ * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps);
    }
  }
}

// ---------------------------------------------------------------------------
// ModelBundle
// ---------------------------------------------------------------------------

namespace {

std::vector<std::string> task_modality_names(const std::string& task) {
  if (task == "smm") return {"a", "b", "c"};
  return {"V", "D", "T"};
}

Tensor argmax_classes(const Tensor& logits) {
  const std::int64_t H = logits.dim(0), W = logits.dim(1), K = logits.dim(2);
  std::vector<double> out(static_cast<std::size_t>(H * W));
  const double* p = logits.data();
  for (std::int64_t i = 0; i < H * W; ++i) {
    const double* row = p + i * K;
    std::int64_t best = 0;
    for (std::int64_t k = 1; k < K; ++k)
      if (row[k] > row[best]) best = k;
    out[static_cast<std::size_t>(i)] = static_cast<double>(best);
  }
  return Tensor::from_data({H, W}, std::move(out));
}

Tensor detach_2d(const Tensor& t) {
  // (H,W,1) or (H,W) -> plain (H,W) value copy off the tape.
  const std::int64_t H = t.dim(0), W = t.dim(1);
  return Tensor::from_data({H, W}, t.values());
}

}  // namespace

ModelBundle::ModelBundle(ParamStore& store, const PipelineConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  if (cfg_.task == "smm") {
    SmmConfig sc;
    sc.channels = cfg_.channels;
    sc.classes = cfg_.classes;
    sc.fusion = cfg_.fusion_config();
    sc.keep_fraction = cfg_.keep_fraction;
    sc.min_kept = cfg_.min_kept;
    sc.mode = cfg_.mode();
    smm = std::make_unique<SmmModel>(store, sc);
  } else {
    VdtConfig vc;
    vc.channels = cfg_.channels;
    vc.stages = 3;
    vc.fusion = cfg_.fusion_config();
    vc.mode = cfg_.mode();
    vc.two_sub_decoders = cfg_.vdt_two_sub_decoders;
    vc.stem_pool = cfg_.vdt_stem_pool;
    vc.edge_cues = cfg_.vdt_edge_cues;
    const auto names = task_modality_names(cfg_.task);
    const auto idx = modality_subset_indices(names, cfg_.modalities, cfg_.modality_count);
    vc.visible_index = vc.depth_index = -1;
    for (std::size_t i = 0; i < idx.size(); ++i) {
      if (names[static_cast<std::size_t>(idx[i])] == "V") vc.visible_index = static_cast<int>(i);
      if (names[static_cast<std::size_t>(idx[i])] == "D") vc.depth_index = static_cast<int>(i);
    }
    vdt = std::make_unique<VdtModel>(store, vc);
  }
}

Tensor ModelBundle::smm_logits(const SyntheticScene& scene, SmmTrace* trace) const {
  check_config(smm != nullptr, "smm_logits on a vdt bundle");
  SyntheticScene sel = select_modalities(scene, cfg_.modalities, cfg_.modality_count);
  return smm->forward(sel.modalities, trace);
}

SaliencyPrediction ModelBundle::vdt_predict(const SyntheticScene& scene, VdtTrace* trace) const {
  check_config(vdt != nullptr, "vdt_predict on an smm bundle");
  SyntheticScene sel = select_modalities(scene, cfg_.modalities, cfg_.modality_count);
  return vdt->forward(sel.modalities, trace);
}

double MetricAccum::miou(std::int64_t classes) const {
  double acc = 0.0;
  int present = 0;
  for (std::int64_t k = 0; k < classes; ++k) {
    const double denom = tp[static_cast<std::size_t>(k)] + fp[static_cast<std::size_t>(k)] +
                         fn[static_cast<std::size_t>(k)];
    if (denom == 0.0) continue;
    acc += tp[static_cast<std::size_t>(k)] / denom;
    ++present;
  }
  return present > 0 ? acc / static_cast<double>(present) : 0.0;
}

Tensor ModelBundle::scene_loss(const SyntheticScene& scene, MetricAccum* acc) const {
  if (smm) {
    Tensor logits = smm_logits(scene);
    Tensor loss = ohem_cross_entropy(logits, scene.labels, cfg_.keep_fraction, cfg_.min_kept);
    if (acc) {
      if (acc->tp.empty()) {
        acc->tp.assign(static_cast<std::size_t>(cfg_.classes), 0.0);
        acc->fp.assign(static_cast<std::size_t>(cfg_.classes), 0.0);
        acc->fn.assign(static_cast<std::size_t>(cfg_.classes), 0.0);
      }
      Tensor pred = argmax_classes(logits);
      const auto& p = pred.values();
      const auto& g = scene.labels.values();
      for (std::size_t i = 0; i < p.size(); ++i) {
        const auto pi = static_cast<std::size_t>(p[i]);
        const auto gi = static_cast<std::size_t>(g[i]);
        if (pi == gi) {
          acc->tp[pi] += 1.0;
        } else {
          acc->fp[pi] += 1.0;
          acc->fn[gi] += 1.0;
        }
      }
      ++acc->scenes;
    }
    return loss;
  }
  SaliencyPrediction pred = vdt_predict(scene);
  Tensor loss = saliency_loss(pred, scene.labels);
  if (acc) {
    auto pair = metrics::make_pair(detach_2d(pred.final), detach_2d(scene.labels));
    acc->mae_sum += metrics::mae(pair);
    acc->s_sum += metrics::s_measure(pair, cfg_.alpha_s);
    ++acc->scenes;
  }
  return loss;
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

TrainResult train_model(ParamStore& store, const PipelineConfig& cfg,
                        const std::vector<SyntheticScene>& scenes,
                        const StopPredicate& stop) {
  check_config(!scenes.empty(), "train: empty dataset");
  ModelBundle mb(store, cfg);
  Adam adam(cfg.learning_rate);
  Rng order_rng(hash_seed(cfg.seed, "epoch-order"));
  const auto n = static_cast<std::int64_t>(scenes.size());

  TrainResult result;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto perm = order_rng.permutation(n);
    // Per-scene losses summed in scene-index order, so the logged epoch loss
    // does not depend on the shuffle.
    std::vector<double> scene_losses(static_cast<std::size_t>(n), 0.0);
    MetricAccum acc;
    std::int64_t pos = 0;
    while (pos < n) {
      const std::int64_t bs = std::min<std::int64_t>(cfg.batch, n - pos);
      store.zero_grads();
      for (std::int64_t b = 0; b < bs; ++b) {
        const std::int64_t idx = perm[static_cast<std::size_t>(pos + b)];
        const auto& scene = scenes[static_cast<std::size_t>(idx)];
        Tensor loss;
        try {
          loss = mb.scene_loss(scene, &acc);
        } catch (const Error& e) {
          if (e.code() == "nonfinite")
            fail("diverged", "training diverged at epoch " + std::to_string(epoch) + ": " + e.what());
          throw;
        }
        scene_losses[static_cast<std::size_t>(idx)] = loss.item();
        ops::scale_shift(loss, 1.0 / static_cast<double>(bs), 0.0).backward();
      }
      adam.step(store.all());
      pos += bs;
    }
    double loss_sum = 0.0;
    for (double v : scene_losses) loss_sum += v;

    EpochRow row;
    row.epoch = epoch;
    row.loss = loss_sum / static_cast<double>(n);
    if (cfg.task == "smm") {
      row.metric = acc.miou(cfg.classes);
      double correct = 0.0, total = 0.0;
      for (std::size_t k = 0; k < acc.tp.size(); ++k) {
        correct += acc.tp[k];
        total += acc.tp[k] + acc.fp[k];
      }
      row.metric2 = total > 0.0 ? correct / total : 0.0;
    } else {
      row.metric = acc.mae_sum / static_cast<double>(acc.scenes);
      row.metric2 = acc.s_sum / static_cast<double>(acc.scenes);
    }
    result.log.push_back(row);
    result.epochs_run = epoch + 1;
    if (stop && stop(row)) break;
  }
  return result;
}

std::string train_log_csv(const PipelineConfig& cfg, const TrainResult& result) {
  std::string out = cfg.task == "smm" ? "epoch,loss,miou,accuracy\n" : "epoch,loss,mae,s_measure\n";
  char buf[160];
  for (const EpochRow& r : result.log) {
    std::snprintf(buf, sizeof buf, "%d,%.17g,%.17g,%.17g\n", r.epoch, r.loss, r.metric, r.metric2);
    out += buf;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

void save_checkpoint(const std::filesystem::path& dir, ParamStore& store,
                     const PipelineConfig& cfg) {
  namespace fs = std::filesystem;
  fs::create_directories(dir / "params");
  json manifest;
  manifest["format"] = "pwrf-checkpoint-v1";
  manifest["config"] = json::parse(cfg.to_json_text());
  json plist = json::array();
  char buf[32];
  int i = 0;
  for (Parameter* p : store.all()) {
    std::snprintf(buf, sizeof buf, "p%05d.tns", i++);
    io::save_tensor(dir / "params" / buf, p->tensor);
    plist.push_back({{"name", p->name}, {"file", std::string("params/") + buf},
                     {"shape", p->tensor.shape()}});
  }
  manifest["params"] = plist;
  io::write_file(dir / "manifest.json", manifest.dump(2) + "\n");
}

std::unique_ptr<ParamStore> load_checkpoint(const std::filesystem::path& dir,
                                            PipelineConfig* cfg_out) {
  json manifest;
  try {
    manifest = json::parse(io::read_file(dir / "manifest.json"));
  } catch (const std::exception& e) {
    fail("io", std::string("bad checkpoint manifest: ") + e.what());
  }
  check(manifest.value("format", "") == "pwrf-checkpoint-v1", "io",
        "unknown checkpoint format");
  PipelineConfig cfg = PipelineConfig::from_json_text(manifest.at("config").dump());
  if (cfg_out) *cfg_out = cfg;
  auto store = std::make_unique<ParamStore>(cfg.seed);
  for (const auto& entry : manifest.at("params")) {
    const auto name = entry.at("name").get<std::string>();
    const auto file = entry.at("file").get<std::string>();
    Tensor t = io::load_tensor(dir / file);
    check_shape(t.shape() == entry.at("shape").get<Shape>(),
                "checkpoint: shape mismatch for parameter '" + name + "'");
    store->put(name, std::move(t));
  }
  return store;
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

SmmEval eval_smm_scene(const ModelBundle& mb, const SyntheticScene& scene) {
  Tensor logits = mb.smm_logits(scene);
  SmmEval out;
  out.pred_classes = argmax_classes(logits);
  out.miou = metrics::miou(out.pred_classes, scene.labels, mb.cfg().classes);
  out.accuracy = metrics::accuracy(out.pred_classes, scene.labels);
  return out;
}

VdtEval eval_vdt_scene(const ModelBundle& mb, const SyntheticScene& scene) {
  SaliencyPrediction pred = mb.vdt_predict(scene);
  VdtEval out;
  out.final_map = detach_2d(pred.final);
  auto pair = metrics::make_pair(out.final_map, detach_2d(scene.labels));
  out.mae = metrics::mae(pair);
  out.s = metrics::s_measure(pair, mb.cfg().alpha_s);
  out.f_adp = metrics::f_measure(pair, mb.cfg().beta2, metrics::ThresholdMode::adaptive).value;
  out.f_mean = metrics::f_measure(pair, mb.cfg().beta2, metrics::ThresholdMode::mean).value;
  out.e_adp = metrics::e_measure(pair, metrics::ThresholdMode::adaptive);
  out.e_mean = metrics::e_measure(pair, metrics::ThresholdMode::mean);
  return out;
}

// ---------------------------------------------------------------------------
// Sweeps
// ---------------------------------------------------------------------------

namespace {
struct SweepSetting {
  std::string label;
  std::function<void(PipelineConfig&)> apply;
};
}  // namespace

std::vector<SweepRow> run_sweep(const PipelineConfig& base, const std::string& axis, int repeats) {
  check_config(repeats >= 1, "sweep: repeats must be >= 1");
  std::vector<SweepSetting> settings;
  if (axis == "capsule_types") {
    for (std::int64_t v : {4, 8, 16, 25})
      settings.push_back({std::to_string(v), [v](PipelineConfig& c) { c.capsule_types = v; }});
  } else if (axis == "share_params") {
    settings.push_back({"shared", [](PipelineConfig& c) { c.share_params = true; }});
    settings.push_back({"unshared", [](PipelineConfig& c) { c.share_params = false; }});
  } else if (axis == "fusion_mechanism") {
    for (const char* m : {"pwrf", "addition", "concatenation", "qkv"})
      settings.push_back({m, [m](PipelineConfig& c) { c.fusion_mode = m; }});
  } else if (axis == "modalities") {
    const auto names = task_modality_names(base.task);
    const int n = static_cast<int>(names.size());
    std::vector<std::vector<int>> subsets;
    for (int i = 0; i < n; ++i)
      for (int j = i + 1; j < n; ++j) subsets.push_back({i, j});
    subsets.push_back({});
    for (int i = 0; i < n; ++i) subsets.back().push_back(i);
    for (const auto& sub : subsets) {
      std::string label, letters;
      for (int i : sub) {
        if (!label.empty()) label += "+";
        label += names[static_cast<std::size_t>(i)];
        letters += names[static_cast<std::size_t>(i)][0];
      }
      settings.push_back({label, [letters, sub](PipelineConfig& c) {
                            c.modalities = letters;
                            c.modality_count = static_cast<int>(sub.size());
                          }});
    }
  } else {
    fail("config", "unknown sweep axis '" + axis + "'");
  }

  std::vector<SweepRow> rows;
  for (const SweepSetting& s : settings) {
    for (int r = 0; r < repeats; ++r) {
      const std::uint64_t seed_r = hash_seed(base.seed, static_cast<std::uint64_t>(r));
      auto scenes = generate_dataset(base.task, base.scene_count, base.resolved_image_size(), seed_r);
      PipelineConfig cfg = base;
      cfg.seed = seed_r;
      s.apply(cfg);
      ParamStore store(cfg.seed);
      TrainResult res = train_model(store, cfg, scenes);
      SweepRow row;
      row.axis = axis;
      row.setting = s.label;
      row.seed = seed_r;
      row.loss = res.last().loss;
      row.metric = res.last().metric;
      row.metric2 = res.last().metric2;
      row.epochs = res.epochs_run;
      rows.push_back(row);
    }
  }
  return rows;
}

std::string sweep_csv(const std::vector<SweepRow>& rows) {
  std::string out = "axis,setting,seed,epochs,loss,metric,metric2\n";
  char buf[224];
  for (const SweepRow& r : rows) {
    std::snprintf(buf, sizeof buf, "%s,%s,%llu,%d,%.17g,%.17g,%.17g\n", r.axis.c_str(),
                  r.setting.c_str(), static_cast<unsigned long long>(r.seed), r.epochs, r.loss,
                  r.metric, r.metric2);
    out += buf;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Explainability export
// ---------------------------------------------------------------------------

std::string explain_json(const ModelBundle& mb, const SyntheticScene& scene, int stage,
                         std::int64_t py, std::int64_t px) {
  check_config(mb.cfg().mode() == FusionMode::pwrf, "explain: requires pwrf fusion mode");
  FusionOutputs fo;
  if (mb.smm) {
    SmmTrace trace;
    mb.smm_logits(scene, &trace);
    check_contract(stage >= 0 && stage < static_cast<int>(trace.stages.size()),
                   "explain: stage out of range");
    check_contract(trace.stages[static_cast<std::size_t>(stage)].fusion.has_value(),
                   "explain: stage " + std::to_string(stage) + " has no capsule fusion (stage-1 bypass)");
    fo = *trace.stages[static_cast<std::size_t>(stage)].fusion;
  } else {
    VdtTrace trace;
    mb.vdt_predict(scene, &trace);
    check_contract(stage >= 0 && stage < static_cast<int>(trace.fusions.size()),
                   "explain: stage out of range");
    fo = trace.fusions[static_cast<std::size_t>(stage)];
  }

  const Tensor& rh = fo.routing_h.coefficients;  // (H, P, J)
  const Tensor& rv = fo.routing_v.coefficients;  // (W, P, J)
  const std::int64_t P = rh.dim(1), J = rh.dim(2);
  check_contract(py >= 0 && py < rh.dim(0), "explain: row position out of range");
  check_contract(px >= 0 && px < rv.dim(0), "explain: column position out of range");
  const auto n_mod = static_cast<std::int64_t>(fo.specifics.size());
  const std::int64_t tp = P / n_mod;

  SyntheticScene sel = select_modalities(scene, mb.cfg().modalities, mb.cfg().modality_count);

  json j;
  j["stage"] = stage;
  j["position"] = {py, px};
  j["part_types"] = tp;
  j["whole_types"] = J;
  j["modalities"] = sel.modality_names;
  j["columns"] = {"stage", "axis", "position", "part_type", "modality", "whole_type", "value"};
  json rows = json::array();
  json simplex_h = json::array(), simplex_v = json::array();
  for (std::int64_t p = 0; p < P; ++p) {
    json row_h = json::array(), row_v = json::array();
    for (std::int64_t w = 0; w < J; ++w) {
      const double vh = rh.at({py, p, w});
      const double vv = rv.at({px, p, w});
      rows.push_back({stage, "horizontal", py, p % tp, sel.modality_names[static_cast<std::size_t>(p / tp)], w, vh});
      rows.push_back({stage, "vertical", px, p % tp, sel.modality_names[static_cast<std::size_t>(p / tp)], w, vv});
      row_h.push_back(vh);
      row_v.push_back(vv);
    }
    simplex_h.push_back(row_h);
    simplex_v.push_back(row_v);
  }
  j["rows"] = rows;
  j["simplex_h"] = simplex_h;
  j["simplex_v"] = simplex_v;

  json splits_h = json::array(), splits_v = json::array();
  for (std::int64_t m = 0; m < n_mod; ++m) {
    json sh = json::array(), sv = json::array();
    for (std::int64_t t = 0; t < tp; ++t) {
      sh.push_back(fo.coefficients_h[static_cast<std::size_t>(m)].at({py, 0, t}));
      sv.push_back(fo.coefficients_v[static_cast<std::size_t>(m)].at({0, px, t}));
    }
    splits_h.push_back(sh);
    splits_v.push_back(sv);
  }
  j["splits_h"] = splits_h;
  j["splits_v"] = splits_v;
  return j.dump(2) + "\n";
}

std::string explain_gnuplot(const std::string& explain_json_text) {
  json j;
  try {
    j = json::parse(explain_json_text);
  } catch (const std::exception& e) {
    fail("io", std::string("explain_gnuplot: bad JSON: ") + e.what());
  }
  std::string out = "# axis modality part_type whole_type value\n";
  char buf[128];
  for (const auto& row : j.at("rows")) {
    std::snprintf(buf, sizeof buf, "%s %s %lld %lld %.17g\n",
                  row[1].get<std::string>().c_str(), row[4].get<std::string>().c_str(),
                  static_cast<long long>(row[3].get<std::int64_t>()),
                  static_cast<long long>(row[5].get<std::int64_t>()), row[6].get<double>());
    out += buf;
  }
  return out;
}

}  // namespace pwrf
