// pwrf: reproducible driver for synthetic multi-modal fusion experiments.
// Subcommands: gen, train, eval, sweep, explain, gradcheck.

#include <cmath>
#include <filesystem>
#include <iostream>

#include <CLI11.hpp>
#include <json.hpp>

#include "pwrf/io.hpp"
#include "pwrf/ops.hpp"
#include "pwrf/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct ConfigCli {
  std::string config_path;
  // Optional overrides; only applied when the flag was passed.
  CLI::Option *task = nullptr, *seed = nullptr, *caps = nullptr, *iters = nullptr,
              *share = nullptr, *channels = nullptr, *classes = nullptr, *epochs = nullptr,
              *lr = nullptr, *batch = nullptr, *mode = nullptr, *mods = nullptr,
              *whole = nullptr, *size = nullptr, *scenes = nullptr, *keep = nullptr,
              *minkept = nullptr, *mcount = nullptr;
  std::string v_task, v_mode, v_mods;
  std::uint64_t v_seed = 0;
  std::int64_t v_caps = 8, v_channels = 64, v_classes = 4, v_whole = 0, v_minkept = 16;
  int v_iters = 3, v_epochs = 40, v_batch = 8, v_size = 0, v_scenes = 64, v_mcount = 3;
  double v_lr = 5e-3, v_keep = 0.7;
  bool v_share = true;

  void attach(CLI::App* app) {
    app->add_option("--config", config_path, "JSON config file");
    task = app->add_option("--task", v_task, "smm | vdt");
    seed = app->add_option("--seed", v_seed, "RNG seed (mandatory unless in config)");
    caps = app->add_option("--capsule-types", v_caps, "part-level capsule types T_p");
    whole = app->add_option("--whole-types", v_whole, "whole-level capsule types (0 = auto)");
    iters = app->add_option("--routing-iters", v_iters, "EM routing iterations");
    share = app->add_flag("--share-params,!--no-share-params", v_share,
                          "tie per-modality branch weights");
    channels = app->add_option("--channels", v_channels, "feature channels C");
    classes = app->add_option("--classes", v_classes, "segmentation classes K");
    epochs = app->add_option("--epochs", v_epochs, "training epochs");
    lr = app->add_option("--lr", v_lr, "learning rate");
    batch = app->add_option("--batch", v_batch, "minibatch size");
    mode = app->add_option("--fusion-mode", v_mode, "pwrf | addition | concatenation | qkv");
    mods = app->add_option("--modalities", v_mods, "modality subset by initials, e.g. VD");
    mcount = app->add_option("--modality-count", v_mcount, "modalities used (2 or 3)");
    size = app->add_option("--image-size", v_size, "scene size (0 = task default)");
    scenes = app->add_option("--scenes", v_scenes, "scene count for sweep-internal data");
    keep = app->add_option("--keep-fraction", v_keep, "OHEM keep fraction");
    minkept = app->add_option("--min-kept", v_minkept, "OHEM minimum kept pixels");
  }

  pwrf::PipelineConfig resolve() const {
    pwrf::PipelineConfig cfg;
    bool have_seed = false;
    if (!config_path.empty()) {
      cfg = pwrf::PipelineConfig::from_json_text(pwrf::io::read_file(config_path));
      have_seed = true;
    }
    if (*task) cfg.task = v_task;
    if (*seed) {
      cfg.seed = v_seed;
      have_seed = true;
    }
    if (*caps) cfg.capsule_types = v_caps;
    if (*whole) cfg.whole_types = v_whole;
    if (*iters) cfg.routing_iters = v_iters;
    if (*share) cfg.share_params = v_share;
    if (*channels) cfg.channels = v_channels;
    if (*classes) cfg.classes = v_classes;
    if (*epochs) cfg.epochs = v_epochs;
    if (*lr) cfg.learning_rate = v_lr;
    if (*batch) cfg.batch = v_batch;
    if (*mode) cfg.fusion_mode = v_mode;
    if (*mods) cfg.modalities = v_mods;
    if (*mcount) cfg.modality_count = v_mcount;
    if (*size) cfg.image_size = v_size;
    if (*scenes) cfg.scene_count = v_scenes;
    if (*keep) cfg.keep_fraction = v_keep;
    if (*minkept) cfg.min_kept = v_minkept;
    pwrf::check_config(have_seed, "seed is mandatory (--seed or config file)");
    cfg.validate();
    return cfg;
  }
};

std::vector<unsigned char> class_map_bytes(const pwrf::Tensor& classes) {
  std::vector<unsigned char> b(classes.values().size());
  for (std::size_t i = 0; i < b.size(); ++i)
    b[i] = static_cast<unsigned char>(classes.values()[i]);
  return b;
}

std::vector<unsigned char> saliency_bytes(const pwrf::Tensor& map) {
  std::vector<unsigned char> b(map.values().size());
  for (std::size_t i = 0; i < b.size(); ++i)
    b[i] = static_cast<unsigned char>(std::lround(255.0 * map.values()[i]));
  return b;
}

json default_palette(std::int64_t k) {
  static const int base[8][3] = {{0, 0, 0},       {230, 25, 75},  {60, 180, 75},
                                 {255, 225, 25},  {0, 130, 200},  {245, 130, 48},
                                 {145, 30, 180},  {70, 240, 240}};
  json palette = json::array();
  for (std::int64_t i = 0; i < k; ++i) {
    const int* c = base[i % 8];
    palette.push_back({c[0], c[1], c[2]});
  }
  return palette;
}

int cmd_gen(const std::string& kind, int n, int size, std::uint64_t seed, const std::string& out) {
  const int sz = size > 0 ? size : (kind == "smm" ? 16 : 32);
  auto scenes = pwrf::generate_dataset(kind, n, sz, seed);
  pwrf::save_dataset(out, scenes, kind, sz, seed);
  std::cout << "wrote " << scenes.size() << " " << kind << " scenes to " << out << "\n";
  return 0;
}

int cmd_train(const pwrf::PipelineConfig& cfg, const std::string& data_dir,
              const std::string& out_dir) {
  std::string kind;
  auto scenes = pwrf::load_dataset(data_dir, &kind);
  pwrf::check_config(kind == cfg.task, "dataset kind '" + kind + "' does not match task '" +
                                           cfg.task + "'");
  pwrf::ParamStore store(cfg.seed);
  pwrf::TrainResult res = pwrf::train_model(store, cfg, scenes);
  fs::create_directories(out_dir);
  pwrf::save_checkpoint(fs::path(out_dir) / "checkpoint", store, cfg);
  pwrf::io::write_file(fs::path(out_dir) / "train_log.csv", pwrf::train_log_csv(cfg, res));
  pwrf::io::write_file(fs::path(out_dir) / "config.json", cfg.to_json_text(2) + "\n");
  const auto& last = res.last();
  std::cout << "trained " << res.epochs_run << " epochs, final loss " << last.loss
            << (cfg.task == "smm" ? ", miou " : ", mae ") << last.metric << "\n";
  return 0;
}

int cmd_eval(const std::string& ckpt_dir, const std::string& data_dir, const std::string& out_dir,
             bool csv) {
  pwrf::PipelineConfig cfg;
  auto store = pwrf::load_checkpoint(ckpt_dir, &cfg);
  std::string kind;
  auto scenes = pwrf::load_dataset(data_dir, &kind);
  pwrf::check_config(kind == cfg.task, "dataset kind does not match checkpoint task");
  pwrf::ModelBundle mb(*store, cfg);
  fs::create_directories(out_dir);

  json report;
  report["task"] = cfg.task;
  json per_scene = json::array();
  std::string csv_text;
  char name[48];

  if (cfg.task == "smm") {
    csv_text = "scene,miou,accuracy\n";
    double miou_sum = 0.0, acc_sum = 0.0;
    for (std::size_t i = 0; i < scenes.size(); ++i) {
      auto ev = pwrf::eval_smm_scene(mb, scenes[i]);
      std::snprintf(name, sizeof name, "scene_%04zu", i);
      pwrf::io::save_pgm(fs::path(out_dir) / (std::string(name) + "_pred.pgm"),
                         ev.pred_classes.dim(0), ev.pred_classes.dim(1),
                         class_map_bytes(ev.pred_classes));
      json sidecar;
      sidecar["classes"] = cfg.classes;
      sidecar["palette"] = default_palette(cfg.classes);
      sidecar["pixel_values"] = "class id per byte";
      pwrf::io::write_file(fs::path(out_dir) / (std::string(name) + "_pred.json"),
                           sidecar.dump(2) + "\n");
      per_scene.push_back({{"scene", i}, {"miou", ev.miou.mean}, {"accuracy", ev.accuracy}});
      char row[96];
      std::snprintf(row, sizeof row, "%zu,%.17g,%.17g\n", i, ev.miou.mean, ev.accuracy);
      csv_text += row;
      miou_sum += ev.miou.mean;
      acc_sum += ev.accuracy;
    }
    report["aggregate"] = {{"miou", miou_sum / static_cast<double>(scenes.size())},
                           {"accuracy", acc_sum / static_cast<double>(scenes.size())}};
  } else {
    csv_text = "scene,mae,s_measure,f_adaptive,f_mean,e_adaptive,e_mean\n";
    double sums[6] = {0, 0, 0, 0, 0, 0};
    for (std::size_t i = 0; i < scenes.size(); ++i) {
      auto ev = pwrf::eval_vdt_scene(mb, scenes[i]);
      std::snprintf(name, sizeof name, "scene_%04zu", i);
      pwrf::io::save_pgm(fs::path(out_dir) / (std::string(name) + "_saliency.pgm"),
                         ev.final_map.dim(0), ev.final_map.dim(1), saliency_bytes(ev.final_map));
      per_scene.push_back({{"scene", i},
                           {"mae", ev.mae},
                           {"s_measure", ev.s},
                           {"f_adaptive", ev.f_adp},
                           {"f_mean", ev.f_mean},
                           {"e_adaptive", ev.e_adp},
                           {"e_mean", ev.e_mean}});
      char row[192];
      std::snprintf(row, sizeof row, "%zu,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n", i, ev.mae, ev.s,
                    ev.f_adp, ev.f_mean, ev.e_adp, ev.e_mean);
      csv_text += row;
      const double vals[6] = {ev.mae, ev.s, ev.f_adp, ev.f_mean, ev.e_adp, ev.e_mean};
      for (int k = 0; k < 6; ++k) sums[k] += vals[k];
    }
    const auto nn = static_cast<double>(scenes.size());
    report["aggregate"] = {{"mae", sums[0] / nn},       {"s_measure", sums[1] / nn},
                           {"f_adaptive", sums[2] / nn}, {"f_mean", sums[3] / nn},
                           {"e_adaptive", sums[4] / nn}, {"e_mean", sums[5] / nn}};
  }
  report["per_scene"] = per_scene;
  pwrf::io::write_file(fs::path(out_dir) / "report.json", report.dump(2) + "\n");
  if (csv) pwrf::io::write_file(fs::path(out_dir) / "report.csv", csv_text);
  std::cout << report["aggregate"].dump() << "\n";
  return 0;
}

int cmd_sweep(const pwrf::PipelineConfig& base, const std::string& axis, int repeats,
              const std::string& out_dir) {
  auto rows = pwrf::run_sweep(base, axis, repeats);
  fs::create_directories(out_dir);
  pwrf::io::write_file(fs::path(out_dir) / "sweep.csv", pwrf::sweep_csv(rows));
  std::cout << "wrote " << rows.size() << " rows to " << (fs::path(out_dir) / "sweep.csv").string()
            << "\n";
  return 0;
}

int cmd_explain(const std::string& ckpt_dir, const std::string& data_dir, int scene_idx, int stage,
                const std::string& position, const std::string& out_file,
                const std::string& gnuplot_file) {
  pwrf::PipelineConfig cfg;
  auto store = pwrf::load_checkpoint(ckpt_dir, &cfg);
  auto scenes = pwrf::load_dataset(data_dir);
  pwrf::check_config(scene_idx >= 0 && scene_idx < static_cast<int>(scenes.size()),
                     "scene index out of range");
  std::int64_t py = 0, px = 0;
  if (std::sscanf(position.c_str(), "%lld,%lld", reinterpret_cast<long long*>(&py),
                  reinterpret_cast<long long*>(&px)) != 2)
    pwrf::fail("config", "position must be 'y,x'");
  pwrf::ModelBundle mb(*store, cfg);
  std::string text =
      pwrf::explain_json(mb, scenes[static_cast<std::size_t>(scene_idx)], stage, py, px);
  pwrf::io::write_file(out_file, text);
  if (!gnuplot_file.empty())
    pwrf::io::write_file(gnuplot_file, pwrf::explain_gnuplot(text));
  std::cout << "wrote " << out_file << "\n";
  return 0;
}

int cmd_gradcheck(const pwrf::PipelineConfig& cfg, int size, double eps, int samples) {
  auto scenes = pwrf::generate_dataset(cfg.task, 1, size, cfg.seed);
  pwrf::ParamStore store(cfg.seed);
  pwrf::ModelBundle mb(store, cfg);
  mb.scene_loss(scenes[0], nullptr);  // materialize parameters
  auto f = [&]() { return mb.scene_loss(scenes[0], nullptr); };
  const double err = pwrf::grad_check(f, store.all(), eps, samples, cfg.seed);
  std::cout << "max relative error " << err << " over " << store.count() << " parameters\n";
  return err < 1e-3 ? 0 : 2;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"part-whole relational fusion driver"};
  app.require_subcommand(1);

  // gen
  auto* gen = app.add_subcommand("gen", "generate a synthetic dataset");
  std::string g_kind = "smm", g_out = "data";
  int g_n = 64, g_size = 0;
  std::uint64_t g_seed = 0;
  gen->add_option("--task,--kind", g_kind, "smm | vdt");
  gen->add_option("--n", g_n, "scene count");
  gen->add_option("--size", g_size, "image size (0 = task default)");
  gen->add_option("--seed", g_seed, "RNG seed")->required();
  gen->add_option("--out", g_out, "output directory");

  // train
  auto* train = app.add_subcommand("train", "train a model on a generated dataset");
  ConfigCli t_cfg;
  t_cfg.attach(train);
  std::string t_data, t_out;
  train->add_option("--data", t_data, "dataset directory")->required();
  train->add_option("--out", t_out, "output directory (default: config output_dir)");

  // eval
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on a dataset");
  std::string e_ckpt, e_data, e_out = "eval";
  bool e_csv = false;
  eval->add_option("--checkpoint", e_ckpt, "checkpoint directory")->required();
  eval->add_option("--data", e_data, "dataset directory")->required();
  eval->add_option("--out", e_out, "output directory");
  eval->add_flag("--csv", e_csv, "also write report.csv");

  // sweep
  auto* sweep = app.add_subcommand("sweep", "ablation sweep over one axis");
  ConfigCli s_cfg;
  s_cfg.attach(sweep);
  std::string s_axis = "capsule_types", s_out = "sweep";
  int s_repeats = 1;
  sweep->add_option("--axis", s_axis,
                    "capsule_types | share_params | fusion_mechanism | modalities");
  sweep->add_option("--repeats", s_repeats, "repeats per setting");
  sweep->add_option("--out", s_out, "output directory");

  // explain
  auto* explain = app.add_subcommand("explain", "export routing coefficients for one pixel");
  std::string x_ckpt, x_data, x_pos = "0,0", x_out = "explain.json", x_gnuplot;
  int x_scene = 0, x_stage = 1;
  explain->add_option("--checkpoint", x_ckpt, "checkpoint directory")->required();
  explain->add_option("--data", x_data, "dataset directory")->required();
  explain->add_option("--scene", x_scene, "scene index");
  explain->add_option("--stage", x_stage, "fused stage index");
  explain->add_option("--position", x_pos, "pixel as y,x");
  explain->add_option("--out", x_out, "output JSON file");
  explain->add_option("--gnuplot", x_gnuplot, "also write a gnuplot-ready table");

  // gradcheck
  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient oracle");
  ConfigCli c_cfg;
  c_cfg.attach(gradcheck);
  int c_size = 8, c_samples = 8;
  double c_eps = 1e-5;
  gradcheck->add_option("--size", c_size, "input size");
  gradcheck->add_option("--eps", c_eps, "central-difference step");
  gradcheck->add_option("--samples", c_samples, "components checked per parameter (-1 = all)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) return cmd_gen(g_kind, g_n, g_size, g_seed, g_out);
    if (train->parsed()) {
      auto cfg = t_cfg.resolve();
      return cmd_train(cfg, t_data, t_out.empty() ? cfg.output_dir : t_out);
    }
    if (eval->parsed()) return cmd_eval(e_ckpt, e_data, e_out, e_csv);
    if (sweep->parsed()) return cmd_sweep(s_cfg.resolve(), s_axis, s_repeats, s_out);
    if (explain->parsed())
      return cmd_explain(x_ckpt, x_data, x_scene, x_stage, x_pos, x_out, x_gnuplot);
    if (gradcheck->parsed()) {
      auto cfg = c_cfg.resolve();
      if (!*c_cfg.channels) cfg.channels = 16;  // gradcheck default stays small
      // Below 16px the stem pool would leave a 1x1 deepest stage, whose
      // instance norm is identically beta and parks ReLU on its kink.
      if (c_size < 16) cfg.vdt_stem_pool = false;
      return cmd_gradcheck(cfg, c_size, c_eps, c_samples);
    }
  } catch (const pwrf::Error& e) {
    std::cerr << "pwrf: error code=" << e.code() << " msg=\"" << e.what() << "\"\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "pwrf: error code=internal msg=\"" << e.what() << "\"\n";
    return 1;
  }
  return 0;
}
