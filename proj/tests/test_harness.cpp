#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <thread>

#include <json.hpp>

#include "pwrf/io.hpp"
#include "pwrf/ops.hpp"
#include "pwrf/train.hpp"
#include "test_util.hpp"

using namespace pwrf;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

fs::path temp_dir(const std::string& name) {
  fs::path p = fs::temp_directory_path() / ("pwrf_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::vector<unsigned char> slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  REQUIRE(f.good());
  return std::vector<unsigned char>((std::istreambuf_iterator<char>(f)),
                                    std::istreambuf_iterator<char>());
}

PipelineConfig tiny_smm(std::uint64_t seed) {
  PipelineConfig cfg;
  cfg.task = "smm";
  cfg.seed = seed;
  cfg.channels = 8;
  cfg.capsule_types = 2;
  cfg.epochs = 2;
  cfg.batch = 4;
  cfg.image_size = 12;
  cfg.scene_count = 4;
  return cfg;
}

}  // namespace

TEST_CASE("config: defaults, seed requirement, validation, round trip") {
  CHECK_THROWS_AS(PipelineConfig::from_json_text("{}"), Error);
  CHECK_THROWS_AS(PipelineConfig::from_json_text("not json"), Error);
  CHECK_THROWS_AS(PipelineConfig::from_json_text(R"({"seed":1,"task":"nope"})"), Error);
  CHECK_THROWS_AS(PipelineConfig::from_json_text(R"({"seed":1,"keep_fraction":0})"), Error);
  CHECK_THROWS_AS(PipelineConfig::from_json_text(R"({"seed":1,"fusion_mode":"magic"})"), Error);

  PipelineConfig c = PipelineConfig::from_json_text(R"({"seed": 7})");
  CHECK(c.task == "smm");
  CHECK(c.capsule_types == 8);
  CHECK(c.channels == 64);
  CHECK(c.keep_fraction == 0.7);
  CHECK(c.resolved_whole_types() == 4);   // smm: the class count
  CHECK(c.resolved_image_size() == 16);
  c.task = "vdt";
  CHECK(c.resolved_whole_types() == 2);
  CHECK(c.resolved_image_size() == 32);

  PipelineConfig back = PipelineConfig::from_json_text(c.to_json_text());
  CHECK(back.task == "vdt");
  CHECK(back.seed == 7);
  CHECK(back.lambda_schedule == std::vector<double>{1.0, 2.0, 3.0});
}

TEST_CASE("generate_dataset: determinism, contracts, recipe replay") {
  CHECK_THROWS_AS(generate_dataset("smm", 0, 16, 1), Error);
  CHECK_THROWS_AS(generate_dataset("smm", 4, 4, 1), Error);
  CHECK_THROWS_AS(generate_dataset("wat", 4, 16, 1), Error);

  auto a = generate_dataset("smm", 3, 16, 99);
  auto b = generate_dataset("smm", 3, 16, 99);
  REQUIRE(a.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(testutil::bit_equal(a[i].labels.values(), b[i].labels.values()));
    for (std::size_t m = 0; m < 3; ++m)
      CHECK(testutil::bit_equal(a[i].modalities[m].values(), b[i].modalities[m].values()));
    CHECK(a[i].recipe_json == b[i].recipe_json);

    // recipe replay reproduces the scene bit for bit
    SyntheticScene r = scene_from_recipe(a[i].recipe_json);
    CHECK(testutil::bit_equal(r.labels.values(), a[i].labels.values()));
    for (std::size_t m = 0; m < 3; ++m)
      CHECK(testutil::bit_equal(r.modalities[m].values(), a[i].modalities[m].values()));
  }

  auto v = generate_dataset("vdt", 2, 16, 41);
  for (const auto& s : v) {
    CHECK(s.labels.shape() == Shape{16, 16, 1});
    for (double x : s.labels.values()) CHECK((x == 0.0 || x == 1.0));
    SyntheticScene r = scene_from_recipe(s.recipe_json);
    for (std::size_t m = 0; m < 3; ++m)
      CHECK(testutil::bit_equal(r.modalities[m].values(), s.modalities[m].values()));
  }
}

TEST_CASE("smm labels agree with an independent rasterizer of the recipe") {
  auto scenes = generate_dataset("smm", 4, 16, 123);
  for (const auto& s : scenes) {
    json recipe = json::parse(s.recipe_json);
    const auto size = recipe.at("size").get<std::int64_t>();
    std::vector<double> labels(static_cast<std::size_t>(size * size), 0.0);
    for (const auto& sh : recipe.at("shapes")) {
      const int type = sh.at("type").get<int>();
      const double cy = sh.at("cy").get<double>(), cx = sh.at("cx").get<double>();
      const double ry = sh.at("ry").get<double>(), rx = sh.at("rx").get<double>();
      const double cls = sh.at("cls").get<int>();
      for (std::int64_t y = 0; y < size; ++y)
        for (std::int64_t x = 0; x < size; ++x) {
          const double dy = (static_cast<double>(y) - cy) / ry;
          const double dx = (static_cast<double>(x) - cx) / rx;
          bool inside = false;
          if (type == 0) inside = std::fabs(dy) <= 1.0 && std::fabs(dx) <= 1.0;
          else if (type == 1) inside = dy * dy + dx * dx <= 1.0;
          else inside = std::fabs(dy) + std::fabs(dx) <= 1.0;
          if (inside) labels[static_cast<std::size_t>(y * size + x)] = cls;
        }
    }
    CHECK(labels == s.labels.values());
  }
}

TEST_CASE("modality subset selection") {
  auto scenes = generate_dataset("vdt", 1, 16, 7);
  SyntheticScene two = select_modalities(scenes[0], "VT", 3);
  REQUIRE(two.modalities.size() == 2);
  CHECK(two.modality_names == std::vector<std::string>{"V", "T"});
  SyntheticScene first2 = select_modalities(scenes[0], "", 2);
  CHECK(first2.modality_names == std::vector<std::string>{"V", "D"});
  CHECK_THROWS_AS(select_modalities(scenes[0], "VX", 3), Error);
}

TEST_CASE("dataset save/load round trip") {
  auto dir = temp_dir("dataset");
  auto scenes = generate_dataset("smm", 2, 12, 5);
  save_dataset(dir, scenes, "smm", 12, 5);
  std::string kind;
  auto back = load_dataset(dir, &kind);
  CHECK(kind == "smm");
  REQUIRE(back.size() == 2);
  for (std::size_t i = 0; i < 2; ++i) {
    CHECK(testutil::bit_equal(back[i].labels.values(), scenes[i].labels.values()));
    for (std::size_t m = 0; m < 3; ++m)
      CHECK(testutil::bit_equal(back[i].modalities[m].values(), scenes[i].modalities[m].values()));
    CHECK(back[i].recipe_json == scenes[i].recipe_json);
  }
}

TEST_CASE("zero learning rate keeps the loss constant across epochs") {
  PipelineConfig cfg = tiny_smm(11);
  cfg.learning_rate = 0.0;
  cfg.epochs = 3;
  auto scenes = generate_dataset("smm", 4, 12, 11);
  ParamStore store(cfg.seed);
  TrainResult res = train_model(store, cfg, scenes);
  REQUIRE(res.log.size() == 3);
  CHECK(res.log[0].loss == res.log[1].loss);
  CHECK(res.log[1].loss == res.log[2].loss);
}

TEST_CASE("checkpoint round trip reproduces logits bit-exactly") {
  PipelineConfig cfg = tiny_smm(21);
  auto scenes = generate_dataset("smm", 4, 12, 21);
  ParamStore store(cfg.seed);
  train_model(store, cfg, scenes);
  ModelBundle mb(store, cfg);
  Tensor logits = mb.smm_logits(scenes[0]);

  auto dir = temp_dir("ckpt");
  save_checkpoint(dir, store, cfg);
  PipelineConfig cfg2;
  auto store2 = load_checkpoint(dir, &cfg2);
  CHECK(cfg2.seed == cfg.seed);
  ModelBundle mb2(*store2, cfg2);
  Tensor logits2 = mb2.smm_logits(scenes[0]);
  CHECK(testutil::bit_equal(logits.values(), logits2.values()));
}

TEST_CASE("training twice under one config is byte-identical") {
  PipelineConfig cfg = tiny_smm(31);
  auto scenes = generate_dataset("smm", cfg.scene_count, cfg.image_size, cfg.seed);
  auto run = [&](const fs::path& dir) {
    ParamStore store(cfg.seed);
    TrainResult res = train_model(store, cfg, scenes);
    save_checkpoint(dir, store, cfg);
    io::write_file(dir / "train_log.csv", train_log_csv(cfg, res));
  };
  auto d1 = temp_dir("det1");
  auto d2 = temp_dir("det2");
  run(d1);
  run(d2);

  // every file byte-identical, including the parameter dumps
  std::vector<fs::path> rel;
  for (const auto& e : fs::recursive_directory_iterator(d1))
    if (e.is_regular_file()) rel.push_back(fs::relative(e.path(), d1));
  REQUIRE(rel.size() > 3);
  for (const auto& r : rel) CHECK(slurp(d1 / r) == slurp(d2 / r));
}

TEST_CASE("single-modality probes trail the fused pipeline") {
  const int n = 8, size = 16;
  auto scenes = generate_dataset("smm", n, size, 77);

  // fused run
  PipelineConfig cfg = tiny_smm(77);
  cfg.channels = 16;
  cfg.epochs = 30;
  cfg.scene_count = n;
  cfg.image_size = size;
  cfg.learning_rate = 5e-3;
  ParamStore store(cfg.seed);
  TrainResult res = train_model(store, cfg, scenes);
  const double fused_acc = res.last().metric2;

  // per-modality linear probe on raw pixels, full-batch Adam
  for (int m = 0; m < 3; ++m) {
    const std::int64_t rows = n * size * size;
    std::vector<double> xs, ys;
    xs.reserve(static_cast<std::size_t>(rows * 3));
    for (const auto& s : scenes) {
      const auto& mv = s.modalities[static_cast<std::size_t>(m)].values();
      xs.insert(xs.end(), mv.begin(), mv.end());
      const auto& lv = s.labels.values();
      ys.insert(ys.end(), lv.begin(), lv.end());
    }
    Tensor X = Tensor::from_data({rows, 1, 3}, xs);
    Tensor Y = Tensor::from_data({rows, 1}, ys);
    ParamStore ps(900 + static_cast<std::uint64_t>(m));
    Tensor W = ps.get("w", {3, 4}, Init::xavier(3, 4));
    Tensor B = ps.get("b", {4}, Init::zeros());
    Adam adam(0.05);
    for (int step = 0; step < 200; ++step) {
      ps.zero_grads();
      Tensor loss = ops::mean_all(ops::cross_entropy_map(ops::linear_last(X, W, B), Y));
      loss.backward();
      adam.step(ps.all());
    }
    Tensor logits = ops::linear_last(X, W, B);
    double hit = 0;
    for (std::int64_t r = 0; r < rows; ++r) {
      int best = 0;
      for (int k = 1; k < 4; ++k)
        if (logits.at({r, 0, k}) > logits.at({r, 0, best})) best = k;
      if (static_cast<double>(best) == ys[static_cast<std::size_t>(r)]) hit += 1;
    }
    const double probe_acc = hit / static_cast<double>(rows);
    CHECK(probe_acc < fused_acc);
  }
}

TEST_CASE("sweep emits settings x repeats rows") {
  PipelineConfig cfg = tiny_smm(41);
  auto rows = run_sweep(cfg, "share_params", 2);
  CHECK(rows.size() == 4);  // 2 settings x 2 repeats
  auto csv = sweep_csv(rows);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 5);  // header + rows
  CHECK_THROWS_AS(run_sweep(cfg, "bogus_axis", 1), Error);

  auto mod_rows = run_sweep(tiny_smm(42), "modalities", 1);
  CHECK(mod_rows.size() == 4);  // a+b, a+c, b+c, a+b+c
  CHECK(mod_rows.back().setting == "a+b+c");
}

TEST_CASE("explain export: simplex rows, split reassembly, stage contract") {
  PipelineConfig cfg = tiny_smm(51);
  auto scenes = generate_dataset("smm", 2, 12, 51);
  ParamStore store(cfg.seed);
  train_model(store, cfg, scenes);
  ModelBundle mb(store, cfg);

  const std::string text = explain_json(mb, scenes[0], 1, 2, 3);
  json j = json::parse(text);
  const auto tp = j.at("part_types").get<std::int64_t>();
  const auto tw = j.at("whole_types").get<std::int64_t>();
  const auto mods = j.at("modalities").get<std::vector<std::string>>();
  CHECK(tp == cfg.capsule_types);
  CHECK(mods.size() == 3);

  // simplex rows sum to one per (axis, part)
  for (const char* key : {"simplex_h", "simplex_v"}) {
    const auto& simplex = j.at(key);
    CHECK(simplex.size() == static_cast<std::size_t>(tp * 3));
    for (const auto& row : simplex) {
      double s = 0;
      for (const auto& v : row) s += v.get<double>();
      CHECK(s == doctest::Approx(1.0).epsilon(1e-6));
    }
  }

  // rows reassemble the raw simplex exactly, modality block by block
  const auto& rows = j.at("rows");
  CHECK(rows.size() == static_cast<std::size_t>(2 * tp * 3 * tw));
  for (const auto& row : rows) {
    const std::string axis = row[1].get<std::string>();
    const auto part = row[3].get<std::int64_t>();
    const std::string mod = row[4].get<std::string>();
    const auto whole = row[5].get<std::int64_t>();
    const double value = row[6].get<double>();
    std::int64_t mi = 0;
    while (mods[static_cast<std::size_t>(mi)] != mod) ++mi;
    const auto& simplex = axis == "horizontal" ? j.at("simplex_h") : j.at("simplex_v");
    CHECK(simplex[static_cast<std::size_t>(mi * tp + part)][static_cast<std::size_t>(whole)]
              .get<double>() == value);
  }

  // splits hold the mean over whole types of each modality block
  for (const char* key : {"splits_h", "splits_v"}) {
    const auto& splits = j.at(key);
    const auto& simplex = j.at(key == std::string("splits_h") ? "simplex_h" : "simplex_v");
    for (std::int64_t m = 0; m < 3; ++m)
      for (std::int64_t t = 0; t < tp; ++t) {
        double mean = 0;
        for (std::int64_t w = 0; w < tw; ++w)
          mean += simplex[static_cast<std::size_t>(m * tp + t)][static_cast<std::size_t>(w)]
                      .get<double>();
        mean /= static_cast<double>(tw);
        CHECK(splits[static_cast<std::size_t>(m)][static_cast<std::size_t>(t)].get<double>() ==
              doctest::Approx(mean).epsilon(1e-12));
      }
  }

  // stage 0 is the bypass stage; out-of-range stages fail
  CHECK_THROWS_AS(explain_json(mb, scenes[0], 0, 0, 0), Error);
  CHECK_THROWS_AS(explain_json(mb, scenes[0], 7, 0, 0), Error);
  CHECK_THROWS_AS(explain_json(mb, scenes[0], 1, 99, 0), Error);

  const std::string table = explain_gnuplot(text);
  CHECK(table.rfind("# axis modality part_type whole_type value\n", 0) == 0);
}

TEST_CASE("committed golden files reproduce bit-exactly") {
  const fs::path golden(PWRF_GOLDEN_DIR);
  const bool update = std::getenv("PWRF_UPDATE_GOLDEN") != nullptr;

  auto scenes = generate_dataset("smm", 4, 12, 777);
  PipelineConfig cfg = tiny_smm(777);
  ParamStore store(cfg.seed);
  TrainResult res = train_model(store, cfg, scenes);
  ModelBundle mb(store, cfg);
  Tensor logits = mb.smm_logits(scenes[0]);
  const std::string log_csv = train_log_csv(cfg, res);

  if (update) {
    fs::create_directories(golden);
    io::save_tensor(golden / "scene_mod_a.tns", scenes[0].modalities[0]);
    io::save_tensor(golden / "logits.tns", logits);
    io::write_file(golden / "train_log.csv", log_csv);
    MESSAGE("golden files regenerated");
    return;
  }

  REQUIRE_MESSAGE(fs::exists(golden / "logits.tns"),
                  "golden files missing; regenerate with PWRF_UPDATE_GOLDEN=1");
  Tensor g_scene = io::load_tensor(golden / "scene_mod_a.tns");
  CHECK(testutil::bit_equal(g_scene.values(), scenes[0].modalities[0].values()));
  Tensor g_logits = io::load_tensor(golden / "logits.tns");
  CHECK(testutil::bit_equal(g_logits.values(), logits.values()));
  CHECK(io::read_file(golden / "train_log.csv") == log_csv);
}

TEST_CASE("cli surfaces machine-parsable errors and nonzero exits") {
  const fs::path out = temp_dir("cli") / "err.txt";
  const std::string cli = PWRF_CLI_PATH;
  const int rc = std::system(
      (cli + " train --data /nonexistent-dir --seed 1 2> " + out.string()).c_str());
  CHECK(rc != 0);
  const std::string err = io::read_file(out);
  CHECK(err.rfind("pwrf: error code=", 0) == 0);
  CHECK(std::count(err.begin(), err.end(), '\n') == 1);
}

TEST_CASE("cli gen/train/eval/explain round trip writes the documented artifacts") {
  const fs::path root = temp_dir("cli_e2e");
  const std::string cli = PWRF_CLI_PATH;
  const std::string common = " > /dev/null 2>&1";
  auto run = [&](const std::string& args) {
    return std::system((cli + " " + args + common).c_str());
  };
  const std::string data = (root / "data").string();
  const std::string out = (root / "run").string();
  const std::string ev = (root / "eval").string();
  CHECK(run("gen --task smm --n 2 --size 12 --seed 5 --out " + data) == 0);
  CHECK(run("train --data " + data + " --seed 5 --epochs 2 --channels 8 --capsule-types 2 --out " +
            out) == 0);
  CHECK(run("eval --checkpoint " + out + "/checkpoint --data " + data + " --out " + ev +
            " --csv") == 0);
  CHECK(fs::exists(fs::path(out) / "train_log.csv"));
  CHECK(fs::exists(fs::path(out) / "checkpoint" / "manifest.json"));
  CHECK(fs::exists(fs::path(ev) / "report.json"));
  CHECK(fs::exists(fs::path(ev) / "report.csv"));
  CHECK(fs::exists(fs::path(ev) / "scene_0000_pred.json"));  // palette sidecar

  // class-id map is a binary P5 with one byte per pixel
  const auto pgm = slurp(fs::path(ev) / "scene_0000_pred.pgm");
  const std::string header(pgm.begin(), pgm.begin() + 13);
  CHECK(header == "P5\n12 12\n255\n");
  CHECK(pgm.size() == 13 + 144);
  for (std::size_t i = 13; i < pgm.size(); ++i) CHECK(pgm[i] < 4);

  CHECK(run("explain --checkpoint " + out + "/checkpoint --data " + data +
            " --scene 0 --stage 1 --position 2,3 --out " + (root / "x.json").string() +
            " --gnuplot " + (root / "x.dat").string()) == 0);
  CHECK(fs::exists(root / "x.json"));
  CHECK(fs::exists(root / "x.dat"));
}

TEST_CASE("independent model instances run on separate threads") {
  auto scenes = generate_dataset("smm", 2, 12, 61);
  PipelineConfig cfg = tiny_smm(61);
  auto forward = [&]() {
    ParamStore store(cfg.seed);
    ModelBundle mb(store, cfg);
    return mb.smm_logits(scenes[0]).values();
  };
  const auto serial = forward();
  std::vector<double> a, b;
  std::thread t1([&] { a = forward(); });
  std::thread t2([&] { b = forward(); });
  t1.join();
  t2.join();
  CHECK(testutil::bit_equal(a, serial));
  CHECK(testutil::bit_equal(b, serial));
}
