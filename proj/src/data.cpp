#include "pwrf/data.hpp"

#include <algorithm>
#include <cmath>

#include <json.hpp>

#include "pwrf/io.hpp"
#include "pwrf/rng.hpp"

namespace pwrf {

using nlohmann::json;

namespace {

struct ShapeSpec {
  int type = 0;  // 0 rectangle, 1 ellipse, 2 diamond
  int cls = 1;
  double cy = 0, cx = 0, ry = 2, rx = 2;
};

bool inside_shape(const ShapeSpec& s, std::int64_t y, std::int64_t x) {
  const double dy = (static_cast<double>(y) - s.cy) / s.ry;
  const double dx = (static_cast<double>(x) - s.cx) / s.rx;
  switch (s.type) {
    case 0: return std::fabs(dy) <= 1.0 && std::fabs(dx) <= 1.0;
    case 1: return dy * dy + dx * dx <= 1.0;
    default: return std::fabs(dy) + std::fabs(dx) <= 1.0;
  }
}

std::vector<double> rasterize(const ShapeSpec& s, std::int64_t H, std::int64_t W) {
  std::vector<double> m(static_cast<std::size_t>(H * W), 0.0);
  for (std::int64_t y = 0; y < H; ++y)
    for (std::int64_t x = 0; x < W; ++x)
      if (inside_shape(s, y, x)) m[static_cast<std::size_t>(y * W + x)] = 1.0;
  return m;
}

std::vector<double> boundary_of(const std::vector<double>& mask, std::int64_t H, std::int64_t W) {
  std::vector<double> b(mask.size(), 0.0);
  auto at = [&](std::int64_t y, std::int64_t x) {
    if (y < 0 || y >= H || x < 0 || x >= W) return 0.0;
    return mask[static_cast<std::size_t>(y * W + x)];
  };
  for (std::int64_t y = 0; y < H; ++y)
    for (std::int64_t x = 0; x < W; ++x)
      if (at(y, x) != 0.0 &&
          (at(y - 1, x) == 0.0 || at(y + 1, x) == 0.0 || at(y, x - 1) == 0.0 || at(y, x + 1) == 0.0))
        b[static_cast<std::size_t>(y * W + x)] = 1.0;
  return b;
}

// --- smm: three shapes, one per class, each identifiable in one modality ---

SyntheticScene render_smm(std::int64_t size, const std::vector<ShapeSpec>& shapes,
                          std::uint64_t noise_seed, const std::string& recipe) {
  const std::int64_t H = size, W = size;
  std::vector<double> labels(static_cast<std::size_t>(H * W), 0.0);
  std::vector<std::vector<double>> masks, bounds;
  for (const ShapeSpec& s : shapes) {
    auto m = rasterize(s, H, W);
    for (std::size_t i = 0; i < m.size(); ++i)
      if (m[i] != 0.0) labels[i] = static_cast<double>(s.cls);
    masks.push_back(m);
    bounds.push_back(boundary_of(m, H, W));
  }

  SyntheticScene scene;
  scene.modality_names = {"a", "b", "c"};
  scene.labels = Tensor::from_data({H, W}, labels);
  scene.recipe_json = recipe;

  Rng rng(noise_seed);
  for (int mod = 0; mod < 3; ++mod) {
    std::vector<double> data(static_cast<std::size_t>(H * W * 3), 0.0);
    // ch0: class-agnostic structure of every shape.
    for (std::size_t s = 0; s < masks.size(); ++s)
      for (std::int64_t i = 0; i < H * W; ++i) {
        if (bounds[s][static_cast<std::size_t>(i)] != 0.0)
          data[static_cast<std::size_t>(i * 3)] = 1.0;
        else if (masks[s][static_cast<std::size_t>(i)] != 0.0)
          data[static_cast<std::size_t>(i * 3)] = 0.6;
      }
    // ch1: identity cue, only for this modality's class.
    for (std::size_t s = 0; s < masks.size(); ++s)
      if (shapes[s].cls == mod + 1)
        for (std::int64_t i = 0; i < H * W; ++i)
          if (masks[s][static_cast<std::size_t>(i)] != 0.0)
            data[static_cast<std::size_t>(i * 3 + 1)] = 1.0;
    // ch2 plus mild per-channel noise.
    for (std::int64_t i = 0; i < H * W; ++i) {
      data[static_cast<std::size_t>(i * 3)] += rng.normal(0.0, 0.05);
      data[static_cast<std::size_t>(i * 3 + 1)] += rng.normal(0.0, 0.05);
      data[static_cast<std::size_t>(i * 3 + 2)] = rng.normal(0.0, 0.3);
    }
    scene.modalities.push_back(Tensor::from_data({H, W, 3}, std::move(data)));
  }
  return scene;
}

SyntheticScene make_smm_scene(std::int64_t size, std::uint64_t scene_seed) {
  Rng rng(scene_seed);
  std::vector<ShapeSpec> shapes;
  for (int cls = 1; cls <= 3; ++cls) {
    ShapeSpec s;
    s.type = static_cast<int>(rng.below(3));
    s.cls = cls;
    const double rmin = static_cast<double>(size) / 8.0;
    const double rmax = static_cast<double>(size) / 4.0;
    s.ry = rng.uniform(rmin, rmax);
    s.rx = rng.uniform(rmin, rmax);
    s.cy = rng.uniform(s.ry, static_cast<double>(size - 1) - s.ry);
    s.cx = rng.uniform(s.rx, static_cast<double>(size - 1) - s.rx);
    shapes.push_back(s);
  }
  const std::uint64_t noise_seed = rng.next_u64();

  json recipe;
  recipe["kind"] = "smm";
  recipe["size"] = size;
  recipe["noise_seed"] = noise_seed;
  json arr = json::array();
  for (const ShapeSpec& s : shapes)
    arr.push_back({{"type", s.type}, {"cls", s.cls}, {"cy", s.cy}, {"cx", s.cx},
                   {"ry", s.ry}, {"rx", s.rx}});
  recipe["shapes"] = arr;
  return render_smm(size, shapes, noise_seed, recipe.dump());
}

// --- vdt: one salient blob, per-modality corruption assignment ------------

SyntheticScene render_vdt(std::int64_t size, const ShapeSpec& blob,
                          const std::vector<int>& corruption, std::uint64_t noise_seed,
                          const std::vector<double>& occlusion_box, const std::string& recipe) {
  const std::int64_t H = size, W = size;
  auto mask = rasterize(blob, H, W);

  SyntheticScene scene;
  scene.modality_names = {"V", "D", "T"};
  scene.labels = Tensor::from_data({H, W, 1}, mask);
  scene.recipe_json = recipe;

  Rng rng(noise_seed);
  for (int mod = 0; mod < 3; ++mod) {
    std::vector<double> data(static_cast<std::size_t>(H * W), 0.0);
    for (std::int64_t y = 0; y < H; ++y)
      for (std::int64_t x = 0; x < W; ++x) {
        const double bg = 0.15 + 0.1 * static_cast<double>(x) / static_cast<double>(W - 1);
        const double v = mask[static_cast<std::size_t>(y * W + x)] != 0.0 ? 0.85 : bg;
        data[static_cast<std::size_t>(y * W + x)] = v;
      }
    switch (corruption[static_cast<std::size_t>(mod)]) {
      case 0:  // low contrast ("LI")
        for (std::int64_t y = 0; y < H; ++y)
          for (std::int64_t x = 0; x < W; ++x) {
            const double bg = 0.15 + 0.1 * static_cast<double>(x) / static_cast<double>(W - 1);
            auto& v = data[static_cast<std::size_t>(y * W + x)];
            v = bg + 0.18 * (v - bg);
          }
        break;
      case 1: {  // radiation dispersion ("RD"): coherent blob-shaped phantoms
        for (int b = 0; b < 3; ++b) {
          const double cy = rng.uniform(0.0, static_cast<double>(H - 1));
          const double cx = rng.uniform(0.0, static_cast<double>(W - 1));
          const double r = rng.uniform(static_cast<double>(H) / 8.0, static_cast<double>(H) / 5.0);
          const double amp = rng.uniform(0.5, 0.7);  // phantom at blob contrast
          for (std::int64_t y = 0; y < H; ++y)
            for (std::int64_t x = 0; x < W; ++x) {
              const double dy = static_cast<double>(y) - cy, dx = static_cast<double>(x) - cx;
              data[static_cast<std::size_t>(y * W + x)] +=
                  amp * std::exp(-(dy * dy + dx * dx) / (2.0 * r * r));
            }
        }
        for (auto& v : data) v += rng.normal(0.0, 0.08);
        break;
      }
      default: {  // occlusion ("II"): occluder intensity mimics the blob
        const double fill = rng.uniform(0.75, 0.95);
        for (std::int64_t y = static_cast<std::int64_t>(occlusion_box[0]);
             y < static_cast<std::int64_t>(occlusion_box[1]); ++y)
          for (std::int64_t x = static_cast<std::int64_t>(occlusion_box[2]);
               x < static_cast<std::int64_t>(occlusion_box[3]); ++x)
            if (y >= 0 && y < H && x >= 0 && x < W)
              data[static_cast<std::size_t>(y * W + x)] = fill;
        break;
      }
    }
    scene.modalities.push_back(Tensor::from_data({H, W, 1}, std::move(data)));
  }
  return scene;
}

SyntheticScene make_vdt_scene(std::int64_t size, std::uint64_t scene_seed) {
  Rng rng(scene_seed);
  ShapeSpec blob;
  blob.type = 1;
  blob.cls = 1;
  const double rmin = static_cast<double>(size) / 6.0;
  const double rmax = static_cast<double>(size) / 3.5;
  blob.ry = rng.uniform(rmin, rmax);
  blob.rx = rng.uniform(rmin, rmax);
  blob.cy = rng.uniform(blob.ry + 1.0, static_cast<double>(size - 2) - blob.ry);
  blob.cx = rng.uniform(blob.rx + 1.0, static_cast<double>(size - 2) - blob.rx);

  // Random assignment of {low-contrast, noise, occlusion} over {V,D,T}.
  auto perm64 = rng.permutation(3);
  std::vector<int> corruption(perm64.begin(), perm64.end());
  // Occlusion box over part of the blob.
  const double bh = rng.uniform(blob.ry * 0.6, blob.ry * 1.2);
  const double bw = rng.uniform(blob.rx * 0.6, blob.rx * 1.2);
  std::vector<double> box = {std::floor(blob.cy - bh), std::floor(blob.cy + bh * 0.2),
                             std::floor(blob.cx - bw), std::floor(blob.cx + bw * 0.2)};
  const std::uint64_t noise_seed = rng.next_u64();

  json recipe;
  recipe["kind"] = "vdt";
  recipe["size"] = size;
  recipe["noise_seed"] = noise_seed;
  recipe["blob"] = {{"type", blob.type}, {"cy", blob.cy}, {"cx", blob.cx},
                    {"ry", blob.ry}, {"rx", blob.rx}};
  recipe["corruption"] = corruption;
  recipe["occlusion_box"] = box;
  return render_vdt(size, blob, corruption, noise_seed, box, recipe.dump());
}

}  // namespace

std::vector<SyntheticScene> generate_dataset(const std::string& kind, int n, int size,
                                             std::uint64_t seed) {
  check_config(kind == "smm" || kind == "vdt", "dataset kind must be smm or vdt");
  check_config(n > 0, "dataset: n must be positive");
  check_config(size >= 8, "dataset: size must be >= 8");
  std::vector<SyntheticScene> scenes;
  scenes.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    const std::uint64_t s = hash_seed(seed, static_cast<std::uint64_t>(i));
    scenes.push_back(kind == "smm" ? make_smm_scene(size, s) : make_vdt_scene(size, s));
  }
  return scenes;
}

SyntheticScene scene_from_recipe(const std::string& recipe_json) {
  json j;
  try {
    j = json::parse(recipe_json);
  } catch (const std::exception& e) {
    fail("io", std::string("bad recipe JSON: ") + e.what());
  }
  const std::string kind = j.at("kind").get<std::string>();
  const auto size = j.at("size").get<std::int64_t>();
  const auto noise_seed = j.at("noise_seed").get<std::uint64_t>();
  if (kind == "smm") {
    std::vector<ShapeSpec> shapes;
    for (const auto& s : j.at("shapes")) {
      ShapeSpec sp;
      sp.type = s.at("type").get<int>();
      sp.cls = s.at("cls").get<int>();
      sp.cy = s.at("cy").get<double>();
      sp.cx = s.at("cx").get<double>();
      sp.ry = s.at("ry").get<double>();
      sp.rx = s.at("rx").get<double>();
      shapes.push_back(sp);
    }
    return render_smm(size, shapes, noise_seed, recipe_json);
  }
  check_contract(kind == "vdt", "recipe: unknown kind '" + kind + "'");
  ShapeSpec blob;
  blob.type = j.at("blob").at("type").get<int>();
  blob.cy = j.at("blob").at("cy").get<double>();
  blob.cx = j.at("blob").at("cx").get<double>();
  blob.ry = j.at("blob").at("ry").get<double>();
  blob.rx = j.at("blob").at("rx").get<double>();
  auto corruption = j.at("corruption").get<std::vector<int>>();
  auto box = j.at("occlusion_box").get<std::vector<double>>();
  return render_vdt(size, blob, corruption, noise_seed, box, recipe_json);
}

std::vector<int> modality_subset_indices(const std::vector<std::string>& names,
                                         const std::string& subset, int count) {
  std::vector<int> idx;
  if (subset.empty()) {
    check_config(count >= 1 && count <= static_cast<int>(names.size()),
                 "modality count exceeds scene modalities");
    for (int i = 0; i < count; ++i) idx.push_back(i);
  } else {
    for (char c : subset) {
      if (c == '+' || c == ',' || c == ' ') continue;
      int found = -1;
      for (std::size_t i = 0; i < names.size(); ++i)
        if (std::tolower(names[i][0]) == std::tolower(c)) found = static_cast<int>(i);
      check_config(found >= 0, std::string("unknown modality initial '") + c + "'");
      idx.push_back(found);
    }
    check_config(!idx.empty(), "empty modality subset");
  }
  return idx;
}

SyntheticScene select_modalities(const SyntheticScene& scene, const std::string& subset,
                                 int count) {
  const std::vector<int> idx = modality_subset_indices(scene.modality_names, subset, count);
  SyntheticScene out;
  out.labels = scene.labels;
  out.recipe_json = scene.recipe_json;
  for (int i : idx) {
    out.modalities.push_back(scene.modalities[static_cast<std::size_t>(i)]);
    out.modality_names.push_back(scene.modality_names[static_cast<std::size_t>(i)]);
  }
  return out;
}

void save_dataset(const std::filesystem::path& dir, const std::vector<SyntheticScene>& scenes,
                  const std::string& kind, int size, std::uint64_t seed) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  json manifest;
  manifest["kind"] = kind;
  manifest["n"] = scenes.size();
  manifest["size"] = size;
  manifest["seed"] = seed;
  manifest["modalities"] = scenes.empty() ? std::vector<std::string>{} : scenes[0].modality_names;
  io::write_file(dir / "dataset.json", manifest.dump(2) + "\n");
  char buf[32];
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    std::snprintf(buf, sizeof buf, "scene_%04zu", i);
    const fs::path sdir = dir / buf;
    fs::create_directories(sdir);
    const SyntheticScene& s = scenes[i];
    for (std::size_t m = 0; m < s.modalities.size(); ++m)
      io::save_tensor(sdir / ("mod_" + s.modality_names[m] + ".tns"), s.modalities[m]);
    io::save_tensor(sdir / "labels.tns", s.labels);
    io::write_file(sdir / "recipe.json", s.recipe_json + "\n");
  }
}

std::vector<SyntheticScene> load_dataset(const std::filesystem::path& dir, std::string* kind) {
  namespace fs = std::filesystem;
  json manifest;
  try {
    manifest = json::parse(io::read_file(dir / "dataset.json"));
  } catch (const std::exception& e) {
    fail("io", std::string("bad dataset manifest: ") + e.what());
  }
  if (kind) *kind = manifest.at("kind").get<std::string>();
  const auto n = manifest.at("n").get<std::size_t>();
  const auto names = manifest.at("modalities").get<std::vector<std::string>>();
  std::vector<SyntheticScene> scenes;
  char buf[32];
  for (std::size_t i = 0; i < n; ++i) {
    std::snprintf(buf, sizeof buf, "scene_%04zu", i);
    const fs::path sdir = dir / buf;
    SyntheticScene s;
    s.modality_names = names;
    for (const std::string& name : names)
      s.modalities.push_back(io::load_tensor(sdir / ("mod_" + name + ".tns")));
    s.labels = io::load_tensor(sdir / "labels.tns");
    std::string recipe = io::read_file(sdir / "recipe.json");
    while (!recipe.empty() && (recipe.back() == '\n' || recipe.back() == '\r')) recipe.pop_back();
    s.recipe_json = recipe;
    scenes.push_back(std::move(s));
  }
  return scenes;
}

}  // namespace pwrf
