#include "mmnet/synth_data.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "json.hpp"
#include "mmnet/errors.hpp"
#include "mmnet/layers.hpp"
#include "mmnet/png_io.hpp"

namespace mmnet {

namespace {

constexpr std::array<const char*, 9> kPositions = {"top left",    "top",    "top right",
                                                   "left",        "center", "right",
                                                   "bottom left", "bottom", "bottom right"};

constexpr std::array<std::array<float, 3>, 4> kPalette = {{
    {0.90f, 0.15f, 0.15f},  // red
    {0.15f, 0.80f, 0.20f},  // green
    {0.15f, 0.30f, 0.95f},  // blue
    {0.95f, 0.90f, 0.15f},  // yellow
}};

constexpr float kBackground = 0.25f;
constexpr float kNoise = 0.04f;

template <typename E>
E pick(Rng& rng, int n) {
  return static_cast<E>(rng.uniform_int(0, n - 1));
}

template <typename E>
E pick_other(Rng& rng, int n, E avoid) {
  int v = rng.uniform_int(0, n - 2);
  if (v >= static_cast<int>(avoid)) ++v;
  return static_cast<E>(v);
}

void place(SceneObject& obj, int cell, int image_size, Rng& rng) {
  const double cell_px = image_size / 3.0;
  obj.cell = cell;
  obj.radius = obj.size == SizeClass::small ? cell_px * rng.uniform(0.20, 0.26) : cell_px * rng.uniform(0.36, 0.44);
  const double jitter = std::max(0.0, cell_px / 2 - obj.radius - 1.0);
  obj.cx = (cell % 3 + 0.5) * cell_px + rng.uniform(-jitter, jitter);
  obj.cy = (cell / 3 + 0.5) * cell_px + rng.uniform(-jitter, jitter);
}

template <typename E>
E parse_enum(const std::string& name, int n, const char* what) {
  for (int i = 0; i < n; ++i) {
    if (name == to_string(static_cast<E>(i))) return static_cast<E>(i);
  }
  throw InputError(std::string("unknown ") + what + " '" + name + "'");
}

std::string sample_name(int64_t id) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%06lld.png", static_cast<long long>(id));
  return buf;
}

}  // namespace

const char* to_string(ShapeKind s) {
  switch (s) {
    case ShapeKind::circle: return "circle";
    case ShapeKind::square: return "square";
    case ShapeKind::triangle: return "triangle";
  }
  return "?";
}

const char* to_string(Color c) {
  switch (c) {
    case Color::red: return "red";
    case Color::green: return "green";
    case Color::blue: return "blue";
    case Color::yellow: return "yellow";
  }
  return "?";
}

const char* to_string(SizeClass s) { return s == SizeClass::small ? "small" : "large"; }

const char* to_string(Template t) {
  switch (t) {
    case Template::color_shape: return "color_shape";
    case Template::size_color_shape: return "size_color_shape";
    case Template::shape_position: return "shape_position";
  }
  return "?";
}

const char* to_string(Split s) { return s == Split::train ? "train" : "val"; }

Split parse_split(const std::string& name) {
  if (name == "train") return Split::train;
  if (name == "val") return Split::val;
  throw ConfigError("unknown split '" + name + "' (expected train or val)");
}

const char* position_name(int cell) {
  if (cell < 0 || cell >= 9) throw ContractError("grid cell out of range");
  return kPositions[cell];
}

bool satisfies(const SceneObject& obj, Template expression, const SceneObject& target) {
  switch (expression) {
    case Template::color_shape: return obj.shape == target.shape && obj.color == target.color;
    case Template::size_color_shape:
      return obj.shape == target.shape && obj.color == target.color && obj.size == target.size;
    case Template::shape_position: return obj.shape == target.shape && obj.cell == target.cell;
  }
  return false;
}

int count_matches(const SceneSpec& scene) {
  const SceneObject& target = scene.objects.at(scene.target);
  return static_cast<int>(std::count_if(scene.objects.begin(), scene.objects.end(), [&](const SceneObject& o) {
    return satisfies(o, scene.expression, target);
  }));
}

std::string expression_text(const SceneSpec& scene) {
  const SceneObject& t = scene.objects.at(scene.target);
  switch (scene.expression) {
    case Template::color_shape: return std::string(to_string(t.color)) + " " + to_string(t.shape);
    case Template::size_color_shape:
      return std::string(to_string(t.size)) + " " + to_string(t.color) + " " + to_string(t.shape);
    case Template::shape_position: return std::string(to_string(t.shape)) + " on the " + position_name(t.cell);
  }
  return "";
}

bool shape_contains(const SceneObject& obj, double x, double y) {
  const double dx = x - obj.cx, dy = y - obj.cy, r = obj.radius;
  switch (obj.shape) {
    case ShapeKind::circle: return dx * dx + dy * dy <= r * r;
    case ShapeKind::square: return std::abs(dx) <= 0.85 * r && std::abs(dy) <= 0.85 * r;
    case ShapeKind::triangle:
      // Apex at (0, -r), base from (-r, 0.8r) to (r, 0.8r).
      return dy <= 0.8 * r && std::abs(dx) <= (dy + r) / 1.8;
  }
  return false;
}

std::vector<uint8_t> rasterize(const SceneObject& obj, int height, int width, int cell) {
  if (cell <= 0 || height % cell != 0 || width % cell != 0) {
    throw ShapeError("rasterize: lattice cell " + std::to_string(cell) + " does not divide " +
                     std::to_string(height) + "x" + std::to_string(width));
  }
  std::vector<uint8_t> mask(static_cast<size_t>(height) * width, 0);
  for (int by = 0; by < height / cell; ++by) {
    for (int bx = 0; bx < width / cell; ++bx) {
      if (!shape_contains(obj, bx * cell + cell / 2.0, by * cell + cell / 2.0)) continue;
      for (int y = by * cell; y < (by + 1) * cell; ++y) {
        std::fill_n(mask.begin() + static_cast<size_t>(y) * width + bx * cell, cell, uint8_t{1});
      }
    }
  }
  return mask;
}

SceneSpec sample_scene(uint64_t seed, const DataConfig& data, int image_size) {
  if (data.max_distractors + 1 > 9 || data.min_distractors < 0 || data.min_distractors > data.max_distractors) {
    throw ConfigError("the 3x3 grid cannot host " + std::to_string(data.max_distractors) + " distractors");
  }
  Rng rng(seed);
  SceneSpec scene;
  scene.seed = seed;
  scene.expression = pick<Template>(rng, 3);
  scene.distractors = rng.uniform_int(data.min_distractors, data.max_distractors);

  std::array<int, 9> cells = {0, 1, 2, 3, 4, 5, 6, 7, 8};
  for (int i = 8; i > 0; --i) std::swap(cells[i], cells[rng.uniform_int(0, i)]);

  SceneObject target;
  target.shape = pick<ShapeKind>(rng, 3);
  target.color = pick<Color>(rng, 4);
  target.size = pick<SizeClass>(rng, 2);
  place(target, cells[0], image_size, rng);
  scene.objects.push_back(target);

  // Distractors mostly share an attribute with the target so that the
  // expression, not a single salient word, decides the referent.
  for (int k = 0; k < scene.distractors; ++k) {
    SceneObject d;
    bool ok = false;
    for (int attempt = 0; attempt < 100 && !ok; ++attempt) {
      d = target;
      switch (rng.uniform_int(0, 3)) {
        case 0: d.color = pick_other(rng, 4, target.color); break;
        case 1: d.shape = pick_other(rng, 3, target.shape); break;
        case 2: d.size = pick_other(rng, 2, target.size); break;
        default:
          d.shape = pick<ShapeKind>(rng, 3);
          d.color = pick<Color>(rng, 4);
          break;
      }
      if (rng.uniform() < 0.5) d.size = pick<SizeClass>(rng, 2);
      d.cell = cells[k + 1];
      ok = !satisfies(d, scene.expression, target);
    }
    if (!ok) throw InternalError("could not draw an unambiguous distractor");
    place(d, cells[k + 1], image_size, rng);
    scene.objects.push_back(d);
  }
  if (count_matches(scene) != 1) throw InternalError("generated an ambiguous scene");
  return scene;
}

Sample render_scene(const SceneSpec& scene, const DataConfig& data, const ModelConfig& model,
                    const Vocabulary& vocab) {
  const int h = model.image_size, w = model.image_size;
  Sample s;
  s.height = h;
  s.width = w;
  s.scene = scene;
  s.text = expression_text(scene);
  s.tokens = vocab.encode(s.text, model.max_tokens);

  Rng noise(mix_seed(scene.seed ^ 0x6e6f697365ULL));
  s.image = Tensor<float>({h, w, 3});
  for (float& v : s.image.data) v = kBackground + static_cast<float>(noise.uniform(-kNoise, kNoise));
  for (size_t k = 0; k < scene.objects.size(); ++k) {
    const SceneObject& obj = scene.objects[k];
    std::vector<uint8_t> raster = rasterize(obj, h, w, data.raster_cell);
    const auto& rgb = kPalette[static_cast<int>(obj.color)];
    for (size_t p = 0; p < raster.size(); ++p) {
      if (!raster[p]) continue;
      for (int c = 0; c < 3; ++c) {
        float v = rgb[c] + static_cast<float>(noise.uniform(-kNoise, kNoise));
        s.image.data[p * 3 + c] = std::clamp(v, 0.0f, 1.0f);
      }
    }
    if (static_cast<int>(k) == scene.target) s.gt_mask = std::move(raster);
  }
  return s;
}

uint64_t sample_seed(uint64_t data_seed, Split split, int64_t index) {
  const uint64_t ns = split == Split::train ? 0x747261696eULL : 0x76616c6964ULL;
  return mix_seed(mix_seed(data_seed ^ ns) + static_cast<uint64_t>(index));
}

std::vector<Sample> generate(const DataConfig& data, const ModelConfig& model, Split split, int64_t begin,
                             int64_t count, const Vocabulary& vocab) {
  if (count < 1) throw ContractError("generate: count must be >= 1");
  data.validate(model);
  std::vector<Sample> out;
  out.reserve(static_cast<size_t>(count));
  for (int64_t i = begin; i < begin + count; ++i) {
    Sample s = render_scene(sample_scene(sample_seed(data.seed, split, i), data, model.image_size), data, model, vocab);
    s.id = i;
    s.split = split;
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<uint8_t> downsample_gt(const std::vector<uint8_t>& mask, int height, int width) {
  if (height % 4 != 0 || width % 4 != 0) {
    throw ShapeError("downsample_gt: " + std::to_string(height) + "x" + std::to_string(width) +
                     " is not divisible by 4");
  }
  if (mask.size() != static_cast<size_t>(height) * width) throw ShapeError("downsample_gt: mask size mismatch");
  const int lh = height / 4, lw = width / 4;
  std::vector<uint8_t> out(static_cast<size_t>(lh) * lw);
  for (int y = 0; y < lh; ++y) {
    for (int x = 0; x < lw; ++x) {
      int sum = 0;
      for (int dy = 0; dy < 4; ++dy) {
        for (int dx = 0; dx < 4; ++dx) sum += mask[static_cast<size_t>(4 * y + dy) * width + 4 * x + dx] != 0;
      }
      out[static_cast<size_t>(y) * lw + x] = sum >= 8 ? 1 : 0;  // mean >= 0.5
    }
  }
  return out;
}

Tensor<float> target_tensor(const Sample& s) {
  std::vector<uint8_t> low = downsample_gt(s.gt_mask, s.height, s.width);
  Tensor<float> t({s.height / 4, s.width / 4});
  for (size_t i = 0; i < low.size(); ++i) t.data[i] = low[i];
  return t;
}

SyntheticDataset::SyntheticDataset(DataConfig data, ModelConfig model, Split split, Vocabulary vocab)
    : data_(data), model_(model), split_(split), vocab_(std::move(vocab)),
      size_(split == Split::train ? data.train_size : data.val_size) {
  data_.validate(model_);
}

Sample SyntheticDataset::get(int64_t index) const {
  if (index < 0 || index >= size_) throw ContractError("dataset index out of range");
  return generate(data_, model_, split_, index, 1, vocab_).front();
}

std::unique_ptr<Dataset> make_dataset(const TrainConfig& cfg, Split split) {
  if (split == Split::val && cfg.data.val_is_train) {
    return std::make_unique<SyntheticDataset>(cfg.data, cfg.model, Split::train);
  }
  return std::make_unique<SyntheticDataset>(cfg.data, cfg.model, split);
}

void export_split(const std::string& dir, const Dataset& ds, Split split) {
  namespace fs = std::filesystem;
  const fs::path root = fs::path(dir) / to_string(split);
  fs::create_directories(root / "images");
  fs::create_directories(root / "masks");
  std::ofstream jsonl(root / "samples.jsonl");
  if (!jsonl) throw InputError("cannot write " + (root / "samples.jsonl").string());
  for (int64_t i = 0; i < ds.size(); ++i) {
    Sample s = ds.get(i);
    Image8 rgb{s.width, s.height, 3, std::vector<uint8_t>(s.image.data.size())};
    for (size_t k = 0; k < s.image.data.size(); ++k) {
      rgb.pixels[k] = static_cast<uint8_t>(std::lround(std::clamp(s.image.data[k], 0.0f, 1.0f) * 255.0f));
    }
    Image8 gray{s.width, s.height, 1, std::vector<uint8_t>(s.gt_mask.size())};
    for (size_t k = 0; k < s.gt_mask.size(); ++k) gray.pixels[k] = s.gt_mask[k] ? 255 : 0;
    const std::string name = sample_name(s.id);
    write_png((root / "images" / name).string(), rgb);
    write_png((root / "masks" / name).string(), gray);

    nlohmann::json objects = nlohmann::json::array();
    for (const SceneObject& o : s.scene.objects) {
      objects.push_back({{"shape", to_string(o.shape)}, {"color", to_string(o.color)}, {"size", to_string(o.size)},
                         {"cell", o.cell}, {"cx", o.cx}, {"cy", o.cy}, {"radius", o.radius}});
    }
    nlohmann::json line = {{"id", s.id},
                           {"text", s.text},
                           {"tokens", s.tokens},
                           {"image", "images/" + name},
                           {"mask", "masks/" + name},
                           {"scene",
                            {{"seed", s.scene.seed},
                             {"target", s.scene.target},
                             {"expression", to_string(s.scene.expression)},
                             {"distractors", s.scene.distractors},
                             {"objects", objects}}}};
    jsonl << line.dump() << '\n';
  }
}

std::vector<Sample> load_split(const std::string& dir, Split split, const Vocabulary& vocab, int max_tokens) {
  namespace fs = std::filesystem;
  const fs::path root = fs::path(dir) / to_string(split);
  std::ifstream in(root / "samples.jsonl");
  if (!in) throw InputError("cannot open " + (root / "samples.jsonl").string());
  std::vector<Sample> out;
  std::string text;
  int lineno = 0;
  while (std::getline(in, text)) {
    ++lineno;
    if (text.empty()) continue;
    try {
      nlohmann::json j = nlohmann::json::parse(text);
      Sample s;
      s.id = j.at("id").get<int64_t>();
      s.split = split;
      s.text = j.at("text").get<std::string>();
      s.tokens = j.at("tokens").get<std::vector<int>>();
      if (static_cast<int>(s.tokens.size()) != max_tokens) {
        throw InputError("expected " + std::to_string(max_tokens) + " tokens");
      }
      for (int t : s.tokens) {
        if (t < 0 || t >= vocab.size()) throw InputError("token id " + std::to_string(t) + " outside vocabulary");
      }
      Image8 rgb = read_png((root / j.at("image").get<std::string>()).string(), 3);
      Image8 gray = read_png((root / j.at("mask").get<std::string>()).string(), 1);
      if (rgb.width != gray.width || rgb.height != gray.height) throw InputError("image and mask sizes differ");
      s.width = rgb.width;
      s.height = rgb.height;
      s.image = Tensor<float>({s.height, s.width, 3});
      for (size_t k = 0; k < rgb.pixels.size(); ++k) s.image.data[k] = rgb.pixels[k] / 255.0f;
      s.gt_mask.resize(gray.pixels.size());
      for (size_t k = 0; k < gray.pixels.size(); ++k) s.gt_mask[k] = gray.pixels[k] >= 128 ? 1 : 0;
      const nlohmann::json& sc = j.at("scene");
      s.scene.seed = sc.at("seed").get<uint64_t>();
      s.scene.target = sc.at("target").get<int>();
      s.scene.expression = parse_enum<Template>(sc.at("expression").get<std::string>(), 3, "template");
      s.scene.distractors = sc.at("distractors").get<int>();
      for (const nlohmann::json& o : sc.at("objects")) {
        SceneObject obj;
        obj.shape = parse_enum<ShapeKind>(o.at("shape").get<std::string>(), 3, "shape");
        obj.color = parse_enum<Color>(o.at("color").get<std::string>(), 4, "color");
        obj.size = parse_enum<SizeClass>(o.at("size").get<std::string>(), 2, "size");
        obj.cell = o.at("cell").get<int>();
        obj.cx = o.at("cx").get<double>();
        obj.cy = o.at("cy").get<double>();
        obj.radius = o.at("radius").get<double>();
        s.scene.objects.push_back(obj);
      }
      out.push_back(std::move(s));
    } catch (const nlohmann::json::exception& e) {
      throw InputError((root / "samples.jsonl").string() + ":" + std::to_string(lineno) + ": " + e.what());
    } catch (const InputError& e) {
      throw InputError((root / "samples.jsonl").string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  if (out.empty()) throw InputError("no samples in " + root.string());
  return out;
}

}  // namespace mmnet
