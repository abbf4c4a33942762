#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "mmnet/config.hpp"
#include "mmnet/tensor.hpp"
#include "mmnet/vocab.hpp"

namespace mmnet {

enum class ShapeKind { circle, square, triangle };
enum class Color { red, green, blue, yellow };
enum class SizeClass { small, large };
enum class Template { color_shape, size_color_shape, shape_position };
enum class Split { train, val };

const char* to_string(ShapeKind s);
const char* to_string(Color c);
const char* to_string(SizeClass s);
const char* to_string(Template t);
const char* to_string(Split s);
Split parse_split(const std::string& name);
/// Phrase for a 3x3 grid cell in row-major order, e.g. "top left".
const char* position_name(int cell);

struct SceneObject {
  ShapeKind shape = ShapeKind::circle;
  Color color = Color::red;
  SizeClass size = SizeClass::small;
  int cell = 0;      // 0..8, row-major on the 3x3 grid
  double cx = 0.0;   // center in pixels
  double cy = 0.0;
  double radius = 0.0;
};

struct SceneSpec {
  uint64_t seed = 0;
  std::vector<SceneObject> objects;  // objects[target] is the referred one
  int target = 0;
  Template expression = Template::color_shape;
  int distractors = 0;
};

struct Sample {
  int64_t id = 0;
  Split split = Split::train;
  std::string text;
  std::vector<int> tokens;
  Tensor<float> image;           // H x W x 3 in [0, 1]
  std::vector<uint8_t> gt_mask;  // H x W, values 0/1
  int height = 0;
  int width = 0;
  SceneSpec scene;
};

/// True when `obj` satisfies the expression built for `target`.
bool satisfies(const SceneObject& obj, Template expression, const SceneObject& target);
/// Number of objects in the scene satisfying its expression.
int count_matches(const SceneSpec& scene);
std::string expression_text(const SceneSpec& scene);

/// Point-in-shape test; (x, y) in pixel coordinates.
bool shape_contains(const SceneObject& obj, double x, double y);
/// Hard raster of one object on a lattice of `cell`-pixel blocks, each block
/// sampled at its center. Returns an H x W 0/1 mask.
std::vector<uint8_t> rasterize(const SceneObject& obj, int height, int width, int cell);

/// Scene layout drawn from `seed`; never ambiguous.
SceneSpec sample_scene(uint64_t seed, const DataConfig& data, int image_size);
/// Renders a scene to image, expression tokens and ground truth.
Sample render_scene(const SceneSpec& scene, const DataConfig& data, const ModelConfig& model,
                    const Vocabulary& vocab);

/// Seed of sample `index` in `split`; the two splits use disjoint namespaces.
uint64_t sample_seed(uint64_t data_seed, Split split, int64_t index);
/// Deterministic stream: samples begin .. begin+count-1 of a split.
std::vector<Sample> generate(const DataConfig& data, const ModelConfig& model, Split split, int64_t begin,
                             int64_t count, const Vocabulary& vocab = Vocabulary::builtin());

/// Block-average over 4x4 pixels, then >= 0.5 -> 1.
std::vector<uint8_t> downsample_gt(const std::vector<uint8_t>& mask, int height, int width);
/// Target tensor for the loss: downsample_gt as a [H/4, W/4] float tensor.
Tensor<float> target_tensor(const Sample& s);

/// Random access to a split, generated on demand or loaded from disk.
class Dataset {
 public:
  virtual ~Dataset() = default;
  virtual int64_t size() const = 0;
  virtual Sample get(int64_t index) const = 0;
};

class SyntheticDataset : public Dataset {
 public:
  SyntheticDataset(DataConfig data, ModelConfig model, Split split, Vocabulary vocab = Vocabulary::builtin());
  int64_t size() const override { return size_; }
  Sample get(int64_t index) const override;

 private:
  DataConfig data_;
  ModelConfig model_;
  Split split_;
  Vocabulary vocab_;
  int64_t size_;
};

class LoadedDataset : public Dataset {
 public:
  explicit LoadedDataset(std::vector<Sample> samples) : samples_(std::move(samples)) {}
  int64_t size() const override { return static_cast<int64_t>(samples_.size()); }
  Sample get(int64_t index) const override { return samples_.at(static_cast<size_t>(index)); }

 private:
  std::vector<Sample> samples_;
};

/// The split the configuration resolves to (honours val_is_train).
std::unique_ptr<Dataset> make_dataset(const TrainConfig& cfg, Split split);

/// Writes <dir>/<split>/{images,masks}/<id>.png and <dir>/<split>/samples.jsonl.
void export_split(const std::string& dir, const Dataset& ds, Split split);
/// Reads a split written by export_split.
std::vector<Sample> load_split(const std::string& dir, Split split, const Vocabulary& vocab, int max_tokens);

}  // namespace mmnet
