#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "isggen/sgraph.hpp"
#include "isggen/tensor.hpp"

namespace isg {

inline constexpr int kDefaultMaskSize = 16;

struct AnnotatedObject {
  int category = 0;
  Box box;
  // M x M raster cropped to the box, values in [0,1].
  std::optional<Tensor> mask;
};

struct AnnotatedImage {
  std::string image_id;
  Tensor pixels;  // [3,H,W] in [0,1]; empty when loaded annotation-only
  std::vector<AnnotatedObject> objects;
};

struct DatasetSpec {
  double min_object_area_fraction = 0.02;
  int min_objects = 3;
  int max_objects = 8;
  int image_size = 64;
  int mask_size = kDefaultMaskSize;
  std::string split = "train";

  void validate() const;
};

struct FilterStats {
  long images_seen = 0;
  long images_kept = 0;
  long objects_seen = 0;
  long objects_removed_small = 0;
  long images_dropped_count = 0;
};

// Fraction of the image covered by an object: mask mean times box area when
// a mask is present, box area otherwise.
double object_area_fraction(const AnnotatedObject& obj);

// Removes small objects, then enforces the object-count range. Returns
// nullopt when the image is dropped.
std::optional<AnnotatedImage> apply_filters(const AnnotatedImage& img, const DatasetSpec& spec,
                                            FilterStats* stats = nullptr);

// Pull-based reader over a COCO-format annotation document.
class AnnotationStream {
 public:
  // `image_root` empty means annotation-only loading (pixels left empty).
  AnnotationStream(const std::filesystem::path& annotation_path, const DatasetSpec& spec, const Vocabulary& vocab,
                   std::filesystem::path image_root = {});
  ~AnnotationStream();
  AnnotationStream(AnnotationStream&&) noexcept;
  AnnotationStream& operator=(AnnotationStream&&) noexcept;

  std::optional<AnnotatedImage> next();
  const FilterStats& stats() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

AnnotationStream load_annotations(const std::filesystem::path& path, const DatasetSpec& spec, const Vocabulary& vocab,
                                  std::filesystem::path image_root = {});

// Vocabulary built from the `categories` list of a COCO annotation document.
Vocabulary coco_vocabulary(const std::filesystem::path& path);

// Nine categories: {red, green, blue} x {square, circle, triangle}.
Vocabulary synth_vocabulary();

struct SynthSample {
  AnnotatedImage image;
  SceneGraph graph;
  // Full-resolution binary raster per object, [S,S].
  std::vector<Tensor> object_rasters;
};

std::vector<SynthSample> synth_shapes(int count, std::uint64_t seed, const DatasetSpec& spec,
                                      double edge_density = 0.5);

// One centered object per image; used to train the evaluation classifier.
std::vector<std::pair<Tensor, int>> synth_single_objects(int count, std::uint64_t seed, int image_size);

// Everything the trainer may read for one image. Only the final step has an
// image target; there is deliberately no slot for intermediate images.
struct TrainingExample {
  std::string image_id;
  GraphSequence sequence;
  Tensor target_image;  // [3,S,S] in [-1,1]
  std::map<int, Box> target_boxes;
  std::map<int, Tensor> target_masks;  // [M,M]
};

TrainingExample make_training_example(const AnnotatedImage& img, std::uint64_t seed, int num_steps = 3,
                                      double edge_density = 0.5, int mask_size = kDefaultMaskSize);

// Dataset directory layout: images/<id>.png, sequences/<id>.json,
// annotations/<id>.json, manifest.json.
struct DatasetEntry {
  std::string image_id;
  int num_objects = 0;
};

void write_vocabulary(const std::filesystem::path& path, const Vocabulary& vocab);
Vocabulary read_vocabulary(const std::filesystem::path& path);

void write_example(const std::filesystem::path& dir, const TrainingExample& ex, const Vocabulary& vocab);
std::vector<TrainingExample> load_dataset(const std::filesystem::path& dir, const Vocabulary& vocab);

}  // namespace isg
