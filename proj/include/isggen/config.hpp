#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "isggen/adversary.hpp"
#include "isggen/crn.hpp"
#include "isggen/dataio.hpp"
#include "isggen/gcn.hpp"
#include "isggen/layout.hpp"
#include "isggen/losses.hpp"

namespace isg {

struct DataConfig {
  std::string source = "synth";  // synth | coco
  int count = 64;
  std::uint64_t seed = 1;
  int num_steps = 3;
  double edge_density = 0.5;
  double min_object_area_fraction = 0.02;
  int min_objects = 3;
  int max_objects = 8;
  int image_size = 64;
  int mask_size = 16;
  std::string split = "train";
  std::string annotations;  // coco only
  std::string image_root;   // coco only

  DatasetSpec spec() const;
};

struct ModelConfig {
  int image_size = 64;
  int embed_dim = 32;
  int gcn_layers = 2;
  int gcn_hidden = 64;
  int layout_hidden = 64;
  int mask_size = 16;
  int mask_channels = 16;
  double min_box_extent = 1.0 / 64.0;
  int start_resolution = 4;
  std::vector<int> crn_channels = {32, 32, 16, 8};
  int crn_final_channels = 16;
  int noise_channels = 8;
  int crop_size = 32;
  int d_image_channels = 16;
  int d_object_channels = 16;
  std::uint64_t init_seed = 0;
  std::uint64_t perceptual_seed = 7;

  GcnConfig gcn() const;
  LayoutConfig layout() const;
  CrnConfig crn() const;
  AdversaryConfig adversary(int num_categories) const;
  void validate() const;
};

struct TrainConfig {
  int steps_per_sequence = 3;
  int batch_size = 8;
  double lr_generator = 1e-4;
  double lr_discriminator = 1e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
  int iterations = 200;
  std::uint64_t seed = 0;
  int checkpoint_every = 100;
  // Iteration (1-based) whose generator loss is replaced by NaN; 0 disables.
  int fault_inject_nan_iter = 0;
  LossWeights weights;
  std::string device = "cpu";

  void validate() const;
};

struct EvalConfig {
  std::string metric = "consistency";  // consistency | is
  int splits = 10;
  std::string classifier = "synth";  // synth | uniform | <path>
  bool independent = false;
  std::uint64_t seed = 0;
  int max_sequences = 64;
  int classifier_train_count = 1800;
  int classifier_epochs = 8;
};

struct ServeConfig {
  std::string host = "127.0.0.1";
  int port = 8080;
  std::string store = "sessions";
};

// Locations are not part of the content hash.
struct PathsConfig {
  std::string dataset;
  std::string out;
  std::string checkpoint;
  std::string sequence;
  std::string images;
  std::string resume;
};

struct RunConfig {
  DataConfig data;
  ModelConfig model;
  TrainConfig train;
  EvalConfig eval;
  ServeConfig serve;
  PathsConfig paths;

  // Canonical JSON document of the whole configuration.
  std::string to_json() const;
  // FNV-1a 64 of the canonical document without `paths`, as 16 hex digits.
  std::string hash() const;
};

std::uint64_t fnv1a64(const std::string& bytes);
std::string hex64(std::uint64_t v);

// Layers defaults < JSON file < ISGGEN_SECTION__KEY environment variables <
// explicit "section.key=value" overrides. Unknown keys are config errors.
RunConfig resolve_config(const std::string& file, const std::vector<std::string>& overrides,
                         const std::map<std::string, std::string>& env);
// Collects ISGGEN_* variables from the process environment.
std::map<std::string, std::string> process_env();
RunConfig parse_config(const std::string& json_text);

}  // namespace isg
