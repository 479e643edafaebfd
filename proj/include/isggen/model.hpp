#pragma once

#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "isggen/adversary.hpp"
#include "isggen/config.hpp"
#include "isggen/crn.hpp"
#include "isggen/gcn.hpp"
#include "isggen/layout.hpp"
#include "isggen/losses.hpp"
#include "isggen/nn.hpp"
#include "isggen/sgraph.hpp"

namespace isg {

// All networks of one run. Parameter sets are referenced by optimizers, so
// a Model is pinned in memory.
class Model {
 public:
  Model(const ModelConfig& cfg, const Vocabulary& vocab);
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;

  const ModelConfig& config() const { return cfg_; }
  const Vocabulary& vocabulary() const { return vocab_; }
  // Hash over the architecture config and vocabulary; weights must come from
  // a checkpoint with the same value.
  std::string arch_hash() const;

  Gcn gcn;
  LayoutNet layout;
  Crn crn;
  ImageDiscriminator d_image;
  ObjectDiscriminator d_object;
  PerceptualExtractor perceptual;

  ParamSet& generator_params() { return gen_params_; }
  const ParamSet& generator_params() const { return gen_params_; }
  ParamSet& discriminator_params() { return disc_params_; }
  const ParamSet& discriminator_params() const { return disc_params_; }

 private:
  struct Seeded;
  Model(const ModelConfig& cfg, const Vocabulary& vocab, Seeded&& rngs);

  ModelConfig cfg_;
  Vocabulary vocab_;
  ParamSet gen_params_;
  ParamSet disc_params_;
};

// Raw archive: magic, JSON header, then named float64 tensors.
struct Archive {
  std::string header_json;
  std::vector<std::pair<std::string, Tensor>> tensors;

  const Tensor& get(const std::string& name) const;
};

void write_archive(const std::filesystem::path& path, const Archive& archive);
Archive read_archive(const std::filesystem::path& path);

struct OptimizerState {
  long long steps = 0;
  std::vector<std::pair<Tensor, Tensor>> moments;
};

struct Checkpoint {
  std::unique_ptr<Model> model;
  RunConfig config;
  std::string config_hash;
  long long iteration = 0;
  std::string rng_state;  // textual mt19937_64 state
  OptimizerState adam_generator;
  OptimizerState adam_discriminator;
};

void save_checkpoint(const std::filesystem::path& path, const Model& model, const RunConfig& cfg, long long iteration,
                     const std::string& rng_state, const Adam* adam_generator, const Adam* adam_discriminator);
Checkpoint load_checkpoint(const std::filesystem::path& path);
// Copies weights from an archive into an existing model, verifying names and
// shapes parameter by parameter.
void load_weights(Model& model, const Archive& archive);

}  // namespace isg
