#pragma once

#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "isggen/dataio.hpp"
#include "isggen/model.hpp"

namespace isg {

struct GenStep {
  int index = 0;
  SceneGraph graph;  // nodes sorted by id, edges by (s, p, o)
  std::vector<int> new_node_ids;
  std::vector<ObjectLayout> layout;  // objects placed at this step
  Var layout_map;                    // [D,S,S]
  Var image;                         // [3,S,S] in [-1,1]
};

enum class RolloutMode {
  kIncremental,  // filter generated nodes, inject the previous image
  kIndependent,  // every step regenerates the whole graph from noise
};

// Seed of the noise drawn at step k of a rollout seeded with `seed`.
std::uint64_t step_noise_seed(std::uint64_t seed, int k);

// One generation step over `graph` with `generated` nodes excluded from the
// layout. Shared by offline rollouts and the session service; the result does
// not depend on the order of nodes or edges in `graph`.
GenStep generate_step(const Model& model, const SceneGraph& graph, const std::set<int>& generated,
                      const std::optional<Var>& previous, std::uint64_t noise_seed);

std::vector<GenStep> rollout(const Model& model, const GraphSequence& seq, std::uint64_t seed,
                             RolloutMode mode = RolloutMode::kIncremental);

struct IterationRecord {
  long long iter = 0;
  LossReport generator;
  double d_image = 0;
  double d_object = 0;
  double time_ms = 0;

  // One JSON line; doubles keep full precision.
  std::string to_json() const;
};

class Trainer {
 public:
  Trainer(Model& model, const RunConfig& cfg, std::vector<TrainingExample> data);

  // Restores optimizer moments, RNG stream and iteration counter.
  void restore(const Checkpoint& ck);

  // One discriminator update followed by one generator update. A non-finite
  // loss throws a numeric error before the affected update is applied.
  IterationRecord step();

  long long iteration() const { return iter_; }
  std::string rng_state() const;
  void save(const std::string& path) const;

 private:
  GraphSequence training_sequence(const TrainingExample& ex) const;

  Model& model_;
  RunConfig cfg_;
  std::vector<TrainingExample> data_;
  Adam adam_g_;
  Adam adam_d_;
  Rng rng_;
  long long iter_ = 0;
};

}  // namespace isg
