#pragma once

#include <string>

#include "isggen/config.hpp"

// Operator commands. Each returns a JSON report document.
namespace isg::cmd {

// Writes images/, sequences/, annotations/, vocabulary.json and manifest.json
// under paths.out.
std::string prepare(const RunConfig& cfg);

// Trains on paths.dataset, writing checkpoints and metrics.jsonl under
// paths.out. paths.resume continues from a checkpoint.
std::string train(const RunConfig& cfg);

// Generates every step of paths.sequence with the checkpoint in
// paths.checkpoint into paths.out/step_<k>.png.
std::string generate(const RunConfig& cfg);

// Evaluates eval.metric over rollouts of the dataset sequences, or over image
// fixtures in paths.images (<dir>/<rollout>/<k>.png).
std::string evaluate(const RunConfig& cfg);

}  // namespace isg::cmd
