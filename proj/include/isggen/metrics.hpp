#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <utility>
#include <vector>

#include "isggen/losses.hpp"
#include "isggen/nn.hpp"

namespace isg {

// Maps an image [3,S,S] in [-1,1] to class probabilities.
class Classifier {
 public:
  virtual ~Classifier() = default;
  virtual int num_classes() const = 0;
  virtual std::vector<double> probabilities(const Tensor& image) const = 0;
};

class UniformClassifier : public Classifier {
 public:
  explicit UniformClassifier(int classes) : classes_(classes) {}
  int num_classes() const override { return classes_; }
  std::vector<double> probabilities(const Tensor& image) const override;

 private:
  int classes_;
};

// Small convnet trained on single-object renders. Stride-2 convolutions halve
// the input down to 4x4 (at least three of them) before global pooling.
class ConvClassifier : public Classifier {
 public:
  ConvClassifier(int classes, int image_size, std::uint64_t seed);

  int num_classes() const override { return classes_; }
  std::vector<double> probabilities(const Tensor& image) const override;
  Var logits(const Var& image) const;

  // Adam with cosine learning-rate decay over (image, label) pairs; returns the
  // final epoch's mean loss.
  double fit(const std::vector<std::pair<Tensor, int>>& data, int epochs, std::uint64_t seed, double lr = 3e-3);
  double accuracy(const std::vector<std::pair<Tensor, int>>& data) const;

  void save(const std::filesystem::path& path) const;
  static std::unique_ptr<ConvClassifier> load(const std::filesystem::path& path);

 private:
  int classes_;
  int image_size_;
  ParamSet params_;
  std::vector<Conv2d> convs_;
  std::vector<InstanceNorm> norms_;  // after every conv but the first
  int features_ = 0;
  Linear head_;
};

struct TrainedClassifier {
  std::unique_ptr<ConvClassifier> classifier;
  double validation_accuracy = 0;
};

// Trains on synth single-object renders with a held-out split; throws a data
// error when validation accuracy is below `min_accuracy`.
TrainedClassifier train_synth_classifier(int image_size, int count, int epochs, std::uint64_t seed,
                                         double min_accuracy = 0.95);

struct ScoreStats {
  double mean = 0;
  double stddev = 0;
};

// Inception score over contiguous splits of a probability table.
ScoreStats inception_score(const std::vector<std::vector<double>>& probs, int splits);
ScoreStats inception_score(const std::vector<Tensor>& images, const Classifier& clf, int splits);

// Mean perceptual distance for each transition k -> k+1 over rollouts of
// step images.
std::vector<double> consistency(const std::vector<std::vector<Tensor>>& rollouts, const PerceptualExtractor& p);

}  // namespace isg
