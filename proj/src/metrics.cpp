#include "isggen/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "isggen/dataio.hpp"
#include "isggen/error.hpp"
#include "isggen/model.hpp"
#include "isggen/ops.hpp"
#include "json.hpp"

namespace isg {

std::vector<double> UniformClassifier::probabilities(const Tensor&) const {
  return std::vector<double>(static_cast<std::size_t>(classes_), 1.0 / classes_);
}

ConvClassifier::ConvClassifier(int classes, int image_size, std::uint64_t seed)
    : classes_(classes), image_size_(image_size) {
  if (classes < 2) fail(ErrorKind::kConfig, "classifier needs at least two classes");
  Rng rng(seed);
  int depth = 0, side = image_size;
  for (; side > 4; side /= 2) ++depth;
  int in = 3;
  for (int l = 0; l < depth; ++l) {
    const int out = std::min(64, 16 << l);
    convs_.push_back(Conv2d::create(params_, "clf.conv" + std::to_string(l + 1), in, out, 4, 2, 1, rng));
    if (l > 0) norms_.push_back(InstanceNorm::create(params_, "clf.norm" + std::to_string(l + 1), out));
    in = out;
  }
  features_ = in * side * side;
  head_ = Linear::create(params_, "clf.head", features_, classes, rng);
}

Var ConvClassifier::logits(const Var& image) const {
  if (image.shape() != Shape{3, image_size_, image_size_})
    fail(ErrorKind::kValidation, "classifier input has shape " + shape_str(image.shape()));
  Var x = image;
  for (std::size_t l = 0; l < convs_.size(); ++l) {
    x = convs_[l](x);
    if (l > 0) x = norms_[l - 1](x);
    x = ops::relu(x);
  }
  return head_(ops::reshape(x, {1, features_}));
}

std::vector<double> ConvClassifier::probabilities(const Tensor& image) const {
  NoGradGuard ng;
  Tensor l = logits(ops::constant(image)).value();
  const double mx = *std::max_element(l.values().begin(), l.values().end());
  std::vector<double> p(l.size());
  double z = 0;
  for (std::size_t i = 0; i < p.size(); ++i) z += (p[i] = std::exp(l[i] - mx));
  for (auto& v : p) v /= z;
  return p;
}

double ConvClassifier::fit(const std::vector<std::pair<Tensor, int>>& data, int epochs, std::uint64_t seed,
                           double lr) {
  if (data.empty()) fail(ErrorKind::kData, "classifier training set is empty");
  Adam opt(params_, AdamConfig{lr, 0.9, 0.999, 1e-8});
  Rng rng(seed);
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  const int batch = 16;
  const std::size_t per_epoch = (order.size() + batch - 1) / batch;
  const double total_steps = static_cast<double>(per_epoch) * epochs;
  double last = 0;
  long long t = 0;
  for (int ep = 0; ep < epochs; ++ep) {
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng() % i]);
    double total = 0;
    for (std::size_t start = 0; start < order.size(); start += batch) {
      const std::size_t end = std::min(order.size(), start + batch);
      // Cosine decay settles the final weights instead of stopping mid-oscillation.
      opt.set_learning_rate(lr * 0.5 * (1.0 + std::cos(M_PI * static_cast<double>(t++) / total_steps)));
      std::vector<Var> terms;
      for (std::size_t j = start; j < end; ++j) {
        const auto& [img, label] = data[order[j]];
        terms.push_back(ops::softmax_cross_entropy(logits(ops::constant(img)), {label}));
      }
      Var loss = ops::scale(ops::add_n(terms), 1.0 / static_cast<double>(terms.size()));
      total += loss.item() * static_cast<double>(terms.size());
      loss.backward();
      opt.step();
    }
    last = total / static_cast<double>(data.size());
  }
  return last;
}

double ConvClassifier::accuracy(const std::vector<std::pair<Tensor, int>>& data) const {
  if (data.empty()) return 0.0;
  long hits = 0;
  for (const auto& [img, label] : data) {
    auto p = probabilities(img);
    if (std::max_element(p.begin(), p.end()) - p.begin() == label) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(data.size());
}

void ConvClassifier::save(const std::filesystem::path& path) const {
  nlohmann::json h;
  h["format"] = "isggen-classifier-1";
  h["classes"] = classes_;
  h["image_size"] = image_size_;
  Archive a;
  a.header_json = h.dump();
  for (const auto& [name, v] : params_.items()) a.tensors.emplace_back(name, v.value());
  write_archive(path, a);
}

std::unique_ptr<ConvClassifier> ConvClassifier::load(const std::filesystem::path& path) {
  Archive a = read_archive(path);
  auto h = nlohmann::json::parse(a.header_json, nullptr, false);
  if (h.is_discarded() || h.value("format", "") != "isggen-classifier-1")
    fail(ErrorKind::kData, path.string() + " is not a classifier archive");
  auto clf = std::make_unique<ConvClassifier>(h.at("classes").get<int>(), h.at("image_size").get<int>(), 0);
  for (const auto& [name, v] : clf->params_.items()) {
    const Tensor& t = a.get(name);
    if (t.shape() != v.shape()) fail(ErrorKind::kData, "classifier parameter '" + name + "' has the wrong shape");
    Var(v).mutable_value() = t;
  }
  return clf;
}

TrainedClassifier train_synth_classifier(int image_size, int count, int epochs, std::uint64_t seed,
                                         double min_accuracy) {
  auto to_signed = [](std::vector<std::pair<Tensor, int>> v) {
    for (auto& [img, _] : v)
      for (auto& x : img.values()) x = 2.0 * x - 1.0;
    return v;
  };
  auto train = to_signed(synth_single_objects(count, derive_seed(seed, 1), image_size));
  auto val = to_signed(synth_single_objects(std::max(90, count / 5), derive_seed(seed, 2), image_size));
  const int classes = synth_vocabulary().num_categories();
  TrainedClassifier out;
  out.classifier = std::make_unique<ConvClassifier>(classes, image_size, derive_seed(seed, 3));
  out.classifier->fit(train, epochs, derive_seed(seed, 4));
  out.validation_accuracy = out.classifier->accuracy(val);
  if (out.validation_accuracy < min_accuracy)
    fail(ErrorKind::kData, "evaluation classifier reached only " + std::to_string(out.validation_accuracy) +
                               " validation accuracy (gate " + std::to_string(min_accuracy) + ")");
  return out;
}

ScoreStats inception_score(const std::vector<std::vector<double>>& probs, int splits) {
  if (splits < 1) fail(ErrorKind::kValidation, "inception_score: splits must be >= 1");
  const std::size_t n = probs.size();
  if (n < static_cast<std::size_t>(splits))
    fail(ErrorKind::kValidation, "inception_score: " + std::to_string(n) + " images for " + std::to_string(splits) +
                                     " splits");
  const std::size_t c = probs.front().size();
  std::vector<double> scores;
  for (int s = 0; s < splits; ++s) {
    const std::size_t lo = n * s / splits, hi = n * (s + 1) / splits;
    std::vector<double> marginal(c, 0.0);
    for (std::size_t i = lo; i < hi; ++i) {
      if (probs[i].size() != c) fail(ErrorKind::kValidation, "inception_score: ragged probability table");
      for (std::size_t j = 0; j < c; ++j) marginal[j] += probs[i][j];
    }
    for (auto& m : marginal) m /= static_cast<double>(hi - lo);
    double kl = 0;
    for (std::size_t i = lo; i < hi; ++i)
      for (std::size_t j = 0; j < c; ++j)
        if (probs[i][j] > 0) kl += probs[i][j] * (std::log(probs[i][j]) - std::log(marginal[j]));
    scores.push_back(std::exp(kl / static_cast<double>(hi - lo)));
  }
  ScoreStats st;
  st.mean = std::accumulate(scores.begin(), scores.end(), 0.0) / splits;
  double var = 0;
  for (double v : scores) var += (v - st.mean) * (v - st.mean);
  st.stddev = std::sqrt(var / splits);
  return st;
}

ScoreStats inception_score(const std::vector<Tensor>& images, const Classifier& clf, int splits) {
  std::vector<std::vector<double>> probs;
  probs.reserve(images.size());
  for (const auto& img : images) probs.push_back(clf.probabilities(img));
  return inception_score(probs, splits);
}

std::vector<double> consistency(const std::vector<std::vector<Tensor>>& rollouts, const PerceptualExtractor& p) {
  if (rollouts.empty()) fail(ErrorKind::kValidation, "consistency: no rollouts");
  const std::size_t steps = rollouts.front().size();
  if (steps < 2) fail(ErrorKind::kValidation, "consistency needs rollouts with at least two steps");
  std::vector<double> out(steps - 1, 0.0);
  NoGradGuard ng;
  for (const auto& r : rollouts) {
    if (r.size() != steps) fail(ErrorKind::kValidation, "consistency: rollouts differ in step count");
    for (std::size_t k = 0; k + 1 < steps; ++k)
      out[k] += perceptual_loss(ops::constant(r[k]), ops::constant(r[k + 1]), p).item();
  }
  for (auto& v : out) v /= static_cast<double>(rollouts.size());
  return out;
}

}  // namespace isg
