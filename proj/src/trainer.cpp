#include "isggen/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <sstream>
#include <tuple>

#include "config_json.hpp"
#include "isggen/error.hpp"
#include "isggen/ops.hpp"

namespace isg {

std::uint64_t step_noise_seed(std::uint64_t seed, int k) { return derive_seed(seed, static_cast<std::uint64_t>(k)); }

namespace {

// Generation must not depend on the order in which nodes and edges were added
// (a service session appends, a split keeps the source order), so both are
// sorted before the floating-point reductions see them.
SceneGraph canonical_order(SceneGraph g) {
  std::sort(g.nodes.begin(), g.nodes.end(), [](const GraphNode& a, const GraphNode& b) { return a.id < b.id; });
  std::sort(g.edges.begin(), g.edges.end(), [](const GraphEdge& a, const GraphEdge& b) {
    return std::tie(a.s, a.p, a.o) < std::tie(b.s, b.p, b.o);
  });
  return g;
}

}  // namespace

GenStep generate_step(const Model& model, const SceneGraph& graph, const std::set<int>& generated,
                      const std::optional<Var>& previous, std::uint64_t noise_seed) {
  const ModelConfig& mc = model.config();
  graph.validate(&model.vocabulary());
  GenStep out;
  out.graph = canonical_order(graph);
  NodeEmbeddings emb = filter_generated(model.gcn.embed(out.graph), generated);
  out.new_node_ids = emb.node_ids;
  out.layout = model.layout.predict_layout(emb);
  out.layout_map = compose(out.layout, mc.image_size, mc.embed_dim);
  GenContext ctx = make_context(previous, noise_seed, mc.noise_channels, mc.image_size);
  out.image = model.crn.generate(out.layout_map, ctx);
  return out;
}

std::vector<GenStep> rollout(const Model& model, const GraphSequence& seq, std::uint64_t seed, RolloutMode mode) {
  seq.validate(&model.vocabulary());
  std::vector<GenStep> steps;
  std::set<int> generated;
  for (std::size_t k = 0; k < seq.steps.size(); ++k) {
    const bool inc = mode == RolloutMode::kIncremental;
    std::optional<Var> prev;
    if (inc && k > 0) prev = steps.back().image;
    GenStep s = generate_step(model, seq.steps[k], inc ? generated : std::set<int>{}, prev,
                              step_noise_seed(seed, static_cast<int>(k)));
    s.index = static_cast<int>(k);
    for (int id : s.new_node_ids) generated.insert(id);
    steps.push_back(std::move(s));
  }
  return steps;
}

std::string IterationRecord::to_json() const {
  nlohmann::ordered_json j;
  j["iter"] = iter;
  j["gan"] = generator.gan;
  j["box"] = generator.box;
  j["mask"] = generator.mask;
  j["pixel"] = generator.pixel;
  j["pixel_step"] = generator.pixel_step;
  j["perceptual"] = generator.perceptual;
  j["total"] = generator.total;
  j["d_image"] = d_image;
  j["d_object"] = d_object;
  j["time_ms"] = time_ms;
  return j.dump();
}

Trainer::Trainer(Model& model, const RunConfig& cfg, std::vector<TrainingExample> data)
    : model_(model),
      cfg_(cfg),
      data_(std::move(data)),
      adam_g_(model.generator_params(),
              AdamConfig{cfg.train.lr_generator, cfg.train.beta1, cfg.train.beta2, 1e-8}),
      adam_d_(model.discriminator_params(),
              AdamConfig{cfg.train.lr_discriminator, cfg.train.beta1, cfg.train.beta2, 1e-8}),
      rng_(cfg.train.seed) {
  cfg.train.validate();
  if (data_.empty()) fail(ErrorKind::kData, "training dataset is empty");
  for (const auto& ex : data_) {
    if (ex.target_image.shape() != Shape{3, model.config().image_size, model.config().image_size})
      fail(ErrorKind::kData, "example " + ex.image_id + " has image shape " + shape_str(ex.target_image.shape()));
    training_sequence(ex);
  }
}

void Trainer::restore(const Checkpoint& ck) {
  if (ck.adam_generator.steps > 0) adam_g_.restore(ck.adam_generator.steps, ck.adam_generator.moments);
  if (ck.adam_discriminator.steps > 0) adam_d_.restore(ck.adam_discriminator.steps, ck.adam_discriminator.moments);
  std::istringstream in(ck.rng_state);
  in >> rng_;
  if (!in) fail(ErrorKind::kData, "checkpoint has an unreadable RNG state");
  iter_ = ck.iteration;
}

std::string Trainer::rng_state() const {
  std::ostringstream out;
  out << rng_;
  return out.str();
}

void Trainer::save(const std::string& path) const {
  save_checkpoint(path, model_, cfg_, iter_, rng_state(), &adam_g_, &adam_d_);
}

GraphSequence Trainer::training_sequence(const TrainingExample& ex) const {
  const int want = cfg_.train.steps_per_sequence;
  const int have = static_cast<int>(ex.sequence.steps.size());
  if (want == 1) return GraphSequence{{ex.sequence.steps.back()}};
  if (want != have)
    fail(ErrorKind::kConfig, "train.steps_per_sequence is " + std::to_string(want) + " but example " + ex.image_id +
                                 " has " + std::to_string(have) + " steps");
  return ex.sequence;
}

namespace {

std::vector<Box> boxes_of(const SceneGraph& g, const TrainingExample& ex, std::vector<int>* labels) {
  std::vector<Box> out;
  for (const auto& n : g.nodes) {
    auto it = ex.target_boxes.find(n.id);
    if (it == ex.target_boxes.end())
      fail(ErrorKind::kData, "example " + ex.image_id + " has no box for node " + std::to_string(n.id));
    out.push_back(it->second);
    if (labels) labels->push_back(n.category);
  }
  return out;
}

Var mean_of(const std::vector<Var>& xs) { return ops::scale(ops::add_n(xs), 1.0 / static_cast<double>(xs.size())); }

void check_finite(double v, const char* what, long long iter) {
  if (!std::isfinite(v))
    fail(ErrorKind::kNumeric, std::string("non-finite ") + what + " at iteration " + std::to_string(iter));
}

}  // namespace

IterationRecord Trainer::step() {
  const auto t0 = std::chrono::steady_clock::now();
  const long long iter = iter_ + 1;
  const int bsz = cfg_.train.batch_size;
  const double inv_b = 1.0 / bsz;

  struct Item {
    const TrainingExample* ex;
    std::vector<GenStep> steps;
  };
  std::vector<Item> batch;
  for (int b = 0; b < bsz; ++b) {
    const auto& ex = data_[rng_() % data_.size()];
    const std::uint64_t seed = rng_();
    batch.push_back(Item{&ex, rollout(model_, training_sequence(ex), seed)});
  }

  IterationRecord rec;
  rec.iter = iter;

  // Discriminators: ground truth is real, every step image is fake.
  std::vector<Var> d_terms;
  for (const auto& it : batch) {
    const TrainingExample& ex = *it.ex;
    Var real = ops::constant(ex.target_image);
    std::vector<int> labels;
    std::vector<Box> all = boxes_of(it.steps.back().graph, ex, &labels);
    std::vector<Var> fake_img, fake_obj;
    for (const auto& s : it.steps) {
      Var img = ops::detach(s.image);
      fake_img.push_back(ops::bce_with_logits(model_.d_image(img).realism, 0.0));
      auto boxes = boxes_of(s.graph, ex, nullptr);
      if (!boxes.empty()) fake_obj.push_back(ops::bce_with_logits(model_.d_object(img, boxes).realism, 0.0));
    }
    Var d_img = ops::add(ops::bce_with_logits(model_.d_image(real).realism, 1.0), mean_of(fake_img));
    DiscOutput ro = model_.d_object(real, all);
    Var d_obj = ops::add_n({ops::bce_with_logits(ro.realism, 1.0), ops::softmax_cross_entropy(ro.class_logits, labels),
                            mean_of(fake_obj)});
    rec.d_image += d_img.item() * inv_b;
    rec.d_object += d_obj.item() * inv_b;
    d_terms.push_back(ops::scale(ops::add(d_img, d_obj), inv_b));
  }
  check_finite(rec.d_image + rec.d_object, "discriminator loss", iter);
  ops::add_n(d_terms).backward();
  adam_d_.step();

  // Generator stack with the discriminators frozen.
  model_.discriminator_params().set_trainable(false);
  std::vector<Var> g_terms;
  LossReport sum;
  try {
    for (const auto& it : batch) {
      const TrainingExample& ex = *it.ex;
      std::vector<Var> adv;
      std::vector<StepOutput> outs;
      for (const auto& s : it.steps) {
        std::vector<int> labels;
        auto boxes = boxes_of(s.graph, ex, &labels);
        std::vector<Var> terms{ops::bce_with_logits(model_.d_image(s.image).realism, 1.0)};
        if (!boxes.empty()) {
          DiscOutput fo = model_.d_object(s.image, boxes);
          terms.push_back(ops::bce_with_logits(fo.realism, 1.0));
          terms.push_back(ops::softmax_cross_entropy(fo.class_logits, labels));
        }
        adv.push_back(ops::add_n(terms));
        outs.push_back(StepOutput{s.image, s.layout});
      }
      LossTargets targets{ex.target_image, ex.target_boxes, ex.target_masks};
      auto [total, report] = total_generator_loss(outs, targets, mean_of(adv), model_.perceptual, cfg_.train.weights);
      sum.gan += report.gan * inv_b;
      sum.box += report.box * inv_b;
      sum.mask += report.mask * inv_b;
      sum.pixel += report.pixel * inv_b;
      sum.pixel_step += report.pixel_step * inv_b;
      sum.perceptual += report.perceptual * inv_b;
      sum.total += report.total * inv_b;
      g_terms.push_back(ops::scale(total, inv_b));
    }
  } catch (...) {
    model_.discriminator_params().set_trainable(true);
    throw;
  }
  if (cfg_.train.fault_inject_nan_iter == iter) sum.total = std::numeric_limits<double>::quiet_NaN();
  if (!std::isfinite(sum.total)) {
    model_.discriminator_params().set_trainable(true);
    check_finite(sum.total, "generator loss", iter);
  }
  ops::add_n(g_terms).backward();
  model_.discriminator_params().set_trainable(true);
  adam_g_.step();

  rec.generator = sum;
  iter_ = iter;
  rec.time_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  return rec;
}

}  // namespace isg
