#include "isggen/commands.hpp"

#include <algorithm>
#include <fstream>

#include "config_json.hpp"
#include "isggen/dataio.hpp"
#include "isggen/error.hpp"
#include "isggen/image_io.hpp"
#include "isggen/metrics.hpp"
#include "isggen/model.hpp"
#include "isggen/trainer.hpp"

namespace isg::cmd {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

void require_path(const std::string& p, const char* what) {
  if (p.empty()) fail(ErrorKind::kConfig, std::string("missing required path: ") + what);
}

std::string dataset_id(const fs::path& dir) {
  const auto manifest = dir / "manifest.json";
  if (!fs::exists(manifest)) return hex64(fnv1a64(dir.string()));
  json j = json::parse(read_text_file(manifest), nullptr, false);
  if (j.is_discarded()) fail(ErrorKind::kData, "malformed manifest " + manifest.string());
  return j.value("dataset_id", hex64(fnv1a64(read_text_file(manifest))));
}

}  // namespace

std::string prepare(const RunConfig& cfg) {
  require_path(cfg.paths.out, "paths.out");
  const DataConfig& dc = cfg.data;
  const DatasetSpec spec = dc.spec();
  spec.validate();
  const fs::path out = cfg.paths.out;
  fs::create_directories(out);
  Vocabulary vocab;
  FilterStats stats;
  std::vector<AnnotatedImage> images;
  if (dc.source == "synth") {
    vocab = synth_vocabulary();
    for (auto& s : synth_shapes(dc.count, dc.seed, spec, dc.edge_density)) images.push_back(std::move(s.image));
    stats.images_seen = stats.images_kept = static_cast<long>(images.size());
  } else if (dc.source == "coco") {
    require_path(dc.annotations, "data.annotations");
    vocab = coco_vocabulary(dc.annotations);
    auto stream = load_annotations(dc.annotations, spec, vocab, dc.image_root);
    while (auto img = stream.next()) {
      if (dc.count > 0 && static_cast<int>(images.size()) >= dc.count) break;
      if (img->pixels.empty()) img->pixels = Tensor({3, spec.image_size, spec.image_size}, 0.5);
      images.push_back(std::move(*img));
    }
    stats = stream.stats();
  } else {
    fail(ErrorKind::kConfig, "data.source must be synth or coco, got '" + dc.source + "'");
  }
  write_vocabulary(out / "vocabulary.json", vocab);
  json entries = json::array();
  for (const auto& img : images) {
    TrainingExample ex = make_training_example(img, dc.seed, dc.num_steps, dc.edge_density, spec.mask_size);
    write_example(out, ex, vocab);
    entries.push_back({{"image_id", ex.image_id}, {"num_objects", static_cast<int>(img.objects.size())}});
  }
  json m;
  m["source"] = dc.source;
  m["seed"] = dc.seed;
  m["count"] = static_cast<int>(images.size());
  m["config_hash"] = cfg.hash();
  m["vocabulary_version"] = vocab.version();
  m["pixels"] = dc.source == "coco" && dc.image_root.empty() ? "placeholder" : "rendered";
  m["filter_stats"] = {{"images_seen", stats.images_seen},
                       {"images_kept", stats.images_kept},
                       {"objects_seen", stats.objects_seen},
                       {"objects_removed_small", stats.objects_removed_small},
                       {"images_dropped_count", stats.images_dropped_count}};
  m["entries"] = entries;
  m["dataset_id"] = hex64(fnv1a64(m.dump()));
  write_text_file(out / "manifest.json", m.dump(2) + "\n");
  json report;
  report["command"] = "prepare";
  report["out"] = out.string();
  report["count"] = m["count"];
  report["dataset_id"] = m["dataset_id"];
  report["config_hash"] = cfg.hash();
  return report.dump(2) + "\n";
}

std::string train(const RunConfig& cfg) {
  require_path(cfg.paths.dataset, "paths.dataset");
  require_path(cfg.paths.out, "paths.out");
  const fs::path ds = cfg.paths.dataset;
  const Vocabulary vocab = read_vocabulary(ds / "vocabulary.json");
  auto data = load_dataset(ds, vocab);
  const fs::path out = cfg.paths.out;
  fs::create_directories(out);

  std::unique_ptr<Model> owned;
  Checkpoint ck;
  const bool resuming = !cfg.paths.resume.empty();
  if (resuming) {
    ck = load_checkpoint(cfg.paths.resume);
    Model fresh(cfg.model, vocab);
    if (fresh.arch_hash() != ck.model->arch_hash())
      fail(ErrorKind::kConfig, "config hash mismatch: checkpoint " + cfg.paths.resume +
                                   " was trained with a different model config or vocabulary");
    owned = std::move(ck.model);
  } else {
    owned = std::make_unique<Model>(cfg.model, vocab);
  }
  Trainer trainer(*owned, cfg, std::move(data));
  if (resuming) trainer.restore(ck);

  std::ofstream log(out / "metrics.jsonl", resuming ? std::ios::app : std::ios::trunc);
  if (!log) fail(ErrorKind::kIo, "cannot open metrics log in " + out.string());
  std::string last_good = resuming ? cfg.paths.resume : "";
  json first, last;
  const long long start = trainer.iteration();
  while (trainer.iteration() < cfg.train.iterations) {
    IterationRecord rec;
    try {
      rec = trainer.step();
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::kNumeric) throw;
      log.flush();
      fail(ErrorKind::kNumeric, e.what(),
           last_good.empty() ? "no checkpoint was written before the failure" : "last good checkpoint: " + last_good);
    }
    log << rec.to_json() << "\n";
    json r = json::parse(rec.to_json());
    if (first.is_null()) first = r;
    last = r;
    const long long it = trainer.iteration();
    if (it % cfg.train.checkpoint_every == 0 || it == cfg.train.iterations) {
      const fs::path p = out / ("checkpoint_" + std::to_string(it) + ".isg");
      trainer.save(p.string());
      fs::copy_file(p, out / "latest.isg", fs::copy_options::overwrite_existing);
      last_good = p.string();
    }
  }
  log.flush();
  json report;
  report["command"] = "train";
  report["config_hash"] = cfg.hash();
  report["start_iteration"] = start;
  report["end_iteration"] = trainer.iteration();
  report["checkpoint"] = last_good;
  report["metrics_log"] = (out / "metrics.jsonl").string();
  if (!first.is_null()) {
    report["first_total"] = first["total"];
    report["last_total"] = last["total"];
  }
  return report.dump(2) + "\n";
}

std::string generate(const RunConfig& cfg) {
  require_path(cfg.paths.checkpoint, "paths.checkpoint");
  require_path(cfg.paths.sequence, "paths.sequence");
  require_path(cfg.paths.out, "paths.out");
  Checkpoint ck = load_checkpoint(cfg.paths.checkpoint);
  const GraphSequence seq = deserialize_sequence(read_text_file(cfg.paths.sequence), ck.model->vocabulary());
  const RolloutMode mode = cfg.eval.independent ? RolloutMode::kIndependent : RolloutMode::kIncremental;
  std::vector<GenStep> steps;
  {
    NoGradGuard ng;
    steps = rollout(*ck.model, seq, cfg.eval.seed, mode);
  }
  const fs::path out = cfg.paths.out;
  fs::create_directories(out);
  json files = json::array();
  for (const auto& s : steps) {
    const fs::path p = out / ("step_" + std::to_string(s.index) + ".png");
    write_png(p, signed_to_unit(s.image.value()));
    files.push_back({{"step", s.index}, {"image", p.string()}, {"new_node_ids", s.new_node_ids}});
  }
  json report;
  report["command"] = "generate";
  report["mode"] = cfg.eval.independent ? "independent" : "incremental";
  report["checkpoint_config_hash"] = ck.config_hash;
  report["config_hash"] = cfg.hash();
  report["steps"] = files;
  return report.dump(2) + "\n";
}

namespace {

// <dir>/<rollout>/<k>.png, rollouts in name order.
std::vector<std::vector<Tensor>> load_fixture_rollouts(const fs::path& dir) {
  if (!fs::is_directory(dir)) fail(ErrorKind::kData, "image fixture directory not found: " + dir.string());
  std::vector<fs::path> subdirs;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_directory()) subdirs.push_back(e.path());
  std::sort(subdirs.begin(), subdirs.end());
  std::vector<std::vector<Tensor>> out;
  for (const auto& sd : subdirs) {
    std::vector<Tensor> steps;
    for (int k = 0; fs::exists(sd / (std::to_string(k) + ".png")); ++k)
      steps.push_back(unit_to_signed(read_image(sd / (std::to_string(k) + ".png"))));
    if (steps.empty()) fail(ErrorKind::kData, "fixture rollout " + sd.string() + " has no 0.png");
    out.push_back(std::move(steps));
  }
  if (out.empty()) fail(ErrorKind::kData, "image fixture directory " + dir.string() + " has no rollouts");
  return out;
}

std::unique_ptr<Classifier> make_classifier(const EvalConfig& ec, int image_size, int classes, json& info) {
  if (ec.classifier == "uniform") {
    info["classifier"] = "uniform";
    return std::make_unique<UniformClassifier>(classes);
  }
  if (ec.classifier == "synth") {
    auto t = train_synth_classifier(image_size, ec.classifier_train_count, ec.classifier_epochs, ec.seed);
    info["classifier"] = "synth";
    info["classifier_validation_accuracy"] = t.validation_accuracy;
    return std::move(t.classifier);
  }
  info["classifier"] = ec.classifier;
  return ConvClassifier::load(ec.classifier);
}

}  // namespace

std::string evaluate(const RunConfig& cfg) {
  const EvalConfig& ec = cfg.eval;
  if (ec.metric != "consistency" && ec.metric != "is")
    fail(ErrorKind::kConfig, "eval.metric must be consistency or is, got '" + ec.metric + "'");
  std::vector<std::vector<Tensor>> rollouts;
  std::string data_id;
  std::unique_ptr<Model> model_holder;
  std::uint64_t perceptual_seed = cfg.model.perceptual_seed;
  int classes = synth_vocabulary().num_categories();
  if (!cfg.paths.images.empty()) {
    rollouts = load_fixture_rollouts(cfg.paths.images);
    data_id = hex64(fnv1a64(fs::path(cfg.paths.images).filename().string()));
  } else {
    require_path(cfg.paths.checkpoint, "paths.checkpoint");
    require_path(cfg.paths.dataset, "paths.dataset");
    Checkpoint ck = load_checkpoint(cfg.paths.checkpoint);
    perceptual_seed = ck.model->config().perceptual_seed;
    classes = ck.model->vocabulary().num_categories();
    auto data = load_dataset(cfg.paths.dataset, ck.model->vocabulary());
    data_id = dataset_id(cfg.paths.dataset);
    const RolloutMode mode = ec.independent ? RolloutMode::kIndependent : RolloutMode::kIncremental;
    NoGradGuard ng;
    const std::size_t n = std::min<std::size_t>(data.size(), static_cast<std::size_t>(std::max(0, ec.max_sequences)));
    for (std::size_t i = 0; i < n; ++i) {
      auto steps = rollout(*ck.model, data[i].sequence, derive_seed(ec.seed, i), mode);
      std::vector<Tensor> imgs;
      for (const auto& s : steps) imgs.push_back(s.image.value());
      rollouts.push_back(std::move(imgs));
    }
    model_holder = std::move(ck.model);
  }
  json report;
  report["metric"] = ec.metric;
  report["mode"] = ec.independent ? "independent" : "incremental";
  if (ec.metric == "consistency") {
    PerceptualExtractor p(perceptual_seed);
    auto per = consistency(rollouts, p);
    double mean = 0;
    for (double v : per) mean += v;
    mean /= static_cast<double>(per.size());
    report["value"] = mean;
    report["stddev"] = nullptr;
    report["per_transition"] = per;
  } else {
    const int size = rollouts.front().front().dim(1);
    json info;
    auto clf = make_classifier(ec, size, classes, info);
    json per = json::array();
    std::size_t steps = rollouts.front().size();
    for (const auto& r : rollouts) steps = std::min(steps, r.size());
    ScoreStats last;
    for (std::size_t k = 0; k < steps; ++k) {
      std::vector<Tensor> imgs;
      for (const auto& r : rollouts) imgs.push_back(r[k]);
      last = inception_score(imgs, *clf, ec.splits);
      per.push_back({{"step", k}, {"mean", last.mean}, {"stddev", last.stddev}});
    }
    report["value"] = last.mean;
    report["stddev"] = last.stddev;
    report["per_step"] = per;
    for (auto& [k, v] : info.items()) report[k] = v;
  }
  report["count"] = rollouts.size();
  report["config_hash"] = cfg.hash();
  report["dataset_id"] = data_id;
  return report.dump(2) + "\n";
}

}  // namespace isg::cmd
