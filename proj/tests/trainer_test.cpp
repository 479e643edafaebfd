#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "isggen/error.hpp"
#include "isggen/image_io.hpp"
#include "isggen/model.hpp"
#include "isggen/ops.hpp"
#include "isggen/trainer.hpp"
#include "support.hpp"

namespace {

using isg::Tensor;
namespace ops = isg::ops;

std::vector<isg::TrainingExample> tiny_data(int count, std::uint64_t seed) {
  isg::DatasetSpec spec;
  spec.image_size = 16;
  spec.mask_size = 8;
  std::vector<isg::TrainingExample> out;
  for (const auto& s : isg::synth_shapes(count, seed, spec)) out.push_back(isg::make_training_example(s.image, seed, 3, 0.5, 8));
  return out;
}

std::string strip_time(const isg::IterationRecord& r) {
  auto copy = r;
  copy.time_ms = 0;
  return copy.to_json();
}

}  // namespace

TEST(Rollout, SingleStepIsPlainGeneration) {
  isg::Model model(isg::testing::tiny_model(), isg::synth_vocabulary());
  const auto ex = tiny_data(1, 3)[0];
  const isg::GraphSequence single{{ex.sequence.steps.back()}};
  const auto steps = isg::rollout(model, single, 17);
  ASSERT_EQ(steps.size(), 1u);
  const auto direct = isg::generate_step(model, single.steps[0], {}, std::nullopt, isg::step_noise_seed(17, 0));
  EXPECT_EQ(steps[0].image.value(), direct.image.value());
  EXPECT_EQ(steps[0].new_node_ids.size(), single.steps[0].nodes.size());
}

TEST(Rollout, StepInvariantsAndDeterminism) {
  isg::Model model(isg::testing::tiny_model(), isg::synth_vocabulary());
  for (const auto& ex : tiny_data(6, 4)) {
    const auto steps = isg::rollout(model, ex.sequence, 5);
    const auto again = isg::rollout(model, ex.sequence, 5);
    ASSERT_EQ(steps.size(), 3u);
    std::set<int> seen;
    for (std::size_t k = 0; k < steps.size(); ++k) {
      EXPECT_EQ(steps[k].index, static_cast<int>(k));
      EXPECT_EQ(steps[k].image.value(), again[k].image.value());
      const auto expect_new = k == 0 ? ex.sequence.steps[0].node_ids() : ex.sequence.new_nodes(k);
      EXPECT_EQ(std::set<int>(steps[k].new_node_ids.begin(), steps[k].new_node_ids.end()),
                std::set<int>(expect_new.begin(), expect_new.end()));
      for (int id : steps[k].new_node_ids) EXPECT_TRUE(seen.insert(id).second) << "node " << id << " generated twice";
      // The layout map vanishes outside the boxes of this step's objects.
      const Tensor& map = steps[k].layout_map.value();
      const int S = map.dim(1);
      for (int y = 0; y < S; ++y)
        for (int x = 0; x < S; ++x) {
          bool covered = false;
          for (const auto& o : steps[k].layout) {
            const auto b = o.box_value();
            covered = covered || (x + 1.0 > b.x0 * S && x < b.x1 * S && y + 1.0 > b.y0 * S && y < b.y1 * S);
          }
          if (covered) continue;
          for (int c = 0; c < map.dim(0); ++c) ASSERT_EQ(map.at(c, y, x), 0.0);
        }
    }
    const auto final_ids = ex.sequence.steps.back().node_ids();
    EXPECT_EQ(seen, std::set<int>(final_ids.begin(), final_ids.end()));
  }
}

TEST(Rollout, IndependentModeRegeneratesEveryNode) {
  isg::Model model(isg::testing::tiny_model(), isg::synth_vocabulary());
  const auto ex = tiny_data(1, 8)[0];
  const auto inc = isg::rollout(model, ex.sequence, 2, isg::RolloutMode::kIncremental);
  const auto ind = isg::rollout(model, ex.sequence, 2, isg::RolloutMode::kIndependent);
  EXPECT_EQ(inc[0].image.value(), ind[0].image.value());
  for (std::size_t k = 0; k < ind.size(); ++k) EXPECT_EQ(ind[k].new_node_ids.size(), ex.sequence.steps[k].nodes.size());
  EXPECT_NE(inc[1].image.value(), ind[1].image.value());
}

TEST(Rollout, FinalPixelLossReachesGcnEmbeddings) {
  isg::Model model(isg::testing::tiny_model(), isg::synth_vocabulary());
  const auto ex = tiny_data(1, 9)[0];
  const auto steps = isg::rollout(model, ex.sequence, 1);
  isg::pixel_loss(steps.back().image, ops::constant(ex.target_image)).backward();
  double norm = 0;
  for (double g : model.gcn.params().get("gcn.category_embedding").grad().values()) norm += g * g;
  EXPECT_GT(norm, 0.0);
}

TEST(Checkpoint, SaveLoadSaveIsByteIdenticalAndPreservesRollouts) {
  isg::testing::TempDir tmp("ckpt");
  auto cfg = isg::testing::tiny_run();
  isg::Model model(cfg.model, isg::synth_vocabulary());
  auto data = tiny_data(4, 1);
  isg::Trainer trainer(model, cfg, data);
  trainer.step();
  trainer.save((tmp / "a.isg").string());
  auto ck = isg::load_checkpoint(tmp / "a.isg");
  EXPECT_EQ(ck.iteration, 1);
  EXPECT_EQ(ck.config_hash, cfg.hash());
  isg::Adam ag(ck.model->generator_params(), {}), ad(ck.model->discriminator_params(), {});
  ag.restore(ck.adam_generator.steps, ck.adam_generator.moments);
  ad.restore(ck.adam_discriminator.steps, ck.adam_discriminator.moments);
  isg::save_checkpoint(tmp / "b.isg", *ck.model, ck.config, ck.iteration, ck.rng_state, &ag, &ad);
  EXPECT_EQ(isg::read_text_file(tmp / "a.isg"), isg::read_text_file(tmp / "b.isg"));

  const auto before = isg::rollout(model, data[0].sequence, 4);
  const auto after = isg::rollout(*ck.model, data[0].sequence, 4);
  for (std::size_t k = 0; k < before.size(); ++k) EXPECT_EQ(before[k].image.value(), after[k].image.value());
}

TEST(Checkpoint, MismatchedDimsNameTheParameter) {
  isg::testing::TempDir tmp("ckpt_dims");
  auto cfg = isg::testing::tiny_run();
  isg::Model model(cfg.model, isg::synth_vocabulary());
  isg::save_checkpoint(tmp / "a.isg", model, cfg, 0, "0", nullptr, nullptr);
  auto wider = cfg.model;
  wider.gcn_hidden = 24;
  isg::Model other(wider, isg::synth_vocabulary());
  try {
    isg::load_weights(other, isg::read_archive(tmp / "a.isg"));
    FAIL() << "expected a shape error";
  } catch (const isg::Error& e) {
    EXPECT_EQ(e.kind(), isg::ErrorKind::kData);
    EXPECT_NE(std::string(e.what()).find("gcn.layer0.hidden.weight"), std::string::npos) << e.what();
  }
}

TEST(Checkpoint, CorruptArchivesRejected) {
  isg::testing::TempDir tmp("ckpt_bad");
  auto cfg = isg::testing::tiny_run();
  isg::Model model(cfg.model, isg::synth_vocabulary());
  isg::save_checkpoint(tmp / "a.isg", model, cfg, 0, "0", nullptr, nullptr);
  const std::string good = isg::read_text_file(tmp / "a.isg");
  auto expect_data_error = [&](const std::string& bytes, const char* what) {
    isg::write_text_file(tmp / "bad.isg", bytes);
    try {
      isg::load_checkpoint(tmp / "bad.isg");
      ADD_FAILURE() << what;
    } catch (const isg::Error& e) {
      EXPECT_EQ(e.kind(), isg::ErrorKind::kData) << what;
    }
  };
  expect_data_error("XXXXXXXX" + good.substr(8), "bad magic");
  expect_data_error(good.substr(0, good.size() - 16), "truncated");
  expect_data_error(good + "junk", "trailing bytes");
  std::string tampered = good;
  const auto pos = tampered.find("\"iterations\":");
  ASSERT_NE(pos, std::string::npos);
  tampered[pos + 13] = tampered[pos + 13] == '9' ? '8' : '9';
  expect_data_error(tampered, "config hash");
  EXPECT_THROW(isg::load_checkpoint(tmp / "missing.isg"), isg::Error);
}

TEST(Trainer, ResumeReproducesNextIterationsExactly) {
  isg::testing::TempDir tmp("resume");
  auto cfg = isg::testing::tiny_run();
  auto data = tiny_data(6, 2);
  std::vector<std::string> straight;
  {
    isg::Model model(cfg.model, isg::synth_vocabulary());
    isg::Trainer t(model, cfg, data);
    for (int i = 0; i < 4; ++i) straight.push_back(strip_time(t.step()));
  }
  std::vector<std::string> resumed;
  {
    isg::Model model(cfg.model, isg::synth_vocabulary());
    isg::Trainer t(model, cfg, data);
    for (int i = 0; i < 2; ++i) resumed.push_back(strip_time(t.step()));
    t.save((tmp / "mid.isg").string());
  }
  {
    auto ck = isg::load_checkpoint(tmp / "mid.isg");
    isg::Trainer t(*ck.model, ck.config, data);
    t.restore(ck);
    EXPECT_EQ(t.iteration(), 2);
    for (int i = 0; i < 2; ++i) resumed.push_back(strip_time(t.step()));
  }
  EXPECT_EQ(resumed, straight);
}

TEST(Trainer, FaultInjectedNanAbortsWithNumericError) {
  auto cfg = isg::testing::tiny_run();
  cfg.train.fault_inject_nan_iter = 2;
  isg::Model model(cfg.model, isg::synth_vocabulary());
  isg::Trainer t(model, cfg, tiny_data(4, 5));
  auto first = t.step();
  EXPECT_TRUE(std::isfinite(first.generator.total));
  const Tensor before = model.gcn.params().get("gcn.category_embedding").value();
  try {
    t.step();
    FAIL() << "expected a numeric error";
  } catch (const isg::Error& e) {
    EXPECT_EQ(e.kind(), isg::ErrorKind::kNumeric);
  }
  EXPECT_EQ(t.iteration(), 1);
  EXPECT_EQ(model.gcn.params().get("gcn.category_embedding").value(), before);
}

TEST(Trainer, RecordsAreFiniteAndItemized) {
  auto cfg = isg::testing::tiny_run();
  isg::Model model(cfg.model, isg::synth_vocabulary());
  isg::Trainer t(model, cfg, tiny_data(4, 6));
  const auto r = t.step();
  EXPECT_EQ(r.iter, 1);
  for (double v : {r.generator.gan, r.generator.box, r.generator.mask, r.generator.pixel, r.generator.pixel_step,
                   r.generator.perceptual, r.generator.total, r.d_image, r.d_object}) {
    EXPECT_TRUE(std::isfinite(v));
    EXPECT_GE(v, 0.0);
  }
  EXPECT_NEAR(r.generator.recombine(cfg.train.weights), r.generator.total, 1e-9);
  const std::string line = r.to_json();
  EXPECT_EQ(line.find("{\"iter\":1,\"gan\":"), 0u);
}

TEST(Trainer, StepsPerSequenceMustMatchData) {
  auto cfg = isg::testing::tiny_run();
  cfg.train.steps_per_sequence = 2;
  isg::Model model(cfg.model, isg::synth_vocabulary());
  EXPECT_THROW(isg::Trainer(model, cfg, tiny_data(2, 1)), isg::Error);
  cfg.train.steps_per_sequence = 1;
  isg::Trainer single(model, cfg, tiny_data(2, 1));
  EXPECT_TRUE(std::isfinite(single.step().generator.total));
}
