// Drives the shared library through its C header and the isggen binary
// through a shell, the way users and scripts do.
#include <gtest/gtest.h>
#include <signal.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cstdio>
#include <fstream>
#include <sstream>

#include "httplib.h"
#include "isggen/isggen.h"
#include "isggen/image_io.hpp"
#include "isggen/metrics.hpp"
#include "json.hpp"
#include "support.hpp"

namespace {

using json = nlohmann::json;
namespace fs = std::filesystem;

struct RunResult {
  int code = -1;
  std::string out;
};

RunResult run_cli(const std::string& args) {
  const std::string cmd = std::string(ISGGEN_CLI) + " " + args + " 2>&1";
  RunResult r;
  FILE* p = popen(cmd.c_str(), "r");
  if (!p) return r;
  char buf[4096];
  std::size_t n;
  while ((n = fread(buf, 1, sizeof buf, p)) > 0) r.out.append(buf, n);
  const int st = pclose(p);
  r.code = WIFEXITED(st) ? WEXITSTATUS(st) : -1;
  return r;
}

json report_of(const RunResult& r) {
  auto j = json::parse(r.out, nullptr, false);
  EXPECT_FALSE(j.is_discarded()) << r.out;
  return j;
}

int count_lines(const fs::path& p) {
  std::ifstream is(p);
  int n = 0;
  for (std::string line; std::getline(is, line);) n += !line.empty();
  return n;
}

// One tiny dataset and run shared by the whole suite.
class Cli : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = new isg::testing::TempDir("cli");
    isg::write_text_file(config(), isg::testing::tiny_run().to_json());
    auto p = run_cli("prepare --config " + config() + " --out " + path("data"));
    ASSERT_EQ(p.code, 0) << p.out;
    auto t = run_cli("train --config " + config() + " --dataset " + path("data") + " --out " + path("run"));
    ASSERT_EQ(t.code, 0) << t.out;
  }
  static void TearDownTestSuite() {
    delete dir_;
    dir_ = nullptr;
  }
  static std::string path(const std::string& rel) { return (dir_->path() / rel).string(); }
  static std::string config() { return path("tiny.json"); }

  static isg::testing::TempDir* dir_;
};
isg::testing::TempDir* Cli::dir_ = nullptr;

}  // namespace

TEST(CApi, ConfigResolutionAndErrors) {
  const char* ov[] = {"train.iterations=7", "paths.out=/tmp/x"};
  char* cfg = nullptr;
  ASSERT_EQ(isg_config_resolve(nullptr, ov, 2, &cfg), ISG_OK);
  const auto j = json::parse(cfg);
  EXPECT_EQ(j["train"]["iterations"], 7);
  char* hash = nullptr;
  ASSERT_EQ(isg_config_hash(cfg, &hash), ISG_OK);
  EXPECT_EQ(std::string(hash).size(), 16u);
  isg_string_free(hash);
  isg_string_free(cfg);

  const char* bad[] = {"train.nope=1"};
  cfg = nullptr;
  EXPECT_EQ(isg_config_resolve(nullptr, bad, 1, &cfg), ISG_ERR_CONFIG);
  EXPECT_EQ(cfg, nullptr);
  EXPECT_NE(std::string(isg_last_error()).find("train.nope"), std::string::npos) << isg_last_error();

  isg_model* m = nullptr;
  EXPECT_NE(isg_model_load("/nonexistent/model.isg", &m), ISG_OK);
  EXPECT_EQ(m, nullptr);
  EXPECT_EQ(isg_config_resolve(nullptr, nullptr, 0, nullptr), ISG_ERR_VALIDATION);
}

TEST_F(Cli, PrepareIsDeterministic) {
  const json m = json::parse(isg::read_text_file(path("data/manifest.json")));
  EXPECT_EQ(m["count"], 12);
  auto again = run_cli("prepare --config " + config() + " --out " + path("data2"));
  ASSERT_EQ(again.code, 0) << again.out;
  EXPECT_EQ(isg::read_text_file(path("data2/manifest.json")), isg::read_text_file(path("data/manifest.json")));
  auto other = run_cli("prepare --config " + config() + " --seed 99 --out " + path("data3"));
  ASSERT_EQ(other.code, 0) << other.out;
  EXPECT_NE(report_of(other)["dataset_id"], m["dataset_id"]);
  auto big = run_cli("prepare --source synth --count 64 --image-size 16 --out " + path("data64"));
  ASSERT_EQ(big.code, 0) << big.out;
  EXPECT_EQ(report_of(big)["count"], 64);
  EXPECT_EQ(std::distance(fs::directory_iterator(path("data64/sequences")), fs::directory_iterator()), 64);
}

TEST_F(Cli, PrepareCocoReportsFilterStats) {
  auto r = run_cli("prepare --source coco --annotations " + std::string(ISGGEN_TEST_FIXTURES) +
                   "/coco_mini.json --image-size 16 --set data.mask_size=8 --out " + path("coco"));
  ASSERT_EQ(r.code, 0) << r.out;
  const json m = json::parse(isg::read_text_file(path("coco/manifest.json")));
  EXPECT_EQ(m["count"], 3);
  EXPECT_EQ(m["filter_stats"]["images_seen"], 5);
  EXPECT_EQ(m["filter_stats"]["objects_removed_small"], 4);
  EXPECT_EQ(m["pixels"], "placeholder");
  auto missing = run_cli("prepare --source coco --annotations " + path("none.json") + " --out " + path("coco2"));
  EXPECT_EQ(missing.code, 3) << missing.out;
}

TEST_F(Cli, TrainWritesCheckpointsAndResumes) {
  EXPECT_TRUE(fs::exists(path("run/checkpoint_2.isg")));
  EXPECT_TRUE(fs::exists(path("run/checkpoint_4.isg")));
  EXPECT_EQ(isg::read_text_file(path("run/latest.isg")), isg::read_text_file(path("run/checkpoint_4.isg")));
  EXPECT_EQ(count_lines(path("run/metrics.jsonl")), 4);

  fs::copy(path("run"), path("resumed"), fs::copy_options::recursive);
  auto r = run_cli("train --config " + config() + " --dataset " + path("data") + " --out " + path("resumed") +
                   " --resume " + path("resumed/checkpoint_4.isg") + " --iterations 6");
  ASSERT_EQ(r.code, 0) << r.out;
  const json rep = report_of(r);
  EXPECT_EQ(rep["start_iteration"], 4);
  EXPECT_EQ(rep["end_iteration"], 6);
  std::ifstream log(path("resumed/metrics.jsonl"));
  std::vector<long long> iters;
  for (std::string line; std::getline(log, line);) iters.push_back(json::parse(line)["iter"].get<long long>());
  EXPECT_EQ(iters, (std::vector<long long>{1, 2, 3, 4, 5, 6}));

  auto wrong = run_cli("train --config " + config() + " --set model.embed_dim=12 --dataset " + path("data") +
                       " --out " + path("resumed") + " --resume " + path("run/checkpoint_4.isg"));
  EXPECT_EQ(wrong.code, 2) << wrong.out;
  EXPECT_NE(wrong.out.find("config hash mismatch"), std::string::npos) << wrong.out;
}

TEST_F(Cli, NonFiniteLossExitsWithNumericCode) {
  auto r = run_cli("train --config " + config() + " --dataset " + path("data") + " --out " + path("nan") +
                   " --set train.fault_inject_nan_iter=3");
  EXPECT_EQ(r.code, 4) << r.out;
  EXPECT_NE(r.out.find("checkpoint_2.isg"), std::string::npos) << r.out;
  EXPECT_EQ(count_lines(path("nan/metrics.jsonl")), 2);
}

TEST_F(Cli, GenerateWritesOneImagePerStep) {
  const std::string seq = (fs::directory_iterator(path("data/sequences")))->path().string();
  auto r = run_cli("generate --checkpoint " + path("run/latest.isg") + " --sequence " + seq + " --out " + path("gen"));
  ASSERT_EQ(r.code, 0) << r.out;
  for (int k = 0; k < 3; ++k) {
    const auto img = isg::read_image(path("gen/step_" + std::to_string(k) + ".png"));
    EXPECT_EQ(img.shape(), (isg::Shape{3, 16, 16}));
  }
  EXPECT_FALSE(fs::exists(path("gen/step_3.png")));
  auto again = run_cli("generate --checkpoint " + path("run/latest.isg") + " --sequence " + seq + " --out " + path("gen2"));
  ASSERT_EQ(again.code, 0);
  EXPECT_EQ(isg::read_text_file(path("gen/step_2.png")), isg::read_text_file(path("gen2/step_2.png")));
  auto missing = run_cli("generate --checkpoint " + path("nope.isg") + " --sequence " + seq + " --out " + path("gen3"));
  EXPECT_EQ(missing.code, 3) << missing.out;
  auto no_ck = run_cli("generate --sequence " + seq + " --out " + path("gen3"));
  EXPECT_EQ(no_ck.code, 2) << no_ck.out;
}

TEST_F(Cli, EvalOnFixturesAndCheckpoints) {
  // Three identical frames per rollout: zero change between steps.
  const isg::Tensor frame = isg::testing::random_tensor({3, 16, 16}, 5, 0.0, 1.0);
  for (int r = 0; r < 4; ++r)
    for (int k = 0; k < 3; ++k)
      isg::write_png(path("fix/r" + std::to_string(r) + "/" + std::to_string(k) + ".png"), frame);
  auto c = run_cli("eval --metric consistency --images " + path("fix"));
  ASSERT_EQ(c.code, 0) << c.out;
  const json cj = report_of(c);
  EXPECT_EQ(cj["value"], 0.0);
  EXPECT_EQ(cj["count"], 4);
  EXPECT_TRUE(cj.contains("config_hash"));

  auto is = run_cli("eval --metric is --classifier uniform --splits 2 --images " + path("fix"));
  ASSERT_EQ(is.code, 0) << is.out;
  EXPECT_NEAR(report_of(is)["value"].get<double>(), 1.0, 1e-12);

  auto ck = run_cli("eval --config " + config() + " --checkpoint " + path("run/latest.isg") + " --dataset " +
                    path("data") + " --metric consistency");
  ASSERT_EQ(ck.code, 0) << ck.out;
  const json kj = report_of(ck);
  EXPECT_EQ(kj["per_transition"].size(), 2u);
  EXPECT_EQ(kj["count"], 4);
  EXPECT_GE(kj["value"].get<double>(), 0.0);

  // 16 px renders are too small for the synth classifier to pass its gate.
  auto gate = run_cli("eval --metric is --classifier synth --splits 2 --set eval.classifier_train_count=90 "
                      "--set eval.classifier_epochs=1 --images " + path("fix"));
  EXPECT_EQ(gate.code, 3) << gate.out;
  EXPECT_NE(gate.out.find("validation accuracy"), std::string::npos) << gate.out;

  auto bad = run_cli("eval --metric fid --images " + path("fix"));
  EXPECT_EQ(bad.code, 2) << bad.out;
  auto gone = run_cli("eval --metric is --classifier uniform --images " + path("missing_fix"));
  EXPECT_EQ(gone.code, 3) << gone.out;
}

TEST_F(Cli, ServeAnswersHealthAndStopsOnSignal) {
  int fds[2];
  ASSERT_EQ(pipe(fds), 0);
  const std::string ck = path("run/latest.isg"), store = path("store");
  const pid_t pid = fork();
  ASSERT_GE(pid, 0);
  if (pid == 0) {
    dup2(fds[1], STDOUT_FILENO);
    close(fds[0]);
    execl(ISGGEN_CLI, ISGGEN_CLI, "serve", "--checkpoint", ck.c_str(), "--addr", "127.0.0.1:0", "--store", store.c_str(),
          static_cast<char*>(nullptr));
    _exit(127);
  }
  close(fds[1]);
  std::string line;
  char ch;
  while (read(fds[0], &ch, 1) == 1 && ch != '\n') line += ch;
  close(fds[0]);
  const auto colon = line.rfind(':');
  ASSERT_NE(colon, std::string::npos) << line;
  httplib::Client client("127.0.0.1", std::stoi(line.substr(colon + 1)));
  auto h = client.Get("/healthz");
  ASSERT_TRUE(h);
  EXPECT_EQ(h->status, 200);
  auto s = client.Post("/v1/sessions", "{}", "application/json");
  ASSERT_TRUE(s);
  EXPECT_EQ(s->status, 201);
  kill(pid, SIGTERM);
  int st = 0;
  waitpid(pid, &st, 0);
  EXPECT_TRUE(WIFEXITED(st) && WEXITSTATUS(st) == 0) << st;
}

TEST(ClassifierGate, SynthClassifierClearsGateAtDefaultSize) {
  const auto t = isg::train_synth_classifier(64, 1800, 8, 0);
  EXPECT_GE(t.validation_accuracy, 0.95);
  // Probabilities are a distribution over the synth categories.
  const auto p = t.classifier->probabilities(isg::testing::random_tensor({3, 64, 64}, 2));
  EXPECT_EQ(p.size(), 9u);
  double s = 0;
  for (double v : p) s += v;
  EXPECT_NEAR(s, 1.0, 1e-6);

  isg::testing::TempDir tmp("clf");
  t.classifier->save(tmp / "clf.isg");
  const auto back = isg::ConvClassifier::load(tmp / "clf.isg");
  EXPECT_EQ(back->probabilities(isg::testing::random_tensor({3, 64, 64}, 3)),
            t.classifier->probabilities(isg::testing::random_tensor({3, 64, 64}, 3)));
}
