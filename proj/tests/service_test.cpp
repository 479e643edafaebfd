#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>

#include "httplib.h"
#include "isggen/error.hpp"
#include "isggen/image_io.hpp"
#include "isggen/service.hpp"
#include "isggen/trainer.hpp"
#include "json.hpp"
#include "support.hpp"

namespace {

using json = nlohmann::json;

std::shared_ptr<const isg::Model> tiny() {
  return std::make_shared<const isg::Model>(isg::testing::tiny_model(), isg::synth_vocabulary());
}

isg::GraphSequence tiny_sequence(std::uint64_t seed) {
  isg::DatasetSpec spec;
  spec.image_size = 16;
  spec.mask_size = 8;
  const auto scenes = isg::synth_shapes(1, seed, spec);
  return isg::make_training_example(scenes[0].image, seed, 3, 0.5, 8).sequence;
}

// The graph update that turns step k-1 of `seq` into step k, adding nodes in
// reverse id order so that insertion order differs from the split's order.
isg::GraphUpdate delta(const isg::GraphSequence& seq, std::size_t k, const isg::Vocabulary& vocab) {
  const isg::SceneGraph& g = seq.steps[k];
  isg::GraphUpdate up;
  std::set<int> before;
  if (k > 0)
    for (int id : seq.steps[k - 1].node_ids()) before.insert(id);
  for (auto it = g.nodes.rbegin(); it != g.nodes.rend(); ++it)
    if (!before.count(it->id)) up.add_nodes.push_back({it->id, vocab.category_name(it->category)});
  for (auto it = g.edges.rbegin(); it != g.edges.rend(); ++it)
    if (!before.count(it->s) || !before.count(it->o)) up.add_edges.push_back({it->s, vocab.predicate_name(it->p), it->o});
  return up;
}

template <class Fn>
void expect_error(isg::ErrorKind kind, Fn&& fn) {
  try {
    fn();
    ADD_FAILURE() << "expected " << isg::to_string(kind);
  } catch (const isg::Error& e) {
    EXPECT_EQ(e.kind(), kind) << e.what();
  }
}

}  // namespace

TEST(Service, SessionsAreIndependentAndPersisted) {
  isg::testing::TempDir tmp("svc");
  isg::SessionService svc(tiny(), "ck", tmp.path());
  auto a = svc.create_session("", 1);
  auto b = svc.create_session("ck", 1);
  EXPECT_NE(a.session_id, b.session_id);
  EXPECT_EQ(a.step, 0);
  EXPECT_TRUE(a.graph.nodes.empty());
  const auto& vocab = svc.vocabulary();
  isg::GraphUpdate up;
  up.add_nodes.push_back({std::nullopt, vocab.category_name(0)});
  auto a1 = svc.update_graph(a.session_id, up);
  ASSERT_EQ(a1.graph.nodes.size(), 1u);
  EXPECT_EQ(a1.pending(), std::vector<int>{a1.graph.nodes[0].id});
  EXPECT_TRUE(svc.get(b.session_id).graph.nodes.empty());
  expect_error(isg::ErrorKind::kNotFound, [&] { svc.create_session("other"); });
  expect_error(isg::ErrorKind::kNotFound, [&] { svc.get("0123abcd"); });
  expect_error(isg::ErrorKind::kNotFound, [&] { svc.get("../etc"); });

  // A fresh service over the same store sees the same state.
  isg::SessionService again(tiny(), "ck", tmp.path());
  EXPECT_EQ(again.state_json(again.get(a.session_id)), svc.state_json(a1));
}

TEST(Service, GraphEditingRules) {
  isg::testing::TempDir tmp("svc_edit");
  isg::SessionService svc(tiny(), "ck", tmp.path());
  const auto& vocab = svc.vocabulary();
  const auto id = svc.create_session("", 3).session_id;
  isg::GraphUpdate up;
  up.add_nodes = {{0, vocab.category_name(1)}, {1, vocab.category_name(2)}};
  up.add_edges = {{0, "left of", 1}};
  svc.update_graph(id, up);

  expect_error(isg::ErrorKind::kValidation, [&] {
    isg::GraphUpdate bad;
    bad.add_edges = {{0, "left of", 7}};
    svc.update_graph(id, bad);
  });
  expect_error(isg::ErrorKind::kValidation, [&] {
    isg::GraphUpdate bad;
    bad.add_nodes = {{std::nullopt, "unicorn"}};
    svc.update_graph(id, bad);
  });
  expect_error(isg::ErrorKind::kConflict, [&] {
    isg::GraphUpdate bad;
    bad.add_nodes = {{1, vocab.category_name(0)}};
    svc.update_graph(id, bad);
  });
  // Failed updates leave the stored graph untouched.
  EXPECT_EQ(svc.get(id).graph.nodes.size(), 2u);
  EXPECT_EQ(svc.get(id).graph.edges.size(), 1u);

  svc.step(id);
  expect_error(isg::ErrorKind::kConflict, [&] { svc.step(id); });
  expect_error(isg::ErrorKind::kConflict, [&] {
    isg::GraphUpdate rm;
    rm.remove_nodes = {0};
    svc.update_graph(id, rm);
  });

  isg::GraphUpdate more;
  more.add_nodes = {{5, vocab.category_name(3)}};
  more.add_edges = {{5, "above", 0}};
  EXPECT_EQ(svc.update_graph(id, more).pending(), std::vector<int>{5});
  isg::GraphUpdate rm;
  rm.remove_nodes = {5};
  auto s = svc.update_graph(id, rm);
  EXPECT_TRUE(s.pending().empty());
  EXPECT_EQ(s.graph.edges.size(), 1u);  // the edge to the deleted node went with it
  expect_error(isg::ErrorKind::kNotFound, [&] {
    isg::GraphUpdate r;
    r.remove_edges = {{1, "left of", 0}};
    svc.update_graph(id, r);
  });
}

TEST(Service, StepIsAtomicOnFailure) {
  isg::testing::TempDir tmp("svc_atomic");
  isg::SessionService svc(tiny(), "ck", tmp.path());
  const auto id = svc.create_session("", 4).session_id;
  isg::GraphUpdate up;
  up.add_nodes = {{0, svc.vocabulary().category_name(0)}};
  svc.update_graph(id, up);
  svc.step(id);
  up.add_nodes = {{1, svc.vocabulary().category_name(1)}};
  svc.update_graph(id, up);
  const std::string before = isg::read_text_file(tmp / id / "session.json");
  // Losing the previous image makes the next step fail; nothing may change.
  std::filesystem::rename(tmp / id / "prev_0.bin", tmp / id / "moved.bin");
  EXPECT_THROW(svc.step(id), isg::Error);
  EXPECT_EQ(isg::read_text_file(tmp / id / "session.json"), before);
  EXPECT_FALSE(std::filesystem::exists(tmp / id / "images" / "1.png"));
  std::filesystem::rename(tmp / id / "moved.bin", tmp / id / "prev_0.bin");
  EXPECT_EQ(svc.step(id).step_index, 1);
  expect_error(isg::ErrorKind::kNotFound, [&] { svc.image_png(id, 2); });
  EXPECT_EQ(svc.image_png(id, 1).substr(1, 3), "PNG");
}

TEST(Service, MatchesOfflineRolloutBitForBit) {
  isg::testing::TempDir tmp("svc_parity");
  auto model = tiny();
  for (std::uint64_t seed : {11u, 12u, 13u}) {
    const auto seq = tiny_sequence(seed);
    const auto offline = isg::rollout(*model, seq, seed);
    isg::SessionService svc(model, "ck", tmp.path());
    const auto id = svc.create_session("", seed).session_id;
    for (std::size_t k = 0; k < seq.steps.size(); ++k) {
      svc.update_graph(id, delta(seq, k, model->vocabulary()));
      // Restarting the service between steps must not matter.
      isg::SessionService fresh(model, "ck", tmp.path());
      const auto out = fresh.step(id);
      EXPECT_EQ(out.image.storage(), offline[k].image.value().storage()) << "seed " << seed << " step " << k;
      auto a = out.new_node_ids, b = offline[k].new_node_ids;
      std::sort(a.begin(), a.end());
      std::sort(b.begin(), b.end());
      EXPECT_EQ(a, b);
    }
  }
}

class HttpApi : public ::testing::Test {
 protected:
  void SetUp() override {
    svc_ = std::make_unique<isg::SessionService>(tiny(), "ck", tmp_.path());
    server_ = std::make_unique<isg::HttpServer>(*svc_);
    port_ = server_->bind("127.0.0.1", 0);
    thread_ = std::thread([this] { server_->listen(); });
    client_ = std::make_unique<httplib::Client>("127.0.0.1", port_);
    for (int i = 0; i < 200 && !client_->Get("/healthz"); ++i) std::this_thread::sleep_for(std::chrono::milliseconds(10));
  }
  void TearDown() override {
    server_->stop();
    thread_.join();
  }
  json post(const std::string& path, const json& body, int expect_status) {
    auto r = client_->Post(path, body.dump(), "application/json");
    EXPECT_TRUE(r);
    if (!r) return json();
    EXPECT_EQ(r->status, expect_status) << path << " " << r->body;
    return json::parse(r->body);
  }
  void expect_error_body(const json& j, const std::string& code) {
    EXPECT_EQ(j.value("code", ""), code) << j.dump();
    EXPECT_TRUE(j.contains("message") && j.contains("detail")) << j.dump();
  }

  isg::testing::TempDir tmp_{"http"};
  std::unique_ptr<isg::SessionService> svc_;
  std::unique_ptr<isg::HttpServer> server_;
  std::unique_ptr<httplib::Client> client_;
  std::thread thread_;
  int port_ = 0;
};

TEST_F(HttpApi, HealthAndVocabulary) {
  auto h = client_->Get("/healthz");
  ASSERT_TRUE(h);
  EXPECT_EQ(h->status, 200);
  auto v = client_->Get("/v1/vocabulary");
  ASSERT_TRUE(v);
  const auto j = json::parse(v->body);
  EXPECT_EQ(j["categories"].size(), static_cast<std::size_t>(svc_->vocabulary().num_categories()));
  EXPECT_EQ(j["predicates"][0], "left of");
  EXPECT_EQ(j["version"], svc_->vocabulary().version());
}

TEST_F(HttpApi, SessionLifecycle) {
  const auto& vocab = svc_->vocabulary();
  auto s = post("/v1/sessions", {{"seed", 21}}, 201);
  const std::string id = s["session_id"];
  EXPECT_EQ(s["step"], 0);
  const std::string base = "/v1/sessions/" + id;
  auto g = post(base + "/graph",
                {{"add_nodes", {{{"id", 0}, {"category", vocab.category_name(0)}}, {{"id", 1}, {"category", vocab.category_name(1)}}}},
                 {"add_edges", {{{"s", 0}, {"p", "below"}, {"o", 1}}}}},
                200);
  EXPECT_EQ(g["pending_node_ids"], json({0, 1}));
  auto st = post(base + "/step", json::object(), 200);
  EXPECT_EQ(st["step_index"], 0);
  EXPECT_EQ(st["image_url"], base + "/images/0");
  auto img = client_->Get(base + "/images/0");
  ASSERT_TRUE(img);
  EXPECT_EQ(img->status, 200);
  EXPECT_EQ(img->get_header_value("Content-Type"), "image/png");
  isg::write_text_file(tmp_ / "step0.png", img->body);
  EXPECT_EQ(isg::read_image(tmp_ / "step0.png").shape(), (isg::Shape{3, 16, 16}));
  auto got = client_->Get(base);
  ASSERT_TRUE(got);
  const auto state = json::parse(got->body);
  EXPECT_EQ(state["step"], 1);
  EXPECT_EQ(state["generated_node_ids"], json({0, 1}));
  EXPECT_EQ(state["images"], json({base + "/images/0"}));
}

TEST_F(HttpApi, ErrorsCarryCodeMessageDetail) {
  const std::string id = post("/v1/sessions", json::object(), 201)["session_id"];
  const std::string base = "/v1/sessions/" + id;
  expect_error_body(post(base + "/step", json::object(), 409), "conflict");
  expect_error_body(post(base + "/graph", {{"add_edges", {{{"s", 0}, {"p", "above"}, {"o", 1}}}}}, 400), "validation");
  expect_error_body(post(base + "/graph", {{"add_nodes", {{{"category", "unicorn"}}}}}, 400), "validation");
  expect_error_body(post("/v1/sessions", {{"checkpoint", "nope"}}, 404), "not_found");
  expect_error_body(post("/v1/sessions/ffff0000/step", json::object(), 404), "not_found");
  auto bad = client_->Post(base + "/graph", "{not json", "application/json");
  ASSERT_TRUE(bad);
  EXPECT_EQ(bad->status, 400);
  expect_error_body(json::parse(bad->body), "parse");
  auto missing = client_->Get(base + "/images/0");
  ASSERT_TRUE(missing);
  EXPECT_EQ(missing->status, 404);
  auto route = client_->Get("/v2/whatever");
  ASSERT_TRUE(route);
  EXPECT_EQ(route->status, 404);
  expect_error_body(json::parse(route->body), "not_found");
}
