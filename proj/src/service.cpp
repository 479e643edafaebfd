#include "isggen/service.hpp"

#include <algorithm>
#include <random>

#include "isggen/error.hpp"
#include "isggen/image_io.hpp"
#include "isggen/trainer.hpp"
#include "json.hpp"

namespace isg {

using json = nlohmann::ordered_json;

std::vector<int> SessionState::pending() const {
  std::vector<int> out;
  for (const auto& n : graph.nodes)
    if (!generated.count(n.id)) out.push_back(n.id);
  return out;
}

SessionService::SessionService(std::shared_ptr<const Model> model, std::string checkpoint_ref,
                               std::filesystem::path store)
    : model_(std::move(model)), checkpoint_ref_(std::move(checkpoint_ref)), root_(std::move(store)) {
  std::error_code ec;
  std::filesystem::create_directories(root_, ec);
  if (ec) fail(ErrorKind::kIo, "cannot create session store " + root_.string() + ": " + ec.message());
}

std::filesystem::path SessionService::dir(const std::string& id) const {
  const bool ok = !id.empty() && id.size() <= 64 &&
                  std::all_of(id.begin(), id.end(), [](char c) { return std::isxdigit(static_cast<unsigned char>(c)); });
  if (!ok) fail(ErrorKind::kNotFound, "unknown session '" + id + "'");
  return root_ / id;
}

std::shared_ptr<SessionService::Slot> SessionService::slot(const std::string& id) {
  std::lock_guard<std::mutex> lk(slots_mu_);
  auto& s = slots_[id];
  if (!s) s = std::make_shared<Slot>();
  return s;
}

std::string SessionService::state_json(const SessionState& s) const {
  json j;
  j["session_id"] = s.session_id;
  j["checkpoint"] = s.checkpoint;
  j["seed"] = s.seed;
  j["step"] = s.step;
  j["graph"] = json::parse(serialize(s.graph, vocabulary()));
  j["generated_node_ids"] = std::vector<int>(s.generated.begin(), s.generated.end());
  j["pending_node_ids"] = s.pending();
  json images = json::array();
  for (int k = 0; k < s.step; ++k) images.push_back("/v1/sessions/" + s.session_id + "/images/" + std::to_string(k));
  j["images"] = images;
  return j.dump(2) + "\n";
}

void SessionService::store(const SessionState& s) const {
  write_text_file(dir(s.session_id) / "session.json", state_json(s));
}

SessionState SessionService::load(const std::string& id) const {
  const auto path = dir(id) / "session.json";
  if (!std::filesystem::exists(path)) fail(ErrorKind::kNotFound, "unknown session '" + id + "'");
  json j = json::parse(read_text_file(path), nullptr, false);
  if (j.is_discarded()) fail(ErrorKind::kData, "session " + id + " has a corrupt state document");
  SessionState s;
  s.session_id = j.at("session_id").get<std::string>();
  s.checkpoint = j.at("checkpoint").get<std::string>();
  s.seed = j.at("seed").get<std::uint64_t>();
  s.step = j.at("step").get<int>();
  s.graph = deserialize(j.at("graph").dump(), vocabulary());
  for (int v : j.at("generated_node_ids").get<std::vector<int>>()) s.generated.insert(v);
  return s;
}

SessionState SessionService::create_session(const std::string& checkpoint_ref, std::optional<std::uint64_t> seed) {
  if (!checkpoint_ref.empty() && checkpoint_ref != checkpoint_ref_)
    fail(ErrorKind::kNotFound, "unknown checkpoint '" + checkpoint_ref + "'");
  std::random_device rd;
  SessionState s;
  s.checkpoint = checkpoint_ref_;
  do {
    const std::uint64_t v = (static_cast<std::uint64_t>(rd()) << 32) ^ rd();
    s.session_id = hex64(v);
  } while (std::filesystem::exists(root_ / s.session_id));
  s.seed = seed ? *seed : (static_cast<std::uint64_t>(rd()) << 32) ^ rd();
  std::filesystem::create_directories(root_ / s.session_id / "images");
  store(s);
  return s;
}

SessionState SessionService::get(const std::string& id) {
  auto sl = slot(id);
  std::lock_guard<std::mutex> lk(sl->mu);
  return load(id);
}

SessionState SessionService::update_graph(const std::string& id, const GraphUpdate& up) {
  auto sl = slot(id);
  std::lock_guard<std::mutex> lk(sl->mu);
  SessionState s = load(id);
  SceneGraph& g = s.graph;
  const Vocabulary& vocab = vocabulary();
  auto pred = [&](const std::string& name) {
    try {
      return vocab.predicate_index(name);
    } catch (const Error&) {
      fail(ErrorKind::kValidation, "unknown predicate '" + name + "'");
    }
  };
  for (const auto& e : up.remove_edges) {
    const GraphEdge target{e.s, pred(e.p), e.o};
    auto it = std::find(g.edges.begin(), g.edges.end(), target);
    if (it == g.edges.end()) fail(ErrorKind::kNotFound, "edge (" + std::to_string(e.s) + ", " + e.p + ", " +
                                                            std::to_string(e.o) + ") does not exist");
    g.edges.erase(it);
  }
  for (int id_rm : up.remove_nodes) {
    if (s.generated.count(id_rm))
      fail(ErrorKind::kConflict, "node " + std::to_string(id_rm) + " is already generated",
           "generated objects are part of the image context and cannot be removed");
    if (!g.has_node(id_rm)) fail(ErrorKind::kNotFound, "node " + std::to_string(id_rm) + " does not exist");
    std::erase_if(g.nodes, [&](const GraphNode& n) { return n.id == id_rm; });
    std::erase_if(g.edges, [&](const GraphEdge& e) { return e.s == id_rm || e.o == id_rm; });
  }
  for (const auto& n : up.add_nodes) {
    if (!vocab.has_category(n.category)) fail(ErrorKind::kValidation, "unknown category '" + n.category + "'");
    int nid = 0;
    if (n.id) {
      nid = *n.id;
      if (g.has_node(nid)) fail(ErrorKind::kConflict, "node id " + std::to_string(nid) + " already exists");
    } else {
      for (const auto& x : g.nodes) nid = std::max(nid, x.id + 1);
      for (int gid : s.generated) nid = std::max(nid, gid + 1);
    }
    g.nodes.push_back(GraphNode{nid, vocab.category_index(n.category)});
  }
  for (const auto& e : up.add_edges) {
    if (!g.has_node(e.s) || !g.has_node(e.o))
      fail(ErrorKind::kValidation, "edge references missing node " + std::to_string(g.has_node(e.s) ? e.o : e.s));
    g.edges.push_back(GraphEdge{e.s, pred(e.p), e.o});
  }
  g.validate(&vocab);
  store(s);
  return s;
}

StepOutcome SessionService::step(const std::string& id) {
  auto sl = slot(id);
  std::lock_guard<std::mutex> lk(sl->mu);
  SessionState s = load(id);
  if (s.pending().empty())
    fail(ErrorKind::kConflict, "no pending nodes to generate", "add nodes to the graph before stepping");
  const auto d = dir(id);
  std::optional<Var> prev;
  if (s.step > 0) prev = Var(read_tensor_file(d / ("prev_" + std::to_string(s.step - 1) + ".bin")));
  GenStep gs;
  {
    NoGradGuard ng;
    gs = generate_step(*model_, s.graph, s.generated, prev, step_noise_seed(s.seed, s.step));
  }
  const Tensor& img = gs.image.value();
  if (!img.all_finite()) fail(ErrorKind::kNumeric, "generation produced non-finite pixels");
  const int k = s.step;
  // Files for step k are written first; session.json is the commit point.
  write_tensor_file(d / ("prev_" + std::to_string(k) + ".bin"), img);
  write_text_file(d / "images" / (std::to_string(k) + ".png"), encode_png(signed_to_unit(img)));
  SessionState next = s;
  next.step = k + 1;
  for (int nid : gs.new_node_ids) next.generated.insert(nid);
  store(next);
  return StepOutcome{k, gs.new_node_ids, img};
}

std::string SessionService::image_png(const std::string& id, int k) {
  auto sl = slot(id);
  std::lock_guard<std::mutex> lk(sl->mu);
  SessionState s = load(id);
  if (k < 0 || k >= s.step) fail(ErrorKind::kNotFound, "session has no image " + std::to_string(k));
  return read_text_file(dir(id) / "images" / (std::to_string(k) + ".png"));
}

}  // namespace isg
