#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "isggen/model.hpp"

namespace isg {

struct SessionState {
  std::string session_id;
  std::string checkpoint;
  std::uint64_t seed = 0;
  int step = 0;  // completed generations
  SceneGraph graph;
  std::set<int> generated;

  std::vector<int> pending() const;
};

struct GraphUpdate {
  struct NewNode {
    std::optional<int> id;
    std::string category;
  };
  struct EdgeRef {
    int s = 0;
    std::string p;
    int o = 0;
  };
  std::vector<NewNode> add_nodes;
  std::vector<EdgeRef> add_edges;
  std::vector<int> remove_nodes;
  std::vector<EdgeRef> remove_edges;
};

struct StepOutcome {
  int step_index = 0;
  std::vector<int> new_node_ids;
  Tensor image;  // [3,S,S] in [-1,1]
};

// Session-oriented incremental generation over one loaded checkpoint. State
// lives in a directory store: <store>/<id>/session.json, prev_<k>.bin (exact
// float64 previous image), images/<k>.png.
class SessionService {
 public:
  SessionService(std::shared_ptr<const Model> model, std::string checkpoint_ref, std::filesystem::path store);

  // `checkpoint_ref` must name the loaded checkpoint ("" selects it).
  SessionState create_session(const std::string& checkpoint_ref, std::optional<std::uint64_t> seed = std::nullopt);
  SessionState get(const std::string& id);
  SessionState update_graph(const std::string& id, const GraphUpdate& update);
  // Atomic: on any error the stored session is unchanged.
  StepOutcome step(const std::string& id);
  std::string image_png(const std::string& id, int k);

  const Vocabulary& vocabulary() const { return model_->vocabulary(); }
  const std::string& checkpoint_ref() const { return checkpoint_ref_; }
  const Model& model() const { return *model_; }

  // JSON views shared by the HTTP binding.
  std::string state_json(const SessionState& s) const;

 private:
  struct Slot {
    std::mutex mu;
  };
  std::shared_ptr<Slot> slot(const std::string& id);
  SessionState load(const std::string& id) const;
  void store(const SessionState& s) const;
  std::filesystem::path dir(const std::string& id) const;

  std::shared_ptr<const Model> model_;
  std::string checkpoint_ref_;
  std::filesystem::path root_;
  std::mutex slots_mu_;
  std::map<std::string, std::shared_ptr<Slot>> slots_;
};

// Minimal HTTP+JSON binding of SessionService.
class HttpServer {
 public:
  explicit HttpServer(SessionService& service);
  ~HttpServer();
  HttpServer(const HttpServer&) = delete;
  HttpServer& operator=(const HttpServer&) = delete;

  // Binds; port 0 picks a free port. Returns the bound port.
  int bind(const std::string& host, int port);
  // Blocks serving requests until stop().
  void listen();
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace isg
