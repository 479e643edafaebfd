#include <functional>

#include "httplib.h"
#include "isggen/error.hpp"
#include "isggen/service.hpp"
#include "json.hpp"

namespace isg {

using json = nlohmann::ordered_json;

namespace {

int http_status(ErrorKind k) {
  switch (k) {
    case ErrorKind::kValidation:
    case ErrorKind::kParse:
    case ErrorKind::kConfig:
      return 400;
    case ErrorKind::kNotFound:
      return 404;
    case ErrorKind::kConflict:
      return 409;
    default:
      return 500;
  }
}

void send_error(httplib::Response& res, int status, const std::string& code, const std::string& message,
                const std::string& detail) {
  json j;
  j["code"] = code;
  j["message"] = message;
  j["detail"] = detail;
  res.status = status;
  res.set_content(j.dump(), "application/json");
}

// Runs a handler, translating library errors into the JSON error body.
void guarded(httplib::Response& res, const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    send_error(res, http_status(e.kind()), to_string(e.kind()), e.what(), e.detail());
  } catch (const json::exception& e) {
    send_error(res, 400, to_string(ErrorKind::kParse), "malformed request body", e.what());
  } catch (const std::exception& e) {
    send_error(res, 500, to_string(ErrorKind::kInternal), "internal error", e.what());
  }
}

json parse_body(const httplib::Request& req) {
  if (req.body.empty()) return json::object();
  json j = json::parse(req.body, nullptr, false);
  if (j.is_discarded() || !j.is_object()) fail(ErrorKind::kParse, "request body must be a JSON object");
  return j;
}

GraphUpdate::EdgeRef edge_ref(const json& e) {
  return GraphUpdate::EdgeRef{e.at("s").get<int>(), e.at("p").get<std::string>(), e.at("o").get<int>()};
}

}  // namespace

struct HttpServer::Impl {
  SessionService& svc;
  httplib::Server server;
  explicit Impl(SessionService& s) : svc(s) {}
};

HttpServer::HttpServer(SessionService& service) : impl_(std::make_unique<Impl>(service)) {
  auto& srv = impl_->server;
  SessionService& svc = service;
  auto send_json = [](httplib::Response& res, const std::string& body, int status = 200) {
    res.status = status;
    res.set_content(body, "application/json");
  };

  srv.Get("/healthz", [=](const httplib::Request&, httplib::Response& res) {
    send_json(res, R"({"status":"ok"})");
  });
  srv.Get("/v1/vocabulary", [&svc, send_json](const httplib::Request&, httplib::Response& res) {
    guarded(res, [&] {
      json j;
      j["version"] = svc.vocabulary().version();
      j["categories"] = svc.vocabulary().categories();
      j["predicates"] = svc.vocabulary().predicates();
      send_json(res, j.dump());
    });
  });
  srv.Post("/v1/sessions", [&svc, send_json](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      json body = parse_body(req);
      std::optional<std::uint64_t> seed;
      if (body.contains("seed")) seed = body["seed"].get<std::uint64_t>();
      auto s = svc.create_session(body.value("checkpoint", std::string()), seed);
      send_json(res, svc.state_json(s), 201);
    });
  });
  srv.Get(R"(/v1/sessions/([0-9A-Za-z]+))", [&svc, send_json](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] { send_json(res, svc.state_json(svc.get(req.matches[1]))); });
  });
  srv.Post(R"(/v1/sessions/([0-9A-Za-z]+)/graph)",
           [&svc, send_json](const httplib::Request& req, httplib::Response& res) {
             guarded(res, [&] {
               json body = parse_body(req);
               GraphUpdate up;
               for (const auto& n : body.value("add_nodes", json::array())) {
                 GraphUpdate::NewNode nn;
                 if (n.contains("id")) nn.id = n["id"].get<int>();
                 nn.category = n.at("category").get<std::string>();
                 up.add_nodes.push_back(nn);
               }
               for (const auto& e : body.value("add_edges", json::array())) up.add_edges.push_back(edge_ref(e));
               for (const auto& v : body.value("remove_nodes", json::array())) up.remove_nodes.push_back(v.get<int>());
               for (const auto& e : body.value("remove_edges", json::array())) up.remove_edges.push_back(edge_ref(e));
               send_json(res, svc.state_json(svc.update_graph(req.matches[1], up)));
             });
           });
  srv.Post(R"(/v1/sessions/([0-9A-Za-z]+)/step)",
           [&svc, send_json](const httplib::Request& req, httplib::Response& res) {
             guarded(res, [&] {
               const std::string id = req.matches[1];
               auto out = svc.step(id);
               json j;
               j["step_index"] = out.step_index;
               j["new_node_ids"] = out.new_node_ids;
               j["image_url"] = "/v1/sessions/" + id + "/images/" + std::to_string(out.step_index);
               send_json(res, j.dump());
             });
           });
  srv.Get(R"(/v1/sessions/([0-9A-Za-z]+)/images/(-?[0-9]+))",
          [&svc](const httplib::Request& req, httplib::Response& res) {
            guarded(res, [&] {
              res.set_content(svc.image_png(req.matches[1], std::stoi(req.matches[2])), "image/png");
            });
          });
  srv.set_error_handler([](const httplib::Request&, httplib::Response& res) {
    if (res.body.empty()) send_error(res, res.status, "not_found", "no such route", "");
  });
}

HttpServer::~HttpServer() { stop(); }

int HttpServer::bind(const std::string& host, int port) {
  auto& srv = impl_->server;
  int bound = port;
  if (port == 0) {
    bound = srv.bind_to_any_port(host);
  } else if (!srv.bind_to_port(host, port)) {
    bound = -1;
  }
  if (bound < 0) fail(ErrorKind::kIo, "cannot bind " + host + ":" + std::to_string(port));
  return bound;
}

void HttpServer::listen() { impl_->server.listen_after_bind(); }

void HttpServer::stop() {
  if (impl_) impl_->server.stop();
}

}  // namespace isg
