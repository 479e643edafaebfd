#include "isggen/isggen.h"

#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <memory>
#include <new>
#include <string>
#include <vector>

#include "isggen/commands.hpp"
#include "isggen/error.hpp"
#include "isggen/model.hpp"
#include "isggen/service.hpp"
#include "json.hpp"

struct isg_model {
  std::shared_ptr<const isg::Model> model;
  std::string path;
};

struct isg_server {
  std::unique_ptr<isg::SessionService> service;
  std::unique_ptr<isg::HttpServer> http;
};

namespace {

thread_local std::string g_error;
thread_local std::string g_detail;

isg_status status_of(isg::ErrorKind k) {
  using isg::ErrorKind;
  switch (k) {
    case ErrorKind::kValidation: return ISG_ERR_VALIDATION;
    case ErrorKind::kParse: return ISG_ERR_PARSE;
    case ErrorKind::kNotFound: return ISG_ERR_NOT_FOUND;
    case ErrorKind::kConflict: return ISG_ERR_CONFLICT;
    case ErrorKind::kConfig: return ISG_ERR_CONFIG;
    case ErrorKind::kData: return ISG_ERR_DATA;
    case ErrorKind::kNumeric: return ISG_ERR_NUMERIC;
    case ErrorKind::kIo: return ISG_ERR_IO;
    case ErrorKind::kInternal: return ISG_ERR_INTERNAL;
  }
  return ISG_ERR_INTERNAL;
}

char* dup(const std::string& s) {
  char* p = static_cast<char*>(std::malloc(s.size() + 1));
  if (!p) throw std::bad_alloc();
  std::memcpy(p, s.c_str(), s.size() + 1);
  return p;
}

template <class F>
isg_status guard(F&& fn) {
  g_error.clear();
  g_detail.clear();
  try {
    fn();
    return ISG_OK;
  } catch (const isg::Error& e) {
    g_error = e.what();
    g_detail = e.detail();
    return status_of(e.kind());
  } catch (const std::filesystem::filesystem_error& e) {
    g_error = e.what();
    return ISG_ERR_IO;
  } catch (const std::exception& e) {
    g_error = e.what();
    return ISG_ERR_INTERNAL;
  }
}

isg_status missing(const char* what) {
  g_error = std::string("null argument: ") + what;
  g_detail.clear();
  return ISG_ERR_VALIDATION;
}

template <class F>
isg_status run_command(const char* config_json, char** out, F&& fn) {
  if (!config_json) return missing("config_json");
  if (!out) return missing("out_report");
  *out = nullptr;
  return guard([&] { *out = dup(fn(isg::parse_config(config_json))); });
}

}  // namespace

extern "C" {

const char* isg_last_error(void) { return g_error.c_str(); }
const char* isg_last_error_detail(void) { return g_detail.c_str(); }

void isg_string_free(char* s) { std::free(s); }

isg_status isg_config_resolve(const char* file, const char* const* overrides, int n_overrides, char** out_json) {
  if (!out_json) return missing("out_json");
  if (n_overrides > 0 && !overrides) return missing("overrides");
  *out_json = nullptr;
  return guard([&] {
    std::vector<std::string> ov;
    for (int i = 0; i < n_overrides; ++i) ov.emplace_back(overrides[i]);
    auto cfg = isg::resolve_config(file ? file : "", ov, isg::process_env());
    *out_json = dup(cfg.to_json());
  });
}

isg_status isg_config_hash(const char* config_json, char** out_hash) {
  if (!config_json) return missing("config_json");
  if (!out_hash) return missing("out_hash");
  *out_hash = nullptr;
  return guard([&] { *out_hash = dup(isg::parse_config(config_json).hash()); });
}

isg_status isg_prepare(const char* config_json, char** out_report) {
  return run_command(config_json, out_report, [](const isg::RunConfig& c) { return isg::cmd::prepare(c); });
}

isg_status isg_train(const char* config_json, char** out_report) {
  return run_command(config_json, out_report, [](const isg::RunConfig& c) { return isg::cmd::train(c); });
}

isg_status isg_generate(const char* config_json, char** out_report) {
  return run_command(config_json, out_report, [](const isg::RunConfig& c) { return isg::cmd::generate(c); });
}

isg_status isg_eval(const char* config_json, char** out_report) {
  return run_command(config_json, out_report, [](const isg::RunConfig& c) { return isg::cmd::evaluate(c); });
}

isg_status isg_model_load(const char* checkpoint_path, isg_model** out) {
  if (!checkpoint_path) return missing("checkpoint_path");
  if (!out) return missing("out");
  *out = nullptr;
  return guard([&] {
    auto ck = isg::load_checkpoint(checkpoint_path);
    *out = new isg_model{std::shared_ptr<const isg::Model>(std::move(ck.model)), checkpoint_path};
  });
}

void isg_model_free(isg_model* model) { delete model; }

isg_status isg_model_vocabulary(const isg_model* model, char** out_json) {
  if (!model) return missing("model");
  if (!out_json) return missing("out_json");
  *out_json = nullptr;
  return guard([&] {
    const auto& v = model->model->vocabulary();
    nlohmann::ordered_json j;
    j["version"] = v.version();
    j["categories"] = v.categories();
    j["predicates"] = v.predicates();
    *out_json = dup(j.dump());
  });
}

isg_status isg_server_create(const char* checkpoint_path, const char* store_dir, const char* host, int port,
                             isg_server** out, int* out_port) {
  if (!checkpoint_path) return missing("checkpoint_path");
  if (!store_dir) return missing("store_dir");
  if (!out) return missing("out");
  *out = nullptr;
  return guard([&] {
    auto ck = isg::load_checkpoint(checkpoint_path);
    auto srv = std::make_unique<isg_server>();
    srv->service = std::make_unique<isg::SessionService>(std::shared_ptr<const isg::Model>(std::move(ck.model)),
                                                         "default", store_dir);
    srv->http = std::make_unique<isg::HttpServer>(*srv->service);
    const int bound = srv->http->bind(host ? host : "127.0.0.1", port);
    if (out_port) *out_port = bound;
    *out = srv.release();
  });
}

isg_status isg_server_run(isg_server* server) {
  if (!server) return missing("server");
  return guard([&] { server->http->listen(); });
}

void isg_server_stop(isg_server* server) {
  if (server) server->http->stop();
}

void isg_server_free(isg_server* server) {
  if (!server) return;
  server->http.reset();
  delete server;
}

}  // extern "C"
