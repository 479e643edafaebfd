// Command-line front end; everything goes through the C API.
#include <csignal>
#include <cstdio>
#include <iostream>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "isggen/isggen.h"
#include "json.hpp"

namespace {

int exit_code(isg_status s) {
  switch (s) {
    case ISG_OK: return 0;
    case ISG_ERR_CONFIG:
    case ISG_ERR_VALIDATION: return 2;
    case ISG_ERR_DATA:
    case ISG_ERR_IO:
    case ISG_ERR_NOT_FOUND:
    case ISG_ERR_PARSE: return 3;
    case ISG_ERR_NUMERIC: return 4;
    default: return 1;
  }
}

int report_failure(isg_status s) {
  std::cerr << "isggen: " << isg_last_error() << "\n";
  const std::string detail = isg_last_error_detail();
  if (!detail.empty()) std::cerr << "  " << detail << "\n";
  return exit_code(s);
}

struct Common {
  std::string config;
  std::vector<std::string> sets;
};

void add_common(CLI::App* app, Common& c) {
  app->add_option("--config", c.config, "JSON config file");
  app->add_option("--set", c.sets, "Override, section.key=value (repeatable)");
}

void add_override(std::vector<std::string>& ov, const std::string& key, const std::string& value) {
  ov.push_back(key + "=" + value);
}

int resolve(const Common& c, const std::vector<std::string>& extra, std::string& out) {
  std::vector<std::string> all = c.sets;
  all.insert(all.end(), extra.begin(), extra.end());
  std::vector<const char*> ptrs;
  for (const auto& s : all) ptrs.push_back(s.c_str());
  char* json = nullptr;
  isg_status st = isg_config_resolve(c.config.empty() ? nullptr : c.config.c_str(), ptrs.data(),
                                     static_cast<int>(ptrs.size()), &json);
  if (st != ISG_OK) return report_failure(st);
  out = json;
  isg_string_free(json);
  return 0;
}

int run(isg_status (*fn)(const char*, char**), const std::string& cfg) {
  char* report = nullptr;
  isg_status st = fn(cfg.c_str(), &report);
  if (st != ISG_OK) return report_failure(st);
  std::cout << report;
  isg_string_free(report);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Incremental scene-graph to image generation"};
  app.require_subcommand(1);

  Common c_prep, c_train, c_gen, c_eval, c_serve;
  std::vector<std::string> ov;

  auto* prep = app.add_subcommand("prepare", "Build a dataset directory");
  add_common(prep, c_prep);
  std::string source, out, seed, count, image_size;
  prep->add_option("--source", source, "synth or coco")->check(CLI::IsMember({"synth", "coco"}));
  prep->add_option("--out", out, "Output dataset directory");
  prep->add_option("--seed", seed, "Sampling seed");
  prep->add_option("--count", count, "Number of images");
  prep->add_option("--image-size", image_size, "Square image side in pixels");
  std::string annotations, image_root;
  prep->add_option("--annotations", annotations, "COCO annotation file");
  prep->add_option("--image-root", image_root, "Directory of COCO images");

  auto* train = app.add_subcommand("train", "Train the generator stack");
  add_common(train, c_train);
  std::string resume, dataset, iterations;
  train->add_option("--resume", resume, "Checkpoint to continue from");
  train->add_option("--dataset", dataset, "Prepared dataset directory");
  train->add_option("--out", out, "Run directory");
  train->add_option("--iterations", iterations, "Total iterations");
  train->add_option("--seed", seed, "Training seed");

  auto* gen = app.add_subcommand("generate", "Generate per-step images for a graph sequence");
  add_common(gen, c_gen);
  std::string checkpoint, sequence;
  bool independent = false;
  gen->add_option("--checkpoint", checkpoint, "Checkpoint file");
  gen->add_option("--sequence", sequence, "Graph sequence document");
  gen->add_option("--out", out, "Output directory");
  gen->add_option("--seed", seed, "Noise seed");
  gen->add_flag("--independent", independent, "Regenerate every step from scratch (baseline protocol)");

  auto* ev = app.add_subcommand("eval", "Evaluate consistency or inception score");
  add_common(ev, c_eval);
  std::string metric, images, classifier, splits;
  ev->add_option("--checkpoint", checkpoint, "Checkpoint file");
  ev->add_option("--dataset", dataset, "Prepared dataset directory");
  ev->add_option("--metric", metric, "is or consistency")->check(CLI::IsMember({"is", "consistency"}));
  ev->add_option("--images", images, "Image fixture directory <dir>/<rollout>/<k>.png");
  ev->add_option("--classifier", classifier, "uniform, synth or a classifier archive");
  ev->add_option("--splits", splits, "Inception score splits");
  ev->add_option("--seed", seed, "Rollout seed");
  ev->add_flag("--independent", independent, "Evaluate independent regeneration");

  auto* serve = app.add_subcommand("serve", "Serve the session HTTP API");
  add_common(serve, c_serve);
  std::string addr, store;
  serve->add_option("--checkpoint", checkpoint, "Checkpoint file");
  serve->add_option("--addr", addr, "host:port");
  serve->add_option("--store", store, "Session store directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    // Help and version exit 0; usage errors share the config exit code.
    return app.exit(e) == 0 ? 0 : 2;
  }

  auto opt = [&](const std::string& key, const std::string& v) {
    if (!v.empty()) add_override(ov, key, v);
  };
  std::string cfg;
  if (*prep) {
    opt("data.source", source);
    opt("paths.out", out);
    opt("data.seed", seed);
    opt("data.count", count);
    opt("data.image_size", image_size);
    opt("data.annotations", annotations);
    opt("data.image_root", image_root);
    if (int rc = resolve(c_prep, ov, cfg)) return rc;
    return run(isg_prepare, cfg);
  }
  if (*train) {
    opt("paths.resume", resume);
    opt("paths.dataset", dataset);
    opt("paths.out", out);
    opt("train.iterations", iterations);
    opt("train.seed", seed);
    if (int rc = resolve(c_train, ov, cfg)) return rc;
    return run(isg_train, cfg);
  }
  if (*gen) {
    opt("paths.checkpoint", checkpoint);
    opt("paths.sequence", sequence);
    opt("paths.out", out);
    opt("eval.seed", seed);
    if (independent) add_override(ov, "eval.independent", "true");
    if (int rc = resolve(c_gen, ov, cfg)) return rc;
    return run(isg_generate, cfg);
  }
  if (*ev) {
    opt("paths.checkpoint", checkpoint);
    opt("paths.dataset", dataset);
    opt("eval.metric", metric);
    opt("paths.images", images);
    opt("eval.classifier", classifier);
    opt("eval.splits", splits);
    opt("eval.seed", seed);
    if (independent) add_override(ov, "eval.independent", "true");
    if (int rc = resolve(c_eval, ov, cfg)) return rc;
    return run(isg_eval, cfg);
  }
  // serve
  if (!addr.empty()) {
    const auto colon = addr.rfind(':');
    if (colon == std::string::npos) {
      std::cerr << "isggen: --addr must be host:port\n";
      return 2;
    }
    add_override(ov, "serve.host", addr.substr(0, colon));
    add_override(ov, "serve.port", addr.substr(colon + 1));
  }
  opt("paths.checkpoint", checkpoint);
  opt("serve.store", store);
  if (int rc = resolve(c_serve, ov, cfg)) return rc;
  const auto doc = nlohmann::json::parse(cfg);
  const std::string ck = doc["paths"]["checkpoint"].get<std::string>();
  const std::string host = doc["serve"]["host"].get<std::string>();
  const int port = doc["serve"]["port"].get<int>();
  const std::string store_dir = doc["serve"]["store"].get<std::string>();
  if (ck.empty()) {
    std::cerr << "isggen: serve needs --checkpoint\n";
    return 2;
  }

  sigset_t sigs;
  sigemptyset(&sigs);
  sigaddset(&sigs, SIGINT);
  sigaddset(&sigs, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &sigs, nullptr);

  isg_server* server = nullptr;
  int bound = 0;
  isg_status st = isg_server_create(ck.c_str(), store_dir.c_str(), host.c_str(), port, &server, &bound);
  if (st != ISG_OK) return report_failure(st);
  std::cout << "listening on " << host << ":" << bound << std::endl;
  std::thread waiter([&] {
    int sig = 0;
    sigwait(&sigs, &sig);
    isg_server_stop(server);
  });
  st = isg_server_run(server);
  // Unblock the waiter if the server stopped on its own.
  pthread_kill(waiter.native_handle(), SIGTERM);
  waiter.join();
  isg_server_free(server);
  return st == ISG_OK ? 0 : report_failure(st);
}
