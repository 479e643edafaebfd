#include "isggen/config.hpp"

#include <cstdlib>
#include <cctype>
#include <cstdio>

#include "config_json.hpp"
#include "isggen/error.hpp"
#include "isggen/image_io.hpp"

extern char** environ;

namespace isg {

DatasetSpec DataConfig::spec() const {
  DatasetSpec s;
  s.min_object_area_fraction = min_object_area_fraction;
  s.min_objects = min_objects;
  s.max_objects = max_objects;
  s.image_size = image_size;
  s.mask_size = mask_size;
  s.split = split;
  return s;
}

GcnConfig ModelConfig::gcn() const { return GcnConfig{embed_dim, gcn_layers, gcn_hidden}; }

LayoutConfig ModelConfig::layout() const {
  LayoutConfig c;
  c.embed_dim = embed_dim;
  c.hidden_dim = layout_hidden;
  c.mask_size = mask_size;
  c.mask_channels = mask_channels;
  c.min_box_extent = min_box_extent;
  return c;
}

CrnConfig ModelConfig::crn() const {
  CrnConfig c;
  c.start_resolution = start_resolution;
  c.output_resolution = image_size;
  c.channels = crn_channels;
  c.final_channels = crn_final_channels;
  c.noise_channels = noise_channels;
  c.layout_channels = embed_dim;
  return c;
}

AdversaryConfig ModelConfig::adversary(int num_categories) const {
  AdversaryConfig c;
  c.image_size = image_size;
  c.crop_size = crop_size;
  c.num_categories = num_categories;
  c.image_channels = d_image_channels;
  c.object_channels = d_object_channels;
  return c;
}

void ModelConfig::validate() const {
  gcn().validate();
  layout().validate();
  crn().validate();
  adversary(1).validate();
}

void TrainConfig::validate() const {
  if (steps_per_sequence < 1) fail(ErrorKind::kConfig, "train.steps_per_sequence must be >= 1");
  if (batch_size < 1) fail(ErrorKind::kConfig, "train.batch_size must be >= 1");
  if (!(lr_generator > 0) || !(lr_discriminator > 0)) fail(ErrorKind::kConfig, "learning rates must be positive");
  if (iterations < 0) fail(ErrorKind::kConfig, "train.iterations must be >= 0");
  if (checkpoint_every < 1) fail(ErrorKind::kConfig, "train.checkpoint_every must be >= 1");
  if (device != "cpu") fail(ErrorKind::kConfig, "train.device: only 'cpu' is supported");
  weights.validate();
}

std::string canonical(const ojson& j) { return j.dump(); }

std::uint64_t fnv1a64(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::string RunConfig::to_json() const { return ojson(*this).dump(2) + "\n"; }

std::string RunConfig::hash() const {
  ojson j = *this;
  j.erase("paths");
  return hex64(fnv1a64(canonical(j)));
}

namespace {

// Overlays `patch` onto `base`, rejecting keys that `base` does not have.
void merge_strict(ojson& base, const ojson& patch, const std::string& where) {
  if (!patch.is_object()) fail(ErrorKind::kConfig, where + ": expected an object");
  for (auto it = patch.begin(); it != patch.end(); ++it) {
    const std::string path = where.empty() ? it.key() : where + "." + it.key();
    if (!base.contains(it.key())) fail(ErrorKind::kConfig, "unknown config key '" + path + "'");
    ojson& slot = base[it.key()];
    if (slot.is_object()) {
      merge_strict(slot, it.value(), path);
    } else {
      if (slot.is_number() && !it.value().is_number())
        fail(ErrorKind::kConfig, "config key '" + path + "' expects a number");
      if (slot.is_string() && !it.value().is_string())
        fail(ErrorKind::kConfig, "config key '" + path + "' expects a string");
      if (slot.is_boolean() && !it.value().is_boolean())
        fail(ErrorKind::kConfig, "config key '" + path + "' expects true or false");
      slot = it.value();
    }
  }
}

// Sets one dotted key from its textual value, typed by the default.
void set_path(ojson& root, const std::vector<std::string>& parts, const std::string& text, const std::string& label) {
  ojson* node = &root;
  std::string path;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    path += (i ? "." : "") + parts[i];
    if (!node->is_object() || !node->contains(parts[i]))
      fail(ErrorKind::kConfig, "unknown config key '" + path + "' (from " + label + ")");
    node = &(*node)[parts[i]];
  }
  if (node->is_object()) fail(ErrorKind::kConfig, "config key '" + path + "' is a section, not a value");
  if (node->is_string()) {
    *node = text;
    return;
  }
  ojson v = ojson::parse(text, nullptr, false);
  if (v.is_discarded()) fail(ErrorKind::kConfig, "config key '" + path + "': cannot parse '" + text + "'");
  ojson holder = *node;
  ojson wrap = ojson::object();
  wrap["v"] = holder;
  ojson pv = ojson::object();
  pv["v"] = v;
  merge_strict(wrap, pv, path);
  *node = wrap["v"];
}

std::vector<std::string> split(const std::string& s, const std::string& sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    auto pos = s.find(sep, start);
    out.push_back(s.substr(start, pos - start));
    if (pos == std::string::npos) break;
    start = pos + sep.size();
  }
  return out;
}

RunConfig from_ojson(const ojson& j) {
  try {
    return j.get<RunConfig>();
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::kConfig, std::string("invalid config: ") + e.what());
  }
}

}  // namespace

RunConfig parse_config(const std::string& json_text) {
  ojson base = RunConfig{};
  ojson doc = ojson::parse(json_text, nullptr, false);
  if (doc.is_discarded()) fail(ErrorKind::kConfig, "config is not valid JSON");
  merge_strict(base, doc, "");
  return from_ojson(base);
}

RunConfig resolve_config(const std::string& file, const std::vector<std::string>& overrides,
                         const std::map<std::string, std::string>& env) {
  ojson base = RunConfig{};
  if (!file.empty()) {
    std::string text;
    try {
      text = read_text_file(file);
    } catch (const Error& e) {
      fail(ErrorKind::kConfig, "cannot read config file " + file, e.what());
    }
    ojson doc = ojson::parse(text, nullptr, false);
    if (doc.is_discarded()) fail(ErrorKind::kConfig, "config file " + file + " is not valid JSON");
    merge_strict(base, doc, "");
  }
  for (const auto& [name, value] : env) {
    const std::string prefix = "ISGGEN_";
    if (name.rfind(prefix, 0) != 0 || name.find("__") == std::string::npos) continue;
    std::string key = name.substr(prefix.size());
    for (auto& c : key) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    set_path(base, split(key, "__"), value, "environment " + name);
  }
  for (const auto& ov : overrides) {
    auto eq = ov.find('=');
    if (eq == std::string::npos) fail(ErrorKind::kConfig, "override '" + ov + "' must look like section.key=value");
    set_path(base, split(ov.substr(0, eq), "."), ov.substr(eq + 1), "override");
  }
  RunConfig cfg = from_ojson(base);
  cfg.model.validate();
  cfg.train.validate();
  return cfg;
}

std::map<std::string, std::string> process_env() {
  std::map<std::string, std::string> out;
  for (char** e = environ; e && *e; ++e) {
    std::string kv(*e);
    auto eq = kv.find('=');
    if (eq == std::string::npos) continue;
    if (kv.rfind("ISGGEN_", 0) == 0) out[kv.substr(0, eq)] = kv.substr(eq + 1);
  }
  return out;
}

}  // namespace isg
