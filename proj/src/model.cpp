#include "isggen/model.hpp"

#include <cstring>
#include <fstream>

#include "config_json.hpp"
#include "isggen/error.hpp"

namespace isg {

namespace {

constexpr char kMagic[8] = {'I', 'S', 'G', 'A', 'R', 'C', 'H', '1'};

ojson vocab_json(const Vocabulary& v) {
  ojson j;
  j["version"] = v.version();
  j["categories"] = v.categories();
  std::vector<std::string> extra(v.predicates().begin() + kNumGeometricPredicates, v.predicates().end());
  j["extra_predicates"] = extra;
  return j;
}

Vocabulary vocab_from(const ojson& j) {
  return Vocabulary(j.at("version").get<std::string>(), j.at("categories").get<std::vector<std::string>>(),
                    j.at("extra_predicates").get<std::vector<std::string>>());
}

}  // namespace

struct Model::Seeded {
  Rng g, l, c, di, dobj;
};

Model::Model(const ModelConfig& cfg, const Vocabulary& vocab)
    : Model(cfg, vocab,
            Seeded{Rng(derive_seed(cfg.init_seed, 1)), Rng(derive_seed(cfg.init_seed, 2)),
                   Rng(derive_seed(cfg.init_seed, 3)), Rng(derive_seed(cfg.init_seed, 4)),
                   Rng(derive_seed(cfg.init_seed, 5))}) {}

Model::Model(const ModelConfig& cfg, const Vocabulary& vocab, Seeded&& r)
    : gcn((cfg.validate(), cfg.gcn()), vocab.num_categories(), vocab.num_predicates(), r.g),
      layout(cfg.layout(), r.l),
      crn(cfg.crn(), r.c),
      d_image(cfg.adversary(vocab.num_categories()), r.di),
      d_object(cfg.adversary(vocab.num_categories()), r.dobj),
      perceptual(cfg.perceptual_seed),
      cfg_(cfg),
      vocab_(vocab) {
  gen_params_.extend(gcn.params());
  gen_params_.extend(layout.params());
  gen_params_.extend(crn.params());
  disc_params_.extend(d_image.params());
  disc_params_.extend(d_object.params());
}

std::string Model::arch_hash() const {
  ojson j;
  j["model"] = cfg_;
  j["vocabulary"] = vocab_json(vocab_);
  return hex64(fnv1a64(canonical(j)));
}

const Tensor& Archive::get(const std::string& name) const {
  for (const auto& [n, t] : tensors)
    if (n == name) return t;
  fail(ErrorKind::kData, "archive has no tensor '" + name + "'");
}

void write_archive(const std::filesystem::path& path, const Archive& archive) {
  ojson index = ojson::array();
  for (const auto& [name, t] : archive.tensors) index.push_back({{"name", name}, {"shape", t.shape()}});
  ojson head;
  head["header"] = ojson::parse(archive.header_json);
  head["tensors"] = index;
  const std::string text = head.dump();
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorKind::kIo, "cannot write " + tmp);
    const std::uint64_t len = text.size();
    out.write(kMagic, sizeof kMagic);
    out.write(reinterpret_cast<const char*>(&len), sizeof len);
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto& [_, t] : archive.tensors)
      out.write(reinterpret_cast<const char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(double)));
    if (!out) fail(ErrorKind::kIo, "short write to " + tmp);
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) fail(ErrorKind::kIo, "cannot rename " + tmp + ": " + ec.message());
}

Archive read_archive(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::kNotFound, "checkpoint not found: " + path.string());
  char magic[8];
  std::uint64_t len = 0;
  in.read(magic, sizeof magic);
  in.read(reinterpret_cast<char*>(&len), sizeof len);
  if (!in || std::memcmp(magic, kMagic, sizeof magic) != 0)
    fail(ErrorKind::kData, "corrupt archive " + path.string() + ": bad magic");
  if (len > (1ULL << 30)) fail(ErrorKind::kData, "corrupt archive " + path.string() + ": header too large");
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  ojson head = ojson::parse(text, nullptr, false);
  if (!in || head.is_discarded() || !head.contains("tensors") || !head.contains("header"))
    fail(ErrorKind::kData, "corrupt archive " + path.string() + ": unreadable header");
  Archive a;
  a.header_json = head["header"].dump();
  for (const auto& e : head["tensors"]) {
    Tensor t(e.at("shape").get<Shape>());
    in.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(double)));
    if (!in) fail(ErrorKind::kData, "corrupt archive " + path.string() + ": truncated tensor data");
    a.tensors.emplace_back(e.at("name").get<std::string>(), std::move(t));
  }
  if (in.peek() != std::char_traits<char>::eof())
    fail(ErrorKind::kData, "corrupt archive " + path.string() + ": trailing bytes");
  return a;
}

void save_checkpoint(const std::filesystem::path& path, const Model& model, const RunConfig& cfg, long long iteration,
                     const std::string& rng_state, const Adam* adam_generator, const Adam* adam_discriminator) {
  ojson h;
  h["format"] = "isggen-checkpoint-1";
  h["arch_hash"] = model.arch_hash();
  h["config_hash"] = cfg.hash();
  h["config"] = ojson::parse(cfg.to_json());
  h["model"] = model.config();
  h["vocabulary"] = vocab_json(model.vocabulary());
  h["iteration"] = iteration;
  h["rng_state"] = rng_state;
  h["adam_generator_steps"] = adam_generator ? adam_generator->steps() : 0;
  h["adam_discriminator_steps"] = adam_discriminator ? adam_discriminator->steps() : 0;
  Archive a;
  a.header_json = h.dump();
  auto add_set = [&](const ParamSet& ps, const Adam* opt, const std::string& tag) {
    for (const auto& [name, v] : ps.items()) a.tensors.emplace_back(name, v.value());
    if (!opt) return;
    const auto& m = opt->moments();
    for (std::size_t i = 0; i < ps.items().size(); ++i) {
      a.tensors.emplace_back(tag + ".m." + ps.items()[i].first, m[i].first);
      a.tensors.emplace_back(tag + ".v." + ps.items()[i].first, m[i].second);
    }
  };
  add_set(model.generator_params(), adam_generator, "adam_generator");
  add_set(model.discriminator_params(), adam_discriminator, "adam_discriminator");
  write_archive(path, a);
}

void load_weights(Model& model, const Archive& archive) {
  std::map<std::string, const Tensor*> byname;
  for (const auto& [n, t] : archive.tensors) byname[n] = &t;
  for (ParamSet* ps : {&model.generator_params(), &model.discriminator_params()}) {
    for (auto& [name, v] : ps->items()) {
      auto it = byname.find(name);
      if (it == byname.end()) fail(ErrorKind::kData, "checkpoint is missing parameter '" + name + "'");
      if (it->second->shape() != v.shape())
        fail(ErrorKind::kData, "parameter '" + name + "' has shape " + shape_str(it->second->shape()) +
                                   " in checkpoint but " + shape_str(v.shape()) + " in model");
      Var(v).mutable_value() = *it->second;
    }
  }
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  Archive a = read_archive(path);
  ojson h = ojson::parse(a.header_json, nullptr, false);
  if (h.is_discarded() || h.value("format", "") != "isggen-checkpoint-1")
    fail(ErrorKind::kData, "corrupt checkpoint " + path.string() + ": unknown format");
  Checkpoint c;
  try {
    const ModelConfig mc = h.at("model").get<ModelConfig>();
    const Vocabulary vocab = vocab_from(h.at("vocabulary"));
    c.model = std::make_unique<Model>(mc, vocab);
    c.config = h.at("config").get<RunConfig>();
    c.config_hash = h.at("config_hash").get<std::string>();
    c.iteration = h.at("iteration").get<long long>();
    c.rng_state = h.at("rng_state").get<std::string>();
    c.adam_generator.steps = h.at("adam_generator_steps").get<long long>();
    c.adam_discriminator.steps = h.at("adam_discriminator_steps").get<long long>();
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::kData, "corrupt checkpoint " + path.string(), e.what());
  }
  if (c.model->arch_hash() != h.value("arch_hash", ""))
    fail(ErrorKind::kData, "checkpoint " + path.string() + ": architecture hash mismatch");
  if (c.config.hash() != c.config_hash)
    fail(ErrorKind::kData, "checkpoint " + path.string() + ": config hash mismatch",
         "recorded " + c.config_hash + ", recomputed " + c.config.hash());
  load_weights(*c.model, a);
  auto moments = [&](const ParamSet& ps, const std::string& tag, OptimizerState& st) {
    if (st.steps == 0) return;
    for (const auto& [name, v] : ps.items())
      st.moments.emplace_back(a.get(tag + ".m." + name), a.get(tag + ".v." + name));
  };
  moments(c.model->generator_params(), "adam_generator", c.adam_generator);
  moments(c.model->discriminator_params(), "adam_discriminator", c.adam_discriminator);
  return c;
}

}  // namespace isg
