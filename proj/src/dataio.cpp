#include "isggen/dataio.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <set>

#include "isggen/error.hpp"
#include "isggen/image_io.hpp"
#include "isggen/nn.hpp"
#include "json.hpp"

namespace isg {

namespace fs = std::filesystem;
using json = nlohmann::json;
using ojson = nlohmann::ordered_json;

void DatasetSpec::validate() const {
  if (!(min_object_area_fraction >= 0.0 && min_object_area_fraction < 1.0))
    fail(ErrorKind::kConfig, "min_object_area_fraction must lie in [0,1)");
  if (min_objects < 1 || min_objects > max_objects) fail(ErrorKind::kConfig, "need 1 <= min_objects <= max_objects");
  if (image_size < 8) fail(ErrorKind::kConfig, "image_size must be >= 8");
  if (mask_size < 4) fail(ErrorKind::kConfig, "mask_size must be >= 4");
}

double object_area_fraction(const AnnotatedObject& obj) {
  if (obj.mask && obj.mask->size() > 0) {
    double s = 0.0;
    for (double v : obj.mask->values()) s += v;
    return s / static_cast<double>(obj.mask->size()) * obj.box.area();
  }
  return obj.box.area();
}

std::optional<AnnotatedImage> apply_filters(const AnnotatedImage& img, const DatasetSpec& spec, FilterStats* stats) {
  AnnotatedImage out;
  out.image_id = img.image_id;
  out.pixels = img.pixels;
  for (const auto& o : img.objects) {
    if (object_area_fraction(o) < spec.min_object_area_fraction) {
      if (stats) ++stats->objects_removed_small;
      continue;
    }
    out.objects.push_back(o);
  }
  if (stats) {
    ++stats->images_seen;
    stats->objects_seen += static_cast<long>(img.objects.size());
  }
  const int n = static_cast<int>(out.objects.size());
  if (n < spec.min_objects || n > spec.max_objects) {
    if (stats) ++stats->images_dropped_count;
    return std::nullopt;
  }
  if (stats) ++stats->images_kept;
  return out;
}

namespace {

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

bool point_in_polygon(const std::vector<double>& poly, double x, double y) {
  bool inside = false;
  const std::size_t n = poly.size() / 2;
  for (std::size_t i = 0, j = n - 1; i < n; j = i++) {
    const double xi = poly[2 * i], yi = poly[2 * i + 1];
    const double xj = poly[2 * j], yj = poly[2 * j + 1];
    if (((yi > y) != (yj > y)) && (x < (xj - xi) * (y - yi) / (yj - yi) + xi)) inside = !inside;
  }
  return inside;
}

[[noreturn]] void bad_record(const std::string& where, const std::string& what) {
  fail(ErrorKind::kData, "malformed record " + where + ": " + what, where);
}

double num(const json& obj, const char* key, const std::string& where) {
  auto it = obj.find(key);
  if (it == obj.end() || !it->is_number()) bad_record(where, std::string("missing numeric field '") + key + "'");
  return it->get<double>();
}

// Samples a COCO segmentation at the M x M cell centers of `bbox_px`.
std::optional<Tensor> rasterize_segmentation(const json& seg, const double bbox_px[4], int img_w, int img_h, int m,
                                             const std::string& where) {
  if (seg.is_null()) return std::nullopt;
  Tensor mask({m, m});
  auto cell_center = [&](int i, int j, double& x, double& y) {
    x = bbox_px[0] + (j + 0.5) / m * bbox_px[2];
    y = bbox_px[1] + (i + 0.5) / m * bbox_px[3];
  };
  if (seg.is_array()) {
    if (seg.empty()) return std::nullopt;
    std::vector<std::vector<double>> polys;
    for (const auto& p : seg) {
      if (!p.is_array() || p.size() < 6 || p.size() % 2) bad_record(where, "polygon needs >= 3 coordinate pairs");
      polys.push_back(p.get<std::vector<double>>());
    }
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < m; ++j) {
        double x, y;
        cell_center(i, j, x, y);
        bool in = false;
        for (const auto& p : polys) in = in || point_in_polygon(p, x, y);
        mask[static_cast<std::size_t>(i) * m + j] = in ? 1.0 : 0.0;
      }
    return mask;
  }
  if (seg.is_object() && seg.contains("counts") && seg["counts"].is_array()) {
    // Uncompressed RLE, column-major over the full image.
    std::vector<std::uint8_t> full(static_cast<std::size_t>(img_w) * img_h, 0);
    std::size_t pos = 0;
    bool value = false;
    for (const auto& c : seg["counts"]) {
      const auto run = c.get<std::size_t>();
      if (pos + run > full.size()) bad_record(where, "RLE counts exceed image size");
      if (value) std::fill(full.begin() + pos, full.begin() + pos + run, 1);
      pos += run;
      value = !value;
    }
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < m; ++j) {
        double x, y;
        cell_center(i, j, x, y);
        const int px = std::clamp(static_cast<int>(x), 0, img_w - 1);
        const int py = std::clamp(static_cast<int>(y), 0, img_h - 1);
        mask[static_cast<std::size_t>(i) * m + j] = full[static_cast<std::size_t>(px) * img_h + py];
      }
    return mask;
  }
  // Compressed RLE strings are not decoded; the object falls back to box area.
  return std::nullopt;
}

json parse_json_file(const fs::path& path) {
  if (!fs::exists(path)) fail(ErrorKind::kData, "annotation file not found: " + path.string());
  const std::string text = read_text_file(path);
  if (std::all_of(text.begin(), text.end(), [](unsigned char c) { return std::isspace(c); })) return json::object();
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    fail(ErrorKind::kData, "malformed annotation document " + path.string() + ": " + e.what());
  }
}

}  // namespace

struct AnnotationStream::Impl {
  DatasetSpec spec;
  Vocabulary vocab;
  fs::path image_root;
  json images;
  std::map<long long, std::vector<std::size_t>> anns_by_image;
  json annotations;
  std::map<long long, std::string> category_names;
  std::size_t cursor = 0;
  FilterStats stats;

  std::optional<AnnotatedImage> decode(std::size_t idx) {
    const std::string where = "images[" + std::to_string(idx) + "]";
    const json& im = images[idx];
    if (!im.is_object() || !im.contains("id")) bad_record(where, "missing 'id'");
    const auto id = im["id"].get<long long>();
    const int w = static_cast<int>(num(im, "width", where));
    const int h = static_cast<int>(num(im, "height", where));
    if (w <= 0 || h <= 0) bad_record(where, "non-positive image size");
    AnnotatedImage out;
    out.image_id = std::to_string(id);
    for (std::size_t ai : anns_by_image[id]) {
      const std::string aw = "annotations[" + std::to_string(ai) + "]";
      const json& a = annotations[ai];
      const auto& bb = a.at("bbox");
      if (!bb.is_array() || bb.size() != 4) bad_record(aw, "bbox must have 4 numbers");
      double px[4];
      for (int k = 0; k < 4; ++k) {
        if (!bb[k].is_number()) bad_record(aw, "bbox must have 4 numbers");
        px[k] = bb[k].get<double>();
      }
      if (!a.contains("category_id")) bad_record(aw, "missing 'category_id'");
      auto cn = category_names.find(a["category_id"].get<long long>());
      if (cn == category_names.end()) bad_record(aw, "category_id not declared in categories");
      if (!vocab.has_category(cn->second)) bad_record(aw, "category '" + cn->second + "' not in vocabulary");
      AnnotatedObject obj;
      obj.category = vocab.category_index(cn->second);
      try {
        obj.box = Box::make(px[0] / w, px[1] / h, (px[0] + px[2]) / w, (px[1] + px[3]) / h);
      } catch (const Error& e) {
        bad_record(aw, e.what());
      }
      obj.mask = rasterize_segmentation(a.contains("segmentation") ? a["segmentation"] : json(), px, w, h,
                                        spec.mask_size, aw);
      out.objects.push_back(std::move(obj));
    }
    auto kept = apply_filters(out, spec, &stats);
    if (!kept) return std::nullopt;
    if (!image_root.empty()) {
      if (!im.contains("file_name") || !im["file_name"].is_string()) bad_record(where, "missing 'file_name'");
      Tensor px = read_image(image_root / im["file_name"].get<std::string>());
      kept->pixels = resize_bilinear(px, spec.image_size, spec.image_size);
    }
    return kept;
  }
};

AnnotationStream::AnnotationStream(const fs::path& annotation_path, const DatasetSpec& spec, const Vocabulary& vocab,
                                   fs::path image_root)
    : impl_(std::make_unique<Impl>()) {
  spec.validate();
  impl_->spec = spec;
  impl_->vocab = vocab;
  impl_->image_root = std::move(image_root);
  json doc = parse_json_file(annotation_path);
  impl_->images = doc.value("images", json::array());
  impl_->annotations = doc.value("annotations", json::array());
  for (std::size_t i = 0; i < doc.value("categories", json::array()).size(); ++i) {
    const json& c = doc["categories"][i];
    if (!c.contains("id") || !c.contains("name")) bad_record("categories[" + std::to_string(i) + "]", "needs id and name");
    impl_->category_names[c["id"].get<long long>()] = c["name"].get<std::string>();
  }
  std::set<long long> image_ids;
  for (std::size_t i = 0; i < impl_->images.size(); ++i) {
    const json& im = impl_->images[i];
    if (!im.is_object() || !im.contains("id") || !im["id"].is_number_integer())
      bad_record("images[" + std::to_string(i) + "]", "missing integer 'id'");
    image_ids.insert(im["id"].get<long long>());
  }
  for (std::size_t i = 0; i < impl_->annotations.size(); ++i) {
    const json& a = impl_->annotations[i];
    const std::string aw = "annotations[" + std::to_string(i) + "]";
    if (!a.is_object() || !a.contains("image_id") || !a["image_id"].is_number_integer())
      bad_record(aw, "missing integer 'image_id'");
    const auto iid = a["image_id"].get<long long>();
    if (!image_ids.count(iid))
      fail(ErrorKind::kData, aw + " references unknown image_id " + std::to_string(iid), aw);
    impl_->anns_by_image[iid].push_back(i);
  }
}

AnnotationStream::~AnnotationStream() = default;
AnnotationStream::AnnotationStream(AnnotationStream&&) noexcept = default;
AnnotationStream& AnnotationStream::operator=(AnnotationStream&&) noexcept = default;

std::optional<AnnotatedImage> AnnotationStream::next() {
  while (impl_->cursor < impl_->images.size()) {
    auto img = impl_->decode(impl_->cursor++);
    if (img) return img;
  }
  return std::nullopt;
}

const FilterStats& AnnotationStream::stats() const { return impl_->stats; }

AnnotationStream load_annotations(const fs::path& path, const DatasetSpec& spec, const Vocabulary& vocab,
                                  fs::path image_root) {
  return AnnotationStream(path, spec, vocab, std::move(image_root));
}

Vocabulary coco_vocabulary(const fs::path& path) {
  json doc = parse_json_file(path);
  std::vector<std::string> names;
  for (const auto& c : doc.value("categories", json::array())) names.push_back(c.at("name").get<std::string>());
  return Vocabulary("coco:" + path.filename().string(), names);
}

Vocabulary synth_vocabulary() {
  std::vector<std::string> names;
  for (const char* color : {"red", "green", "blue"})
    for (const char* shape : {"square", "circle", "triangle"}) names.push_back(std::string(color) + " " + shape);
  return Vocabulary("synth-shapes-v1", names);
}

namespace {

constexpr double kColors[3][3] = {{0.85, 0.15, 0.15}, {0.15, 0.75, 0.2}, {0.15, 0.3, 0.9}};
constexpr double kBackgrounds[4][3] = {{0.5, 0.5, 0.5}, {0.85, 0.85, 0.8}, {0.3, 0.3, 0.35}, {0.7, 0.65, 0.55}};

// Binary raster of one primitive whose s x s bounding square starts at (x, y).
Tensor rasterize_shape(int shape, int x, int y, int s, int size) {
  Tensor r({size, size});
  for (int py = 0; py < size; ++py)
    for (int px = 0; px < size; ++px) {
      const double cx = px + 0.5, cy = py + 0.5;
      bool in = false;
      if (shape == 0) {
        in = cx >= x && cx < x + s && cy >= y && cy < y + s;
      } else if (shape == 1) {
        const double r0 = s / 2.0;
        in = (cx - x - r0) * (cx - x - r0) + (cy - y - r0) * (cy - y - r0) <= r0 * r0;
      } else {
        in = cy >= y && cy <= y + s && std::fabs(cx - (x + s / 2.0)) <= (cy - y) / 2.0;
      }
      r[static_cast<std::size_t>(py) * size + px] = in ? 1.0 : 0.0;
    }
  return r;
}

struct RasterBounds {
  int x0, y0, x1, y1;  // half-open pixel bounds
  double area;
};

RasterBounds raster_bounds(const Tensor& r) {
  const int size = r.dim(0);
  RasterBounds b{size, size, 0, 0, 0.0};
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x)
      if (r[static_cast<std::size_t>(y) * size + x] > 0) {
        b.x0 = std::min(b.x0, x);
        b.y0 = std::min(b.y0, y);
        b.x1 = std::max(b.x1, x + 1);
        b.y1 = std::max(b.y1, y + 1);
        b.area += 1.0;
      }
  return b;
}

// Average of the raster over each of the M x M cells spanning the box (4x4
// supersampling per cell).
Tensor crop_mask(const Tensor& raster, const RasterBounds& b, int m) {
  const int size = raster.dim(0);
  Tensor mask({m, m});
  const double bw = b.x1 - b.x0, bh = b.y1 - b.y0;
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < m; ++j) {
      double acc = 0.0;
      for (int si = 0; si < 4; ++si)
        for (int sj = 0; sj < 4; ++sj) {
          const double y = b.y0 + (i + (si + 0.5) / 4.0) / m * bh;
          const double x = b.x0 + (j + (sj + 0.5) / 4.0) / m * bw;
          const int px = std::clamp(static_cast<int>(x), 0, size - 1);
          const int py = std::clamp(static_cast<int>(y), 0, size - 1);
          acc += raster[static_cast<std::size_t>(py) * size + px];
        }
      mask[static_cast<std::size_t>(i) * m + j] = acc / 16.0;
    }
  return mask;
}

double box_iou(const Box& a, const Box& b) {
  const double ix = std::max(0.0, std::min(a.x1, b.x1) - std::max(a.x0, b.x0));
  const double iy = std::max(0.0, std::min(a.y1, b.y1) - std::max(a.y0, b.y0));
  const double inter = ix * iy;
  return inter / (a.area() + b.area() - inter);
}

void paint(Tensor& img, const Tensor& raster, const double* color) {
  const int size = raster.dim(0);
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x)
      if (raster[static_cast<std::size_t>(y) * size + x] > 0)
        for (int c = 0; c < 3; ++c) img.at(c, y, x) = color[c];
}

Tensor background(int size, int which) {
  Tensor img({3, size, size});
  for (int c = 0; c < 3; ++c)
    for (int i = 0; i < size * size; ++i) img[static_cast<std::size_t>(c) * size * size + i] = kBackgrounds[which][c];
  return img;
}

}  // namespace

std::vector<SynthSample> synth_shapes(int count, std::uint64_t seed, const DatasetSpec& spec, double edge_density) {
  spec.validate();
  if (count < 1) fail(ErrorKind::kValidation, "synth_shapes count must be >= 1");
  const int size = spec.image_size;
  const double min_area = std::max(spec.min_object_area_fraction, 0.0) * size * size;
  const int smin = std::max(3, static_cast<int>(std::ceil(0.2 * size)));
  const int smax = std::max(smin, static_cast<int>(std::floor(0.36 * size)));
  std::vector<SynthSample> out;
  for (int i = 0; i < count; ++i) {
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(i)));
    std::uniform_int_distribution<int> nobj(spec.min_objects, spec.max_objects);
    std::uniform_int_distribution<int> cat(0, 8);
    std::uniform_int_distribution<int> side(smin, smax);
    std::uniform_int_distribution<int> bg(0, 3);
    SynthSample sample;
    sample.image.image_id = "s" + std::to_string(seed) + "_" + std::to_string(i);
    sample.image.pixels = background(size, bg(rng));
    const int n = nobj(rng);
    std::vector<PlacedObject> placed;
    for (int k = 0; k < n; ++k) {
      const int category = cat(rng);
      Tensor raster;
      RasterBounds rb{};
      Box box;
      for (int attempt = 0; attempt < 100; ++attempt) {
        const int s = side(rng);
        std::uniform_int_distribution<int> pos(0, size - s);
        const int x = pos(rng), y = pos(rng);
        raster = rasterize_shape(category % 3, x, y, s, size);
        rb = raster_bounds(raster);
        if (rb.area < min_area) continue;
        box = Box::make(static_cast<double>(rb.x0) / size, static_cast<double>(rb.y0) / size,
                        static_cast<double>(rb.x1) / size, static_cast<double>(rb.y1) / size);
        bool ok = true;
        for (const auto& p : placed) ok = ok && box_iou(box, p.box) < 0.2;
        if (ok) break;
      }
      if (rb.area < min_area) fail(ErrorKind::kInternal, "synth_shapes could not place an object");
      paint(sample.image.pixels, raster, kColors[category / 3]);
      AnnotatedObject obj{category, box, crop_mask(raster, rb, spec.mask_size)};
      sample.image.objects.push_back(obj);
      sample.object_rasters.push_back(raster);
      placed.push_back({k, category, box});
    }
    sample.graph = build_graph(placed, edge_density, derive_seed(seed ^ 0x5eedull, static_cast<std::uint64_t>(i)));
    out.push_back(std::move(sample));
  }
  return out;
}

std::vector<std::pair<Tensor, int>> synth_single_objects(int count, std::uint64_t seed, int image_size) {
  std::vector<std::pair<Tensor, int>> out;
  const int smin = std::max(3, static_cast<int>(std::ceil(0.25 * image_size)));
  const int smax = std::max(smin, static_cast<int>(std::floor(0.6 * image_size)));
  for (int i = 0; i < count; ++i) {
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(i)));
    std::uniform_int_distribution<int> cat(0, 8);
    std::uniform_int_distribution<int> side(smin, smax);
    std::uniform_int_distribution<int> bg(0, 3);
    const int category = cat(rng);
    const int s = side(rng);
    std::uniform_int_distribution<int> pos(0, image_size - s);
    Tensor img = background(image_size, bg(rng));
    paint(img, rasterize_shape(category % 3, pos(rng), pos(rng), s, image_size), kColors[category / 3]);
    out.emplace_back(std::move(img), category);
  }
  return out;
}

TrainingExample make_training_example(const AnnotatedImage& img, std::uint64_t seed, int num_steps,
                                      double edge_density, int mask_size) {
  if (img.objects.empty()) fail(ErrorKind::kValidation, "image " + img.image_id + " has no objects");
  if (img.pixels.rank() != 3 || img.pixels.dim(0) != 3)
    fail(ErrorKind::kValidation, "image " + img.image_id + " has no pixel data");
  const std::uint64_t base = derive_seed(seed, fnv1a(img.image_id));
  std::vector<PlacedObject> objs;
  TrainingExample ex;
  ex.image_id = img.image_id;
  for (std::size_t i = 0; i < img.objects.size(); ++i) {
    const auto& o = img.objects[i];
    const int id = static_cast<int>(i);
    objs.push_back({id, o.category, o.box});
    ex.target_boxes[id] = o.box;
    if (o.mask && o.mask->dim(0) == mask_size) {
      ex.target_masks[id] = *o.mask;
    } else if (o.mask) {
      Tensor m3 = resize_bilinear(o.mask->reshaped({1, o.mask->dim(0), o.mask->dim(1)}), mask_size, mask_size);
      ex.target_masks[id] = m3.reshaped({mask_size, mask_size});
    } else {
      ex.target_masks[id] = Tensor({mask_size, mask_size}, 1.0);
    }
  }
  const SceneGraph full = build_graph(objs, edge_density, derive_seed(base, 1));
  ex.sequence = make_splits(full, derive_seed(base, 2), num_steps);
  ex.target_image = unit_to_signed(img.pixels);
  return ex;
}

void write_vocabulary(const fs::path& path, const Vocabulary& vocab) {
  ojson doc;
  doc["version"] = vocab.version();
  doc["categories"] = vocab.categories();
  doc["predicates"] = vocab.predicates();
  write_text_file(path, doc.dump(2) + "\n");
}

Vocabulary read_vocabulary(const fs::path& path) {
  json doc;
  try {
    doc = json::parse(read_text_file(path));
  } catch (const json::exception& e) {
    fail(ErrorKind::kData, "malformed vocabulary " + path.string() + ": " + e.what());
  }
  auto preds = doc.at("predicates").get<std::vector<std::string>>();
  const auto& geo = Vocabulary::geometric_predicates();
  if (preds.size() < geo.size() || !std::equal(geo.begin(), geo.end(), preds.begin()))
    fail(ErrorKind::kData, "vocabulary " + path.string() + " does not start with the geometric predicates");
  return Vocabulary(doc.at("version").get<std::string>(), doc.at("categories").get<std::vector<std::string>>(),
                    std::vector<std::string>(preds.begin() + static_cast<long>(geo.size()), preds.end()));
}

void write_example(const fs::path& dir, const TrainingExample& ex, const Vocabulary& vocab) {
  write_png(dir / "images" / (ex.image_id + ".png"), signed_to_unit(ex.target_image));
  write_text_file(dir / "sequences" / (ex.image_id + ".json"), serialize_sequence(ex.sequence, vocab));
  ojson ann;
  ann["image_id"] = ex.image_id;
  ann["objects"] = ojson::array();
  for (const auto& [id, box] : ex.target_boxes) {
    const Tensor& m = ex.target_masks.at(id);
    ann["objects"].push_back({{"node_id", id},
                              {"box", {box.x0, box.y0, box.x1, box.y1}},
                              {"mask_size", m.dim(0)},
                              {"mask", m.storage()}});
  }
  write_text_file(dir / "annotations" / (ex.image_id + ".json"), ann.dump() + "\n");
}

std::vector<TrainingExample> load_dataset(const fs::path& dir, const Vocabulary& vocab) {
  const fs::path manifest = dir / "manifest.json";
  if (!fs::exists(manifest)) fail(ErrorKind::kData, "dataset manifest not found: " + manifest.string());
  json doc;
  try {
    doc = json::parse(read_text_file(manifest));
  } catch (const json::exception& e) {
    fail(ErrorKind::kData, std::string("malformed manifest: ") + e.what());
  }
  std::vector<TrainingExample> out;
  const json entries = doc.value("entries", json::array());
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const std::string where = "entries[" + std::to_string(i) + "]";
    if (!entries[i].contains("image_id")) bad_record(where, "missing image_id");
    TrainingExample ex;
    ex.image_id = entries[i]["image_id"].get<std::string>();
    ex.target_image = unit_to_signed(read_image(dir / "images" / (ex.image_id + ".png")));
    ex.sequence = deserialize_sequence(read_text_file(dir / "sequences" / (ex.image_id + ".json")), vocab);
    json ann;
    try {
      ann = json::parse(read_text_file(dir / "annotations" / (ex.image_id + ".json")));
      for (const auto& o : ann.at("objects")) {
        const int id = o.at("node_id").get<int>();
        const auto b = o.at("box").get<std::vector<double>>();
        if (b.size() != 4) bad_record(where, "box needs 4 values");
        ex.target_boxes[id] = Box::make(b[0], b[1], b[2], b[3]);
        const int m = o.at("mask_size").get<int>();
        ex.target_masks[id] = Tensor({m, m}, o.at("mask").get<std::vector<double>>());
      }
    } catch (const json::exception& e) {
      bad_record(where, e.what());
    }
    for (int id : ex.sequence.steps.back().node_ids())
      if (!ex.target_boxes.count(id)) bad_record(where, "node " + std::to_string(id) + " has no box annotation");
    out.push_back(std::move(ex));
  }
  return out;
}

}  // namespace isg
