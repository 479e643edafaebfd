#include "isggen/image_io.hpp"

#include <jpeglib.h>
#include <png.h>

#include <algorithm>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>
#include <sstream>
#include <vector>

#include "isggen/error.hpp"

namespace isg {

namespace fs = std::filesystem;

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

FilePtr open_file(const fs::path& path, const char* mode) {
  FilePtr f(std::fopen(path.c_str(), mode));
  if (!f) fail(ErrorKind::kIo, "cannot open " + path.string());
  return f;
}

std::uint8_t quantize(double v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

Tensor from_interleaved(const std::vector<std::uint8_t>& px, int h, int w, int channels) {
  Tensor t({3, h, w});
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c) {
        const int src_c = channels >= 3 ? c : 0;
        t.at(c, y, x) = px[(static_cast<std::size_t>(y) * w + x) * channels + src_c] / 255.0;
      }
  return t;
}

Tensor read_png(const fs::path& path) {
  FilePtr f = open_file(path, "rb");
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    fail(ErrorKind::kData, "corrupt PNG " + path.string());
  }
  png_init_io(png, f.get());
  png_read_info(png, info);
  png_set_strip_16(png);
  png_set_palette_to_rgb(png);
  png_set_expand_gray_1_2_4_to_8(png);
  png_set_strip_alpha(png);
  png_set_gray_to_rgb(png);
  png_read_update_info(png, info);
  const int w = static_cast<int>(png_get_image_width(png, info));
  const int h = static_cast<int>(png_get_image_height(png, info));
  const int channels = png_get_channels(png, info);
  std::vector<std::uint8_t> px(static_cast<std::size_t>(w) * h * channels);
  std::vector<png_bytep> rows(h);
  for (int y = 0; y < h; ++y) rows[y] = px.data() + static_cast<std::size_t>(y) * w * channels;
  png_read_image(png, rows.data());
  png_destroy_read_struct(&png, &info, nullptr);
  return from_interleaved(px, h, w, channels);
}

struct JpegError {
  jpeg_error_mgr mgr;
  std::jmp_buf jump;
};

void jpeg_exit(j_common_ptr cinfo) { std::longjmp(reinterpret_cast<JpegError*>(cinfo->err)->jump, 1); }

Tensor read_jpeg(const fs::path& path) {
  FilePtr f = open_file(path, "rb");
  jpeg_decompress_struct cinfo;
  JpegError err;
  cinfo.err = jpeg_std_error(&err.mgr);
  err.mgr.error_exit = jpeg_exit;
  if (setjmp(err.jump)) {
    jpeg_destroy_decompress(&cinfo);
    fail(ErrorKind::kData, "corrupt JPEG " + path.string());
  }
  jpeg_create_decompress(&cinfo);
  jpeg_stdio_src(&cinfo, f.get());
  jpeg_read_header(&cinfo, TRUE);
  cinfo.out_color_space = JCS_RGB;
  jpeg_start_decompress(&cinfo);
  const int w = static_cast<int>(cinfo.output_width), h = static_cast<int>(cinfo.output_height);
  const int channels = cinfo.output_components;
  std::vector<std::uint8_t> px(static_cast<std::size_t>(w) * h * channels);
  while (cinfo.output_scanline < cinfo.output_height) {
    JSAMPROW row = px.data() + static_cast<std::size_t>(cinfo.output_scanline) * w * channels;
    jpeg_read_scanlines(&cinfo, &row, 1);
  }
  jpeg_finish_decompress(&cinfo);
  jpeg_destroy_decompress(&cinfo);
  return from_interleaved(px, h, w, channels);
}

void png_write_to_string(png_structp png, png_bytep data, png_size_t len) {
  auto* out = static_cast<std::string*>(png_get_io_ptr(png));
  out->append(reinterpret_cast<const char*>(data), len);
}

void png_flush_noop(png_structp) {}

}  // namespace

Tensor read_image(const fs::path& path) {
  if (!fs::exists(path)) fail(ErrorKind::kData, "image file not found: " + path.string());
  std::string ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  if (ext == ".png") return read_png(path);
  if (ext == ".jpg" || ext == ".jpeg") return read_jpeg(path);
  fail(ErrorKind::kData, "unsupported image format: " + path.string());
}

std::string encode_png(const Tensor& rgb) {
  if (rgb.rank() != 3 || rgb.dim(0) != 3) fail(ErrorKind::kValidation, "encode_png expects [3,H,W]");
  const int h = rgb.dim(1), w = rgb.dim(2);
  std::vector<std::uint8_t> px(static_cast<std::size_t>(w) * h * 3);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c) px[(static_cast<std::size_t>(y) * w + x) * 3 + c] = quantize(rgb.at(c, y, x));
  std::string out;
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    fail(ErrorKind::kIo, "PNG encoding failed");
  }
  png_set_write_fn(png, &out, png_write_to_string, png_flush_noop);
  png_set_IHDR(png, info, static_cast<png_uint_32>(w), static_cast<png_uint_32>(h), 8, PNG_COLOR_TYPE_RGB,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int y = 0; y < h; ++y) png_write_row(png, px.data() + static_cast<std::size_t>(y) * w * 3);
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  return out;
}

void write_png(const fs::path& path, const Tensor& rgb) {
  const std::string bytes = encode_png(rgb);
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary);
  if (!os) fail(ErrorKind::kIo, "cannot write " + path.string());
  os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

Tensor signed_to_unit(const Tensor& img) {
  Tensor t = img;
  for (auto& v : t.values()) v = 0.5 * (v + 1.0);
  return t;
}

Tensor unit_to_signed(const Tensor& img) {
  Tensor t = img;
  for (auto& v : t.values()) v = 2.0 * v - 1.0;
  return t;
}

Tensor resize_bilinear(const Tensor& img, int height, int width) {
  const int c = img.dim(0), h = img.dim(1), w = img.dim(2);
  if (h == height && w == width) return img;
  Tensor out({c, height, width});
  for (int y = 0; y < height; ++y) {
    const double sy = std::clamp((y + 0.5) * h / height - 0.5, 0.0, h - 1.0);
    const int y0 = static_cast<int>(sy);
    const int y1 = std::min(y0 + 1, h - 1);
    const double fy = sy - y0;
    for (int x = 0; x < width; ++x) {
      const double sx = std::clamp((x + 0.5) * w / width - 0.5, 0.0, w - 1.0);
      const int x0 = static_cast<int>(sx);
      const int x1 = std::min(x0 + 1, w - 1);
      const double fx = sx - x0;
      for (int ci = 0; ci < c; ++ci)
        out.at(ci, y, x) = (1 - fy) * ((1 - fx) * img.at(ci, y0, x0) + fx * img.at(ci, y0, x1)) +
                           fy * ((1 - fx) * img.at(ci, y1, x0) + fx * img.at(ci, y1, x1));
    }
  }
  return out;
}

void write_tensor_file(const fs::path& path, const Tensor& t) {
  std::ostringstream os(std::ios::binary);
  const auto rank = static_cast<std::uint32_t>(t.rank());
  os.write(reinterpret_cast<const char*>(&rank), sizeof rank);
  for (int d : t.shape()) {
    const auto v = static_cast<std::int32_t>(d);
    os.write(reinterpret_cast<const char*>(&v), sizeof v);
  }
  os.write(reinterpret_cast<const char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(double)));
  write_text_file(path, os.str());
}

Tensor read_tensor_file(const fs::path& path) {
  const std::string bytes = read_text_file(path);
  std::size_t off = 0;
  auto take = [&](void* dst, std::size_t n) {
    if (off + n > bytes.size()) fail(ErrorKind::kData, "truncated tensor file " + path.string());
    std::memcpy(dst, bytes.data() + off, n);
    off += n;
  };
  std::uint32_t rank = 0;
  take(&rank, sizeof rank);
  if (rank > 8) fail(ErrorKind::kData, "corrupt tensor file " + path.string());
  Shape shape(rank);
  for (auto& d : shape) {
    std::int32_t v = 0;
    take(&v, sizeof v);
    d = v;
  }
  Tensor t(shape);
  take(t.data(), t.size() * sizeof(double));
  return t;
}

std::string read_text_file(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) fail(ErrorKind::kIo, "cannot read " + path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

void write_text_file(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) fail(ErrorKind::kIo, "cannot write " + tmp.string());
    os.write(text.data(), static_cast<std::streamsize>(text.size()));
    if (!os) fail(ErrorKind::kIo, "short write to " + tmp.string());
  }
  fs::rename(tmp, path);
}

}  // namespace isg
