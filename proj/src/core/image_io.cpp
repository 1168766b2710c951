#include "core/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <memory>
#include <sstream>

namespace pxs {

namespace {

constexpr std::size_t kMaxDim = 1 << 20;
constexpr std::size_t kMaxPixels = 100'000'000;

[[noreturn]] void format_fail(const std::string& path, long offset, const std::string& expected) {
  std::ostringstream os;
  os << path << ": at byte " << offset << ": " << expected;
  fail(ErrorKind::format, os.str());
}

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

FilePtr open_file(const std::string& path, const char* mode) {
  FilePtr f(std::fopen(path.c_str(), mode));
  if (!f) fail(ErrorKind::io, path + ": cannot open (" + std::strerror(errno) + ")");
  return f;
}

long tell_of(std::FILE* f) {
  const long pos = std::ftell(f);
  return pos < 0 ? 0 : pos;
}

void check_dims(const std::string& path, long offset, std::size_t w, std::size_t h) {
  if (w == 0 || h == 0 || w > kMaxDim || h > kMaxDim || w * h > kMaxPixels) {
    std::ostringstream os;
    os << "unreasonable image size " << w << "x" << h;
    format_fail(path, offset, os.str());
  }
}

float bswap_float(float v) {
  std::uint32_t bits;
  std::memcpy(&bits, &v, 4);
  bits = __builtin_bswap32(bits);
  std::memcpy(&v, &bits, 4);
  return v;
}

// ---- PNG ----------------------------------------------------------------

struct PngError {
  std::string path;
  std::FILE* fp = nullptr;
  std::string message = "PNG decode error";
};

extern "C" void pxs_png_error(png_structp png, png_const_charp msg) {
  auto* ctx = static_cast<PngError*>(png_get_error_ptr(png));
  if (ctx && msg) ctx->message = msg;
  longjmp(png_jmpbuf(png), 1);
}

extern "C" void pxs_png_warn(png_structp, png_const_charp) {}

}  // namespace

ImageF read_png_rgb(const std::string& path) {
  FilePtr fp = open_file(path, "rb");
  unsigned char sig[8] = {};
  if (std::fread(sig, 1, 8, fp.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0)
    format_fail(path, 0, "expected PNG signature");

  PngError ectx{path, fp.get()};
  png_structp png =
      png_create_read_struct(PNG_LIBPNG_VER_STRING, &ectx, pxs_png_error, pxs_png_warn);
  check(png != nullptr, ErrorKind::io, "libpng init failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    fail(ErrorKind::io, "libpng init failed");
  }

  // Declared before setjmp so they survive the longjmp path.
  std::vector<unsigned char> pixels;
  std::vector<png_bytep> rows;
  png_uint_32 w = 0, h = 0;

  if (setjmp(png_jmpbuf(png))) {
    const long off = tell_of(fp.get());
    std::string msg = ectx.message;
    png_destroy_read_struct(&png, &info, nullptr);
    format_fail(path, off, msg);
  }

  png_init_io(png, fp.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);

  w = png_get_image_width(png, info);
  h = png_get_image_height(png, info);
  check_dims(path, tell_of(fp.get()), w, h);

  // Normalize every variant to 8-bit RGB.
  png_set_expand(png);
  if (png_get_bit_depth(png, info) == 16) png_set_strip_16(png);
  if (png_get_color_type(png, info) == PNG_COLOR_TYPE_GRAY ||
      png_get_color_type(png, info) == PNG_COLOR_TYPE_GRAY_ALPHA)
    png_set_gray_to_rgb(png);
  png_set_strip_alpha(png);
  png_read_update_info(png, info);

  if (png_get_channels(png, info) != 3)
    format_fail(path, tell_of(fp.get()), "expected an image reducible to 8-bit RGB");

  pixels.resize(static_cast<std::size_t>(w) * h * 3);
  rows.resize(h);
  for (png_uint_32 y = 0; y < h; ++y) rows[y] = pixels.data() + static_cast<std::size_t>(y) * w * 3;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);

  ImageF out(3, h, w);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t c = 0; c < 3; ++c)
        out.at(c, y, x) = pixels[(y * w + x) * 3 + c] / 255.0;
  return out;
}

void write_png_rgb(const std::string& path, const ImageF& img) {
  check(img.channels == 3, ErrorKind::invalid_argument, "PNG writer expects a 3-channel image");
  check(img.width > 0 && img.height > 0, ErrorKind::invalid_argument, "empty image");

  std::vector<unsigned char> pixels(img.width * img.height * 3);
  for (std::size_t y = 0; y < img.height; ++y)
    for (std::size_t x = 0; x < img.width; ++x)
      for (std::size_t c = 0; c < 3; ++c) {
        const double v = std::clamp(img.at(c, y, x), 0.0, 1.0);
        pixels[(y * img.width + x) * 3 + c] =
            static_cast<unsigned char>(std::lround(v * 255.0));
      }
  std::vector<png_bytep> rows(img.height);
  for (std::size_t y = 0; y < img.height; ++y) rows[y] = pixels.data() + y * img.width * 3;

  FilePtr fp = open_file(path, "wb");
  PngError ectx{path, fp.get(), "PNG encode error"};
  png_structp png =
      png_create_write_struct(PNG_LIBPNG_VER_STRING, &ectx, pxs_png_error, pxs_png_warn);
  check(png != nullptr, ErrorKind::io, "libpng init failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    fail(ErrorKind::io, "libpng init failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    std::string msg = ectx.message;
    png_destroy_write_struct(&png, &info);
    fail(ErrorKind::io, path + ": " + msg);
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(img.width),
               static_cast<png_uint_32>(img.height), 8, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

// ---- PFM ----------------------------------------------------------------

namespace {

// Reads one whitespace-delimited header token, tracking the byte offset.
std::string pfm_token(std::FILE* f, const std::string& path) {
  int ch = std::fgetc(f);
  while (ch == ' ' || ch == '\n' || ch == '\r' || ch == '\t') ch = std::fgetc(f);
  if (ch == EOF) format_fail(path, tell_of(f), "unexpected end of PFM header");
  std::string tok;
  while (ch != EOF && ch != ' ' && ch != '\n' && ch != '\r' && ch != '\t') {
    tok.push_back(static_cast<char>(ch));
    if (tok.size() > 32) format_fail(path, tell_of(f), "PFM header token too long");
    ch = std::fgetc(f);
  }
  return tok;
}

long parse_long(const std::string& tok, const std::string& path, long off, const char* what) {
  std::size_t used = 0;
  long v = 0;
  try {
    v = std::stol(tok, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != tok.size()) format_fail(path, off, std::string("expected integer ") + what);
  return v;
}

}  // namespace

ImageF read_pfm(const std::string& path) {
  FilePtr fp = open_file(path, "rb");
  std::FILE* f = fp.get();

  const std::string magic = pfm_token(f, path);
  if (magic == "PF") format_fail(path, 0, "color PFM not supported; expected grayscale \"Pf\"");
  if (magic != "Pf") format_fail(path, 0, "expected PFM magic \"Pf\"");

  long off = tell_of(f);
  const long w = parse_long(pfm_token(f, path), path, off, "width");
  off = tell_of(f);
  const long h = parse_long(pfm_token(f, path), path, off, "height");
  if (w <= 0 || h <= 0) format_fail(path, off, "PFM dimensions must be positive");
  check_dims(path, off, static_cast<std::size_t>(w), static_cast<std::size_t>(h));

  off = tell_of(f);
  const std::string scale_tok = pfm_token(f, path);
  char* end = nullptr;
  const double scale = std::strtod(scale_tok.c_str(), &end);
  if (end != scale_tok.c_str() + scale_tok.size() || scale == 0.0 || !std::isfinite(scale))
    format_fail(path, off, "expected nonzero finite PFM scale");
  const bool little_endian = scale < 0;

  // pfm_token consumed exactly one whitespace byte after the scale; binary
  // data starts here. Scanlines run bottom-up.
  const std::size_t count = static_cast<std::size_t>(w) * static_cast<std::size_t>(h);
  std::vector<float> raw(count);
  off = tell_of(f);
  if (std::fread(raw.data(), 4, count, f) != count)
    format_fail(path, tell_of(f), "truncated PFM pixel data");

  ImageF out(1, static_cast<std::size_t>(h), static_cast<std::size_t>(w));
  for (long y = 0; y < h; ++y) {
    const long src_row = h - 1 - y;
    for (long x = 0; x < w; ++x) {
      float v = raw[static_cast<std::size_t>(src_row) * w + x];
      if (!little_endian) v = bswap_float(v);
      out.at(0, static_cast<std::size_t>(y), static_cast<std::size_t>(x)) = v;
    }
  }
  return out;
}

void write_pfm(const std::string& path, const ImageF& img) {
  check(img.channels == 1, ErrorKind::invalid_argument, "PFM writer expects a 1-channel image");
  check(img.width > 0 && img.height > 0, ErrorKind::invalid_argument, "empty image");
  FilePtr fp = open_file(path, "wb");
  std::FILE* f = fp.get();
  std::fprintf(f, "Pf\n%zu %zu\n-1.0\n", img.width, img.height);
  std::vector<float> row(img.width);
  for (std::size_t y = 0; y < img.height; ++y) {
    const std::size_t src_row = img.height - 1 - y;  // bottom-up on disk
    for (std::size_t x = 0; x < img.width; ++x)
      row[x] = static_cast<float>(img.at(0, src_row, x));
    if (std::fwrite(row.data(), 4, img.width, f) != img.width)
      fail(ErrorKind::io, path + ": short write");
  }
}

// ---- Middlebury .flo ----------------------------------------------------

namespace {
constexpr float kFloMagic = 202021.25f;
}

ImageF read_flo(const std::string& path) {
  FilePtr fp = open_file(path, "rb");
  std::FILE* f = fp.get();
  float magic = 0;
  if (std::fread(&magic, 4, 1, f) != 1) format_fail(path, 0, "truncated .flo magic");
  if (magic != kFloMagic) format_fail(path, 0, "expected .flo magic 202021.25");
  std::int32_t w = 0, h = 0;
  if (std::fread(&w, 4, 1, f) != 1 || std::fread(&h, 4, 1, f) != 1)
    format_fail(path, tell_of(f), "truncated .flo dimensions");
  if (w <= 0 || h <= 0) format_fail(path, 4, ".flo dimensions must be positive");
  check_dims(path, 4, static_cast<std::size_t>(w), static_cast<std::size_t>(h));

  const std::size_t count = static_cast<std::size_t>(w) * static_cast<std::size_t>(h) * 2;
  std::vector<float> raw(count);
  if (std::fread(raw.data(), 4, count, f) != count)
    format_fail(path, tell_of(f), "truncated .flo pixel data");

  ImageF out(2, static_cast<std::size_t>(h), static_cast<std::size_t>(w));
  for (std::size_t y = 0; y < out.height; ++y)
    for (std::size_t x = 0; x < out.width; ++x) {
      out.at(0, y, x) = raw[(y * out.width + x) * 2 + 0];
      out.at(1, y, x) = raw[(y * out.width + x) * 2 + 1];
    }
  return out;
}

void write_flo(const std::string& path, const ImageF& flow) {
  check(flow.channels == 2, ErrorKind::invalid_argument, ".flo writer expects 2 channels (u,v)");
  check(flow.width > 0 && flow.height > 0, ErrorKind::invalid_argument, "empty flow");
  FilePtr fp = open_file(path, "wb");
  std::FILE* f = fp.get();
  const float magic = kFloMagic;
  const std::int32_t w = static_cast<std::int32_t>(flow.width);
  const std::int32_t h = static_cast<std::int32_t>(flow.height);
  if (std::fwrite(&magic, 4, 1, f) != 1 || std::fwrite(&w, 4, 1, f) != 1 ||
      std::fwrite(&h, 4, 1, f) != 1)
    fail(ErrorKind::io, path + ": short write");
  std::vector<float> row(flow.width * 2);
  for (std::size_t y = 0; y < flow.height; ++y) {
    for (std::size_t x = 0; x < flow.width; ++x) {
      row[x * 2 + 0] = static_cast<float>(flow.at(0, y, x));
      row[x * 2 + 1] = static_cast<float>(flow.at(1, y, x));
    }
    if (std::fwrite(row.data(), 4, flow.width * 2, f) != flow.width * 2)
      fail(ErrorKind::io, path + ": short write");
  }
}

}  // namespace pxs
