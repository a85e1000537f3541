#include "eyeref/io.hpp"

#include <png.h>

#include <charconv>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <fstream>
#include <memory>
#include <sstream>

namespace eyeref {
namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

void write_png(const std::filesystem::path& path, int width, int height, int channels, int depth,
               const std::vector<std::uint8_t>& bytes) {
  if (!path.parent_path().empty()) std::filesystem::create_directories(path.parent_path());
  FilePtr fp(std::fopen(path.string().c_str(), "wb"));
  if (!fp) throw Error("IOError", path.string(), "cannot write '" + path.string() + "'");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw Error("IOError", path.string(), "libpng initialisation failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw Error("IOError", path.string(), "failed writing '" + path.string() + "'");
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, width, height, depth, channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  const std::size_t stride = static_cast<std::size_t>(width) * channels * (depth / 8);
  for (int y = 0; y < height; ++y)
    png_write_row(png, const_cast<png_bytep>(bytes.data() + y * stride));
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

struct RawPng {
  int width = 0;
  int height = 0;
  int channels = 0;  // after expansion: 1..4
  int depth = 0;     // 8 or 16
  std::vector<std::uint8_t> bytes;

  double sample(int y, int x, int c) const {
    const std::size_t idx = (static_cast<std::size_t>(y) * width + x) * channels + c;
    if (depth == 8) return bytes[idx] / 255.0;
    const std::uint16_t v = static_cast<std::uint16_t>(bytes[2 * idx] << 8 | bytes[2 * idx + 1]);
    return v / 65535.0;
  }
};

RawPng read_png(const std::filesystem::path& path) {
  FilePtr fp(std::fopen(path.string().c_str(), "rb"));
  if (!fp) throw Error("IOError", path.string(), "cannot open '" + path.string() + "'");
  unsigned char sig[8] = {};
  if (std::fread(sig, 1, 8, fp.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0)
    throw Error("UnsupportedFormat", path.string(), "'" + path.string() + "' is not a PNG raster");
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw Error("IOError", path.string(), "libpng initialisation failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw Error("IOError", path.string(), "corrupt PNG '" + path.string() + "'");
  }
  png_init_io(png, fp.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);
  const int color = png_get_color_type(png, info);
  const int depth = png_get_bit_depth(png, info);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  png_read_update_info(png, info);

  RawPng raw;
  raw.width = static_cast<int>(png_get_image_width(png, info));
  raw.height = static_cast<int>(png_get_image_height(png, info));
  raw.channels = png_get_channels(png, info);
  raw.depth = png_get_bit_depth(png, info);
  if (raw.depth != 8 && raw.depth != 16) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw Error("UnsupportedFormat", path.string(), "unsupported bit depth");
  }
  const std::size_t stride = png_get_rowbytes(png, info);
  raw.bytes.resize(stride * raw.height);
  std::vector<png_bytep> rows(raw.height);
  for (int y = 0; y < raw.height; ++y) rows[y] = raw.bytes.data() + y * stride;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return raw;
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (ch != '\r') {
      cur.push_back(ch);
    }
  }
  out.push_back(cur);
  return out;
}

double parse_number(const std::string& s, int row) {
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size() || !std::isfinite(v))
    throw Error("ParseError", std::to_string(row), "row " + std::to_string(row) + ": bad number '" + s + "'");
  return v;
}

}  // namespace

void save_image(const Image& image, const std::filesystem::path& path, BitDepth depth) {
  validate_image(image);
  const int bytes_per = depth == BitDepth::eight ? 1 : 2;
  std::vector<std::uint8_t> bytes(image.plane() * 3 * bytes_per);
  std::size_t k = 0;
  for (int y = 0; y < image.height; ++y)
    for (int x = 0; x < image.width; ++x)
      for (int c = 0; c < 3; ++c) {
        const double v = image.at(c, y, x);
        if (depth == BitDepth::eight) {
          bytes[k++] = static_cast<std::uint8_t>(std::lround(v * 255.0));
        } else {
          const auto q = static_cast<std::uint16_t>(std::lround(v * 65535.0));
          bytes[k++] = static_cast<std::uint8_t>(q >> 8);
          bytes[k++] = static_cast<std::uint8_t>(q & 0xFF);
        }
      }
  write_png(path, image.width, image.height, 3, bytes_per * 8, bytes);
}

Image load_image(const std::filesystem::path& path) {
  const RawPng raw = read_png(path);
  Image image(raw.height, raw.width);
  const bool gray = raw.channels <= 2;
  for (int y = 0; y < raw.height; ++y)
    for (int x = 0; x < raw.width; ++x)
      for (int c = 0; c < 3; ++c) image.at(c, y, x) = static_cast<float>(raw.sample(y, x, gray ? 0 : c));
  validate_image(image);
  return image;
}

void save_mask(const ClassMask& mask, const std::filesystem::path& path) {
  for (auto v : mask.labels)
    if (v > 2) throw Error("InvalidMask", path.string(), "mask labels must be in {0,1,2}");
  write_png(path, mask.width, mask.height, 1, 8, mask.labels);
}

ClassMask load_mask(const std::filesystem::path& path) {
  const RawPng raw = read_png(path);
  if (raw.channels != 1 || raw.depth != 8)
    throw Error("UnsupportedFormat", path.string(), "masks must be 8-bit single-channel");
  ClassMask mask(raw.height, raw.width);
  mask.labels = raw.bytes;
  for (auto v : mask.labels)
    if (v > 2) throw Error("UnsupportedFormat", path.string(), "mask label outside {0,1,2}");
  return mask;
}

std::string format_exact(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

std::filesystem::path resolve(const Manifest& manifest, const std::string& p) {
  std::filesystem::path path(p);
  return path.is_absolute() ? path : manifest.directory / path;
}

Manifest read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("MissingFile", path.string(), "cannot open manifest '" + path.string() + "'");
  Manifest m;
  m.directory = path.parent_path();
  std::string line;
  if (!std::getline(in, line)) return m;
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const auto header = split_csv(line);
  const std::vector<std::string> base{"image_path", "mask_path", "yaw_deg", "pitch_deg", "domain"};
  if (header.size() < base.size() || !std::equal(base.begin(), base.end(), header.begin()))
    throw Error("ParseError", "0", "manifest header must start with " + std::string(kManifestHeader));
  if (header.size() == 7 && header[5] == "head_yaw_deg" && header[6] == "head_pitch_deg") {
    m.has_head_pose = true;
  } else if (header.size() != 5) {
    throw Error("ParseError", "0", "unexpected manifest columns");
  }
  int row = 0;
  while (std::getline(in, line)) {
    ++row;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto f = split_csv(line);
    if (f.size() != header.size())
      throw Error("ParseError", std::to_string(row), "row " + std::to_string(row) + ": wrong field count");
    if (f[0].empty()) throw Error("ParseError", std::to_string(row), "row " + std::to_string(row) + ": empty image_path");
    parse_number(f[2], row);
    parse_number(f[3], row);
    try {
      parse_domain(f[4]);
    } catch (const Error&) {
      throw Error("ParseError", std::to_string(row), "row " + std::to_string(row) + ": unknown domain '" + f[4] + "'");
    }
    ManifestRow r{f[0], f[1], f[2], f[3], f[4], {}, {}};
    if (m.has_head_pose) {
      if (!f[5].empty()) parse_number(f[5], row);
      if (!f[6].empty()) parse_number(f[6], row);
      r.head_yaw_deg = f[5];
      r.head_pitch_deg = f[6];
    }
    m.rows.push_back(std::move(r));
  }
  return m;
}

void write_manifest(const Manifest& manifest, const std::filesystem::path& path) {
  if (!path.parent_path().empty()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("IOError", path.string(), "cannot write manifest '" + path.string() + "'");
  out << kManifestHeader << (manifest.has_head_pose ? ",head_yaw_deg,head_pitch_deg" : "") << "\n";
  for (const auto& r : manifest.rows) {
    out << r.image_path << ',' << r.mask_path << ',' << r.yaw_deg << ',' << r.pitch_deg << ',' << r.domain;
    if (manifest.has_head_pose) out << ',' << r.head_yaw_deg << ',' << r.head_pitch_deg;
    out << "\n";
  }
  if (!out) throw Error("IOError", path.string(), "failed writing manifest");
}

std::vector<GazeSample> load_manifest(const std::filesystem::path& path) {
  const Manifest m = read_manifest(path);
  std::vector<GazeSample> out;
  out.reserve(m.rows.size());
  int row = 0;
  for (const auto& r : m.rows) {
    ++row;
    const auto image_path = resolve(m, r.image_path);
    if (!std::filesystem::exists(image_path)) throw Error("MissingImage", image_path.string(), "missing image '" + image_path.string() + "'");
    std::optional<ClassMask> mask;
    if (!r.mask_path.empty()) {
      const auto mask_path = resolve(m, r.mask_path);
      if (!std::filesystem::exists(mask_path)) throw Error("MissingImage", mask_path.string(), "missing mask '" + mask_path.string() + "'");
      mask = load_mask(mask_path);
    }
    Image image = load_image(image_path);
    if (mask && (mask->height != image.height || mask->width != image.width))
      throw Error("ParseError", std::to_string(row), "row " + std::to_string(row) + ": mask shape differs from image");
    out.push_back(GazeSample::from_angles(std::move(image), deg_to_rad(parse_number(r.yaw_deg, row)),
                                          deg_to_rad(parse_number(r.pitch_deg, row)), parse_domain(r.domain),
                                          std::move(mask)));
  }
  return out;
}

}  // namespace eyeref
