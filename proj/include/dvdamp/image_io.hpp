#pragma once

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "dvdamp/core.hpp"
#include "dvdamp/phantom.hpp"
#include "dvdamp/serialization.hpp"

namespace dvdamp {

class ImageIoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

struct PngReadHandle {
  png_structp png = nullptr;
  png_infop info = nullptr;
  ~PngReadHandle() { png_destroy_read_struct(&png, info ? &info : nullptr, nullptr); }
};

struct PngWriteHandle {
  png_structp png = nullptr;
  png_infop info = nullptr;
  ~PngWriteHandle() { png_destroy_write_struct(&png, info ? &info : nullptr); }
};

struct FileCloser {
  void operator()(std::FILE* f) const { std::fclose(f); }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

inline void png_error_handler(png_structp, png_const_charp msg) { throw ImageIoError(msg); }
inline void png_warning_handler(png_structp, png_const_charp) {}

}  // namespace detail

// 8- or 16-bit grayscale PNG; pixel values are kept in their native range.
inline ImageGrid read_png(const std::string& path) {
  detail::FilePtr file(std::fopen(path.c_str(), "rb"));
  if (!file) throw ImageIoError("cannot open " + path);
  png_byte sig[8];
  if (std::fread(sig, 1, 8, file.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0) {
    throw ImageIoError(path + " is not a PNG file");
  }
  detail::PngReadHandle h;
  h.png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, detail::png_error_handler,
                                 detail::png_warning_handler);
  if (!h.png) throw ImageIoError("png_create_read_struct failed");
  h.info = png_create_info_struct(h.png);
  if (!h.info) throw ImageIoError("png_create_info_struct failed");
  png_init_io(h.png, file.get());
  png_set_sig_bytes(h.png, 8);
  png_read_info(h.png, h.info);

  const auto color = png_get_color_type(h.png, h.info);
  const int depth = png_get_bit_depth(h.png, h.info);
  if (color != PNG_COLOR_TYPE_GRAY && color != PNG_COLOR_TYPE_GRAY_ALPHA) {
    throw ImageIoError(path + " is not a grayscale PNG");
  }
  if (depth < 8) png_set_expand_gray_1_2_4_to_8(h.png);
  if (color == PNG_COLOR_TYPE_GRAY_ALPHA) png_set_strip_alpha(h.png);
  if (depth == 16) png_set_swap(h.png);
  png_read_update_info(h.png, h.info);

  const std::size_t height = png_get_image_height(h.png, h.info);
  const std::size_t width = png_get_image_width(h.png, h.info);
  const std::size_t rowbytes = png_get_rowbytes(h.png, h.info);
  std::vector<png_byte> data(rowbytes * height);
  std::vector<png_bytep> rows(height);
  for (std::size_t r = 0; r < height; ++r) rows[r] = data.data() + r * rowbytes;
  png_read_image(h.png, rows.data());

  ImageGrid img(height, width);
  for (std::size_t r = 0; r < height; ++r) {
    for (std::size_t c = 0; c < width; ++c) {
      double v;
      if (depth == 16) {
        std::uint16_t s;
        std::memcpy(&s, rows[r] + 2 * c, 2);
        v = s;
      } else {
        v = rows[r][c];
      }
      img(r, c) = v;
    }
  }
  return img;
}

// Writes the real part, clamped to [0, peak] and scaled to the 16-bit range.
inline void write_png16(const std::string& path, const ImageGrid& image, double peak = 255.0) {
  detail::FilePtr file(std::fopen(path.c_str(), "wb"));
  if (!file) throw ImageIoError("cannot open " + path + " for writing");
  detail::PngWriteHandle h;
  h.png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, detail::png_error_handler,
                                  detail::png_warning_handler);
  if (!h.png) throw ImageIoError("png_create_write_struct failed");
  h.info = png_create_info_struct(h.png);
  if (!h.info) throw ImageIoError("png_create_info_struct failed");
  png_init_io(h.png, file.get());
  png_set_IHDR(h.png, h.info, static_cast<png_uint_32>(image.width()),
               static_cast<png_uint_32>(image.height()), 16, PNG_COLOR_TYPE_GRAY,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(h.png, h.info);
  png_set_swap(h.png);
  std::vector<std::uint16_t> row(image.width());
  for (std::size_t r = 0; r < image.height(); ++r) {
    for (std::size_t c = 0; c < image.width(); ++c) {
      const double v = std::clamp(image(r, c).real() / peak, 0.0, 1.0);
      row[c] = static_cast<std::uint16_t>(std::lround(v * 65535.0));
    }
    png_write_row(h.png, reinterpret_cast<png_const_bytep>(row.data()));
  }
  png_write_end(h.png, nullptr);
}

// Binary (P5) or ASCII (P2) PGM with maxval up to 65535.
inline ImageGrid read_pgm(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ImageIoError("cannot open " + path);
  auto token = [&]() {
    std::string t;
    while (f) {
      const int ch = f.get();
      if (ch == '#') {
        std::string skip;
        std::getline(f, skip);
      } else if (std::isspace(ch)) {
        if (!t.empty()) return t;
      } else if (ch != EOF) {
        t.push_back(static_cast<char>(ch));
      }
    }
    return t;
  };
  const std::string magic = token();
  if (magic != "P5" && magic != "P2") throw ImageIoError(path + " is not a PGM file");
  std::size_t width = 0, height = 0, maxval = 0;
  try {
    width = std::stoul(token());
    height = std::stoul(token());
    maxval = std::stoul(token());
  } catch (const std::exception&) {
    throw ImageIoError(path + " has a malformed PGM header");
  }
  if (width == 0 || height == 0 || maxval == 0 || maxval > 65535) {
    throw ImageIoError(path + " has invalid PGM dimensions or maxval");
  }
  ImageGrid img(height, width);
  if (magic == "P2") {
    for (std::size_t i = 0; i < img.size(); ++i) {
      const std::string t = token();
      if (t.empty()) throw ImageIoError(path + " is truncated");
      img[i] = std::stod(t);
    }
    return img;
  }
  const std::size_t bytes_per = maxval > 255 ? 2 : 1;
  std::vector<unsigned char> data(img.size() * bytes_per);
  f.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(data.size()));
  if (static_cast<std::size_t>(f.gcount()) != data.size()) throw ImageIoError(path + " is truncated");
  for (std::size_t i = 0; i < img.size(); ++i) {
    img[i] = bytes_per == 2 ? double((data[2 * i] << 8) | data[2 * i + 1]) : double(data[i]);
  }
  return img;
}

inline std::string raw_sidecar_path(const std::string& path) { return path + ".json"; }

// Real part as little-endian float64, row-major, plus a JSON sidecar with the shape.
inline void write_raw(const std::string& path, const ImageGrid& image) {
  std::vector<double> re(image.size());
  for (std::size_t i = 0; i < image.size(); ++i) re[i] = image[i].real();
  const auto bytes = doubles_to_le_bytes(re);
  std::ofstream f(path, std::ios::binary);
  if (!f) throw ImageIoError("cannot open " + path + " for writing");
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  std::ofstream side(raw_sidecar_path(path));
  side << nlohmann::json{{"height", image.height()}, {"width", image.width()}, {"dtype", "float64"},
                         {"byte_order", "little"}}
              .dump(2)
       << '\n';
  if (!f || !side) throw ImageIoError("failed writing " + path);
}

inline ImageGrid read_raw(const std::string& path) {
  std::ifstream side(raw_sidecar_path(path));
  if (!side) throw ImageIoError("missing sidecar " + raw_sidecar_path(path));
  std::size_t height = 0, width = 0;
  try {
    const auto meta = nlohmann::json::parse(side);
    if (meta.at("dtype").get<std::string>() != "float64") throw ImageIoError("raw dtype must be float64");
    if (meta.value("byte_order", "little") != "little") throw ImageIoError("raw data must be little-endian");
    height = meta.at("height").get<std::size_t>();
    width = meta.at("width").get<std::size_t>();
  } catch (const nlohmann::json::exception& e) {
    throw ImageIoError("invalid sidecar for " + path + ": " + e.what());
  }
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ImageIoError("cannot open " + path);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  if (bytes.size() != height * width * 8) {
    throw ImageIoError(path + " holds " + std::to_string(bytes.size()) + " bytes, expected " +
                       std::to_string(height * width * 8));
  }
  const auto values = le_bytes_to_doubles(bytes);
  ImageGrid img(height, width);
  for (std::size_t i = 0; i < values.size(); ++i) img[i] = values[i];
  return img;
}

// "phantom:N" or "phantom:HxW" selects the built-in Shepp-Logan phantom.
inline ImageGrid load_image(const std::string& spec) {
  if (spec.rfind("phantom:", 0) == 0) {
    const std::string dims = spec.substr(8);
    std::size_t h = 0, w = 0;
    try {
      const auto x = dims.find('x');
      h = std::stoul(dims.substr(0, x));
      w = x == std::string::npos ? h : std::stoul(dims.substr(x + 1));
    } catch (const std::exception&) {
      throw ImageIoError("bad phantom size in '" + spec + "'");
    }
    return shepp_logan(h, w);
  }
  if (!std::filesystem::exists(spec)) throw ImageIoError("no such file: " + spec);
  std::string ext = std::filesystem::path(spec).extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  if (ext == ".png") return read_png(spec);
  if (ext == ".pgm") return read_pgm(spec);
  if (ext == ".raw" || ext == ".f64" || ext == ".bin") return read_raw(spec);
  throw ImageIoError("unsupported image format '" + ext + "'");
}

}  // namespace dvdamp
