#include "fundus/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <fstream>
#include <string>
#include <vector>

#include "fundus/error.hpp"

namespace fundus {

namespace {

std::string lower_ext(const std::filesystem::path& path) {
  std::string ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return ext;
}

Image from_bytes(const std::vector<std::uint8_t>& bytes, int h, int w, int ch) {
  std::vector<double> data(bytes.size());
  std::transform(bytes.begin(), bytes.end(), data.begin(), from_u8);
  return Image(h, w, ch, std::move(data));
}

std::vector<std::uint8_t> to_bytes(const Image& img) {
  std::vector<std::uint8_t> bytes(img.data().size());
  std::transform(img.data().begin(), img.data().end(), bytes.begin(), to_u8);
  return bytes;
}

Image read_png(const std::filesystem::path& path) {
  png_image png{};
  png.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&png, path.c_str())) {
    std::string msg = png.message;
    png_image_free(&png);
    throw Error(ErrorCode::CorruptFile, path.string() + ": " + msg);
  }
  const bool color = (png.format & PNG_FORMAT_FLAG_COLOR) != 0;
  png.format = color ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  const int ch = color ? 3 : 1;
  const int w = static_cast<int>(png.width);
  const int h = static_cast<int>(png.height);
  std::vector<std::uint8_t> bytes(PNG_IMAGE_SIZE(png));
  if (!png_image_finish_read(&png, nullptr, bytes.data(), 0, nullptr)) {
    std::string msg = png.message;
    png_image_free(&png);
    throw Error(ErrorCode::CorruptFile, path.string() + ": " + msg);
  }
  return from_bytes(bytes, h, w, ch);
}

// Reads one whitespace/comment-delimited PNM header token.
std::string pnm_token(std::istream& in) {
  std::string token;
  int c;
  while ((c = in.get()) != EOF) {
    if (c == '#') {
      while ((c = in.get()) != EOF && c != '\n') {
      }
      continue;
    }
    if (std::isspace(c)) {
      if (!token.empty()) break;
      continue;
    }
    token.push_back(static_cast<char>(c));
  }
  return token;
}

Image read_pnm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoFailure, "cannot open " + path.string());
  const std::string magic = pnm_token(in);
  const int ch = magic == "P6" ? 3 : 1;
  int w = 0;
  int h = 0;
  int maxval = 0;
  try {
    w = std::stoi(pnm_token(in));
    h = std::stoi(pnm_token(in));
    maxval = std::stoi(pnm_token(in));
  } catch (const std::exception&) {
    throw Error(ErrorCode::CorruptFile, path.string() + ": bad PNM header");
  }
  if (w < 1 || h < 1) throw Error(ErrorCode::CorruptFile, path.string() + ": bad PNM dimensions");
  if (maxval != 255) {
    throw Error(ErrorCode::UnsupportedFormat, path.string() + ": only 8-bit PNM is supported");
  }
  std::vector<std::uint8_t> bytes(static_cast<std::size_t>(w) * h * ch);
  in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (in.gcount() != static_cast<std::streamsize>(bytes.size())) {
    throw Error(ErrorCode::CorruptFile, path.string() + ": truncated pixel data");
  }
  return from_bytes(bytes, h, w, ch);
}

}  // namespace

std::uint8_t to_u8(double v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

Image read_image(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoFailure, "cannot open " + path.string());
  std::array<unsigned char, 8> sig{};
  in.read(reinterpret_cast<char*>(sig.data()), sig.size());
  const auto got = static_cast<std::size_t>(in.gcount());
  in.close();
  if (got == sig.size() && png_sig_cmp(sig.data(), 0, sig.size()) == 0) return read_png(path);
  if (got >= 2 && sig[0] == 'P' && (sig[1] == '6' || sig[1] == '5')) return read_pnm(path);
  throw Error(ErrorCode::UnsupportedFormat, path.string() + ": not a PNG or binary PNM file");
}

void write_image(const Image& img, const std::filesystem::path& path) {
  const std::string ext = lower_ext(path);
  const std::vector<std::uint8_t> bytes = to_bytes(img);
  if (ext == ".png") {
    png_image png{};
    png.version = PNG_IMAGE_VERSION;
    png.width = static_cast<png_uint_32>(img.width());
    png.height = static_cast<png_uint_32>(img.height());
    png.format = img.channels() == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
    if (!png_image_write_to_file(&png, path.c_str(), 0, bytes.data(), 0, nullptr)) {
      std::string msg = png.message;
      png_image_free(&png);
      throw Error(ErrorCode::IoFailure, path.string() + ": " + msg);
    }
    return;
  }
  if (ext == ".ppm" || ext == ".pnm" || ext == ".pgm") {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error(ErrorCode::IoFailure, "cannot create " + path.string());
    out << (img.channels() == 3 ? "P6" : "P5") << '\n'
        << img.width() << ' ' << img.height() << "\n255\n";
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error(ErrorCode::IoFailure, "write failed for " + path.string());
    return;
  }
  throw Error(ErrorCode::UnsupportedFormat, path.string() + ": unknown output extension");
}

}  // namespace fundus
