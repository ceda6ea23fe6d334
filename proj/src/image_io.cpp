#include "hetddi/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <fstream>
#include <memory>

namespace hetddi {

namespace {

int readPgmToken(std::istream& is, const std::string& path) {
  // Whitespace and '#' comments may separate header tokens.
  for (;;) {
    int c = is.peek();
    if (c == EOF) throw ParseError("'" + path + "': truncated header");
    if (std::isspace(c)) {
      is.get();
      continue;
    }
    if (c == '#') {
      std::string line;
      std::getline(is, line);
      continue;
    }
    break;
  }
  int value = 0;
  if (!(is >> value)) throw ParseError("'" + path + "': bad header number");
  return value;
}

Image readPgm(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open '" + path + "'");
  char p, five;
  is.get(p);
  is.get(five);
  if (p != 'P' || five != '5') {
    throw ParseError("'" + path + "': not a binary PGM");
  }
  Image img;
  img.w = readPgmToken(is, path);
  img.h = readPgmToken(is, path);
  const int maxval = readPgmToken(is, path);
  if (img.w <= 0 || img.h <= 0) {
    throw ParseError("'" + path + "': non-positive dimensions");
  }
  if (maxval <= 0 || maxval > 255) {
    throw ParseError("'" + path + "': unsupported maxval " +
                     std::to_string(maxval) + " (expected <= 255)");
  }
  is.get();  // single whitespace byte before the raster
  std::vector<unsigned char> raw(static_cast<std::size_t>(img.w) *
                                 static_cast<std::size_t>(img.h));
  if (!is.read(reinterpret_cast<char*>(raw.data()),
               static_cast<std::streamsize>(raw.size()))) {
    throw ParseError("'" + path + "': truncated raster");
  }
  img.pix.resize(raw.size());
  for (std::size_t i = 0; i < raw.size(); ++i) {
    img.pix[i] = raw[i] / static_cast<double>(maxval);
  }
  return img;
}

struct PngCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};

Image readPng(const std::string& path) {
  std::unique_ptr<std::FILE, PngCloser> fp(std::fopen(path.c_str(), "rb"));
  if (!fp) throw IoError("cannot open '" + path + "'");

  png_structp png =
      png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw IoError("png reader allocation failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw IoError("png reader allocation failed");
  }
  std::vector<png_bytep> rowPtrs;
  std::vector<unsigned char> raster;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw ParseError("'" + path + "': not a valid PNG");
  }
  png_init_io(png, fp.get());
  png_read_info(png, info);

  // Normalize every layout to 8-bit RGB.
  png_set_expand(png);
  png_set_strip_16(png);
  png_set_strip_alpha(png);
  png_set_gray_to_rgb(png);
  png_read_update_info(png, info);

  const png_uint_32 w = png_get_image_width(png, info);
  const png_uint_32 h = png_get_image_height(png, info);
  const std::size_t rowBytes = png_get_rowbytes(png, info);
  raster.resize(rowBytes * h);
  rowPtrs.resize(h);
  for (png_uint_32 y = 0; y < h; ++y) rowPtrs[y] = raster.data() + y * rowBytes;
  png_read_image(png, rowPtrs.data());
  png_destroy_read_struct(&png, &info, nullptr);

  Image img;
  img.w = static_cast<int>(w);
  img.h = static_cast<int>(h);
  img.pix.resize(static_cast<std::size_t>(w) * h);
  for (png_uint_32 y = 0; y < h; ++y) {
    const unsigned char* row = raster.data() + y * rowBytes;
    for (png_uint_32 x = 0; x < w; ++x) {
      const double r = row[3 * x + 0], g = row[3 * x + 1], b = row[3 * x + 2];
      img.pix[y * w + x] = (0.299 * r + 0.587 * g + 0.114 * b) / 255.0;
    }
  }
  return img;
}

}  // namespace

Image readImage(const std::string& path) {
  std::ifstream probe(path, std::ios::binary);
  if (!probe) throw IoError("cannot open '" + path + "'");
  unsigned char sig[2] = {0, 0};
  probe.read(reinterpret_cast<char*>(sig), 2);
  probe.close();
  if (sig[0] == 'P' && sig[1] == '5') return readPgm(path);
  if (sig[0] == 0x89 && sig[1] == 'P') return readPng(path);
  throw ParseError("'" + path + "': unrecognized image format");
}

void writePgm(const std::string& path, const Image& img) {
  if (img.w <= 0 || img.h <= 0 ||
      img.pix.size() != static_cast<std::size_t>(img.w) * img.h) {
    throw DimensionError("image dimensions do not match its pixel count");
  }
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open '" + path + "' for writing");
  os << "P5\n" << img.w << " " << img.h << "\n255\n";
  for (double v : img.pix) {
    const double clamped = std::min(1.0, std::max(0.0, v));
    os.put(static_cast<char>(
        static_cast<unsigned char>(std::lround(clamped * 255.0))));
  }
  if (!os) throw IoError("write to '" + path + "' failed");
}

Tensor imageTensor(const Image& img) {
  if (img.w <= 0 || img.h <= 0 ||
      img.pix.size() != static_cast<std::size_t>(img.w) * img.h) {
    throw DimensionError("image dimensions do not match its pixel count");
  }
  return Tensor({img.h, img.w, 1}, img.pix);
}

}  // namespace hetddi
