#include "caer/image.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

namespace caer {

Rect Rect::clamped(std::int64_t img_h, std::int64_t img_w) const {
  const std::int64_t x0 = std::clamp<std::int64_t>(x, 0, img_w);
  const std::int64_t y0 = std::clamp<std::int64_t>(y, 0, img_h);
  const std::int64_t x1 = std::clamp<std::int64_t>(x + w, x0, img_w);
  const std::int64_t y1 = std::clamp<std::int64_t>(y + h, y0, img_h);
  return Rect{x0, y0, x1 - x0, y1 - y0};
}

Image Image::filled(std::int64_t h, std::int64_t w, std::uint8_t r, std::uint8_t g,
                    std::uint8_t b) {
  Image img;
  img.h = h;
  img.w = w;
  img.rgb.resize(static_cast<std::size_t>(h * w * 3));
  for (std::int64_t i = 0; i < h * w; ++i) {
    img.rgb[static_cast<std::size_t>(i * 3)] = r;
    img.rgb[static_cast<std::size_t>(i * 3 + 1)] = g;
    img.rgb[static_cast<std::size_t>(i * 3 + 2)] = b;
  }
  return img;
}

namespace {

int next_ppm_token(std::istream& is, std::string& tok) {
  tok.clear();
  int c = is.get();
  while (c != EOF) {
    if (c == '#') {  // comment to end of line
      while (c != EOF && c != '\n') c = is.get();
      c = is.get();
      continue;
    }
    if (!std::isspace(c)) break;
    c = is.get();
  }
  while (c != EOF && !std::isspace(c)) {
    tok.push_back(static_cast<char>(c));
    c = is.get();
  }
  return tok.empty() ? EOF : 0;
}

}  // namespace

Image read_ppm(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("ppm: cannot open " + path.string());
  std::string tok;
  if (next_ppm_token(is, tok) == EOF || tok != "P6")
    throw DataError("ppm: " + path.string() + " is not a binary P6 file");
  std::int64_t dims[3];
  for (auto& d : dims) {
    if (next_ppm_token(is, tok) == EOF) throw DataError("ppm: truncated header in " + path.string());
    try {
      d = std::stoll(tok);
    } catch (const std::exception&) {
      throw DataError("ppm: malformed header in " + path.string());
    }
  }
  if (dims[0] < 1 || dims[1] < 1 || dims[2] != 255)
    throw DataError("ppm: unsupported geometry or max value in " + path.string());
  Image img;
  img.w = dims[0];
  img.h = dims[1];
  img.rgb.resize(static_cast<std::size_t>(img.h * img.w * 3));
  is.read(reinterpret_cast<char*>(img.rgb.data()), static_cast<std::streamsize>(img.rgb.size()));
  if (!is) throw DataError("ppm: truncated pixel data in " + path.string());
  return img;
}

void write_ppm(const Image& img, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("ppm: cannot open " + path.string() + " for writing");
  os << "P6\n" << img.w << ' ' << img.h << "\n255\n";
  os.write(reinterpret_cast<const char*>(img.rgb.data()),
           static_cast<std::streamsize>(img.rgb.size()));
  if (!os) throw DataError("ppm: write to " + path.string() + " failed");
}

FloatImage to_float(const Image& img) {
  FloatImage out;
  out.h = img.h;
  out.w = img.w;
  out.data.resize(static_cast<std::size_t>(3 * img.h * img.w));
  for (int ch = 0; ch < 3; ++ch)
    for (std::int64_t i = 0; i < img.h * img.w; ++i)
      out.data[static_cast<std::size_t>(ch * img.h * img.w + i)] =
          static_cast<float>(img.rgb[static_cast<std::size_t>(i * 3 + ch)]) / 255.0f;
  return out;
}

Image to_u8(const FloatImage& img) {
  Image out;
  out.h = img.h;
  out.w = img.w;
  out.rgb.resize(static_cast<std::size_t>(3 * img.h * img.w));
  for (int ch = 0; ch < 3; ++ch)
    for (std::int64_t i = 0; i < img.h * img.w; ++i) {
      const float v = std::clamp(img.data[static_cast<std::size_t>(ch * img.h * img.w + i)], 0.0f,
                                 1.0f);
      out.rgb[static_cast<std::size_t>(i * 3 + ch)] =
          static_cast<std::uint8_t>(std::lround(v * 255.0f));
    }
  return out;
}

FloatImage resize_bilinear(const FloatImage& src, std::int64_t out_h, std::int64_t out_w) {
  FloatImage out;
  out.h = out_h;
  out.w = out_w;
  out.data.resize(static_cast<std::size_t>(3 * out_h * out_w));
  const double sy = static_cast<double>(src.h) / static_cast<double>(out_h);
  const double sx = static_cast<double>(src.w) / static_cast<double>(out_w);
  for (std::int64_t y = 0; y < out_h; ++y) {
    const double fy = (static_cast<double>(y) + 0.5) * sy - 0.5;
    const std::int64_t y0 = std::clamp<std::int64_t>(static_cast<std::int64_t>(std::floor(fy)), 0,
                                                     src.h - 1);
    const std::int64_t y1 = std::min<std::int64_t>(y0 + 1, src.h - 1);
    const float wy = static_cast<float>(std::clamp(fy - static_cast<double>(y0), 0.0, 1.0));
    for (std::int64_t x = 0; x < out_w; ++x) {
      const double fx = (static_cast<double>(x) + 0.5) * sx - 0.5;
      const std::int64_t x0 = std::clamp<std::int64_t>(static_cast<std::int64_t>(std::floor(fx)),
                                                       0, src.w - 1);
      const std::int64_t x1 = std::min<std::int64_t>(x0 + 1, src.w - 1);
      const float wx = static_cast<float>(std::clamp(fx - static_cast<double>(x0), 0.0, 1.0));
      for (int ch = 0; ch < 3; ++ch) {
        const float a = src.at(ch, y0, x0), b = src.at(ch, y0, x1);
        const float c = src.at(ch, y1, x0), d = src.at(ch, y1, x1);
        const float top = a + (b - a) * wx;
        const float bot = c + (d - c) * wx;
        out.at(ch, y, x) = top + (bot - top) * wy;
      }
    }
  }
  return out;
}

FloatImage crop(const FloatImage& src, std::int64_t y0, std::int64_t x0, std::int64_t out_h,
                std::int64_t out_w) {
  if (y0 < 0 || x0 < 0 || y0 + out_h > src.h || x0 + out_w > src.w)
    throw DataError("crop: window outside image bounds");
  FloatImage out;
  out.h = out_h;
  out.w = out_w;
  out.data.resize(static_cast<std::size_t>(3 * out_h * out_w));
  for (int ch = 0; ch < 3; ++ch)
    for (std::int64_t y = 0; y < out_h; ++y)
      for (std::int64_t x = 0; x < out_w; ++x) out.at(ch, y, x) = src.at(ch, y0 + y, x0 + x);
  return out;
}

void zero_rect(Image& img, const Rect& r) {
  const Rect c = r.clamped(img.h, img.w);
  for (std::int64_t y = c.y; y < c.y + c.h; ++y)
    for (std::int64_t x = c.x; x < c.x + c.w; ++x) {
      std::uint8_t* p = img.px(y, x);
      p[0] = p[1] = p[2] = 0;
    }
}

void zero_rect(FloatImage& img, const Rect& r) {
  const Rect c = r.clamped(img.h, img.w);
  for (int ch = 0; ch < 3; ++ch)
    for (std::int64_t y = c.y; y < c.y + c.h; ++y)
      for (std::int64_t x = c.x; x < c.x + c.w; ++x) img.at(ch, y, x) = 0.0f;
}

Rect map_rect(const Rect& r, std::int64_t src_h, std::int64_t src_w, std::int64_t dst_h,
              std::int64_t dst_w) {
  if (r.empty()) return Rect{};
  const double sy = static_cast<double>(dst_h) / static_cast<double>(src_h);
  const double sx = static_cast<double>(dst_w) / static_cast<double>(src_w);
  const std::int64_t x0 = static_cast<std::int64_t>(std::floor(static_cast<double>(r.x) * sx));
  const std::int64_t y0 = static_cast<std::int64_t>(std::floor(static_cast<double>(r.y) * sy));
  const std::int64_t x1 =
      static_cast<std::int64_t>(std::ceil(static_cast<double>(r.x + r.w) * sx));
  const std::int64_t y1 =
      static_cast<std::int64_t>(std::ceil(static_cast<double>(r.y + r.h) * sy));
  return Rect{x0, y0, x1 - x0, y1 - y0}.clamped(dst_h, dst_w);
}

}  // namespace caer
