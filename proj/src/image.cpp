#include "crfd/image.hpp"

#include <algorithm>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace crfd {

void write_ppm(const std::string& path, const Image8& img) {
  if (img.rgb.size() != static_cast<size_t>(img.width) * img.height * 3)
    throw std::invalid_argument("write_ppm: pixel buffer does not match dimensions");
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open '" + path + "' for writing");
  f << "P6\n" << img.width << " " << img.height << "\n255\n";
  f.write(reinterpret_cast<const char*>(img.rgb.data()), static_cast<std::streamsize>(img.rgb.size()));
  if (!f) throw std::runtime_error("write failed for '" + path + "'");
}

Image8 read_ppm(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open '" + path + "'");
  std::string magic;
  f >> magic;
  if (magic != "P6") throw std::runtime_error("'" + path + "': not a P6 PPM (magic '" + magic + "')");
  int w = 0, h = 0, maxval = 0;
  f >> w >> h >> maxval;
  if (!f || w <= 0 || h <= 0) throw std::runtime_error("'" + path + "': malformed PPM header dimensions");
  if (maxval != 255) throw std::runtime_error("'" + path + "': PPM maxval must be 255, got " + std::to_string(maxval));
  f.get();  // single whitespace after maxval
  Image8 img;
  img.width = w;
  img.height = h;
  img.rgb.resize(static_cast<size_t>(w) * h * 3);
  f.read(reinterpret_cast<char*>(img.rgb.data()), static_cast<std::streamsize>(img.rgb.size()));
  if (f.gcount() != static_cast<std::streamsize>(img.rgb.size()))
    throw std::runtime_error("'" + path + "': truncated pixel data (" + std::to_string(f.gcount()) +
                             " of " + std::to_string(img.rgb.size()) + " bytes)");
  return img;
}

void write_float_channels(const std::string& path, const ImageF& img) {
  if (img.data.size() != static_cast<size_t>(img.channels) * img.height * img.width)
    throw std::invalid_argument("write_float_channels: buffer does not match dimensions");
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open '" + path + "' for writing");
  f << "CRFDIMG " << img.width << " " << img.height << " " << img.channels << "\n";
  f.write(reinterpret_cast<const char*>(img.data.data()),
          static_cast<std::streamsize>(img.data.size() * sizeof(float)));
  if (!f) throw std::runtime_error("write failed for '" + path + "'");
}

ImageF read_float_channels(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open '" + path + "'");
  std::string magic;
  f >> magic;
  if (magic != "CRFDIMG") throw std::runtime_error("'" + path + "': bad float-image magic");
  ImageF img;
  f >> img.width >> img.height >> img.channels;
  if (!f || img.width <= 0 || img.height <= 0 || img.channels <= 0)
    throw std::runtime_error("'" + path + "': malformed float-image header");
  f.get();
  img.data.resize(static_cast<size_t>(img.channels) * img.height * img.width);
  f.read(reinterpret_cast<char*>(img.data.data()),
         static_cast<std::streamsize>(img.data.size() * sizeof(float)));
  if (f.gcount() != static_cast<std::streamsize>(img.data.size() * sizeof(float)))
    throw std::runtime_error("'" + path + "': truncated float data");
  return img;
}

std::vector<double> to_chw(const Image8& img) {
  std::vector<double> out(static_cast<size_t>(3) * img.height * img.width);
  size_t plane = static_cast<size_t>(img.height) * img.width;
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) {
      size_t p = static_cast<size_t>(y) * img.width + x;
      for (int c = 0; c < 3; ++c) out[c * plane + p] = img.rgb[p * 3 + c] / 255.0;
    }
  return out;
}

std::vector<double> resize_bilinear_chw(const std::vector<double>& src, int channels, int h, int w,
                                        int oh, int ow) {
  if (src.size() != static_cast<size_t>(channels) * h * w)
    throw std::invalid_argument("resize_bilinear_chw: buffer does not match dimensions");
  std::vector<double> out(static_cast<size_t>(channels) * oh * ow);
  for (int c = 0; c < channels; ++c) {
    const double* sp = src.data() + static_cast<size_t>(c) * h * w;
    double* op = out.data() + static_cast<size_t>(c) * oh * ow;
    for (int y = 0; y < oh; ++y) {
      double fy = (oh == 1) ? 0.0 : static_cast<double>(y) * (h - 1) / (oh - 1);
      int y0 = static_cast<int>(fy);
      int y1 = std::min(y0 + 1, h - 1);
      double ty = fy - y0;
      for (int x = 0; x < ow; ++x) {
        double fx = (ow == 1) ? 0.0 : static_cast<double>(x) * (w - 1) / (ow - 1);
        int x0 = static_cast<int>(fx);
        int x1 = std::min(x0 + 1, w - 1);
        double tx = fx - x0;
        double v00 = sp[y0 * w + x0], v01 = sp[y0 * w + x1];
        double v10 = sp[y1 * w + x0], v11 = sp[y1 * w + x1];
        op[y * ow + x] = (1 - ty) * ((1 - tx) * v00 + tx * v01) + ty * ((1 - tx) * v10 + tx * v11);
      }
    }
  }
  return out;
}

}  // namespace crfd
