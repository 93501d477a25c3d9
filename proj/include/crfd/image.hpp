#pragma once

#include <string>
#include <vector>

namespace crfd {

/// 8-bit RGB image, row-major, interleaved channels.
struct Image8 {
  int width = 0;
  int height = 0;
  std::vector<unsigned char> rgb;  // width*height*3

  bool operator==(const Image8&) const = default;
};

/// Planar float image, channel-major (used for alpha/depth side channels).
struct ImageF {
  int width = 0;
  int height = 0;
  int channels = 0;
  std::vector<float> data;  // channels*height*width
};

inline unsigned char quantize8(double v) {
  if (v <= 0.0) return 0;
  if (v >= 1.0) return 255;
  return static_cast<unsigned char>(v * 255.0 + 0.5);
}

// Binary PPM, P6 maxval 255, no comments; bit-exact round trips.
void write_ppm(const std::string& path, const Image8& img);
Image8 read_ppm(const std::string& path);

// Raw little-endian f32 planes behind a one-line "CRFDIMG <w> <h> <c>" header.
void write_float_channels(const std::string& path, const ImageF& img);
ImageF read_float_channels(const std::string& path);

// Channel-major double planes [3,H,W] scaled to [0,1].
std::vector<double> to_chw(const Image8& img);

// Bilinear resize of channel-major planes.
std::vector<double> resize_bilinear_chw(const std::vector<double>& src, int channels, int h, int w,
                                        int oh, int ow);

}  // namespace crfd
