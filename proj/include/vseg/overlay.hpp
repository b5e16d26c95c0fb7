#pragma once

// Slice PNG export. Needs libpng at link time.

#include <png.h>

#include <algorithm>
#include <array>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <vector>

#include "vseg/errors.hpp"
#include "vseg/volumes.hpp"

namespace vseg {

/// RGB pixels of one axial slice: the chosen modality in gray, labels
/// blended on top (edema green, core red, enhancing yellow).
struct SliceImage {
  std::size_t width = 0, height = 0;
  std::vector<std::uint8_t> rgb;
};

/// The axial slice holding the most tumor voxels, or the middle slice when
/// there is no tumor.
inline std::size_t busiest_slice(const LabelVolume& labels) {
  const Dims& d = labels.dims;
  std::size_t best = d.d / 2, best_count = 0;
  for (std::size_t z = 0; z < d.d; ++z) {
    std::size_t n = 0;
    for (std::size_t i = 0; i < d.h * d.w; ++i) n += labels.labels[z * d.h * d.w + i] != 0;
    if (n > best_count) {
      best = z;
      best_count = n;
    }
  }
  return best;
}

inline SliceImage render_overlay(const MultiModalVolume& image, const LabelVolume& labels, std::size_t z,
                                 std::size_t modality = 3) {
  const Dims& d = image.dims;
  if (!(labels.dims == d)) throw DimensionMismatch("overlay: image " + to_string(d) + " vs labels " + to_string(labels.dims));
  if (z >= d.d || modality >= kModalities) throw ShapeError("overlay: slice or modality out of range");
  const auto& m = image.data[modality];
  const std::size_t plane = d.h * d.w;
  float lo = m[z * plane], hi = lo;
  for (std::size_t i = 0; i < plane; ++i) {
    lo = std::min(lo, m[z * plane + i]);
    hi = std::max(hi, m[z * plane + i]);
  }
  const float span = hi > lo ? hi - lo : 1.0f;
  SliceImage out{d.w, d.h, std::vector<std::uint8_t>(plane * 3)};
  for (std::size_t i = 0; i < plane; ++i) {
    const double g = (m[z * plane + i] - lo) / span * 255.0;
    std::array<double, 3> px{g, g, g};
    std::array<double, 3> color{};
    bool tint = true;
    switch (labels.labels[z * plane + i]) {
      case 2: color = {0, 200, 0}; break;
      case 1: color = {220, 0, 0}; break;
      case 4: color = {255, 230, 0}; break;
      default: tint = false;
    }
    if (tint)
      for (int c = 0; c < 3; ++c) px[c] = 0.45 * px[c] + 0.55 * color[c];
    for (int c = 0; c < 3; ++c) out.rgb[i * 3 + c] = static_cast<std::uint8_t>(std::clamp(px[c], 0.0, 255.0) + 0.5);
  }
  return out;
}

inline void write_png(const SliceImage& img, const std::filesystem::path& path) {
  FILE* f = std::fopen(path.string().c_str(), "wb");
  if (!f) throw IoError("cannot write " + path.string());
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info || setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    std::fclose(f);
    throw IoError("libpng failed while writing " + path.string());
  }
  png_init_io(png, f);
  png_set_IHDR(png, info, static_cast<png_uint_32>(img.width), static_cast<png_uint_32>(img.height), 8, PNG_COLOR_TYPE_RGB,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (std::size_t y = 0; y < img.height; ++y)
    png_write_row(png, const_cast<png_bytep>(img.rgb.data() + y * img.width * 3));
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  std::fclose(f);
}

}  // namespace vseg
