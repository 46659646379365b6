// Copyright 2026 The Graphcap Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Grayscale rendering of matrices: min-max normalization, align-corners
// bilinear upscaling, and binary (P5) PGM output.

#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "graphcap/array.hpp"

namespace graphcap {

// Affine rescale of all entries to [0, 1]; a constant matrix maps to zeros.
template <typename S>
Array<S> min_max_normalize(const Array<S>& m) {
  if (m.numel() == 0)
    throw std::invalid_argument("min_max_normalize: empty input");
  m.require_finite("min_max_normalize input");
  S lo = m[0], hi = m[0];
  for (std::size_t i = 0; i < m.numel(); ++i) {
    lo = std::min(lo, m[i]);
    hi = std::max(hi, m[i]);
  }
  Array<S> out(m.shape());
  if (hi > lo)
    for (std::size_t i = 0; i < m.numel(); ++i)
      out[i] = (m[i] - lo) / (hi - lo);
  return out;
}

// Align-corners bilinear upscaling by an integer factor: output corners land
// exactly on input corners, and every output sample is a convex combination
// of its four neighbors.
template <typename S>
Array<S> bilinear_upscale(const Array<S>& src, std::size_t factor) {
  if (src.rank() != 2)
    throw std::invalid_argument("bilinear_upscale: expected 2-D array, got " +
                                shape_str(src.shape()));
  if (factor < 1)
    throw std::invalid_argument("bilinear_upscale: factor must be >= 1");
  const std::size_t h = src.rows(), w = src.cols();
  if (factor == 1) return src;
  const std::size_t oh = h * factor, ow = w * factor;
  Array<S> out(oh, ow);
  const auto source_pos = [](std::size_t i, std::size_t n_out,
                             std::size_t n_in) {
    if (n_out <= 1 || n_in <= 1) return 0.0;
    return double(i) * double(n_in - 1) / double(n_out - 1);
  };
  for (std::size_t y = 0; y < oh; ++y) {
    const double sy = source_pos(y, oh, h);
    const std::size_t y0 = std::size_t(sy);
    const std::size_t y1 = std::min(y0 + 1, h - 1);
    const double fy = sy - double(y0);
    for (std::size_t x = 0; x < ow; ++x) {
      const double sx = source_pos(x, ow, w);
      const std::size_t x0 = std::size_t(sx);
      const std::size_t x1 = std::min(x0 + 1, w - 1);
      const double fx = sx - double(x0);
      const double v =
          (1.0 - fy) * ((1.0 - fx) * double(src.at2(y0, x0)) +
                        fx * double(src.at2(y0, x1))) +
          fy * ((1.0 - fx) * double(src.at2(y1, x0)) +
                fx * double(src.at2(y1, x1)));
      out.at2(y, x) = static_cast<S>(v);
    }
  }
  return out;
}

struct PgmImage {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> pixels;  // row-major
};

// Quantizes values (expected in [0, 1]) to 8-bit and writes binary PGM.
template <typename S>
void write_pgm(const std::string& path, const Array<S>& img) {
  if (img.rank() != 2)
    throw std::invalid_argument("write_pgm: expected 2-D array, got " +
                                shape_str(img.shape()));
  img.require_finite("write_pgm input");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("write_pgm: cannot open " + path);
  out << "P5\n" << img.cols() << " " << img.rows() << "\n255\n";
  for (std::size_t i = 0; i < img.numel(); ++i) {
    const double v = std::clamp(double(img[i]), 0.0, 1.0);
    out.put(char(std::uint8_t(std::lround(v * 255.0))));
  }
  if (!out) throw std::runtime_error("write_pgm: write failed for " + path);
}

inline PgmImage read_pgm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("read_pgm: cannot open " + path);
  std::string magic;
  std::size_t width = 0, height = 0, maxval = 0;
  in >> magic >> width >> height >> maxval;
  if (magic != "P5" || maxval != 255)
    throw std::runtime_error("read_pgm: unsupported format in " + path);
  in.get();  // single whitespace after the header
  PgmImage img;
  img.width = width;
  img.height = height;
  img.pixels.resize(width * height);
  in.read(reinterpret_cast<char*>(img.pixels.data()),
          std::streamsize(img.pixels.size()));
  if (std::size_t(in.gcount()) != img.pixels.size())
    throw std::runtime_error("read_pgm: truncated payload in " + path);
  return img;
}

}  // namespace graphcap
