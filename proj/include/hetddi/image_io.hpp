#pragma once

#include <string>
#include <vector>

#include "hetddi/tensor.hpp"

namespace hetddi {

/// Grayscale image with intensities normalized to [0, 1] (pixel / maxval).
struct Image {
  int h = 0;
  int w = 0;
  std::vector<double> pix;  // row-major, h*w values
};

/// Reads a PNG or a binary PGM (P5), dispatching on the file signature.
/// Color PNGs are converted to grayscale as 0.299 R + 0.587 G + 0.114 B.
Image readImage(const std::string& path);

/// 8-bit binary PGM. Values are clamped to [0,1] and quantized to 0..255.
void writePgm(const std::string& path, const Image& img);

/// [H,W,1] tensor view of an image.
Tensor imageTensor(const Image& img);

}  // namespace hetddi
