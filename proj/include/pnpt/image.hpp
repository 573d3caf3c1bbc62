#pragma once

#include <string>

#include "pnpt/tensor.hpp"

namespace pnpt {

/// Loads an image as RGB, shape 3 x H x W, values in [0, 1].
Tensor load_image_rgb(const std::string& path);

/// Loads a grayscale mask and binarizes at >127, shape H x W in {0, 1}.
Tensor load_mask(const std::string& path);

/// Writes a 3 x H x W tensor in [0,1] as an 8-bit RGB PNG.
void save_image_rgb8(const Tensor& img, const std::string& path);

/// Writes an H x W map as 8-bit grayscale, clamping values to [0, 1].
void save_image_gray8(const Tensor& map, const std::string& path);

/// Writes an H x W map as 16-bit grayscale via the affine rule
/// u16 = round(clamp((v - lo) / (hi - lo), 0, 1) * 65535).
void save_image_gray16(const Tensor& map, const std::string& path, double lo, double hi);

/// Bilinear resize of a 3 x H x W image to size x size.
Tensor resize_rgb(const Tensor& img, int size);

/// Bilinear resize of a 2-D map to out_h x out_w (the interpolation Phi).
Tensor resize_map_bilinear(const Tensor& map, int out_h, int out_w);

/// Nearest-neighbor resize of a 2-D map (for ground-truth masks).
Tensor resize_map_nearest(const Tensor& map, int out_h, int out_w);

/// Gaussian blur of a 2-D map with the given sigma (pixels).
Tensor gaussian_blur(const Tensor& map, double sigma);

}  // namespace pnpt
