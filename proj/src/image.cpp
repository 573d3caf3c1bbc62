#include "pnpt/image.hpp"

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace pnpt {

namespace {

cv::Mat tensor_to_mat2d(const Tensor& map) {
  if (map.ndim() != 2) throw std::invalid_argument("expected 2-D map, got shape " + shape_str(map.shape()));
  cv::Mat m(map.dim(0), map.dim(1), CV_64F);
  std::copy(map.data(), map.data() + map.numel(), m.ptr<double>());
  return m;
}

Tensor mat2d_to_tensor(const cv::Mat& m) {
  cv::Mat d;
  m.convertTo(d, CV_64F);
  Tensor t({d.rows, d.cols});
  if (d.isContinuous()) {
    std::copy(d.ptr<double>(), d.ptr<double>() + d.total(), t.data());
  } else {
    for (int r = 0; r < d.rows; ++r) std::copy(d.ptr<double>(r), d.ptr<double>(r) + d.cols, t.data() + static_cast<std::int64_t>(r) * d.cols);
  }
  return t;
}

}  // namespace

Tensor load_image_rgb(const std::string& path) {
  cv::Mat bgr = cv::imread(path, cv::IMREAD_COLOR);
  if (bgr.empty()) throw std::runtime_error("cannot read image: " + path);
  cv::Mat rgb;
  cv::cvtColor(bgr, rgb, cv::COLOR_BGR2RGB);
  Tensor out({3, rgb.rows, rgb.cols});
  const std::int64_t plane = static_cast<std::int64_t>(rgb.rows) * rgb.cols;
  for (int y = 0; y < rgb.rows; ++y) {
    const cv::Vec3b* row = rgb.ptr<cv::Vec3b>(y);
    for (int x = 0; x < rgb.cols; ++x) {
      const std::int64_t p = static_cast<std::int64_t>(y) * rgb.cols + x;
      out[0 * plane + p] = row[x][0] / 255.0;
      out[1 * plane + p] = row[x][1] / 255.0;
      out[2 * plane + p] = row[x][2] / 255.0;
    }
  }
  return out;
}

Tensor load_mask(const std::string& path) {
  cv::Mat g = cv::imread(path, cv::IMREAD_GRAYSCALE);
  if (g.empty()) throw std::runtime_error("cannot read mask: " + path);
  Tensor out({g.rows, g.cols});
  for (int y = 0; y < g.rows; ++y) {
    const std::uint8_t* row = g.ptr<std::uint8_t>(y);
    for (int x = 0; x < g.cols; ++x) out[static_cast<std::int64_t>(y) * g.cols + x] = row[x] > 127 ? 1.0 : 0.0;
  }
  return out;
}

void save_image_rgb8(const Tensor& img, const std::string& path) {
  if (img.ndim() != 3 || img.dim(0) != 3) throw std::invalid_argument("expected 3 x H x W image, got " + shape_str(img.shape()));
  const int h = img.dim(1), w = img.dim(2);
  const std::int64_t plane = static_cast<std::int64_t>(h) * w;
  cv::Mat bgr(h, w, CV_8UC3);
  for (int y = 0; y < h; ++y) {
    cv::Vec3b* row = bgr.ptr<cv::Vec3b>(y);
    for (int x = 0; x < w; ++x) {
      const std::int64_t p = static_cast<std::int64_t>(y) * w + x;
      for (int c = 0; c < 3; ++c) {
        const double v = std::clamp(img[c * plane + p], 0.0, 1.0);
        row[x][2 - c] = static_cast<std::uint8_t>(std::lround(v * 255.0));
      }
    }
  }
  if (!cv::imwrite(path, bgr)) throw std::runtime_error("cannot write image: " + path);
}

void save_image_gray8(const Tensor& map, const std::string& path) {
  if (map.ndim() != 2) throw std::invalid_argument("expected 2-D map, got " + shape_str(map.shape()));
  cv::Mat g(map.dim(0), map.dim(1), CV_8U);
  for (int y = 0; y < g.rows; ++y) {
    std::uint8_t* row = g.ptr<std::uint8_t>(y);
    for (int x = 0; x < g.cols; ++x) {
      row[x] = static_cast<std::uint8_t>(std::lround(std::clamp(map[static_cast<std::int64_t>(y) * g.cols + x], 0.0, 1.0) * 255.0));
    }
  }
  if (!cv::imwrite(path, g)) throw std::runtime_error("cannot write image: " + path);
}

void save_image_gray16(const Tensor& map, const std::string& path, double lo, double hi) {
  if (map.ndim() != 2) throw std::invalid_argument("expected 2-D map, got " + shape_str(map.shape()));
  if (!(hi > lo)) throw std::invalid_argument("gray16 range requires hi > lo");
  cv::Mat g(map.dim(0), map.dim(1), CV_16U);
  const double scale = 65535.0 / (hi - lo);
  for (int y = 0; y < g.rows; ++y) {
    std::uint16_t* row = g.ptr<std::uint16_t>(y);
    for (int x = 0; x < g.cols; ++x) {
      const double v = std::clamp((map[static_cast<std::int64_t>(y) * g.cols + x] - lo) * scale, 0.0, 65535.0);
      row[x] = static_cast<std::uint16_t>(std::lround(v));
    }
  }
  if (!cv::imwrite(path, g)) throw std::runtime_error("cannot write image: " + path);
}

Tensor resize_rgb(const Tensor& img, int size) {
  if (img.ndim() != 3 || img.dim(0) != 3) throw std::invalid_argument("expected 3 x H x W image, got " + shape_str(img.shape()));
  if (img.dim(1) == size && img.dim(2) == size) return img;
  const std::int64_t plane = static_cast<std::int64_t>(img.dim(1)) * img.dim(2);
  Tensor out({3, size, size});
  const std::int64_t out_plane = static_cast<std::int64_t>(size) * size;
  for (int c = 0; c < 3; ++c) {
    cv::Mat src(img.dim(1), img.dim(2), CV_64F);
    std::copy(img.data() + c * plane, img.data() + (c + 1) * plane, src.ptr<double>());
    cv::Mat dst;
    cv::resize(src, dst, cv::Size(size, size), 0, 0, cv::INTER_LINEAR);
    std::copy(dst.ptr<double>(), dst.ptr<double>() + out_plane, out.data() + c * out_plane);
  }
  return out;
}

Tensor resize_map_bilinear(const Tensor& map, int out_h, int out_w) {
  if (map.dim(0) == out_h && map.dim(1) == out_w) return map;
  cv::Mat src = tensor_to_mat2d(map), dst;
  cv::resize(src, dst, cv::Size(out_w, out_h), 0, 0, cv::INTER_LINEAR);
  return mat2d_to_tensor(dst);
}

Tensor resize_map_nearest(const Tensor& map, int out_h, int out_w) {
  if (map.dim(0) == out_h && map.dim(1) == out_w) return map;
  cv::Mat src = tensor_to_mat2d(map), dst;
  cv::resize(src, dst, cv::Size(out_w, out_h), 0, 0, cv::INTER_NEAREST);
  return mat2d_to_tensor(dst);
}

Tensor gaussian_blur(const Tensor& map, double sigma) {
  if (sigma <= 0.0) return map;
  cv::Mat src = tensor_to_mat2d(map), dst;
  int k = static_cast<int>(std::ceil(sigma * 4.0)) * 2 + 1;
  cv::GaussianBlur(src, dst, cv::Size(k, k), sigma, sigma, cv::BORDER_REFLECT_101);
  return mat2d_to_tensor(dst);
}

}  // namespace pnpt
