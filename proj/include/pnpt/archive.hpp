#pragma once

#include <nlohmann/json.hpp>

#include <string>
#include <utility>
#include <vector>

#include "pnpt/tensor.hpp"

namespace pnpt {

/// Flat tensor archive: 8-byte magic, u64 little-endian header length, a JSON
/// header listing tensor names/dtypes/shapes/offsets plus a free-form "meta"
/// object, then the raw little-endian f64 payload. See docs/formats.md.
class TensorArchive {
 public:
  static constexpr int kFormatVersion = 1;

  void add(const std::string& name, Tensor t);
  bool has(const std::string& name) const;
  const Tensor& get(const std::string& name) const;
  const std::vector<std::pair<std::string, Tensor>>& tensors() const { return tensors_; }

  nlohmann::json& meta() { return meta_; }
  const nlohmann::json& meta() const { return meta_; }

  void save(const std::string& path) const;
  static TensorArchive load(const std::string& path);

 private:
  std::vector<std::pair<std::string, Tensor>> tensors_;
  nlohmann::json meta_ = nlohmann::json::object();
};

}  // namespace pnpt
