#include "pnpt/archive.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace pnpt {

namespace {

constexpr char kMagic[8] = {'P', 'N', 'P', 'T', 'A', 'R', 'C', 'H'};

[[noreturn]] void corrupt(const std::string& path, const std::string& why) {
  throw std::runtime_error("corrupt archive " + path + ": " + why);
}

}  // namespace

void TensorArchive::add(const std::string& name, Tensor t) {
  if (has(name)) throw std::invalid_argument("archive: duplicate tensor name " + name);
  tensors_.emplace_back(name, std::move(t));
}

bool TensorArchive::has(const std::string& name) const {
  for (const auto& [n, t] : tensors_)
    if (n == name) return true;
  return false;
}

const Tensor& TensorArchive::get(const std::string& name) const {
  for (const auto& [n, t] : tensors_)
    if (n == name) return t;
  throw std::out_of_range("archive: no tensor named " + name);
}

void TensorArchive::save(const std::string& path) const {
  nlohmann::json header;
  header["format_version"] = kFormatVersion;
  header["meta"] = meta_;
  nlohmann::json list = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& [name, t] : tensors_) {
    const std::uint64_t nbytes = static_cast<std::uint64_t>(t.numel()) * sizeof(double);
    list.push_back({{"name", name}, {"dtype", "f64"}, {"shape", t.shape()}, {"offset", offset}, {"nbytes", nbytes}});
    offset += nbytes;
  }
  header["tensors"] = std::move(list);
  const std::string htext = header.dump();

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  out.write(kMagic, sizeof(kMagic));
  const std::uint64_t hlen = htext.size();
  out.write(reinterpret_cast<const char*>(&hlen), sizeof(hlen));
  out.write(htext.data(), static_cast<std::streamsize>(htext.size()));
  for (const auto& [name, t] : tensors_) {
    out.write(reinterpret_cast<const char*>(t.data()), static_cast<std::streamsize>(t.numel() * sizeof(double)));
  }
  if (!out) throw std::runtime_error("write failed: " + path);
}

TensorArchive TensorArchive::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open archive: " + path);

  char magic[8];
  if (!in.read(magic, sizeof(magic)) || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    corrupt(path, "bad magic");
  }
  std::uint64_t hlen = 0;
  if (!in.read(reinterpret_cast<char*>(&hlen), sizeof(hlen))) corrupt(path, "truncated header length");
  if (hlen == 0 || hlen > (1ull << 30)) corrupt(path, "implausible header length");
  std::string htext(hlen, '\0');
  if (!in.read(htext.data(), static_cast<std::streamsize>(hlen))) corrupt(path, "truncated header");

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(htext);
  } catch (const nlohmann::json::exception& e) {
    corrupt(path, std::string("header is not valid JSON: ") + e.what());
  }
  const int version = header.value("format_version", -1);
  if (version != kFormatVersion) {
    throw std::runtime_error("archive " + path + ": format_version " + std::to_string(version) + " unsupported (expected " +
                             std::to_string(kFormatVersion) + ")");
  }

  TensorArchive a;
  a.meta_ = header.value("meta", nlohmann::json::object());
  for (const auto& entry : header.at("tensors")) {
    const std::string name = entry.at("name").get<std::string>();
    const std::string dtype = entry.at("dtype").get<std::string>();
    if (dtype != "f64") corrupt(path, "unsupported dtype " + dtype + " for " + name);
    const std::vector<int> shape = entry.at("shape").get<std::vector<int>>();
    const std::uint64_t nbytes = entry.at("nbytes").get<std::uint64_t>();
    Tensor t(shape);
    if (static_cast<std::uint64_t>(t.numel()) * sizeof(double) != nbytes) corrupt(path, "shape/nbytes mismatch for " + name);
    if (!in.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(nbytes))) {
      corrupt(path, "truncated payload at tensor " + name);
    }
    a.tensors_.emplace_back(name, std::move(t));
  }
  return a;
}

}  // namespace pnpt
