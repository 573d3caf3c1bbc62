#include "pnpt/dataset.hpp"

#include <algorithm>
#include <filesystem>
#include <stdexcept>

namespace fs = std::filesystem;

namespace pnpt {

namespace {

bool is_png(const fs::path& p) { return p.extension() == ".png"; }

std::vector<std::string> sorted_pngs(const fs::path& dir) {
  std::vector<std::string> out;
  if (!fs::is_directory(dir)) return out;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_regular_file() && is_png(e.path())) out.push_back(e.path().string());
  }
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace

std::vector<std::string> list_classes(const std::string& root) {
  if (!fs::is_directory(root)) throw std::runtime_error("dataset root not found: " + root);
  std::vector<std::string> classes;
  for (const auto& e : fs::directory_iterator(root)) {
    if (e.is_directory()) classes.push_back(e.path().filename().string());
  }
  std::sort(classes.begin(), classes.end());
  if (classes.empty()) throw std::runtime_error("dataset root has no class directories: " + root);
  return classes;
}

std::vector<TrainItem> list_train_images(const std::string& root) {
  std::vector<TrainItem> items;
  for (const std::string& cls : list_classes(root)) {
    const auto files = sorted_pngs(fs::path(root) / cls / "train" / "good");
    if (files.empty()) throw std::runtime_error("class " + cls + " has no training images under " + root + "/" + cls + "/train/good");
    for (const auto& f : files) items.push_back(TrainItem{f, cls});
  }
  return items;
}

std::vector<TestItem> list_test_images(const std::string& root) {
  std::vector<TestItem> items;
  for (const std::string& cls : list_classes(root)) {
    const fs::path test_dir = fs::path(root) / cls / "test";
    if (!fs::is_directory(test_dir)) continue;
    std::vector<std::string> defects;
    for (const auto& e : fs::directory_iterator(test_dir)) {
      if (e.is_directory()) defects.push_back(e.path().filename().string());
    }
    std::sort(defects.begin(), defects.end());
    for (const std::string& defect : defects) {
      for (const std::string& f : sorted_pngs(test_dir / defect)) {
        TestItem item;
        item.path = f;
        item.rel_path = fs::relative(f, root).string();
        item.class_id = cls;
        item.defect = defect;
        item.anomalous = defect != "good";
        if (item.anomalous) {
          const std::string stem = fs::path(f).stem().string();
          const fs::path mask = fs::path(root) / cls / "ground_truth" / defect / (stem + "_mask.png");
          if (!fs::is_regular_file(mask)) throw std::runtime_error("missing ground-truth mask for " + item.rel_path + " (expected " + mask.string() + ")");
          item.mask_path = mask.string();
        }
        items.push_back(std::move(item));
      }
    }
  }
  if (items.empty()) throw std::runtime_error("no test images found under " + root);
  return items;
}

}  // namespace pnpt
