#pragma once

#include <string>
#include <vector>

namespace pnpt {

/// Dataset layout contract (MVTec-style):
///   root/<class>/train/good/*.png
///   root/<class>/test/good/*.png                      (normal test images)
///   root/<class>/test/<defect>/*.png                  (anomalous)
///   root/<class>/ground_truth/<defect>/<stem>_mask.png
struct TrainItem {
  std::string path;
  std::string class_id;
};

struct TestItem {
  std::string path;
  std::string rel_path;  // relative to the dataset root
  std::string class_id;
  std::string defect;     // "good" for normals
  std::string mask_path;  // empty for normals
  bool anomalous = false;
};

/// Class directories under root, sorted lexicographically.
std::vector<std::string> list_classes(const std::string& root);

/// All train/good images, sorted by class then filename. Errors if a class
/// has no training images.
std::vector<TrainItem> list_train_images(const std::string& root);

/// All test images with labels and mask paths, sorted by class, defect,
/// filename. Errors on an empty test split or a missing mask.
std::vector<TestItem> list_test_images(const std::string& root);

}  // namespace pnpt
