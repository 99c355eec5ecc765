#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "zscl/numerics.hpp"

namespace zscl {

/// One task: labeled image features and the class-text features of its class set.
struct TaskData {
  std::string name;
  Mat train_images;
  std::vector<std::size_t> train_labels;
  Mat test_images;
  std::vector<std::size_t> test_labels;
  Mat class_texts;                  // m × D_txt, row c describes local class c
  std::size_t class_offset = 0;     // global id of local class 0 (class-incremental union)

  std::size_t num_classes() const noexcept { return class_texts.rows(); }
};

/// Unlabeled pools used only for distillation. Images and texts are unmatched.
struct ReferenceSet {
  Mat images;
  Mat texts;
  /// Unstructured text-space vectors (vocabulary-style random prompts).
  Mat random_texts;
};

}  // namespace zscl
