#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "zscl/model.hpp"
#include "zscl/numerics.hpp"

namespace zscl {

/// Named loss components plus the weight each contributes to `total`.
struct LossValue {
  double total = 0.0;
  std::map<std::string, double> components;
  std::map<std::string, double> weights;

  double component(const std::string& name) const;
};

/// Loss value and its gradient with respect to the full parameter vector
/// (including log_temperature; freezing is the trainer's business).
struct GradResult {
  LossValue value;
  Vec grad;
};

/// Labeled images of one task and that task's class-text features.
struct Batch {
  Mat images;
  std::vector<std::size_t> labels;
  Mat class_texts;
};

/// Unlabeled, unmatched image and text features used only for distillation.
struct RefBatch {
  Mat images;
  Mat texts;
};

enum class DistillSides { kNone, kImage, kText, kBoth, kFeatureDistance };

/// Term selection and weights for `total_loss`.
struct Objective {
  double label_smoothing = 0.2;
  DistillSides distill = DistillSides::kNone;
  double lambda = 1.0;
  bool weight_consolidation = false;
  double mu = 0.1;
  /// Use -Σ p_student·log p_teacher instead of the teacher-target form.
  bool literal_eq3 = false;
  /// Fixed temperature for both distributions; unset means each model's own τ.
  std::optional<double> distill_temperature;
};

Distribution smooth_targets(std::size_t label, std::size_t m, double eps);

/// Mean cross-entropy of smoothed targets against softmax(τ·s) over the batch.
GradResult ce_loss(const TwoTowerModel& model, const Batch& batch, double eps);
/// Same objective averaged over every sample of several batches, each with its own class set.
GradResult ce_loss(const TwoTowerModel& model, std::span<const Batch> batches, double eps);

Distribution similarity_distribution(std::span<const double> sim_row, double tau);

/// Per reference image, teacher vs student distribution over reference texts.
GradResult distill_image_loss(const TwoTowerModel& student, const TwoTowerModel& teacher, const RefBatch& ref,
                              const Objective& opts = {});
/// Per reference text, teacher vs student distribution over reference images.
GradResult distill_text_loss(const TwoTowerModel& student, const TwoTowerModel& teacher, const RefBatch& ref,
                             const Objective& opts = {});
/// Mean squared embedding distance over reference images and texts.
GradResult feature_distance_loss(const TwoTowerModel& student, const TwoTowerModel& teacher, const RefBatch& ref);
/// Σ (θ - θ̄)².
GradResult wc_loss(const ParamVector& theta, const ParamVector& anchor);

/// ce + λ·(selected distillation terms) + μ·wc, with every component reported.
/// `ref` may be null only when no distillation is selected.
GradResult total_loss(const Objective& objective, const TwoTowerModel& student, const TwoTowerModel& teacher,
                      const ParamVector& wc_anchor, std::span<const Batch> ce_batches, const RefBatch* ref);

}  // namespace zscl
