#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "zscl/losses.hpp"
#include "zscl/model.hpp"

namespace zscl {

struct CheckResult {
  std::string name;
  bool passed = false;
  std::string detail;
};

/// Small random student/teacher pair with CE and reference batches, for gradient checks.
struct GradFixture {
  TwoTowerModel student;
  TwoTowerModel teacher;
  ParamVector anchor;
  Batch batch;
  RefBatch ref;
};

GradFixture make_grad_fixture(std::uint64_t seed);

/// Loss names accepted by `loss_by_name`: ce, dist_img, dist_txt, feat_dist, wc, total.
std::vector<std::string> loss_names();
GradResult loss_by_name(const std::string& name, const GradFixture& fx, const TwoTowerModel& student);

/// Worst relative error between analytic and central-difference gradients of
/// `loss` at the fixture's student parameters.
double gradient_error(const std::string& loss, const GradFixture& fx, double h = 1e-5);

/// Fast property suite behind `zscl check`.
std::vector<CheckResult> run_property_checks(std::size_t grad_configs = 20);

}  // namespace zscl
