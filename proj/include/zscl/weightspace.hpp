#pragma once

#include <cstddef>

#include "zscl/model.hpp"

namespace zscl {

/// Running mean of the pre-task weights and every sampled weight vector.
struct EnsembleState {
  ParamVector average;
  std::size_t count = 0;  // samples incorporated after the initial weights
};

/// (1-α)·θ0 + α·θ1, exact at both endpoints.
ParamVector wise_interpolate(const ParamVector& theta0, const ParamVector& theta1, double alpha);

EnsembleState we_init(const ParamVector& theta0);
/// Folds in sample t = count+1: avg ← θ_t/(t+1) + avg·t/(t+1).
EnsembleState we_update(const EnsembleState& state, const ParamVector& theta);
void we_update_in_place(EnsembleState& state, const ParamVector& theta);
/// True on every `interval`-th iteration (1-based).
bool we_should_sample(std::size_t iteration, std::size_t interval);

}  // namespace zscl
