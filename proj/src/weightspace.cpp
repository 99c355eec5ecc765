#include "zscl/weightspace.hpp"

#include "zscl/error.hpp"

namespace zscl {

ParamVector wise_interpolate(const ParamVector& theta0, const ParamVector& theta1, double alpha) {
  theta0.require_same_layout(theta1, "wise_interpolate");
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw PreconditionError("wise_interpolate: alpha must be in [0, 1]");
  if (alpha == 0.0) return theta0;
  if (alpha == 1.0) return theta1;
  Vec out(theta0.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = (1.0 - alpha) * theta0.values()[i] + alpha * theta1.values()[i];
  }
  return ParamVector(theta0.layout(), std::move(out));
}

EnsembleState we_init(const ParamVector& theta0) { return EnsembleState{theta0, 0}; }

void we_update_in_place(EnsembleState& state, const ParamVector& theta) {
  state.average.require_same_layout(theta, "we_update");
  const double t = static_cast<double>(state.count + 1);
  // θ/(t+1) + avg·t/(t+1), written incrementally so identical samples are an exact fixed point.
  Vec& avg = state.average.values();
  for (std::size_t i = 0; i < avg.size(); ++i) avg[i] += (theta.values()[i] - avg[i]) / (t + 1.0);
  ++state.count;
}

EnsembleState we_update(const EnsembleState& state, const ParamVector& theta) {
  EnsembleState next = state;
  we_update_in_place(next, theta);
  return next;
}

bool we_should_sample(std::size_t iteration, std::size_t interval) {
  if (interval == 0) throw PreconditionError("we_should_sample: interval must be >= 1");
  if (iteration == 0) throw PreconditionError("we_should_sample: iterations are 1-based");
  return iteration % interval == 0;
}

}  // namespace zscl
