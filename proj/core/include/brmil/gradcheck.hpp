#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "brmil/tensor.hpp"

namespace brmil {

struct GradCheckOptions {
  double step = 1e-5;
  double tol = 1e-4;
  /// When > 0, check at most this many coordinates per tensor (deterministic
  /// subsample); 0 checks every coordinate.
  int max_coords_per_tensor = 0;
  std::uint64_t sample_seed = 17;
};

struct GradCheckReport {
  int checked = 0;
  int failures = 0;
  /// Coordinates whose finite-difference estimate is unstable across step
  /// sizes (kink of a piecewise-linear op straddles the probe); excluded from
  /// the comparison rather than counted as failures.
  int nonsmooth_skips = 0;
  double max_rel_err = 0.0;
  std::string worst;

  bool ok() const { return failures == 0 && checked > 0; }
};

/// Compares tape gradients of a scalar loss against central finite
/// differences for every listed parameter. make_loss must rebuild the forward
/// pass from the parameters' current values; it is called with a tape once
/// and without one (nullptr) for each probe.
GradCheckReport check_gradients(const std::function<Tensor(Tape*)>& make_loss,
                                const std::vector<Tensor>& params,
                                const GradCheckOptions& opts = {});

}  // namespace brmil
